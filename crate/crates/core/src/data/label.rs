use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Lesion type taxonomy. Declaration order is the sub-type class order used
/// by eight-class detectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LesionLabel {
    #[serde(rename = "MEL")]
    Mel,
    #[serde(rename = "NV")]
    Nv,
    #[serde(rename = "BCC")]
    Bcc,
    #[serde(rename = "AKIEC")]
    Akiec,
    #[serde(rename = "BKL")]
    Bkl,
    #[serde(rename = "DF")]
    Df,
    #[serde(rename = "VASC")]
    Vasc,
    #[serde(rename = "OB")]
    Ob,
}

impl LesionLabel {
    pub const ALL: [LesionLabel; 8] = [
        LesionLabel::Mel,
        LesionLabel::Nv,
        LesionLabel::Bcc,
        LesionLabel::Akiec,
        LesionLabel::Bkl,
        LesionLabel::Df,
        LesionLabel::Vasc,
        LesionLabel::Ob,
    ];

    /// Melanoma, basal cell carcinoma and actinic keratosis/Bowen's are the
    /// malignant set; everything else, including "other benign", is benign.
    pub fn is_malignant(self) -> bool {
        matches!(self, LesionLabel::Mel | LesionLabel::Bcc | LesionLabel::Akiec)
    }

    pub fn code(self) -> &'static str {
        match self {
            LesionLabel::Mel => "MEL",
            LesionLabel::Nv => "NV",
            LesionLabel::Bcc => "BCC",
            LesionLabel::Akiec => "AKIEC",
            LesionLabel::Bkl => "BKL",
            LesionLabel::Df => "DF",
            LesionLabel::Vasc => "VASC",
            LesionLabel::Ob => "OB",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }
}

impl fmt::Display for LesionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for LesionLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let trimmed = s.trim();
        Self::ALL
            .iter()
            .copied()
            .find(|l| l.code().eq_ignore_ascii_case(trimmed))
            .ok_or_else(|| Error::UnknownLabel(s.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn malignant_set_is_exactly_three_codes() {
        let malignant: Vec<_> = LesionLabel::ALL
            .iter()
            .filter(|l| l.is_malignant())
            .map(|l| l.code())
            .collect();
        assert_eq!(malignant, ["MEL", "BCC", "AKIEC"]);
        assert_eq!(LesionLabel::ALL.len(), 8);
    }

    #[test]
    fn parse_round_trip() {
        for label in LesionLabel::ALL {
            assert_eq!(label.code().parse::<LesionLabel>().unwrap(), label);
            assert_eq!(LesionLabel::from_index(label.index()), Some(label));
        }
        assert!(matches!("XX".parse::<LesionLabel>(), Err(Error::UnknownLabel(s)) if s == "XX"));
    }
}
