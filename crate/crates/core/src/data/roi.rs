use serde::{Deserialize, Serialize};

use super::LesionLabel;
use crate::error::{Error, Result};

/// Axis-aligned lesion box in center format, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Roi {
    pub x_center: f64,
    pub y_center: f64,
    pub width: f64,
    pub height: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<LesionLabel>,
}

/// Corner form `(x0, y0, x1, y1)`.
pub type Corners = (f64, f64, f64, f64);

impl Roi {
    pub fn new(x_center: f64, y_center: f64, width: f64, height: f64) -> Self {
        Roi {
            x_center,
            y_center,
            width,
            height,
            label: None,
        }
    }

    pub fn with_label(mut self, label: LesionLabel) -> Self {
        self.label = Some(label);
        self
    }

    pub fn from_corners(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Roi::new((x0 + x1) / 2.0, (y0 + y1) / 2.0, x1 - x0, y1 - y0)
    }

    pub fn corners(&self) -> Corners {
        (
            self.x_center - self.width / 2.0,
            self.y_center - self.height / 2.0,
            self.x_center + self.width / 2.0,
            self.y_center + self.height / 2.0,
        )
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    pub fn is_malignant(&self) -> bool {
        self.label.is_some_and(LesionLabel::is_malignant)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x_center, self.y_center, self.width, self.height]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidRoi("non-finite coordinate".into()));
        }
        if self.width <= 0.0 || self.height <= 0.0 {
            return Err(Error::InvalidRoi(format!(
                "width and height must be positive, got {}x{}",
                self.width, self.height
            )));
        }
        Ok(())
    }

    /// Clamps the box to `[0, width] x [0, height]`. Boxes with no overlap
    /// with the image are an error.
    pub fn clamp_to(&self, image_width: u32, image_height: u32) -> Result<Roi> {
        self.validate()?;
        let (x0, y0, x1, y1) = self.corners();
        let cx0 = x0.max(0.0);
        let cy0 = y0.max(0.0);
        let cx1 = x1.min(f64::from(image_width));
        let cy1 = y1.min(f64::from(image_height));
        if cx1 <= cx0 || cy1 <= cy0 {
            return Err(Error::EmptyIntersection);
        }
        if (cx0, cy0, cx1, cy1) == (x0, y0, x1, y1) {
            return Ok(*self);
        }
        let mut clamped = Roi::from_corners(cx0, cy0, cx1, cy1);
        clamped.label = self.label;
        Ok(clamped)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamp_partial_box() {
        let roi = Roi::new(5.0, 5.0, 20.0, 20.0).with_label(LesionLabel::Nv);
        let clamped = roi.clamp_to(100, 100).unwrap();
        assert_eq!(clamped.corners(), (0.0, 0.0, 15.0, 15.0));
        assert_eq!(clamped.label, Some(LesionLabel::Nv));
    }

    #[test]
    fn clamp_inside_is_identity() {
        let roi = Roi::new(50.0, 50.0, 10.0, 30.0);
        assert_eq!(roi.clamp_to(100, 100).unwrap(), roi);
    }

    #[test]
    fn clamp_outside_is_error() {
        let roi = Roi::new(150.0, 50.0, 10.0, 10.0);
        assert!(matches!(roi.clamp_to(100, 100), Err(Error::EmptyIntersection)));
    }

    #[test]
    fn rejects_degenerate_size() {
        assert!(Roi::new(1.0, 1.0, 0.0, 2.0).validate().is_err());
        assert!(Roi::new(1.0, f64::NAN, 1.0, 2.0).validate().is_err());
    }
}
