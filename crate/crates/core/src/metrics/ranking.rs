use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredLabel {
    pub score: f64,
    pub label: bool,
}

impl ScoredLabel {
    pub fn new(score: f64, label: bool) -> Self {
        ScoredLabel { score, label }
    }
}

/// Cumulative (positives, negatives) counted at each unique score, walking
/// from the highest score down. Tied scores enter together.
fn cumulative_counts(pairs: &[ScoredLabel]) -> Result<Vec<(usize, usize)>> {
    if pairs.iter().any(|p| !p.score.is_finite()) {
        return Err(Error::InvalidInput("scores must be finite".into()));
    }
    let mut sorted: Vec<&ScoredLabel> = pairs.iter().collect();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut out = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    for (i, p) in sorted.iter().enumerate() {
        if p.label {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_tie = sorted.get(i + 1).is_none_or(|next| next.score != p.score);
        if last_of_tie {
            out.push((tp, fp));
        }
    }
    Ok(out)
}

/// Area under the ROC curve by the trapezoid rule over the unique-score
/// thresholds, anchored at (0, 0) and ending at (1, 1).
pub fn auc(pairs: &[ScoredLabel]) -> Result<f64> {
    let positives = pairs.iter().filter(|p| p.label).count();
    let negatives = pairs.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedMetric {
            metric: "AUC",
            reason: "both classes must be present",
        });
    }
    let (p, n) = (positives as f64, negatives as f64);
    let mut area = 0.0;
    let (mut prev_tpr, mut prev_fpr) = (0.0, 0.0);
    for (tp, fp) in cumulative_counts(pairs)? {
        let tpr = tp as f64 / p;
        let fpr = fp as f64 / n;
        area += 0.5 * (fpr - prev_fpr) * (tpr + prev_tpr);
        prev_tpr = tpr;
        prev_fpr = fpr;
    }
    Ok(area)
}

/// Average precision: trapezoid over (TPR, PPV) points at the unique-score
/// thresholds, anchored at (TPR = 0, PPV = 1).
pub fn average_precision(pairs: &[ScoredLabel]) -> Result<f64> {
    let positives = pairs.iter().filter(|p| p.label).count();
    average_precision_with_total(pairs, positives)
}

/// Average precision where recall is measured against `total_positives`,
/// which may exceed the positives present in `pairs` (detection pooling,
/// where missed ground truths never appear as predictions).
pub fn average_precision_with_total(pairs: &[ScoredLabel], total_positives: usize) -> Result<f64> {
    if total_positives == 0 {
        return Err(Error::UndefinedMetric {
            metric: "AP",
            reason: "at least one positive is required",
        });
    }
    let present = pairs.iter().filter(|p| p.label).count();
    if present > total_positives {
        return Err(Error::InvalidInput(format!(
            "{present} positive predictions exceed total positives {total_positives}"
        )));
    }
    let total = total_positives as f64;
    let mut area = 0.0;
    let (mut prev_tpr, mut prev_ppv) = (0.0, 1.0);
    for (tp, fp) in cumulative_counts(pairs)? {
        let tpr = tp as f64 / total;
        let ppv = tp as f64 / (tp + fp) as f64;
        area += 0.5 * (tpr - prev_tpr) * (ppv + prev_ppv);
        prev_tpr = tpr;
        prev_ppv = ppv;
    }
    Ok(area)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(scores: &[f64], labels: &[u8]) -> Vec<ScoredLabel> {
        scores
            .iter()
            .zip(labels)
            .map(|(&s, &l)| ScoredLabel::new(s, l == 1))
            .collect()
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&pairs(&[0.9, 0.1], &[1, 0])).unwrap(), 1.0);
        assert!((auc(&pairs(&[0.9, 0.8, 0.3], &[1, 0, 1])).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(auc(&pairs(&[0.5, 0.5], &[1, 0])).unwrap(), 0.5);
    }

    #[test]
    fn auc_single_class_undefined() {
        assert!(matches!(
            auc(&pairs(&[0.2, 0.3], &[1, 1])),
            Err(Error::UndefinedMetric { .. })
        ));
    }

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&pairs(&[0.9, 0.8, 0.1], &[1, 1, 0])).unwrap(), 1.0);
        // (0,1)->(1/2,1)->(1/2,1/2)->(1,2/3)
        let ap = average_precision(&pairs(&[0.9, 0.8, 0.3], &[1, 0, 1])).unwrap();
        assert!((ap - 0.791_666_666_666_666_6).abs() < 1e-12, "{ap}");
        assert_eq!(average_precision(&pairs(&[0.3, 0.1, 0.3], &[1, 1, 1])).unwrap(), 1.0);
    }

    #[test]
    fn ap_without_positives_undefined() {
        assert!(average_precision(&pairs(&[0.2], &[0])).is_err());
    }

    #[test]
    fn ap_with_missed_positives() {
        // Two ground truths, one found at rank 1.
        let ap = average_precision_with_total(&pairs(&[0.9], &[1]), 2).unwrap();
        assert_eq!(ap, 0.5);
        assert!(average_precision_with_total(&pairs(&[0.9, 0.8], &[1, 1]), 1).is_err());
    }
}
