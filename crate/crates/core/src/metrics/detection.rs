use serde::{Deserialize, Serialize};

use super::ranking::{average_precision_with_total, ScoredLabel};
use crate::data::Roi;
use crate::error::{Error, Result};

/// A predicted box and its confidence, stripped of class information.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredBox {
    pub roi: Roi,
    pub score: f64,
}

impl ScoredBox {
    pub fn new(roi: Roi, score: f64) -> Self {
        ScoredBox { roi, score }
    }
}

/// Intersection over union of two boxes.
pub fn iou(a: &Roi, b: &Roi) -> f64 {
    let (ax0, ay0, ax1, ay1) = a.corners();
    let (bx0, by0, bx1, by1) = b.corners();
    let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
    let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatchFlag {
    TruePositive,
    FalsePositive,
}

/// Per-prediction outcome at one IoU threshold. Vectors are indexed in the
/// caller's input order.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub threshold: f64,
    pub flags: Vec<MatchFlag>,
    /// Ground-truth index claimed by each prediction.
    pub matched_gt: Vec<Option<usize>>,
    /// IoU of each prediction with the ground truth it claimed.
    pub match_iou: Vec<Option<f64>>,
    pub gt_matched: Vec<bool>,
}

impl MatchResult {
    pub fn true_positives(&self) -> usize {
        self.flags.iter().filter(|f| **f == MatchFlag::TruePositive).count()
    }

    pub fn false_positives(&self) -> usize {
        self.flags.len() - self.true_positives()
    }
}

/// Greedy matching: predictions in descending score order each claim the
/// still-unmatched ground truth with the highest IoU, provided it reaches
/// `iou_threshold`. IoU ties go to the earlier ground truth; score ties keep
/// input order.
pub fn match_detections(
    predictions: &[ScoredBox],
    ground_truths: &[Roi],
    iou_threshold: f64,
) -> MatchResult {
    let mut order: Vec<usize> = (0..predictions.len()).collect();
    order.sort_by(|&a, &b| predictions[b].score.total_cmp(&predictions[a].score));

    let mut result = MatchResult {
        threshold: iou_threshold,
        flags: vec![MatchFlag::FalsePositive; predictions.len()],
        matched_gt: vec![None; predictions.len()],
        match_iou: vec![None; predictions.len()],
        gt_matched: vec![false; ground_truths.len()],
    };
    for p in order {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in ground_truths.iter().enumerate() {
            if result.gt_matched[g] {
                continue;
            }
            let overlap = iou(&predictions[p].roi, gt);
            if best.is_none_or(|(_, b)| overlap > b) {
                best = Some((g, overlap));
            }
        }
        if let Some((g, overlap)) = best {
            if overlap >= iou_threshold && overlap > 0.0 {
                result.flags[p] = MatchFlag::TruePositive;
                result.matched_gt[p] = Some(g);
                result.match_iou[p] = Some(overlap);
                result.gt_matched[g] = true;
            }
        }
    }
    result
}

/// The ten thresholds 0.50, 0.55, ..., 0.95.
pub fn coco_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapResult {
    /// `(threshold, AP)` for each requested threshold.
    pub per_threshold: Vec<(f64, f64)>,
    /// Mean over 0.50:0.05:0.95.
    pub map_50_95: f64,
}

impl MapResult {
    pub fn at(&self, threshold: f64) -> Option<f64> {
        self.per_threshold
            .iter()
            .find(|(t, _)| (t - threshold).abs() < 1e-9)
            .map(|&(_, v)| v)
    }
}

fn check_lengths(predictions: &[Vec<ScoredBox>], ground_truths: &[Vec<Roi>]) -> Result<()> {
    if predictions.len() != ground_truths.len() {
        return Err(Error::InvalidInput(format!(
            "{} prediction lists for {} images",
            predictions.len(),
            ground_truths.len()
        )));
    }
    Ok(())
}

/// Class-agnostic AP at one threshold, pooling predictions over images.
pub fn pooled_ap(
    predictions: &[Vec<ScoredBox>],
    ground_truths: &[Vec<Roi>],
    threshold: f64,
) -> Result<f64> {
    check_lengths(predictions, ground_truths)?;
    let total_gt: usize = ground_truths.iter().map(Vec::len).sum();
    if total_gt == 0 {
        return Err(Error::UndefinedMetric {
            metric: "mAP",
            reason: "no ground-truth boxes",
        });
    }
    let mut pooled = Vec::new();
    for (preds, gts) in predictions.iter().zip(ground_truths) {
        let m = match_detections(preds, gts, threshold);
        pooled.extend(
            preds
                .iter()
                .zip(&m.flags)
                .map(|(p, f)| ScoredLabel::new(p.score, *f == MatchFlag::TruePositive)),
        );
    }
    average_precision_with_total(&pooled, total_gt)
}

/// mAP at each of `thresholds` plus the 0.50:0.95 mean.
pub fn map_at(
    predictions: &[Vec<ScoredBox>],
    ground_truths: &[Vec<Roi>],
    thresholds: &[f64],
) -> Result<MapResult> {
    let per_threshold = thresholds
        .iter()
        .map(|&t| pooled_ap(predictions, ground_truths, t).map(|ap| (t, ap)))
        .collect::<Result<Vec<_>>>()?;
    let coco = coco_thresholds();
    let mut sum = 0.0;
    for t in &coco {
        sum += pooled_ap(predictions, ground_truths, *t)?;
    }
    Ok(MapResult {
        per_threshold,
        map_50_95: sum / coco.len() as f64,
    })
}

/// Fraction of ground-truth boxes overlapped (IoU > 0) by any prediction.
pub fn recall_any_overlap(predictions: &[Vec<ScoredBox>], ground_truths: &[Vec<Roi>]) -> Result<f64> {
    check_lengths(predictions, ground_truths)?;
    let total: usize = ground_truths.iter().map(Vec::len).sum();
    if total == 0 {
        return Err(Error::UndefinedMetric {
            metric: "Recall",
            reason: "no ground-truth boxes",
        });
    }
    let hit = predictions
        .iter()
        .zip(ground_truths)
        .map(|(preds, gts)| {
            gts.iter()
                .filter(|gt| preds.iter().any(|p| iou(&p.roi, gt) > 0.0))
                .count()
        })
        .sum::<usize>();
    Ok(hit as f64 / total as f64)
}

/// Best IoU of each ground truth against any prediction, keeping only
/// ground truths that some prediction overlaps.
pub fn best_match_ious(predictions: &[Vec<ScoredBox>], ground_truths: &[Vec<Roi>]) -> Result<Vec<f64>> {
    check_lengths(predictions, ground_truths)?;
    let mut out = Vec::new();
    for (preds, gts) in predictions.iter().zip(ground_truths) {
        for gt in gts {
            let best = preds.iter().map(|p| iou(&p.roi, gt)).fold(0.0, f64::max);
            if best > 0.0 {
                out.push(best);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IouSummary {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub count: usize,
}

/// Quantile with linear interpolation between order statistics
/// (position `q * (n - 1)` in the sorted sample).
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Median and interquartile range of matched IoU values.
pub fn iou_summary(ious: &[f64]) -> Result<IouSummary> {
    if ious.is_empty() {
        return Err(Error::UndefinedMetric {
            metric: "IoU",
            reason: "no matched predictions",
        });
    }
    let mut sorted = ious.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(IouSummary {
        median: quantile(&sorted, 0.5),
        q1: quantile(&sorted, 0.25),
        q3: quantile(&sorted, 0.75),
        count: sorted.len(),
    })
}
