//! Independent reference implementations used as test oracles. They follow
//! the metric definitions literally and favour clarity over speed.

#![allow(dead_code)]

use dermtriage::data::Roi;
use dermtriage::detector::Detection;
use dermtriage::metrics::ScoredBox;

/// Mann-Whitney AUC: fraction of positive/negative pairs ranked correctly,
/// ties counted as one half.
pub fn mann_whitney(scores: &[f64], labels: &[bool]) -> f64 {
    let mut credit = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                credit += 1.0;
            } else if si == sj {
                credit += 0.5;
            }
        }
    }
    credit / pairs
}

/// Trapezoid sum over (TPR, PPV) evaluated at every distinct score used as a
/// threshold, counting from scratch at each threshold. Starts at
/// (TPR, PPV) = (0, 1).
pub fn brute_force_ap(scores: &[f64], labels: &[bool], total_positives: usize) -> f64 {
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let (mut prev_tpr, mut prev_ppv) = (0.0, 1.0);
    let mut sum = 0.0;
    for t in thresholds {
        let predicted = scores.iter().filter(|&&s| s >= t).count() as f64;
        let hits = scores
            .iter()
            .zip(labels)
            .filter(|(&s, &l)| s >= t && l)
            .count() as f64;
        let tpr = hits / total_positives as f64;
        let ppv = hits / predicted;
        sum += (tpr - prev_tpr) * (ppv + prev_ppv) / 2.0;
        prev_tpr = tpr;
        prev_ppv = ppv;
    }
    sum
}

/// Overlap area over union area from explicit corner coordinates.
pub fn iou_oracle(a: &Roi, b: &Roi) -> f64 {
    let (ax0, ax1) = (a.x_center - a.width / 2.0, a.x_center + a.width / 2.0);
    let (ay0, ay1) = (a.y_center - a.height / 2.0, a.y_center + a.height / 2.0);
    let (bx0, bx1) = (b.x_center - b.width / 2.0, b.x_center + b.width / 2.0);
    let (by0, by1) = (b.y_center - b.height / 2.0, b.y_center + b.height / 2.0);
    let w = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
    let h = (ay1.min(by1) - ay0.max(by0)).max(0.0);
    let inter = w * h;
    inter / (a.width * a.height + b.width * b.height - inter)
}

/// The greedy rule restated: repeatedly take the highest-scoring
/// unprocessed prediction (earliest on score ties), give it the unmatched
/// ground truth with the largest IoU (earliest on IoU ties) when that IoU is
/// positive and reaches the threshold. Returns the matched ground-truth
/// index per prediction.
pub fn greedy_match_oracle(preds: &[ScoredBox], gts: &[Roi], threshold: f64) -> Vec<Option<usize>> {
    let mut out = vec![None; preds.len()];
    let mut done = vec![false; preds.len()];
    let mut taken = vec![false; gts.len()];
    for _ in 0..preds.len() {
        let mut next = None;
        for i in 0..preds.len() {
            if !done[i] && next.is_none_or(|n: usize| preds[i].score > preds[n].score) {
                next = Some(i);
            }
        }
        let p = next.unwrap();
        done[p] = true;
        let mut best: Option<(usize, f64)> = None;
        for g in 0..gts.len() {
            if taken[g] {
                continue;
            }
            let v = iou_oracle(&preds[p].roi, &gts[g]);
            match best {
                Some((_, b)) if v <= b => {}
                _ => best = Some((g, v)),
            }
        }
        if let Some((g, v)) = best {
            if v > 0.0 && v >= threshold {
                taken[g] = true;
                out[p] = Some(g);
            }
        }
    }
    out
}

/// NMS from its definition: a detection survives iff no higher-ranked
/// survivor overlaps it at IoU >= threshold. Survivors are checked in
/// descending score order, earliest index first on ties.
pub fn nms_oracle(dets: &[Detection], threshold: f64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..dets.len()).collect();
    idx.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    let mut survivors: Vec<usize> = Vec::new();
    for i in idx {
        if survivors
            .iter()
            .all(|&s| iou_oracle(&dets[s].roi, &dets[i].roi) < threshold)
        {
            survivors.push(i);
        }
    }
    survivors
}

/// Central finite-difference gradient.
pub fn numeric_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        grad[i] = (up - down) / (2.0 * h);
    }
    grad
}
