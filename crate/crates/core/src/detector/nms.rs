use super::Detection;
use crate::metrics::iou;

/// Greedy non-maximum suppression: keeps the highest-scoring box, drops
/// everything overlapping it at `iou >= iou_threshold`, and repeats.
/// Survivors are returned in descending score order.
pub fn nms(detections: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| detections[b].score.total_cmp(&detections[a].score));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let suppressed = kept
            .iter()
            .any(|&k| iou(&detections[k].roi, &detections[i].roi) >= iou_threshold);
        if !suppressed {
            kept.push(i);
        }
    }
    kept.into_iter().map(|i| detections[i].clone()).collect()
}
