//! Ranking and detection metrics, and stratified evaluation reports.

mod detection;
mod ranking;
mod report;

pub use detection::{
    best_match_ious, coco_thresholds, iou, iou_summary, map_at, match_detections, pooled_ap,
    quantile, recall_any_overlap, IouSummary, MapResult, MatchFlag, MatchResult, ScoredBox,
};
pub use ranking::{auc, average_precision, average_precision_with_total, ScoredLabel};
pub use report::{stratified_report, EvalReport, MetricValue, Stratum, StratumReport, METRIC_NAMES};
