use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::detection::{best_match_ious, iou_summary, map_at, recall_any_overlap, ScoredBox};
use super::ranking::{auc, average_precision, ScoredLabel};
use crate::data::{Capture, DatasetManifest, ImageRecord, Roi};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stratum {
    All,
    Smartphone,
    Dermoscopy,
}

impl Stratum {
    pub const ALL: [Stratum; 3] = [Stratum::All, Stratum::Smartphone, Stratum::Dermoscopy];

    pub fn name(self) -> &'static str {
        match self {
            Stratum::All => "all",
            Stratum::Smartphone => "smartphone",
            Stratum::Dermoscopy => "dermoscopy",
        }
    }

    fn contains(self, record: &ImageRecord) -> bool {
        match self {
            Stratum::All => true,
            Stratum::Smartphone => record.capture == Capture::WideField,
            Stratum::Dermoscopy => record.capture == Capture::Dermoscopy,
        }
    }
}

/// A metric that is either computed or explicitly undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricValue {
    Value(f64),
    Undefined(String),
}

impl MetricValue {
    pub fn value(&self) -> Option<f64> {
        match self {
            MetricValue::Value(v) => Some(*v),
            MetricValue::Undefined(_) => None,
        }
    }

    pub fn from_result(r: Result<f64>) -> Self {
        match r {
            Ok(v) => MetricValue::Value(v),
            Err(Error::UndefinedMetric { reason, .. }) => MetricValue::Undefined(reason.to_string()),
            Err(e) => MetricValue::Undefined(e.to_string()),
        }
    }

    pub fn render(&self) -> String {
        match self {
            MetricValue::Value(v) => format!("{v:.4}"),
            MetricValue::Undefined(_) => "undefined".to_string(),
        }
    }
}

/// Metric order used for CSV rows and table columns.
pub const METRIC_NAMES: [&str; 9] = [
    "auc",
    "ap",
    "map_50",
    "map_75",
    "map_50_95",
    "recall_iou_gt_0",
    "iou_median",
    "iou_q1",
    "iou_q3",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumReport {
    pub stratum: Stratum,
    pub n_images: usize,
    pub n_scored: usize,
    pub n_lesions: usize,
    pub auc: MetricValue,
    pub ap: MetricValue,
    pub map_50: MetricValue,
    pub map_75: MetricValue,
    pub map_50_95: MetricValue,
    pub recall_any_overlap: MetricValue,
    pub iou_median: MetricValue,
    pub iou_q1: MetricValue,
    pub iou_q3: MetricValue,
}

impl StratumReport {
    pub fn metric(&self, name: &str) -> Option<&MetricValue> {
        Some(match name {
            "auc" => &self.auc,
            "ap" => &self.ap,
            "map_50" => &self.map_50,
            "map_75" => &self.map_75,
            "map_50_95" => &self.map_50_95,
            "recall_iou_gt_0" => &self.recall_any_overlap,
            "iou_median" => &self.iou_median,
            "iou_q1" => &self.iou_q1,
            "iou_q3" => &self.iou_q3,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub strata: Vec<StratumReport>,
}

const FOOTER: &str = "ROC curve anchored at (FPR, TPR) = (0, 0) and (1, 1); PR curve anchored at \
(TPR = 0, PPV = 1). Tied scores enter the threshold sweep together. mAP@[0.5,0.95] averages \
thresholds 0.50:0.05:0.95. IoU quartiles use linear interpolation.";

impl EvalReport {
    pub fn stratum(&self, stratum: Stratum) -> &StratumReport {
        self.strata
            .iter()
            .find(|s| s.stratum == stratum)
            .expect("every stratum is present")
    }

    /// One row per stratum and metric.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("stratum,metric,value\n");
        for s in &self.strata {
            let _ = writeln!(out, "{},n_images,{}", s.stratum.name(), s.n_images);
            let _ = writeln!(out, "{},n_lesions,{}", s.stratum.name(), s.n_lesions);
            for name in METRIC_NAMES {
                let v = s.metric(name).expect("known metric");
                let _ = writeln!(out, "{},{},{}", s.stratum.name(), name, v.render());
            }
        }
        out
    }

    /// Text tables: image-level AUC/AP by stratum, then detection metrics.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "Image-level malignancy");
        let _ = writeln!(out, "{:<12} {:>8} {:>8} {:>8}", "Stratum", "N", "AUC", "AP");
        for s in &self.strata {
            let _ = writeln!(
                out,
                "{:<12} {:>8} {:>8} {:>8}",
                s.stratum.name(),
                s.n_scored,
                s.auc.render(),
                s.ap.render()
            );
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "Lesion detection");
        let _ = write!(out, "{:<16}", "Metric");
        for s in &self.strata {
            let _ = write!(out, " {:>18}", s.stratum.name());
        }
        let _ = writeln!(out);
        let rows: [(&str, fn(&StratumReport) -> String); 5] = [
            ("mAP@0.5", |s| s.map_50.render()),
            ("mAP@0.75", |s| s.map_75.render()),
            ("mAP@[0.5,0.95]", |s| s.map_50_95.render()),
            ("Recall", |s| s.recall_any_overlap.render()),
            ("IoU", |s| match (&s.iou_median, &s.iou_q1, &s.iou_q3) {
                (MetricValue::Value(m), MetricValue::Value(a), MetricValue::Value(b)) => {
                    format!("{m:.2} ({a:.2},{b:.2})")
                }
                _ => "undefined".to_string(),
            }),
        ];
        for (name, f) in rows {
            let _ = write!(out, "{name:<16}");
            for s in &self.strata {
                let _ = write!(out, " {:>18}", f(s));
            }
            let _ = writeln!(out);
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "{FOOTER}");
        out
    }
}

/// Computes every metric for each capture stratum.
///
/// `scores` maps image ids to image-level malignancy probabilities and
/// `detections` maps image ids to predicted boxes; images absent from a map
/// do not take part in the corresponding metrics. Ids missing from the
/// manifest are an error.
pub fn stratified_report(
    manifest: &DatasetManifest,
    scores: &BTreeMap<String, f64>,
    detections: Option<&BTreeMap<String, Vec<ScoredBox>>>,
) -> Result<EvalReport> {
    let lookup: BTreeMap<&str, &ImageRecord> = manifest
        .records()
        .iter()
        .map(|r| (r.image_id.as_str(), r))
        .collect();
    let known = |id: &String| {
        if lookup.contains_key(id.as_str()) {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("image {id:?} is not in the manifest")))
        }
    };
    for id in scores.keys() {
        known(id)?;
    }
    if let Some(d) = detections {
        for id in d.keys() {
            known(id)?;
        }
    }

    let mut strata = Vec::new();
    for stratum in Stratum::ALL {
        let in_stratum = |id: &str| lookup.get(id).is_some_and(|r| stratum.contains(r));
        let n_images = manifest.records().iter().filter(|r| stratum.contains(r)).count();

        let pairs: Vec<ScoredLabel> = scores
            .iter()
            .filter(|(id, _)| in_stratum(id))
            .map(|(id, &p)| ScoredLabel::new(p, lookup[id.as_str()].image_label() == 1))
            .collect();
        let (auc_v, ap_v) = if pairs.is_empty() {
            let u = || MetricValue::Undefined("empty stratum".into());
            (u(), u())
        } else {
            (
                MetricValue::from_result(auc(&pairs)),
                MetricValue::from_result(average_precision(&pairs)),
            )
        };

        let (mut preds, mut gts): (Vec<Vec<ScoredBox>>, Vec<Vec<Roi>>) = (Vec::new(), Vec::new());
        if let Some(d) = detections {
            for (id, boxes) in d.iter().filter(|(id, _)| in_stratum(id)) {
                preds.push(boxes.clone());
                gts.push(lookup[id.as_str()].rois.clone());
            }
        }
        let n_lesions = gts.iter().map(Vec::len).sum();
        let undefined = |why: &str| MetricValue::Undefined(why.to_string());
        let (map_50, map_75, map_50_95, recall, med, q1, q3) = if detections.is_none() {
            let u = || undefined("no detections provided");
            (u(), u(), u(), u(), u(), u(), u())
        } else {
            let maps = map_at(&preds, &gts, &[0.5, 0.75]);
            let (m50, m75, m5095) = match maps {
                Ok(m) => (
                    MetricValue::Value(m.at(0.5).unwrap_or(0.0)),
                    MetricValue::Value(m.at(0.75).unwrap_or(0.0)),
                    MetricValue::Value(m.map_50_95),
                ),
                Err(e) => {
                    let v = MetricValue::from_result(Err(e));
                    (v.clone(), v.clone(), v)
                }
            };
            let recall = MetricValue::from_result(recall_any_overlap(&preds, &gts));
            let summary = best_match_ious(&preds, &gts).and_then(|v| iou_summary(&v));
            let (med, q1, q3) = match summary {
                Ok(s) => (
                    MetricValue::Value(s.median),
                    MetricValue::Value(s.q1),
                    MetricValue::Value(s.q3),
                ),
                Err(e) => {
                    let v = MetricValue::from_result(Err(e));
                    (v.clone(), v.clone(), v)
                }
            };
            (m50, m75, m5095, recall, med, q1, q3)
        };

        strata.push(StratumReport {
            stratum,
            n_images,
            n_scored: pairs.len(),
            n_lesions,
            auc: auc_v,
            ap: ap_v,
            map_50,
            map_75,
            map_50_95,
            recall_any_overlap: recall,
            iou_median: med,
            iou_q1: q1,
            iou_q3: q3,
        });
    }
    Ok(EvalReport { strata })
}
