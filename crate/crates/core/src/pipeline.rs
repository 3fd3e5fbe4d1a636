//! Split-level drivers: run a detector or a scoring strategy over every image
//! of a split, and sweep all strategy/aggregator combinations.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::classifier::ClassifierModel;
use crate::data::{DatasetManifest, ImageRecord, Pixels, Split};
use crate::detector::{Detection, DetectorBackend};
use crate::error::{Error, Result};
use crate::metrics::{auc, average_precision, MetricValue, ScoredBox, ScoredLabel};
use crate::scorer::{
    score_direct, score_one_step, score_two_stage, AggregationKind, ImageScore, ScoringOptions, StrategyKind,
};

/// Models available to the scoring strategies; a strategy whose models are
/// missing cannot be run.
#[derive(Default, Clone, Copy)]
pub struct ModelSet<'a> {
    pub direct: Option<&'a ClassifierModel>,
    pub one_class: Option<&'a dyn DetectorBackend>,
    pub roi_classifier: Option<&'a ClassifierModel>,
    pub malignancy: Option<&'a dyn DetectorBackend>,
    pub subtype: Option<&'a dyn DetectorBackend>,
}

fn missing(what: &str, strategy: StrategyKind) -> Error {
    Error::Config(format!("strategy {strategy} needs a {what} model"))
}

impl<'a> ModelSet<'a> {
    pub fn score(
        &self,
        strategy: StrategyKind,
        image_id: &str,
        image: &Pixels,
        kind: AggregationKind,
        options: &ScoringOptions,
    ) -> Result<ImageScore> {
        match strategy {
            StrategyKind::Direct => {
                score_direct(self.direct.ok_or_else(|| missing("direct classifier", strategy))?, image_id, image)
            }
            StrategyKind::TwoStage => score_two_stage(
                self.one_class.ok_or_else(|| missing("one-class detector", strategy))?,
                self.roi_classifier.ok_or_else(|| missing("ROI classifier", strategy))?,
                image_id,
                image,
                kind,
                options,
            ),
            StrategyKind::OneStepMalignancy => score_one_step(
                self.malignancy.ok_or_else(|| missing("malignancy detector", strategy))?,
                image_id,
                image,
                kind,
                options,
            ),
            StrategyKind::OneStepSubtype => score_one_step(
                self.subtype.ok_or_else(|| missing("sub-type detector", strategy))?,
                image_id,
                image,
                kind,
                options,
            ),
        }
    }
}

/// Records of `split`, or every record when `split` is `None`.
pub fn split_records(manifest: &DatasetManifest, split: Option<Split>) -> Vec<&ImageRecord> {
    match split {
        Some(s) => manifest.split_records(s).collect(),
        None => manifest.records().iter().collect(),
    }
}

pub fn detect_split<D: DetectorBackend + ?Sized>(
    detector: &D,
    manifest: &DatasetManifest,
    split: Option<Split>,
) -> Result<BTreeMap<String, Vec<Detection>>> {
    split_records(manifest, split)
        .into_iter()
        .map(|r| {
            let image = Pixels::open(&manifest.resolve_path(r))?;
            Ok((r.image_id.clone(), detector.detect(&r.image_id, &image)?))
        })
        .collect()
}

/// Detection maps in the form the metrics expect.
pub fn scored_boxes(detections: &BTreeMap<String, Vec<Detection>>) -> BTreeMap<String, Vec<ScoredBox>> {
    detections
        .iter()
        .map(|(id, d)| (id.clone(), d.iter().map(Detection::scored_box).collect()))
        .collect()
}

pub fn score_split(
    models: &ModelSet<'_>,
    strategy: StrategyKind,
    kind: AggregationKind,
    options: &ScoringOptions,
    manifest: &DatasetManifest,
    split: Option<Split>,
) -> Result<Vec<ImageScore>> {
    split_records(manifest, split)
        .into_iter()
        .map(|r| {
            let image = Pixels::open(&manifest.resolve_path(r))?;
            models.score(strategy, &r.image_id, &image, kind, options)
        })
        .collect()
}

/// One cell of the strategy x aggregator comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub strategy: StrategyKind,
    pub aggregator: AggregationKind,
    /// False for the direct strategy, which has no lesions to aggregate and
    /// repeats the same scores under every aggregator.
    pub aggregator_applies: bool,
    pub n_images: usize,
    pub auc: MetricValue,
    pub ap: MetricValue,
}

pub fn score_metrics(manifest: &DatasetManifest, scores: &[ImageScore]) -> Result<(MetricValue, MetricValue)> {
    let pairs = scores
        .iter()
        .map(|s| {
            let record = manifest
                .get(&s.image_id)
                .ok_or_else(|| Error::InvalidInput(format!("image {:?} is not in the manifest", s.image_id)))?;
            Ok(ScoredLabel::new(s.probability, record.image_label() == 1))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((
        MetricValue::from_result(auc(&pairs)),
        MetricValue::from_result(average_precision(&pairs)),
    ))
}

/// Scores every image once per strategy and re-aggregates the per-lesion
/// probabilities under each aggregator. Returns the 12 rows in strategy,
/// then aggregator order, plus all scores keyed by `(strategy, aggregator)`.
pub fn sweep(
    models: &ModelSet<'_>,
    options: &ScoringOptions,
    manifest: &DatasetManifest,
    split: Option<Split>,
) -> Result<(Vec<SweepRow>, BTreeMap<(StrategyKind, AggregationKind), Vec<ImageScore>>)> {
    let mut rows = Vec::new();
    let mut all = BTreeMap::new();
    for strategy in StrategyKind::ALL {
        let base = score_split(models, strategy, AggregationKind::NoisyOr, options, manifest, split)?;
        for kind in AggregationKind::ALL {
            let scores = if strategy == StrategyKind::Direct {
                base.clone()
            } else {
                base.iter().map(|s| s.reaggregate(kind, options)).collect::<Result<Vec<_>>>()?
            };
            let (auc, ap) = score_metrics(manifest, &scores)?;
            rows.push(SweepRow {
                strategy,
                aggregator: kind,
                aggregator_applies: strategy != StrategyKind::Direct,
                n_images: scores.len(),
                auc,
                ap,
            });
            all.insert((strategy, kind), scores);
        }
    }
    Ok((rows, all))
}

pub fn sweep_table(rows: &[SweepRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<22} {:<10} {:>8} {:>8} {:>6}", "strategy", "aggregator", "AUC", "AP", "n");
    for r in rows {
        let agg = if r.aggregator_applies {
            r.aggregator.to_string()
        } else {
            format!("({})", r.aggregator)
        };
        let _ = writeln!(
            out,
            "{:<22} {:<10} {:>8} {:>8} {:>6}",
            r.strategy.to_string(),
            agg,
            r.auc.render(),
            r.ap.render(),
            r.n_images
        );
    }
    out.push_str("Aggregators in parentheses do not apply: direct scores are image-level.\n");
    out
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("strategy,aggregator,aggregator_applies,n_images,auc,ap\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.strategy,
            r.aggregator,
            r.aggregator_applies,
            r.n_images,
            r.auc.value().map_or("undefined".into(), |v| v.to_string()),
            r.ap.value().map_or("undefined".into(), |v| v.to_string()),
        );
    }
    out
}
