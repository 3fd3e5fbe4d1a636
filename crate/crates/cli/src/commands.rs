use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use dermtriage::classifier::{train_classifier, train_direct, ClassifierModel, ClassifierTrainConfig};
use dermtriage::clinical::{read_covariates, train_clinical, train_combined, CovariateSchema, LogisticOptions};
use dermtriage::data::{load_manifest, load_splits, patient_split, DatasetManifest, Pixels, SplitFractions};
use dermtriage::detector::{read_detections, train_detector, write_detections, DetectorBackend, DetectorModel, DetectorTrainConfig};
use dermtriage::io_util::to_json_lines;
use dermtriage::metrics::stratified_report;
use dermtriage::pipeline::{detect_split, score_metrics, score_split, scored_boxes, sweep_csv, sweep_table, SweepRow};
use dermtriage::scorer::{read_scores, write_scores, AggregationKind, StrategyKind};
use dermtriage::synth::{generate_dataset, SynthConfig};
use dermtriage::{Error, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::args::*;
use crate::models::LoadedModels;
use crate::run::RunManifest;

pub const SPLITS_FILE: &str = "splits.json";
pub const DETECTIONS_FILE: &str = "detections.jsonl";
pub const SCORES_FILE: &str = "scores.jsonl";
pub const FEATURES_FILE: &str = "features.jsonl";

/// Parses a configuration document, reporting the location of any schema
/// violation.
pub fn parse_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    serde_json::from_str(&text).map_err(|e| Error::Schema {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn load_data(manifest: &Path, splits: Option<&PathBuf>) -> Result<DatasetManifest> {
    let m = load_manifest(manifest)?;
    match splits {
        Some(p) => m.with_splits(load_splits(p)?),
        None => Ok(m),
    }
}

fn data_inputs<'a>(manifest: &'a Path, splits: Option<&'a PathBuf>) -> Vec<&'a Path> {
    let mut v = vec![manifest];
    v.extend(splits.map(PathBuf::as_path));
    v
}

/// Runs `body` and records a run manifest for it in `out`.
fn recorded<C: Serialize>(
    name: &str,
    config: &C,
    seed: Option<u64>,
    inputs: &[&Path],
    out: &Path,
    body: impl FnOnce() -> Result<Vec<PathBuf>>,
) -> Result<()> {
    create_dir(out)?;
    let mut run = RunManifest::new(name, config, seed, inputs)?;
    run.outputs = body()?;
    run.write(out)
}

pub fn execute(command: Command) -> Result<()> {
    let name = command.name();
    match &command {
        Command::Run(args) => {
            let inner: Command = parse_config(&args.config)?;
            return execute(inner);
        }
        Command::Serve(args) => return crate::service::run_blocking(args.clone()),
        _ => {}
    }
    log::info!("{name}: starting");
    match &command {
        Command::Synth(a) => synth(&command, a),
        Command::Split(a) => split(&command, a),
        Command::TrainDetector(a) => train_detector_cmd(&command, a),
        Command::TrainClassifier(a) => train_classifier_cmd(&command, a, false),
        Command::TrainDirect(a) => train_classifier_cmd(&command, a, true),
        Command::TrainClinical(a) => train_clinical_cmd(&command, a),
        Command::TrainCombined(a) => train_combined_cmd(&command, a),
        Command::Detect(a) => detect(&command, a),
        Command::Score(a) => score(&command, a),
        Command::Evaluate(a) => evaluate(&command, a),
        Command::ExportFeatures(a) => export_features(&command, a),
        Command::Serve(_) | Command::Run(_) => unreachable!(),
    }?;
    log::info!("{name}: done");
    Ok(())
}

fn synth(cmd: &Command, a: &SynthArgs) -> Result<()> {
    let mut cfg: SynthConfig = match &a.generator {
        Some(p) => parse_config(p)?,
        None => SynthConfig::default(),
    };
    if let Some(n) = a.images {
        cfg.images = n;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let inputs: Vec<&Path> = a.generator.iter().map(PathBuf::as_path).collect();
    recorded(cmd.name(), cmd, Some(cfg.seed), &inputs, &a.out, || {
        let out = generate_dataset(&cfg, &a.out)?;
        log::info!("{} images\n{}", out.manifest.len(), out.manifest.population_table());
        Ok(vec![
            dermtriage::synth::MANIFEST_FILE.into(),
            dermtriage::synth::COVARIATES_FILE.into(),
            dermtriage::synth::SCHEMA_FILE.into(),
            "images".into(),
        ])
    })
}

fn split(cmd: &Command, a: &SplitArgs) -> Result<()> {
    let manifest = load_manifest(&a.manifest)?;
    let fractions = SplitFractions::new(a.train_fraction.unwrap_or(0.8), a.val_fraction.unwrap_or(0.0))?;
    let seed = a.seed.unwrap_or(7);
    recorded(cmd.name(), cmd, Some(seed), &[&a.manifest], &a.out, || {
        let split = patient_split(&manifest, fractions, seed)?;
        split.save_splits(&a.out.join(SPLITS_FILE))?;
        Ok(vec![SPLITS_FILE.into()])
    })
}

fn with_seed<T>(value: T, seed: Option<u64>, set: impl FnOnce(&mut T, u64)) -> T {
    let mut value = value;
    if let Some(s) = seed {
        set(&mut value, s);
    }
    value
}

fn train_detector_cmd(cmd: &Command, a: &TrainDetectorArgs) -> Result<()> {
    let base: DetectorTrainConfig = match &a.train_config {
        Some(p) => parse_config(p)?,
        None => DetectorTrainConfig::default(),
    };
    let base = match a.schedule_scale {
        Some(f) => base.scaled(f)?,
        None => base,
    };
    let config = with_seed(base, a.seed, |c, s| c.seed = s);
    config.validate()?;
    let manifest = load_data(&a.manifest, a.splits.as_ref())?;
    let mut inputs = data_inputs(&a.manifest, a.splits.as_ref());
    inputs.extend(a.train_config.iter().map(PathBuf::as_path));
    recorded(cmd.name(), cmd, Some(config.seed), &inputs, &a.out, || {
        let model = train_detector(&manifest, a.granularity, &config)?;
        model.save(&a.out)?;
        Ok(vec![
            dermtriage::detector::MODEL_FILE.into(),
            dermtriage::detector::WEIGHTS_FILE.into(),
            dermtriage::detector::TRAINING_LOG_FILE.into(),
        ])
    })
}

fn classifier_config(
    file: Option<&PathBuf>,
    base: ClassifierTrainConfig,
    scale: Option<f64>,
    crop_side: Option<u32>,
    seed: Option<u64>,
) -> Result<ClassifierTrainConfig> {
    let mut config: ClassifierTrainConfig = match file {
        Some(p) => parse_config(p)?,
        None => base,
    };
    if let Some(f) = scale {
        config = config.scaled(f)?;
    }
    if let Some(c) = crop_side {
        config.crop_side = c;
    }
    if let Some(s) = seed {
        config.seed = s;
    }
    config.validate()?;
    Ok(config)
}

fn train_classifier_cmd(cmd: &Command, a: &TrainClassifierArgs, whole_image: bool) -> Result<()> {
    let config = classifier_config(
        a.train_config.as_ref(),
        ClassifierTrainConfig::default(),
        a.schedule_scale,
        a.crop_side,
        a.seed,
    )?;
    let manifest = load_data(&a.manifest, a.splits.as_ref())?;
    let mut inputs = data_inputs(&a.manifest, a.splits.as_ref());
    inputs.extend(a.train_config.iter().map(PathBuf::as_path));
    recorded(cmd.name(), cmd, Some(config.seed), &inputs, &a.out, || {
        let model = if whole_image {
            train_direct(&manifest, &config)?
        } else {
            train_classifier(&manifest, &config)?
        };
        model.save(&a.out)?;
        list_dir(&a.out)
    })
}

fn list_dir(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(format!("listing {}", dir.display()), e))?
        .filter_map(|e| e.ok())
        .map(|e| PathBuf::from(e.file_name()))
        .filter(|p| p.as_os_str() != crate::run::RUN_FILE)
        .collect();
    files.sort();
    Ok(files)
}

fn train_clinical_cmd(cmd: &Command, a: &TrainClinicalArgs) -> Result<()> {
    let schema = CovariateSchema::load(&a.schema)?;
    schema.validate()?;
    let rows = read_covariates(&a.covariates, &schema)?;
    let manifest = load_data(&a.manifest, a.splits.as_ref())?;
    let mut options = LogisticOptions::default();
    if let Some(l2) = a.l2 {
        options.l2 = l2;
    }
    if let Some(s) = a.seed {
        options.seed = s;
    }
    let mut inputs = data_inputs(&a.manifest, a.splits.as_ref());
    inputs.extend([a.covariates.as_path(), a.schema.as_path()]);
    recorded(cmd.name(), cmd, Some(options.seed), &inputs, &a.out, || {
        train_clinical(&manifest, &rows, &schema, &options)?.save(&a.out)?;
        Ok(vec![dermtriage::clinical::CLINICAL_FILE.into()])
    })
}

fn train_combined_cmd(cmd: &Command, a: &TrainCombinedArgs) -> Result<()> {
    let schema = CovariateSchema::load(&a.schema)?;
    schema.validate()?;
    let rows = read_covariates(&a.covariates, &schema)?;
    let manifest = load_data(&a.manifest, a.splits.as_ref())?;
    let classifier = ClassifierModel::load(&a.classifier)?;
    let config = classifier_config(
        None,
        ClassifierTrainConfig::combined_default(),
        a.schedule_scale,
        None,
        a.seed,
    )?;
    let mut inputs = data_inputs(&a.manifest, a.splits.as_ref());
    inputs.extend([a.covariates.as_path(), a.schema.as_path(), a.classifier.as_path()]);
    recorded(cmd.name(), cmd, Some(config.seed), &inputs, &a.out, || {
        let model = train_combined(&classifier, &manifest, &rows, &schema, &config)?;
        log::info!(
            "combined model: {} trainable, {} frozen parameters",
            model.trainable_parameter_count(),
            model.frozen_parameter_count()
        );
        model.save(&a.out)?;
        list_dir(&a.out)
    })
}

fn detect(cmd: &Command, a: &DetectArgs) -> Result<()> {
    let manifest = load_data(&a.manifest, a.splits.as_ref())?;
    let model = DetectorModel::load(&a.detector)?;
    let mut inputs = data_inputs(&a.manifest, a.splits.as_ref());
    inputs.push(&a.detector);
    recorded(cmd.name(), cmd, None, &inputs, &a.out, || {
        let detections = detect_split(&model, &manifest, a.split)?;
        let flat: Vec<_> = detections.into_values().flatten().collect();
        write_detections(&a.out.join(DETECTIONS_FILE), &flat)?;
        log::info!("{} detections", flat.len());
        Ok(vec![DETECTIONS_FILE.into()])
    })
}

fn export_features(cmd: &Command, a: &DetectArgs) -> Result<()> {
    #[derive(Serialize)]
    struct FeatureRow<'a> {
        detection: &'a dermtriage::detector::Detection,
        features: Vec<f32>,
    }
    let manifest = load_data(&a.manifest, a.splits.as_ref())?;
    let model = DetectorModel::load(&a.detector)?;
    let mut inputs = data_inputs(&a.manifest, a.splits.as_ref());
    inputs.push(&a.detector);
    recorded(cmd.name(), cmd, None, &inputs, &a.out, || {
        let mut text = String::new();
        for record in dermtriage::pipeline::split_records(&manifest, a.split) {
            let image = Pixels::open(&manifest.resolve_path(record))?;
            let detections = model.detect(&record.image_id, &image)?;
            let features = model.export_features(&image, &detections)?;
            let rows: Vec<FeatureRow> = detections
                .iter()
                .zip(features)
                .map(|(detection, features)| FeatureRow { detection, features })
                .collect();
            text.push_str(&to_json_lines(&rows)?);
        }
        write_text(&a.out.join(FEATURES_FILE), &text)?;
        Ok(vec![FEATURES_FILE.into()])
    })
}

/// File name of one strategy/aggregator score dump.
pub fn scores_file(strategy: StrategyKind, kind: AggregationKind) -> String {
    format!("scores_{strategy}_{kind}.jsonl")
}

fn score(cmd: &Command, a: &ScoreArgs) -> Result<()> {
    let manifest = load_data(&a.manifest, a.splits.as_ref())?;
    let models = LoadedModels::load(&a.models)?;
    let strategies = match a.strategy {
        Some(s) => vec![s],
        None => models.available(),
    };
    if strategies.is_empty() {
        return Err(Error::Config("no strategy can run: pass model directories".into()));
    }
    let kinds = match a.aggregator {
        Some(k) => vec![k],
        None => AggregationKind::ALL.to_vec(),
    };
    let m = &a.models;
    let mut inputs = data_inputs(&a.manifest, a.splits.as_ref());
    for dir in [&m.detector, &m.classifier, &m.direct, &m.malignancy_detector, &m.subtype_detector]
        .into_iter()
        .flatten()
    {
        inputs.push(dir);
    }
    recorded(cmd.name(), cmd, None, &inputs, &a.out, || {
        let set = models.set();
        let mut rows = Vec::new();
        let mut outputs = Vec::new();
        for &strategy in &strategies {
            let base = score_split(&set, strategy, kinds[0], &models.options, &manifest, a.split)?;
            for &kind in &kinds {
                let scores = if strategy == StrategyKind::Direct {
                    base.clone()
                } else {
                    base.iter()
                        .map(|s| s.reaggregate(kind, &models.options))
                        .collect::<Result<Vec<_>>>()?
                };
                let file = if strategies.len() == 1 && kinds.len() == 1 {
                    SCORES_FILE.to_string()
                } else {
                    scores_file(strategy, kind)
                };
                write_scores(&a.out.join(&file), &scores)?;
                outputs.push(PathBuf::from(file));
                let (auc, ap) = score_metrics(&manifest, &scores)?;
                rows.push(SweepRow {
                    strategy,
                    aggregator: kind,
                    aggregator_applies: strategy != StrategyKind::Direct,
                    n_images: scores.len(),
                    auc,
                    ap,
                });
            }
        }
        let table = sweep_table(&rows);
        log::info!("\n{table}");
        write_text(&a.out.join("sweep.csv"), &sweep_csv(&rows))?;
        write_text(&a.out.join("sweep.txt"), &table)?;
        outputs.extend(["sweep.csv".into(), "sweep.txt".into()]);
        Ok(outputs)
    })
}

fn evaluate(cmd: &Command, a: &EvaluateArgs) -> Result<()> {
    let manifest = load_data(&a.manifest, a.splits.as_ref())?;
    let scores: BTreeMap<String, f64> = read_scores(&a.scores)?
        .into_iter()
        .map(|s| (s.image_id, s.probability))
        .collect();
    let detections = match &a.detections {
        Some(p) => {
            let mut by_image: BTreeMap<String, Vec<_>> = BTreeMap::new();
            for d in read_detections(p)? {
                by_image.entry(d.image_id.clone()).or_default().push(d);
            }
            // Scored images with no detections still count toward recall.
            for id in scores.keys() {
                by_image.entry(id.clone()).or_default();
            }
            Some(scored_boxes(&by_image))
        }
        None => None,
    };
    let mut inputs = data_inputs(&a.manifest, a.splits.as_ref());
    inputs.push(&a.scores);
    inputs.extend(a.detections.iter().map(PathBuf::as_path));
    recorded(cmd.name(), cmd, None, &inputs, &a.out, || {
        let report = stratified_report(&manifest, &scores, detections.as_ref())?;
        let table = report.to_table();
        println!("{table}");
        write_text(&a.out.join("report.csv"), &report.to_csv())?;
        write_text(&a.out.join("report.txt"), &table)?;
        write_text(&a.out.join("report.json"), &serde_json::to_string_pretty(&report)?)?;
        Ok(vec!["report.csv".into(), "report.txt".into(), "report.json".into()])
    })
}
