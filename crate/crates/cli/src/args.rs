//! Command-line arguments. Every subcommand's arguments double as its JSON
//! configuration document (`dermtriage run --config file.json`), tagged by a
//! `command` field.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use dermtriage::data::Split;
use dermtriage::detector::Granularity;
use dermtriage::scorer::{AggregationKind, StrategyKind};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "dermtriage", version, about = "Skin-lesion triage: synthesis, training, scoring, evaluation, serving")]
pub struct Cli {
    /// Log filter, e.g. `info` or `dermtriage=debug`.
    #[arg(long, global = true, default_value = "info")]
    pub log_level: String,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Render a synthetic dataset with a manifest and clinical covariates.
    Synth(SynthArgs),
    /// Assign patient-disjoint train/val/test splits.
    Split(SplitArgs),
    /// Train a lesion detector at one label granularity.
    TrainDetector(TrainDetectorArgs),
    /// Train the ROI malignancy classifier on ground-truth lesion crops.
    TrainClassifier(TrainClassifierArgs),
    /// Train the whole-image classifier.
    TrainDirect(TrainClassifierArgs),
    /// Fit the covariates-only logistic model.
    TrainClinical(TrainClinicalArgs),
    /// Fit the image + covariate model on a frozen classifier.
    TrainCombined(TrainCombinedArgs),
    /// Run a detector over a split and dump detections.
    Detect(DetectArgs),
    /// Score images with one or all strategy/aggregator combinations.
    Score(ScoreArgs),
    /// Compute the stratified metric report for a score dump.
    Evaluate(EvaluateArgs),
    /// Dump the detector representation of every detection.
    ExportFeatures(DetectArgs),
    /// Serve the HTTP scoring and annotation API.
    Serve(ServeArgs),
    /// Run the command described by a JSON configuration document.
    #[serde(skip)]
    Run(RunArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Split(_) => "split",
            Command::TrainDetector(_) => "train-detector",
            Command::TrainClassifier(_) => "train-classifier",
            Command::TrainDirect(_) => "train-direct",
            Command::TrainClinical(_) => "train-clinical",
            Command::TrainCombined(_) => "train-combined",
            Command::Detect(_) => "detect",
            Command::Score(_) => "score",
            Command::Evaluate(_) => "evaluate",
            Command::ExportFeatures(_) => "export-features",
            Command::Serve(_) => "serve",
            Command::Run(_) => "run",
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub images: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Full generator settings as JSON; `--images` and `--seed` override it.
    #[arg(long)]
    pub generator: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    #[arg(long)]
    pub val_fraction: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainDetectorArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub splits: Option<PathBuf>,
    #[arg(long)]
    pub granularity: Granularity,
    #[arg(long)]
    pub out: PathBuf,
    /// Multiplies the step count and decay breakpoints.
    #[arg(long)]
    pub schedule_scale: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Full optimizer settings as JSON.
    #[arg(long)]
    pub train_config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainClassifierArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub splits: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Multiplies the epoch count.
    #[arg(long)]
    pub schedule_scale: Option<f64>,
    #[arg(long)]
    pub crop_side: Option<u32>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub train_config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainClinicalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub splits: Option<PathBuf>,
    #[arg(long)]
    pub covariates: PathBuf,
    #[arg(long)]
    pub schema: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub l2: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainCombinedArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub splits: Option<PathBuf>,
    #[arg(long)]
    pub covariates: PathBuf,
    #[arg(long)]
    pub schema: PathBuf,
    /// Directory of a trained classifier whose conv layers are frozen.
    #[arg(long)]
    pub classifier: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub schedule_scale: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub splits: Option<PathBuf>,
    /// Defaults to every image in the manifest.
    #[arg(long)]
    pub split: Option<Split>,
    #[arg(long)]
    pub detector: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Model directories; a strategy runs only when its models are given.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelArgs {
    /// One-class detector (two-stage).
    #[arg(long)]
    #[serde(default)]
    pub detector: Option<PathBuf>,
    /// ROI classifier (two-stage).
    #[arg(long)]
    #[serde(default)]
    pub classifier: Option<PathBuf>,
    /// Whole-image classifier.
    #[arg(long)]
    #[serde(default)]
    pub direct: Option<PathBuf>,
    #[arg(long)]
    #[serde(default)]
    pub malignancy_detector: Option<PathBuf>,
    #[arg(long)]
    #[serde(default)]
    pub subtype_detector: Option<PathBuf>,
    /// Image + covariate model (service only).
    #[arg(long)]
    #[serde(default)]
    pub combined: Option<PathBuf>,
    /// Use 1 - prod(p) instead of 1 - prod(1 - p) for noisy-OR.
    #[arg(long)]
    #[serde(default)]
    pub verbatim_noisy_or: bool,
    /// Image probability when nothing is detected (default 0).
    #[arg(long)]
    #[serde(default)]
    pub empty_probability: Option<f64>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub splits: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<Split>,
    /// Defaults to every strategy whose models are given.
    #[arg(long)]
    pub strategy: Option<StrategyKind>,
    /// Defaults to all three aggregators.
    #[arg(long)]
    pub aggregator: Option<AggregationKind>,
    #[command(flatten)]
    pub models: ModelArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub splits: Option<PathBuf>,
    /// Image-level scores (JSON lines from `score`).
    #[arg(long)]
    pub scores: PathBuf,
    /// Detections (JSON lines from `detect`) for the localization metrics.
    #[arg(long)]
    pub detections: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServeArgs {
    /// Address to listen on (default 127.0.0.1:8080).
    #[arg(long)]
    pub bind: Option<String>,
    #[command(flatten)]
    pub models: ModelArgs,
    /// Directory of the append-only annotation store.
    #[arg(long)]
    pub annotations: PathBuf,
}
