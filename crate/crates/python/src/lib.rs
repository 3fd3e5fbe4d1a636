//! Python bindings: metrics, aggregation, synthetic data and model inference.
//!
//! Boxes cross the boundary as `(x_center, y_center, width, height)` tuples.

use std::path::PathBuf;

use dermtriage::classifier::{predict_roi, ClassifierModel};
use dermtriage::data::{Pixels, Roi};
use dermtriage::detector::{DetectorBackend, DetectorModel};
use dermtriage::metrics::{self, ScoredLabel};
use dermtriage::scorer::{self, AggregationKind, NoisyOrMode};
use dermtriage::synth::{generate_dataset, SynthConfig};
use dermtriage::Error;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

type BoxTuple = (f64, f64, f64, f64);

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn pairs(scores: &[f64], labels: &[bool]) -> PyResult<Vec<ScoredLabel>> {
    if scores.len() != labels.len() {
        return Err(PyValueError::new_err(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    Ok(scores.iter().zip(labels).map(|(&s, &l)| ScoredLabel::new(s, l)).collect())
}

fn roi(b: BoxTuple) -> Roi {
    Roi::new(b.0, b.1, b.2, b.3)
}

/// Area under the ROC curve.
#[pyfunction]
fn auc(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<f64> {
    metrics::auc(&pairs(&scores, &labels)?).map_err(py_err)
}

/// Area under the precision-recall curve.
#[pyfunction]
fn average_precision(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<f64> {
    metrics::average_precision(&pairs(&scores, &labels)?).map_err(py_err)
}

#[pyfunction]
fn iou(a: BoxTuple, b: BoxTuple) -> f64 {
    metrics::iou(&roi(a), &roi(b))
}

/// Combines per-lesion probabilities: `average`, `maximum` or `noisy_or`.
#[pyfunction]
#[pyo3(signature = (probs, kind, verbatim = false))]
fn aggregate(probs: Vec<f64>, kind: &str, verbatim: bool) -> PyResult<f64> {
    let kind: AggregationKind = kind.parse().map_err(py_err)?;
    let mode = if verbatim { NoisyOrMode::Verbatim } else { NoisyOrMode::Standard };
    scorer::aggregate_with(&probs, kind, mode).map_err(py_err)
}

/// Writes a synthetic dataset to `out_dir`; returns the number of images.
#[pyfunction]
#[pyo3(signature = (out_dir, images = 100, seed = 7))]
fn generate_synthetic(out_dir: PathBuf, images: usize, seed: u64) -> PyResult<usize> {
    let cfg = SynthConfig {
        images,
        seed,
        ..SynthConfig::default()
    };
    generate_dataset(&cfg, &out_dir).map(|o| o.manifest.len()).map_err(py_err)
}

#[pyclass(frozen)]
struct Detector {
    inner: DetectorModel,
}

#[pymethods]
impl Detector {
    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        DetectorModel::load(&dir).map(|inner| Detector { inner }).map_err(py_err)
    }

    #[getter]
    fn class_names(&self) -> Vec<String> {
        self.inner.granularity().class_names()
    }

    /// Detections on an image file as `(box, score, class_probs)`.
    fn detect(&self, path: PathBuf) -> PyResult<Vec<(BoxTuple, f64, Vec<f64>)>> {
        let image = Pixels::open(&path).map_err(py_err)?;
        let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let detections = self.inner.detect(&id, &image).map_err(py_err)?;
        Ok(detections
            .into_iter()
            .map(|d| {
                let r = d.roi;
                ((r.x_center, r.y_center, r.width, r.height), d.score, d.class_probs)
            })
            .collect())
    }
}

#[pyclass(frozen)]
struct Classifier {
    inner: ClassifierModel,
}

#[pymethods]
impl Classifier {
    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        ClassifierModel::load(&dir).map(|inner| Classifier { inner }).map_err(py_err)
    }

    /// Malignancy probability of one lesion box on an image file.
    fn score_roi(&self, path: PathBuf, roi_box: BoxTuple) -> PyResult<f64> {
        let image = Pixels::open(&path).map_err(py_err)?;
        predict_roi(&self.inner, "", &image, &roi(roi_box))
            .map(|s| s.probability)
            .map_err(py_err)
    }
}

#[pymodule]
fn dermtriage_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(auc, m)?)?;
    m.add_function(wrap_pyfunction!(average_precision, m)?)?;
    m.add_function(wrap_pyfunction!(iou, m)?)?;
    m.add_function(wrap_pyfunction!(aggregate, m)?)?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    m.add_class::<Detector>()?;
    m.add_class::<Classifier>()?;
    Ok(())
}
