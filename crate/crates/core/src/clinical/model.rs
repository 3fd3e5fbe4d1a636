use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::encode::{encode_covariates, fit_standardizer, StandardizationStats};
use super::logistic::{train_logistic, LogisticModel, LogisticOptions};
use super::schema::{CovariateRow, CovariateSchema};
use crate::data::{DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::io_util::{read_json, write_json};

/// Covariates-only malignancy model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClinicalModel {
    pub schema: CovariateSchema,
    pub stats: StandardizationStats,
    pub logistic: LogisticModel,
}

pub const CLINICAL_FILE: &str = "clinical.json";

impl ClinicalModel {
    pub fn predict(&self, row: &CovariateRow) -> Result<f64> {
        let x = encode_covariates(row, &self.schema, &self.stats)?;
        Ok(self.logistic.predict(x.as_slice()))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        write_json(&dir.join(CLINICAL_FILE), self)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        read_json(&dir.join(CLINICAL_FILE))
    }
}

/// Labelled covariate rows of one split; images without a row are skipped
/// with a warning.
pub fn split_rows<'a>(
    manifest: &DatasetManifest,
    rows: &'a [CovariateRow],
    split: Split,
) -> Vec<(&'a CovariateRow, bool)> {
    let by_id: HashMap<&str, &CovariateRow> = rows.iter().map(|r| (r.image_id.as_str(), r)).collect();
    manifest
        .split_records(split)
        .filter_map(|record| match by_id.get(record.image_id.as_str()) {
            Some(row) => Some((*row, record.image_label() == 1)),
            None => {
                log::warn!("{}: no covariate row, excluded", record.image_id);
                None
            }
        })
        .collect()
}

/// Fits the standardizer and logistic regression on the train split.
pub fn train_clinical(
    manifest: &DatasetManifest,
    rows: &[CovariateRow],
    schema: &CovariateSchema,
    options: &LogisticOptions,
) -> Result<ClinicalModel> {
    schema.validate()?;
    let train = split_rows(manifest, rows, Split::Train);
    if train.is_empty() {
        return Err(Error::Training("no training image has a covariate row".into()));
    }
    let train_rows: Vec<CovariateRow> = train.iter().map(|(r, _)| (*r).clone()).collect();
    let stats = fit_standardizer(&train_rows, schema)?;
    let xs = train
        .iter()
        .map(|(r, _)| encode_covariates(r, schema, &stats).map(|v| v.0))
        .collect::<Result<Vec<_>>>()?;
    let ys: Vec<bool> = train.iter().map(|(_, y)| *y).collect();
    let logistic = train_logistic(&xs, &ys, options)?;
    Ok(ClinicalModel {
        schema: schema.clone(),
        stats,
        logistic,
    })
}
