use serde::{Deserialize, Serialize};

use super::schema::{CovariateRow, CovariateSchema, OTHER_LEVEL};
use crate::error::{Error, Result};

/// Training-split mean and population standard deviation of one
/// continuous covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub name: String,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub features: Vec<FeatureStats>,
    /// Constant columns left out of the encoding.
    pub dropped: Vec<String>,
}

/// Population mean and standard deviation of every continuous covariate
/// over `rows`, ignoring missing values.
pub fn fit_standardizer(rows: &[CovariateRow], schema: &CovariateSchema) -> Result<StandardizationStats> {
    schema.validate()?;
    if rows.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "standardization needs at least 2 rows, got {}",
            rows.len()
        )));
    }
    let mut features = Vec::new();
    let mut dropped = Vec::new();
    for name in &schema.continuous {
        let values: Vec<f64> = rows
            .iter()
            .map(|r| r.continuous(name))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect();
        if values.is_empty() {
            log::warn!("covariate {name:?} has no observed values; dropped");
            dropped.push(name.clone());
            continue;
        }
        let (mean, std) = mean_std(&values);
        if std == 0.0 || !std.is_finite() {
            log::warn!("covariate {name:?} is constant; dropped");
            dropped.push(name.clone());
            continue;
        }
        features.push(FeatureStats {
            name: name.clone(),
            mean,
            std,
        });
    }
    Ok(StandardizationStats { features, dropped })
}

/// Two-pass population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Dense encoding: standardized continuous values followed by one one-hot
/// block per categorical feature (schema levels, then an "other" slot).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateVector(pub Vec<f64>);

impl CovariateVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Slot names of the encoded vector, in order.
pub fn encoded_names(schema: &CovariateSchema, stats: &StandardizationStats) -> Vec<String> {
    let mut names: Vec<String> = stats.features.iter().map(|f| f.name.clone()).collect();
    for c in &schema.categorical {
        names.extend(c.levels.iter().map(|l| format!("{}={l}", c.name)));
        names.push(format!("{}={OTHER_LEVEL}", c.name));
    }
    names
}

pub fn encoded_len(schema: &CovariateSchema, stats: &StandardizationStats) -> usize {
    stats.features.len() + schema.categorical.iter().map(|c| c.levels.len() + 1).sum::<usize>()
}

/// Encodes one row. Missing continuous values become the training mean
/// (standardized 0); missing or unseen categorical levels set the "other"
/// slot.
pub fn encode_covariates(
    row: &CovariateRow,
    schema: &CovariateSchema,
    stats: &StandardizationStats,
) -> Result<CovariateVector> {
    let mut out = Vec::with_capacity(encoded_len(schema, stats));
    for f in &stats.features {
        let v = row.continuous(&f.name)?;
        out.push(v.map_or(0.0, |v| (v - f.mean) / f.std));
    }
    for c in &schema.categorical {
        let level = row.get(&c.name).map(str::trim);
        let slot = level
            .and_then(|l| c.levels.iter().position(|x| x == l))
            .unwrap_or(c.levels.len());
        out.extend((0..=c.levels.len()).map(|i| if i == slot { 1.0 } else { 0.0 }));
    }
    Ok(CovariateVector(out))
}
