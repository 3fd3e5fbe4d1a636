use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io_util::{read_json, write_json};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoricalFeature {
    pub name: String,
    pub levels: Vec<String>,
}

/// Names and kinds of the clinical covariates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CovariateSchema {
    pub continuous: Vec<String>,
    pub categorical: Vec<CategoricalFeature>,
}

/// Slot appended to every categorical block for unseen or missing levels.
pub const OTHER_LEVEL: &str = "other";

impl CovariateSchema {
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        let names = self
            .continuous
            .iter()
            .chain(self.categorical.iter().map(|c| &c.name));
        for name in names {
            if name == "image_id" {
                return Err(Error::Config("covariate name image_id is reserved".into()));
            }
            if !seen.insert(name.as_str()) {
                return Err(Error::Config(format!("duplicate covariate name {name:?}")));
            }
        }
        for c in &self.categorical {
            if c.levels.is_empty() {
                return Err(Error::Config(format!("categorical {:?} has no levels", c.name)));
            }
            let unique: HashSet<_> = c.levels.iter().collect();
            if unique.len() != c.levels.len() {
                return Err(Error::Config(format!("categorical {:?} repeats a level", c.name)));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let schema: CovariateSchema = read_json(path)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

/// Raw covariate values for one image; `None` marks a missing value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CovariateRow {
    pub image_id: String,
    pub values: BTreeMap<String, Option<String>>,
}

impl CovariateRow {
    pub fn get(&self, name: &str) -> Option<&str> {
        self.values.get(name).and_then(|v| v.as_deref())
    }

    pub(crate) fn continuous(&self, name: &str) -> Result<Option<f64>> {
        match self.get(name) {
            None => Ok(None),
            Some(raw) => raw.trim().parse::<f64>().map(Some).map_err(|_| {
                Error::InvalidInput(format!(
                    "covariate {name:?} of image {:?} expects a number, got {raw:?}",
                    self.image_id
                ))
            }),
        }
    }
}

/// Reads covariate rows from a CSV whose header is `image_id` followed by
/// schema feature names. Empty cells are missing values.
pub fn read_covariates(path: &Path, schema: &CovariateSchema) -> Result<Vec<CovariateRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.get(0) != Some("image_id") {
        return Err(Error::InvalidInput(format!(
            "{}: first column must be image_id",
            path.display()
        )));
    }
    let expected: Vec<&str> = schema
        .continuous
        .iter()
        .map(String::as_str)
        .chain(schema.categorical.iter().map(|c| c.name.as_str()))
        .collect();
    for name in &expected {
        if !headers.iter().any(|h| h == *name) {
            return Err(Error::InvalidInput(format!(
                "{}: missing covariate column {name:?}",
                path.display()
            )));
        }
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let image_id = record.get(0).unwrap_or_default().to_string();
        let values = headers
            .iter()
            .zip(record.iter())
            .skip(1)
            .filter(|(h, _)| expected.contains(h))
            .map(|(h, v)| {
                let v = v.trim();
                (h.to_string(), (!v.is_empty()).then(|| v.to_string()))
            })
            .collect();
        rows.push(CovariateRow { image_id, values });
    }
    Ok(rows)
}

pub fn write_covariates(path: &Path, schema: &CovariateSchema, rows: &[CovariateRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let names: Vec<&str> = schema
        .continuous
        .iter()
        .map(String::as_str)
        .chain(schema.categorical.iter().map(|c| c.name.as_str()))
        .collect();
    let mut header = vec!["image_id"];
    header.extend(&names);
    w.write_record(&header)?;
    for row in rows {
        let mut fields = vec![row.image_id.as_str()];
        fields.extend(names.iter().map(|n| row.get(n).unwrap_or("")));
        w.write_record(&fields)?;
    }
    w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))
}
