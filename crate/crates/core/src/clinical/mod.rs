//! Clinical covariates: schema, standardization and one-hot encoding,
//! logistic regression, and the fused image + covariate model.

mod combined;
mod encode;
mod logistic;
mod model;
mod schema;

pub use combined::{predict_combined, train_combined, CombinedModel, LogitParts};
pub use encode::{
    encode_covariates, encoded_len, encoded_names, fit_standardizer, mean_std, CovariateVector,
    FeatureStats, StandardizationStats,
};
pub use logistic::{
    logistic_gradient, logistic_loss, train_logistic, LogisticModel, LogisticOptions,
};
pub use model::{split_rows, train_clinical, ClinicalModel, CLINICAL_FILE};
pub use schema::{
    read_covariates, write_covariates, CategoricalFeature, CovariateRow, CovariateSchema,
    OTHER_LEVEL,
};
