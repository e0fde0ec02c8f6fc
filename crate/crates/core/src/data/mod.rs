//! Cohort schema, synthetic cohort generation and the preprocessing pipeline:
//! imputation, log1p + z-score normalization, one-hot encoding, stratified
//! splitting and class weighting.

mod preprocess;
mod schema;
mod split;
mod synthetic;

pub use preprocess::{
    apply_normalizer, build_vis_series, decode_static, encode_static, fit_preprocess_stats,
    impute, preprocess, CategoricalStats, EncodingManifest, PreprocessStats, PreprocessedCohort,
    StaticVector, VisSeries, N_SCORES, SCORE_NAMES, STATIC_FULL_DIMS, STATIC_SCOREFREE_DIMS,
};
pub use schema::{
    compute_total_vis, read_cohort, read_cohort_str, write_cohort, write_cohort_string,
    PatientRecord, AGENTS, HOURS, N_AGENTS, VIS_FEATURES, VIS_WEIGHTS,
};
pub use split::{compute_class_weights, stratified_split, SplitIndices};
pub use synthetic::{generate_synthetic_cohort, GeneratorConfig};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("patient {patient_id}: {message}")]
    Validation { patient_id: String, message: String },
    #[error("cohort line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot fit {what}: no non-null values in the train split")]
    CannotFit { what: String },
    #[error("log1p domain error: negative value {0}")]
    Domain(f64),
    #[error("split fractions {0:?} must be nonnegative and sum to 1")]
    BadFractions([f64; 3]),
    #[error("stratification failed: {0}")]
    Stratification(String),
    #[error("class {0} is absent from the train split")]
    DegenerateClass(u8),
    #[error("generator: {0}")]
    Generator(String),
}
