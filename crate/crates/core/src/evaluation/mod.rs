//! Classification metrics, ROC analysis, R^2 and bootstrap confidence
//! intervals shaping the evaluation report.

mod auroc;
mod bootstrap;
mod confusion;
mod r2;
mod report;
mod threshold;

pub use auroc::{auroc, roc_curve, trapezoid_area};
pub use bootstrap::{bootstrap_ci, bootstrap_ci_indices};
pub use confusion::{binary_metrics, confusion_at_threshold, BinaryMetrics, ConfusionCounts};
pub use r2::{r2_score, R2Score};
pub use report::{build_report, roc_points_csv, MetricValue, MetricsReport, ReportInputs};
pub use threshold::choose_threshold;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty input")]
    Empty,
    #[error("scores and labels disagree: {scores} vs {labels}")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("score {0} outside [0, 1]")]
    BadScore(f64),
    #[error("label {0} is not binary")]
    BadLabel(u8),
    #[error("metric undefined: {0}")]
    Undefined(&'static str),
    #[error("bootstrap needs at least 100 resamples, got {0}")]
    TooFewResamples(usize),
    #[error("report io on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("report format: {0}")]
    Format(#[from] serde_json::Error),
}

fn check_scores_labels(scores: &[f64], labels: &[u8]) -> Result<(), EvalError> {
    if scores.is_empty() {
        return Err(EvalError::Empty);
    }
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&y| y > 1) {
        return Err(EvalError::BadLabel(bad));
    }
    Ok(())
}

fn class_counts(labels: &[u8]) -> (usize, usize) {
    let pos = labels.iter().filter(|&&y| y == 1).count();
    (pos, labels.len() - pos)
}
