use crate::data::{PreprocessedCohort, SplitIndices};
use crate::evaluation::{build_report, choose_threshold, roc_curve, MetricsReport, ReportInputs};
use crate::model::ModelWeights;

use super::config::TrainConfig;
use super::scoring::score_split;
use super::TrainError;

/// Test-set evaluation bundle: the Table-shaped report, the ROC points and
/// the validation-frozen threshold that produced the thresholded metrics.
#[derive(Debug, Clone)]
pub struct EvaluationArtifacts {
    pub report: MetricsReport,
    pub roc_points: Vec<(f64, f64)>,
    pub threshold: f64,
}

/// Evaluate a trained model: choose the operating threshold on the
/// validation split (Youden's J), freeze it, and report every metric with
/// bootstrap CIs on the test split.
pub fn evaluate_student(
    weights: &ModelWeights,
    cohort: &PreprocessedCohort,
    splits: &SplitIndices,
    cfg: &TrainConfig,
    config_name: &str,
    n_resamples: usize,
    notes: Vec<String>,
) -> Result<EvaluationArtifacts, TrainError> {
    let val = score_split(weights, cohort, &splits.validation, cfg.batch_size)?;
    let threshold = choose_threshold(&val.probs, &val.labels)?;

    let test = score_split(weights, cohort, &splits.test, cfg.batch_size)?;
    let report = build_report(&ReportInputs {
        config_name: config_name.to_string(),
        kd_enabled: cfg.kd_enabled,
        mt_enabled: cfg.mt_enabled,
        seed: cfg.seed,
        split_hash: splits.content_hash(),
        threshold,
        scores: &test.probs,
        labels: &test.labels,
        reg_pred: &test.reg_pred,
        reg_target: &test.reg_target,
        n_resamples,
        notes,
    })?;
    let roc_points = roc_curve(&test.probs, &test.labels)?;
    Ok(EvaluationArtifacts {
        report,
        roc_points,
        threshold,
    })
}
