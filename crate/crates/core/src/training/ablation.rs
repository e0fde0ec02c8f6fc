use crate::data::{PreprocessedCohort, SplitIndices};
use crate::evaluation::MetricsReport;
use crate::model::{EncoderConfig, ModelCheckpoint};

use super::config::TrainConfig;
use super::evaluate::evaluate_student;
use super::log::TrainLog;
use super::pretrain::pretrain_mae;
use super::student::train_student;
use super::teacher::build_teacher;
use super::TrainError;

/// One trained and evaluated ablation configuration.
#[derive(Debug, Clone)]
pub struct AblationArm {
    pub name: String,
    pub kd_enabled: bool,
    pub mt_enabled: bool,
    pub report: MetricsReport,
    pub log: TrainLog,
    pub checkpoint: ModelCheckpoint,
    pub roc_points: Vec<(f64, f64)>,
}

/// The three-arm comparison sharing one seed, one split and one pretrained
/// encoder.
#[derive(Debug, Clone)]
pub struct AblationOutcome {
    pub split_hash: u64,
    pub mae_checkpoint: ModelCheckpoint,
    pub mae_log: TrainLog,
    pub arms: Vec<AblationArm>,
}

impl AblationOutcome {
    pub fn arm(&self, name: &str) -> Option<&AblationArm> {
        self.arms.iter().find(|a| a.name == name)
    }

    /// The comparison table: one CSV row per arm.
    pub fn table_csv(&self) -> String {
        let mut out = MetricsReport::csv_header();
        out.push('\n');
        for arm in &self.arms {
            out.push_str(&arm.report.csv_row());
            out.push('\n');
        }
        out
    }
}

/// Run `baseline` (kd+mt), `no_kd` (mt only) and `no_mt` (kd only) with a
/// shared seed, shared splits and a shared MAE checkpoint, and evaluate each
/// arm on the same test split. The `no_mt` report's R^2 reflects an
/// untrained regression head and is flagged in its notes.
pub fn run_ablation(
    cohort: &PreprocessedCohort,
    splits: &SplitIndices,
    enc_cfg: &EncoderConfig,
    base_cfg: &TrainConfig,
    n_resamples: usize,
) -> Result<AblationOutcome, TrainError> {
    let (mae_checkpoint, mae_log) = pretrain_mae(cohort, splits, enc_cfg, base_cfg)?;
    let (teacher, _) = build_teacher(&mae_checkpoint, cohort, splits, base_cfg)?;

    let mut arms = Vec::with_capacity(3);
    for (name, kd, mt) in TrainConfig::ablation_grid() {
        let cfg = base_cfg.with_arm(kd, mt);
        let outcome = train_student(
            cohort,
            splits,
            kd.then_some(&teacher),
            Some(&mae_checkpoint),
            enc_cfg,
            &cfg,
        )?;
        if kd {
            assert_eq!(
                outcome.teacher_hash_before, outcome.teacher_hash_after,
                "teacher freeze violated in arm {name}"
            );
        }
        let notes = if mt {
            vec![]
        } else {
            vec![
                "r2 reflects the untrained regression head (regression branch disabled); \
                 not comparable with multitask arms"
                    .to_string(),
            ]
        };
        let weights = outcome.checkpoint.to_weights()?;
        let eval = evaluate_student(&weights, cohort, splits, &cfg, name, n_resamples, notes)?;
        arms.push(AblationArm {
            name: name.to_string(),
            kd_enabled: kd,
            mt_enabled: mt,
            report: eval.report,
            log: outcome.log,
            checkpoint: outcome.checkpoint,
            roc_points: eval.roc_points,
        });
    }
    Ok(AblationOutcome {
        split_hash: splits.content_hash(),
        mae_checkpoint,
        mae_log,
        arms,
    })
}
