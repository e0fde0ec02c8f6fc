//! The three-stage pipeline: MAE pretraining, frozen-teacher setup, and
//! student multitask training with optional knowledge distillation, plus
//! loss assembly, early stopping and the ablation harness.

mod ablation;
mod config;
mod dataset;
mod evaluate;
mod log;
mod losses;
mod pretrain;
mod student;
mod teacher;

pub use ablation::{run_ablation, AblationArm, AblationOutcome};
pub use config::TrainConfig;
pub use dataset::{gather_batch, BatchData};
pub use evaluate::{evaluate_student, EvaluationArtifacts};
pub use log::{EpochRecord, TrainLog};
pub use losses::{kd_loss, mae_loss, student_total_loss, LossComponents};
pub use pretrain::pretrain_mae;
pub use student::train_student;
pub use teacher::{build_teacher, Teacher};

pub use scoring::{score_split, SplitScores};
mod scoring;

use thiserror::Error;

use crate::data::DataError;
use crate::evaluation::EvalError;
use crate::model::ModelError;
use crate::numerics::NumericsError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite loss at {stage} epoch {epoch}: training diverged")]
    Divergence { stage: &'static str, epoch: usize },
    #[error("missing dependency: {0}")]
    MissingArtifact(&'static str),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}
