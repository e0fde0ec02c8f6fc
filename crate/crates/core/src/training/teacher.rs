use crate::data::{PreprocessedCohort, SplitIndices, STATIC_FULL_DIMS, STATIC_SCOREFREE_DIMS};
use crate::model::{ModelCheckpoint, ModelWeights, Stage};
use crate::rng;

use super::config::TrainConfig;
use super::log::TrainLog;
use super::scoring::score_split;
use super::student::supervised_loop;
use super::TrainError;

/// Frozen teacher: the pretrained encoder plus heads, all parameters fixed
/// and used in eval mode only. The API carries no mutable access; the hash
/// captured at build time lets callers verify the freeze.
#[derive(Debug, Clone)]
pub struct Teacher {
    weights: ModelWeights,
    frozen_hash: u64,
}

impl Teacher {
    pub fn weights(&self) -> &ModelWeights {
        &self.weights
    }

    /// Hash recorded when the teacher was frozen.
    pub fn frozen_hash(&self) -> u64 {
        self.frozen_hash
    }

    /// Hash of the parameters right now; equal to `frozen_hash` unless
    /// something violated the freeze.
    pub fn current_hash(&self) -> u64 {
        self.weights.content_hash()
    }

    /// Eval-mode classification logits per patient, batch-invariant.
    pub fn logits_for(
        &self,
        cohort: &PreprocessedCohort,
        indices: &[usize],
        batch_size: usize,
    ) -> Result<Vec<[f64; 2]>, TrainError> {
        Ok(score_split(&self.weights, cohort, indices, batch_size)?.logits)
    }

    pub fn to_checkpoint(&self) -> ModelCheckpoint {
        ModelCheckpoint::from_weights(&self.weights, Stage::Teacher)
    }
}

/// Build the frozen teacher from a pretraining checkpoint: the MAE encoder
/// weights with freshly initialized heads. By default no supervised training
/// touches the teacher; `teacher_finetune` optionally trains it on labeled
/// data first (heads and encoder) before freezing.
pub fn build_teacher(
    mae: &ModelCheckpoint,
    cohort: &PreprocessedCohort,
    splits: &SplitIndices,
    cfg: &TrainConfig,
) -> Result<(Teacher, Option<TrainLog>), TrainError> {
    mae.expect_stage(Stage::Mae)?;
    let encoder_source = mae.to_weights()?;
    let mut weights = ModelWeights::init(
        &encoder_source.config,
        STATIC_FULL_DIMS,
        STATIC_SCOREFREE_DIMS,
        rng::derive_seed(cfg.seed, "teacher-init", &[]),
    )?;
    weights.load_encoder_from(&encoder_source);

    let mut finetune_log = None;
    if cfg.teacher_finetune {
        let supervised = TrainConfig {
            kd_enabled: false,
            ..cfg.clone()
        };
        let log = supervised_loop(
            &mut weights,
            cohort,
            splits,
            None,
            &supervised,
            "teacher-finetune",
        )?;
        finetune_log = Some(log);
    }

    let frozen_hash = weights.content_hash();
    Ok((
        Teacher {
            weights,
            frozen_hash,
        },
        finetune_log,
    ))
}
