use std::time::Instant;

use rand::seq::SliceRandom;

use crate::data::{PreprocessedCohort, SplitIndices, STATIC_FULL_DIMS, STATIC_SCOREFREE_DIMS};
use crate::model::{
    decoder_forward, encoder_forward, make_mask, stage_weights, EncoderConfig, MaskPlan,
    ModelCheckpoint, ModelWeights, ParamFilter, Stage,
};
use crate::numerics::AdamWState;
use crate::rng;

use super::config::TrainConfig;
use super::dataset::{batches, gather_batch};
use super::log::{EpochRecord, TrainLog};
use super::TrainError;

/// Collect gradients for the selected parameters, zeros where a parameter
/// has no path to the loss.
pub(super) fn collect_grads(
    tape: &crate::numerics::Tape,
    grads: &crate::numerics::Gradients,
    ids: &[crate::numerics::NodeId],
) -> Vec<Vec<f64>> {
    ids.iter()
        .map(|&id| {
            grads
                .get(id)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; tape.value(id).len()])
        })
        .collect()
}

/// Self-supervised reconstruction pretraining. Minimizes the masked-cell MSE
/// with AdamW; early-stops on the validation reconstruction loss (fixed
/// validation masks so epochs are comparable); returns the checkpoint with
/// the best validation loss.
pub fn pretrain_mae(
    cohort: &PreprocessedCohort,
    splits: &SplitIndices,
    enc_cfg: &EncoderConfig,
    cfg: &TrainConfig,
) -> Result<(ModelCheckpoint, TrainLog), TrainError> {
    cfg.validate()?;
    enc_cfg.validate()?;
    let mut weights = ModelWeights::init(
        enc_cfg,
        STATIC_FULL_DIMS,
        STATIC_SCOREFREE_DIMS,
        cfg.seed,
    )?;
    let filter = ParamFilter::pretrain();
    let mut optimizer = AdamWState::new(&weights.params(filter), cfg.optimizer_hyperparams())?;

    // one fixed mask per validation patient keeps epochs comparable
    let val_plan = make_mask(
        splits.validation.len(),
        enc_cfg,
        rng::derive_seed(cfg.seed, "mask-val", &[]),
    )?;

    let mut log = TrainLog::new("pretrain");
    let mut best: Option<(f64, ModelWeights)> = None;
    let mut stale_epochs = 0usize;
    let mut train_ix = splits.train.to_vec();

    for epoch in 1..=cfg.max_epochs_pretrain {
        let started = Instant::now();
        train_ix.shuffle(&mut rng::substream_indexed(cfg.seed, "shuffle-pretrain", &[epoch as u64]));
        let mut sq_sum = 0.0;
        let mut cell_sum = 0usize;
        for (batch_ix, chunk) in batches(&train_ix, cfg.batch_size).into_iter().enumerate() {
            let batch = gather_batch(cohort, &chunk);
            let plan = make_mask(
                chunk.len(),
                enc_cfg,
                rng::derive_seed(cfg.seed, "mask-pretrain", &[epoch as u64, batch_ix as u64]),
            )?;
            let flat_mask = plan.flat();
            let mut dropout_rng =
                rng::substream_indexed(cfg.seed, "dropout-pretrain", &[epoch as u64, batch_ix as u64]);

            let mut tape = crate::numerics::Tape::new();
            let model = stage_weights(&mut tape, &weights, true);
            let latent = encoder_forward(&mut tape, &model, &batch.x, Some(&plan), true, &mut dropout_rng)?;
            let recon = decoder_forward(&mut tape, &model, latent)?;
            let target = tape.constant(batch.x.clone());
            let loss_id = tape.mse_loss(recon, target, Some(&flat_mask))?;
            let loss = tape.value(loss_id).item()?;
            if !loss.is_finite() {
                return Err(TrainError::Divergence {
                    stage: "pretrain",
                    epoch,
                });
            }
            let selected = flat_mask.iter().filter(|&&m| m).count();
            sq_sum += loss * selected as f64;
            cell_sum += selected;

            let grads = tape.backward(loss_id)?;
            let ids = model.param_ids(filter);
            let grad_vecs = collect_grads(&tape, &grads, &ids);
            optimizer.step(&mut weights.params_mut(filter), &grad_vecs)?;
        }
        let train_loss = sq_sum / cell_sum.max(1) as f64;
        let val_loss = reconstruction_loss(&weights, cohort, &splits.validation, &val_plan, cfg.batch_size)?;
        if !val_loss.is_finite() {
            return Err(TrainError::Divergence {
                stage: "pretrain",
                epoch,
            });
        }
        log.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_auroc: None,
            loss_ce: None,
            loss_reg: None,
            loss_kd: None,
            wall_time_s: started.elapsed().as_secs_f64(),
        });
        let improved = best.as_ref().map_or(true, |(b, _)| val_loss < *b);
        if improved {
            best = Some((val_loss, weights.clone()));
            stale_epochs = 0;
        } else {
            stale_epochs += 1;
            if stale_epochs >= cfg.patience {
                break;
            }
        }
    }
    let (_, best_weights) = best.ok_or(TrainError::Config("no pretraining epochs ran".into()))?;
    Ok((ModelCheckpoint::from_weights(&best_weights, Stage::Mae), log))
}

/// Masked reconstruction loss of a split in eval mode, under a fixed plan
/// indexed by split position.
pub(super) fn reconstruction_loss(
    weights: &ModelWeights,
    cohort: &PreprocessedCohort,
    indices: &[usize],
    plan: &MaskPlan,
    batch_size: usize,
) -> Result<f64, TrainError> {
    let mut silent_rng = rng::substream(0, "eval");
    let mut sq_sum = 0.0;
    let mut cell_sum = 0usize;
    let mut cursor = 0usize;
    for chunk in batches(indices, batch_size) {
        let batch = gather_batch(cohort, &chunk);
        let sub_plan = plan.subset(cursor, chunk.len());
        cursor += chunk.len();
        let flat_mask = sub_plan.flat();
        let mut tape = crate::numerics::Tape::new();
        let model = stage_weights(&mut tape, weights, false);
        let latent = encoder_forward(&mut tape, &model, &batch.x, Some(&sub_plan), false, &mut silent_rng)?;
        let recon = decoder_forward(&mut tape, &model, latent)?;
        let target = tape.constant(batch.x.clone());
        let loss_id = tape.mse_loss(recon, target, Some(&flat_mask))?;
        let selected = flat_mask.iter().filter(|&&m| m).count();
        sq_sum += tape.value(loss_id).item()? * selected as f64;
        cell_sum += selected;
    }
    Ok(sq_sum / cell_sum.max(1) as f64)
}
