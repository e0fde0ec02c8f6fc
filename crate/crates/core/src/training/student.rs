use std::collections::HashMap;
use std::time::Instant;

use rand::seq::SliceRandom;

use crate::data::{
    compute_class_weights, PreprocessedCohort, SplitIndices, STATIC_FULL_DIMS,
    STATIC_SCOREFREE_DIMS,
};
use crate::evaluation::auroc;
use crate::model::{
    classify_head, cls_token, encoder_forward, regress_head, stage_weights, EncoderConfig,
    ModelCheckpoint, ModelWeights, ParamFilter, Stage,
};
use crate::numerics::{AdamWState, Tape, Tensor};
use crate::rng;

use super::config::TrainConfig;
use super::dataset::{batches, gather_batch};
use super::log::{EpochRecord, TrainLog};
use super::losses::student_total_loss;
use super::pretrain::collect_grads;
use super::scoring::score_split;
use super::teacher::Teacher;
use super::TrainError;

/// Result of student training: the best-validation checkpoint, the trace,
/// and the teacher freeze evidence.
#[derive(Debug, Clone)]
pub struct StudentOutcome {
    pub checkpoint: ModelCheckpoint,
    pub log: TrainLog,
    pub teacher_hash_before: Option<u64>,
    pub teacher_hash_after: Option<u64>,
    pub best_val_auroc: f64,
    pub epochs_run: usize,
}

/// Supervised multitask loop shared by student training and the optional
/// teacher finetune. Trains `weights` in place with AdamW and early stopping
/// on validation AUROC, leaving the best-epoch parameters in `weights`.
pub(super) fn supervised_loop(
    weights: &mut ModelWeights,
    cohort: &PreprocessedCohort,
    splits: &SplitIndices,
    teacher_logits: Option<&HashMap<usize, [f64; 2]>>,
    cfg: &TrainConfig,
    stage_name: &'static str,
) -> Result<TrainLog, TrainError> {
    cfg.validate()?;
    if cfg.kd_enabled && teacher_logits.is_none() {
        return Err(TrainError::Config(
            "kd enabled but no teacher logits supplied".into(),
        ));
    }
    let train_labels: Vec<u8> = splits.train.iter().map(|&i| cohort.labels[i]).collect();
    let class_weights = compute_class_weights(&train_labels)?;
    let filter = ParamFilter::student(cfg.mt_enabled);
    let mut optimizer = AdamWState::new(&weights.params(filter), cfg.optimizer_hyperparams())?;

    let mut log = TrainLog::new(stage_name);
    let mut best: Option<(f64, ModelWeights)> = None;
    let mut stale_epochs = 0usize;
    let mut train_ix = splits.train.to_vec();

    for epoch in 1..=cfg.max_epochs_student {
        let started = Instant::now();
        train_ix.shuffle(&mut rng::substream_indexed(
            cfg.seed,
            "shuffle-student",
            &[epoch as u64],
        ));
        let mut sums = (0.0, 0.0, 0.0, 0.0); // total, ce, reg, kd (weighted)
        let mut seen = 0usize;
        for (batch_ix, chunk) in batches(&train_ix, cfg.batch_size).into_iter().enumerate() {
            let batch = gather_batch(cohort, &chunk);
            let mut dropout_rng = rng::substream_indexed(
                cfg.seed,
                "dropout-student",
                &[epoch as u64, batch_ix as u64],
            );
            let mut tape = Tape::new();
            let model = stage_weights(&mut tape, weights, true);
            let latent = encoder_forward(&mut tape, &model, &batch.x, None, true, &mut dropout_rng)?;
            let cls = cls_token(&mut tape, &model, latent)?;
            let sf = tape.constant(batch.static_full.clone());
            let logits = classify_head(&mut tape, &model, cls, sf, true, &mut dropout_rng)?;

            let ce_raw = tape.weighted_ce(logits, &batch.labels, &class_weights)?;
            let ce_node = tape.scale(ce_raw, cfg.lambda_cls)?;
            let mut total_node = ce_node;
            let mut reg_value = None;
            if cfg.mt_enabled {
                let ssf = tape.constant(batch.static_score_free.clone());
                let reg = regress_head(&mut tape, &model, cls, ssf, true, &mut dropout_rng)?;
                let target = tape.constant(batch.reg_targets.clone());
                let reg_raw = tape.mse_loss(reg, target, None)?;
                let reg_node = tape.scale(reg_raw, cfg.lambda_reg)?;
                total_node = tape.add(total_node, reg_node)?;
                reg_value = Some(tape.value(reg_node).item()?);
            }
            let mut kd_value = None;
            if cfg.kd_enabled {
                let map = teacher_logits.expect("checked above");
                let mut t_data = Vec::with_capacity(chunk.len() * 2);
                for &i in &chunk {
                    let row = map.get(&i).ok_or(TrainError::MissingArtifact(
                        "teacher logits for a training patient",
                    ))?;
                    t_data.extend_from_slice(row);
                }
                let t_logits = tape.constant(Tensor::new(vec![chunk.len(), 2], t_data)?);
                let kd_raw = tape.kd_loss(logits, t_logits)?;
                let kd_node = tape.scale(kd_raw, cfg.lambda_kd)?;
                total_node = tape.add(total_node, kd_node)?;
                kd_value = Some(tape.value(kd_node).item()?);
            }

            let total = tape.value(total_node).item()?;
            if !total.is_finite() {
                return Err(TrainError::Divergence {
                    stage: stage_name,
                    epoch,
                });
            }
            let ce_value = tape.value(ce_node).item()?;
            let parts = ce_value + reg_value.unwrap_or(0.0) + kd_value.unwrap_or(0.0);
            assert!(
                (total - parts).abs() <= 1e-12,
                "loss decomposition drifted: total {total} vs parts {parts}"
            );

            let grads = tape.backward(total_node)?;
            let ids = model.param_ids(filter);
            let grad_vecs = collect_grads(&tape, &grads, &ids);
            optimizer.step(&mut weights.params_mut(filter), &grad_vecs)?;

            let w = chunk.len() as f64;
            sums.0 += total * w;
            sums.1 += ce_value * w;
            sums.2 += reg_value.unwrap_or(0.0) * w;
            sums.3 += kd_value.unwrap_or(0.0) * w;
            seen += chunk.len();
        }

        let (val_loss, val_auroc) =
            validation_metrics(weights, cohort, splits, teacher_logits, cfg, &class_weights)?;
        if !val_loss.is_finite() {
            return Err(TrainError::Divergence {
                stage: stage_name,
                epoch,
            });
        }
        let n = seen.max(1) as f64;
        log.push(EpochRecord {
            epoch,
            train_loss: sums.0 / n,
            val_loss,
            val_auroc: Some(val_auroc),
            loss_ce: Some(sums.1 / n),
            loss_reg: cfg.mt_enabled.then_some(sums.2 / n),
            loss_kd: cfg.kd_enabled.then_some(sums.3 / n),
            wall_time_s: started.elapsed().as_secs_f64(),
        });

        let improved = best.as_ref().map_or(true, |(b, _)| val_auroc > *b);
        if improved {
            best = Some((val_auroc, weights.clone()));
            stale_epochs = 0;
        } else {
            stale_epochs += 1;
            if stale_epochs >= cfg.patience {
                break;
            }
        }
    }
    let (_, best_weights) =
        best.ok_or(TrainError::Config("no supervised epochs ran".into()))?;
    *weights = best_weights;
    Ok(log)
}

/// Composite validation loss (eval mode) and validation AUROC.
fn validation_metrics(
    weights: &ModelWeights,
    cohort: &PreprocessedCohort,
    splits: &SplitIndices,
    teacher_logits: Option<&HashMap<usize, [f64; 2]>>,
    cfg: &TrainConfig,
    class_weights: &[f64; 2],
) -> Result<(f64, f64), TrainError> {
    let scores = score_split(weights, cohort, &splits.validation, cfg.batch_size)?;
    let n = scores.labels.len();
    let logits = Tensor::new(
        vec![n, 2],
        scores.logits.iter().flatten().copied().collect(),
    )?;
    let reg_pred = Tensor::new(vec![n, 4], scores.reg_pred.concat())?;
    let reg_target = Tensor::new(vec![n, 4], scores.reg_target.concat())?;
    let teacher = match (cfg.kd_enabled, teacher_logits) {
        (true, Some(map)) => {
            let mut data = Vec::with_capacity(n * 2);
            for &i in &splits.validation {
                let row = map
                    .get(&i)
                    .ok_or(TrainError::MissingArtifact("teacher logits for validation"))?;
                data.extend_from_slice(row);
            }
            Some(Tensor::new(vec![n, 2], data)?)
        }
        _ => None,
    };
    let components = student_total_loss(
        &logits,
        &scores.labels,
        cfg.mt_enabled.then_some(&reg_pred),
        cfg.mt_enabled.then_some(&reg_target),
        teacher.as_ref(),
        class_weights,
        cfg,
    )?;
    let val_auroc = auroc(&scores.probs, &scores.labels)?;
    Ok((components.total, val_auroc))
}

/// Train the multitask student. The encoder warm-starts from the MAE
/// checkpoint by default; distillation aligns the student's class
/// probabilities with the frozen teacher's when enabled. Early-stops when
/// validation AUROC fails to improve for `patience` epochs and returns the
/// checkpoint at the best validation AUROC.
pub fn train_student(
    cohort: &PreprocessedCohort,
    splits: &SplitIndices,
    teacher: Option<&Teacher>,
    mae: Option<&ModelCheckpoint>,
    enc_cfg: &EncoderConfig,
    cfg: &TrainConfig,
) -> Result<StudentOutcome, TrainError> {
    cfg.validate()?;
    enc_cfg.validate()?;
    if cfg.kd_enabled && teacher.is_none() {
        return Err(TrainError::MissingArtifact("teacher (kd is enabled)"));
    }
    if cfg.warm_start && mae.is_none() {
        return Err(TrainError::MissingArtifact(
            "mae checkpoint (warm start is enabled)",
        ));
    }

    let mut weights = ModelWeights::init(
        enc_cfg,
        STATIC_FULL_DIMS,
        STATIC_SCOREFREE_DIMS,
        rng::derive_seed(cfg.seed, "student-init", &[]),
    )?;
    if let Some(ckpt) = mae {
        if cfg.warm_start {
            ckpt.expect_stage(Stage::Mae)?;
            weights.load_encoder_from(&ckpt.to_weights()?);
        }
    }

    let teacher_hash_before = teacher.map(|t| t.current_hash());
    let teacher_logits: Option<HashMap<usize, [f64; 2]>> = match (cfg.kd_enabled, teacher) {
        (true, Some(t)) => {
            let mut wanted: Vec<usize> = splits.train.clone();
            wanted.extend_from_slice(&splits.validation);
            let logits = t.logits_for(cohort, &wanted, cfg.batch_size)?;
            Some(wanted.into_iter().zip(logits).collect())
        }
        _ => None,
    };

    let log = supervised_loop(
        &mut weights,
        cohort,
        splits,
        teacher_logits.as_ref(),
        cfg,
        "student",
    )?;
    let teacher_hash_after = teacher.map(|t| t.current_hash());
    if let (Some(before), Some(after)) = (teacher_hash_before, teacher_hash_after) {
        assert_eq!(before, after, "teacher parameters changed during student training");
    }

    let best_val_auroc = log.best_val_auroc().unwrap_or(f64::NAN);
    let epochs_run = log.epochs.len();
    Ok(StudentOutcome {
        checkpoint: ModelCheckpoint::from_weights(&weights, Stage::Student),
        log,
        teacher_hash_before,
        teacher_hash_after,
        best_val_auroc,
        epochs_run,
    })
}
