use crate::data::PreprocessedCohort;
use crate::model::{cls_token, classify_head, encoder_forward, regress_head, stage_weights, ModelWeights};
use crate::numerics::{softmax, Tape};
use crate::rng;

use super::dataset::{batches, gather_batch};
use super::TrainError;

/// Eval-mode model outputs over one split, in index order.
#[derive(Debug, Clone)]
pub struct SplitScores {
    /// Positive-class probability per patient.
    pub probs: Vec<f64>,
    /// Raw classification logits, one [2] row per patient.
    pub logits: Vec<[f64; 2]>,
    pub labels: Vec<u8>,
    /// Regression predictions (normalized scale), one [4] row per patient.
    pub reg_pred: Vec<Vec<f64>>,
    pub reg_target: Vec<Vec<f64>>,
}

/// Run the model in eval mode over a split. Per-sample outputs are batch-
/// composition independent, so any batch size gives identical results.
pub fn score_split(
    weights: &ModelWeights,
    cohort: &PreprocessedCohort,
    indices: &[usize],
    batch_size: usize,
) -> Result<SplitScores, TrainError> {
    let mut out = SplitScores {
        probs: Vec::with_capacity(indices.len()),
        logits: Vec::with_capacity(indices.len()),
        labels: Vec::with_capacity(indices.len()),
        reg_pred: Vec::with_capacity(indices.len()),
        reg_target: Vec::with_capacity(indices.len()),
    };
    // eval mode draws nothing from this
    let mut silent_rng = rng::substream(0, "eval");
    for chunk in batches(indices, batch_size) {
        let batch = gather_batch(cohort, &chunk);
        let mut tape = Tape::new();
        let model = stage_weights(&mut tape, weights, false);
        let latent = encoder_forward(&mut tape, &model, &batch.x, None, false, &mut silent_rng)?;
        let cls = cls_token(&mut tape, &model, latent)?;
        let sf = tape.constant(batch.static_full.clone());
        let ssf = tape.constant(batch.static_score_free.clone());
        let logits = classify_head(&mut tape, &model, cls, sf, false, &mut silent_rng)?;
        let reg = regress_head(&mut tape, &model, cls, ssf, false, &mut silent_rng)?;

        let probs = softmax(tape.value(logits))?;
        for (row, &label) in chunk.iter().enumerate() {
            let _ = label;
            out.probs.push(probs.data()[row * 2 + 1]);
            out.logits.push([
                tape.value(logits).data()[row * 2],
                tape.value(logits).data()[row * 2 + 1],
            ]);
            out.reg_pred
                .push(tape.value(reg).data()[row * 4..(row + 1) * 4].to_vec());
        }
        out.labels.extend_from_slice(&batch.labels);
        for &i in &chunk {
            out.reg_target.push(cohort.reg_targets[i].clone());
        }
    }
    Ok(out)
}
