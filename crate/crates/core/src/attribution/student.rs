use serde::{Deserialize, Serialize};

use super::engine::{sample_shapley, CoalitionModel, Player};
use super::AttributionError;
use crate::data::{
    EncodingManifest, PreprocessStats, PreprocessedCohort, SCORE_NAMES, STATIC_FULL_DIMS,
};
use crate::model::{
    classify_head, cls_token, encoder_forward, stage_weights, ModelCheckpoint, ModelWeights,
    Stage,
};
use crate::numerics::{softmax, Tape, Tensor};
use crate::rng;

/// Per-patient and aggregate Shapley attributions over the 51 static dims.
/// Group attributions are reported on the patient's active dim of each
/// one-hot block, zero elsewhere.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AttributionResult {
    pub format_version: u32,
    pub feature_names: Vec<String>,
    pub patient_ids: Vec<String>,
    /// N x 51 attribution values in probability units.
    pub per_patient: Vec<Vec<f64>>,
    pub mean_abs: Vec<f64>,
    /// |sum(attributions) - (f(x) - f(background))| per patient.
    pub local_accuracy_gaps: Vec<f64>,
    pub background_description: String,
    pub n_samples: usize,
    pub seed: u64,
}

impl AttributionResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("attribution serialization cannot fail")
    }

    /// Table of (feature, mean_abs_shap) rows.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("feature,mean_abs_shap\n");
        for (name, value) in rank_features(self) {
            out.push_str(&format!("{name},{value:.6}\n"));
        }
        out
    }

    /// Long-format per-patient file: patient_id, feature, shap_value.
    pub fn long_csv(&self) -> String {
        let mut out = String::from("patient_id,feature,shap_value\n");
        for (pid, row) in self.patient_ids.iter().zip(&self.per_patient) {
            for (name, value) in self.feature_names.iter().zip(row) {
                out.push_str(&format!("{pid},{name},{value:.6}\n"));
            }
        }
        out
    }
}

/// Features ranked by mean absolute attribution, descending; ties break by
/// feature name so the ordering is total.
pub fn rank_features(result: &AttributionResult) -> Vec<(String, f64)> {
    let mut rows: Vec<(String, f64)> = result
        .feature_names
        .iter()
        .cloned()
        .zip(result.mean_abs.iter().copied())
        .collect();
    rows.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.0.cmp(&b.0))
    });
    rows
}

/// The semantic players over the 51-dim static vector: age, the four one-hot
/// groups (toggled atomically), and the four severity scores.
pub fn player_layout(manifest: &EncodingManifest) -> Vec<Player> {
    let mut players = vec![Player::single("admission_age", 0)];
    let mut offset = 1;
    for (field, cats) in manifest.fields() {
        players.push(Player::group(field, offset..offset + cats.len()));
        offset += cats.len();
    }
    for (i, score) in SCORE_NAMES.iter().enumerate() {
        players.push(Player::single(*score, offset + i));
    }
    players
}

/// Background reference: z-scored train medians for continuous dims and the
/// train-mode category for each one-hot group.
pub fn background_static_vector(
    stats: &PreprocessStats,
    manifest: &EncodingManifest,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(STATIC_FULL_DIMS);
    out.push((stats.age_median - stats.age_mean) / stats.age_std);
    for (field, cats) in manifest.fields() {
        let mode = &stats.categorical[field].mode;
        let ix = cats
            .iter()
            .position(|c| c == mode)
            .or_else(|| EncodingManifest::unknown_slot(cats))
            .unwrap_or(0);
        let base = out.len();
        out.resize(base + cats.len(), 0.0);
        out[base + ix] = 1.0;
    }
    for s in 0..SCORE_NAMES.len() {
        out.push((stats.score_median[s] - stats.score_mean[s]) / stats.score_std[s]);
    }
    out
}

/// The trained classifier viewed as a function of the static vector alone:
/// the dose series is fixed per patient, so the encoder runs once and only
/// the classification head is re-evaluated per coalition.
struct FrozenClsModel<'a> {
    weights: &'a ModelWeights,
    cls: Vec<f64>,
}

impl<'a> FrozenClsModel<'a> {
    fn new(weights: &'a ModelWeights, vis: &[f64]) -> Result<Self, AttributionError> {
        let cfg = &weights.config;
        let x = Tensor::new(vec![1, cfg.seq_len, cfg.n_features], vis.to_vec())?;
        let mut tape = Tape::new();
        let model = stage_weights(&mut tape, weights, false);
        let mut silent_rng = rng::substream(0, "eval");
        let latent = encoder_forward(&mut tape, &model, &x, None, false, &mut silent_rng)?;
        let cls = cls_token(&mut tape, &model, latent)?;
        Ok(Self {
            weights,
            cls: tape.value(cls).data().to_vec(),
        })
    }
}

impl CoalitionModel for FrozenClsModel<'_> {
    fn evaluate(&self, inputs: &[Vec<f64>]) -> Result<Vec<f64>, AttributionError> {
        let b = inputs.len();
        let d = self.cls.len();
        let mut cls_data = Vec::with_capacity(b * d);
        let mut static_data = Vec::with_capacity(b * STATIC_FULL_DIMS);
        for row in inputs {
            cls_data.extend_from_slice(&self.cls);
            static_data.extend_from_slice(row);
        }
        let mut tape = Tape::new();
        let model = stage_weights(&mut tape, self.weights, false);
        let cls = tape.constant(Tensor::new(vec![b, d], cls_data)?);
        let statics = tape.constant(Tensor::new(vec![b, STATIC_FULL_DIMS], static_data)?);
        let mut silent_rng = rng::substream(0, "eval");
        let logits = classify_head(&mut tape, &model, cls, statics, false, &mut silent_rng)?;
        let probs = softmax(tape.value(logits))?;
        Ok((0..b).map(|i| probs.data()[i * 2 + 1]).collect())
    }
}

/// Shapley attribution of the positive-class probability for each requested
/// patient. Needs a student-stage checkpoint and at least 100 permutation
/// samples; deterministic given the seed.
#[allow(clippy::too_many_arguments)]
pub fn shapley_static(
    checkpoint: &ModelCheckpoint,
    cohort: &PreprocessedCohort,
    patient_indices: &[usize],
    background: &[f64],
    manifest: &EncodingManifest,
    n_samples: usize,
    seed: u64,
) -> Result<AttributionResult, AttributionError> {
    checkpoint.expect_stage(Stage::Student)?;
    if n_samples < 100 {
        return Err(AttributionError::Config(format!(
            "n_samples {n_samples} below the minimum of 100"
        )));
    }
    if background.len() != STATIC_FULL_DIMS {
        return Err(AttributionError::Config(format!(
            "background has {} dims, expected {STATIC_FULL_DIMS}",
            background.len()
        )));
    }
    let weights = checkpoint.to_weights()?;
    let players = player_layout(manifest);
    let feature_names = manifest.feature_names();

    let mut per_patient = Vec::with_capacity(patient_indices.len());
    let mut gaps = Vec::with_capacity(patient_indices.len());
    let mut patient_ids = Vec::with_capacity(patient_indices.len());
    for &ix in patient_indices {
        let model = FrozenClsModel::new(&weights, &cohort.vis[ix])?;
        let x = &cohort.static_full[ix];
        let mut shap_rng = rng::substream_indexed(seed, "shap", &[ix as u64]);
        let estimate = sample_shapley(&model, x, background, &players, n_samples, &mut shap_rng)?;

        // spread player values onto the 51 dims: group value goes on the
        // patient's active dim
        let mut row = vec![0.0; STATIC_FULL_DIMS];
        for (player, &phi) in players.iter().zip(&estimate.per_player) {
            let dims = player.dims.clone();
            let active = if dims.len() == 1 {
                dims.start
            } else {
                let block = &x[dims.clone()];
                let local = block
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                dims.start + local
            };
            row[active] = phi;
        }
        gaps.push(estimate.local_accuracy_gap());
        per_patient.push(row);
        patient_ids.push(cohort.patient_ids[ix].clone());
    }

    let n = per_patient.len().max(1) as f64;
    let mean_abs = (0..STATIC_FULL_DIMS)
        .map(|d| per_patient.iter().map(|row| row[d].abs()).sum::<f64>() / n)
        .collect();
    Ok(AttributionResult {
        format_version: crate::FORMAT_VERSION,
        feature_names,
        patient_ids,
        per_patient,
        mean_abs,
        local_accuracy_gaps: gaps,
        background_description: "train-median continuous dims, train-mode one-hot groups".into(),
        n_samples,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{
        generate_synthetic_cohort, preprocess, stratified_split, GeneratorConfig,
    };
    use crate::model::EncoderConfig;
    use crate::numerics::Tensor as T;

    fn fixture() -> (
        PreprocessedCohort,
        PreprocessStats,
        ModelCheckpoint,
        EncodingManifest,
    ) {
        let gen = GeneratorConfig {
            n_patients: 40,
            missingness_rate: 0.05,
            ..Default::default()
        };
        let records = generate_synthetic_cohort(&gen).unwrap();
        let labels: Vec<u8> = records.iter().map(|r| r.mortality).collect();
        let splits = stratified_split(&labels, [0.72, 0.08, 0.20], 7).unwrap();
        let manifest = EncodingManifest::default();
        let (cohort, stats) = preprocess(&records, &splits, &manifest).unwrap();
        let enc = EncoderConfig {
            n_layers: 1,
            ..EncoderConfig::test_scale()
        };
        let weights = ModelWeights::init(&enc, 51, 47, 5).unwrap();
        let ckpt = ModelCheckpoint::from_weights(&weights, Stage::Student);
        (cohort, stats, ckpt, manifest)
    }

    #[test]
    fn wrong_stage_checkpoint_is_rejected() {
        let (cohort, stats, ckpt, manifest) = fixture();
        let bg = background_static_vector(&stats, &manifest);
        let mut mae = ckpt.clone();
        mae.stage = Stage::Mae;
        assert!(matches!(
            shapley_static(&mae, &cohort, &[0], &bg, &manifest, 100, 1),
            Err(AttributionError::Model(crate::model::ModelError::WrongStage { .. }))
        ));
        assert!(matches!(
            shapley_static(&ckpt, &cohort, &[0], &bg, &manifest, 99, 1),
            Err(AttributionError::Config(_))
        ));
    }

    #[test]
    fn zeroed_static_weights_give_zero_attributions() {
        let (cohort, stats, ckpt, manifest) = fixture();
        let bg = background_static_vector(&stats, &manifest);
        let mut weights = ckpt.to_weights().unwrap();
        // zero the hidden rows that read the static dims; the head then
        // provably ignores every static feature
        let d = weights.config.d_model;
        let hidden = weights.config.head_hidden;
        let mut w = weights.cls_head.hidden_w.data().to_vec();
        for row in d..d + STATIC_FULL_DIMS {
            for col in 0..hidden {
                w[row * hidden + col] = 0.0;
            }
        }
        weights.cls_head.hidden_w = T::new(vec![d + STATIC_FULL_DIMS, hidden], w).unwrap();
        let ckpt = ModelCheckpoint::from_weights(&weights, Stage::Student);
        let result =
            shapley_static(&ckpt, &cohort, &[0, 3, 5], &bg, &manifest, 100, 2).unwrap();
        for row in &result.per_patient {
            assert!(row.iter().all(|&v| v.abs() <= 1e-9));
        }
    }

    #[test]
    fn local_accuracy_and_layout_of_group_values() {
        let (cohort, stats, ckpt, manifest) = fixture();
        let bg = background_static_vector(&stats, &manifest);
        let result =
            shapley_static(&ckpt, &cohort, &[1, 2], &bg, &manifest, 150, 3).unwrap();
        assert_eq!(result.per_patient.len(), 2);
        for gap in &result.local_accuracy_gaps {
            assert!(*gap <= 0.02, "local accuracy gap {gap}");
        }
        // group players put their value on the active dim only: inside each
        // one-hot block at most one nonzero entry
        let mut offset = 1;
        for (_, cats) in manifest.fields() {
            for row in &result.per_patient {
                let nonzero = row[offset..offset + cats.len()]
                    .iter()
                    .filter(|v| **v != 0.0)
                    .count();
                assert!(nonzero <= 1);
            }
            offset += cats.len();
        }
    }

    #[test]
    fn determinism_and_ranking() {
        let (cohort, stats, ckpt, manifest) = fixture();
        let bg = background_static_vector(&stats, &manifest);
        let a = shapley_static(&ckpt, &cohort, &[0, 1], &bg, &manifest, 120, 9).unwrap();
        let b = shapley_static(&ckpt, &cohort, &[0, 1], &bg, &manifest, 120, 9).unwrap();
        assert_eq!(a, b);

        let ranked = rank_features(&a);
        assert_eq!(ranked.len(), STATIC_FULL_DIMS);
        for w in ranked.windows(2) {
            assert!(w[0].1 >= w[1].1);
        }
        // summary table carries the Table-3 shape
        let csv = a.summary_csv();
        assert!(csv.starts_with("feature,mean_abs_shap\n"));
        assert_eq!(csv.lines().count(), 1 + STATIC_FULL_DIMS);
    }

    #[test]
    fn all_zero_attributions_rank_alphabetically() {
        let result = AttributionResult {
            format_version: 1,
            feature_names: vec!["b".into(), "a".into(), "c".into()],
            patient_ids: vec!["p".into()],
            per_patient: vec![vec![0.0, 0.0, 0.0]],
            mean_abs: vec![0.0, 0.0, 0.0],
            local_accuracy_gaps: vec![0.0],
            background_description: String::new(),
            n_samples: 100,
            seed: 0,
        };
        let ranked = rank_features(&result);
        let names: Vec<&str> = ranked.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, ["a", "b", "c"]);
    }
}
