use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::EncoderConfig;
use super::weights::{HeadWeights, LayerWeights, ModelWeights};
use super::ModelError;
use crate::numerics::Tensor;
use crate::FORMAT_VERSION;

/// Which pipeline stage produced a checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Mae,
    Teacher,
    Student,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TensorRecord {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Versioned named-tensor container. JSON serialization uses shortest
/// round-trip float formatting, so save -> load -> save is byte-identical.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelCheckpoint {
    pub format_version: u32,
    pub stage: Stage,
    pub config: EncoderConfig,
    pub tensors: BTreeMap<String, TensorRecord>,
}

impl ModelCheckpoint {
    pub fn from_weights(weights: &ModelWeights, stage: Stage) -> Self {
        let tensors = weights
            .named()
            .into_iter()
            .map(|(name, t)| {
                (
                    name,
                    TensorRecord {
                        shape: t.shape().to_vec(),
                        values: t.data().to_vec(),
                    },
                )
            })
            .collect();
        Self {
            format_version: FORMAT_VERSION,
            stage,
            config: weights.config.clone(),
            tensors,
        }
    }

    fn take(
        tensors: &mut BTreeMap<String, TensorRecord>,
        name: &str,
        expected: &[usize],
    ) -> Result<Tensor, ModelError> {
        let rec = tensors
            .remove(name)
            .ok_or_else(|| ModelError::MissingTensor(name.to_string()))?;
        if rec.shape != expected {
            return Err(ModelError::BadTensor {
                name: name.to_string(),
                expected: expected.to_vec(),
                actual: rec.shape,
            });
        }
        Tensor::new(rec.shape, rec.values).map_err(|_| ModelError::BadTensor {
            name: name.to_string(),
            expected: expected.to_vec(),
            actual: vec![],
        })
    }

    /// Rebuild the weights, validating every tensor shape against the config.
    pub fn to_weights(&self) -> Result<ModelWeights, ModelError> {
        let cfg = self.config.clone();
        cfg.validate()?;
        let d = cfg.d_model;
        let mut tensors = self.tensors.clone();

        // head input widths are carried by the stored shapes
        let static_full = tensors
            .get("cls_head.hidden.weight")
            .ok_or_else(|| ModelError::MissingTensor("cls_head.hidden.weight".into()))?
            .shape
            .first()
            .copied()
            .unwrap_or(0)
            .saturating_sub(d);
        let static_scorefree = tensors
            .get("reg_head.hidden.weight")
            .ok_or_else(|| ModelError::MissingTensor("reg_head.hidden.weight".into()))?
            .shape
            .first()
            .copied()
            .unwrap_or(0)
            .saturating_sub(d);

        let mut layers = Vec::with_capacity(cfg.n_layers);
        for i in 0..cfg.n_layers {
            let p = |suffix: &str| format!("layers.{i}.{suffix}");
            layers.push(LayerWeights {
                attn_q_w: Self::take(&mut tensors, &p("attn.q.weight"), &[d, d])?,
                attn_q_b: Self::take(&mut tensors, &p("attn.q.bias"), &[d])?,
                attn_k_w: Self::take(&mut tensors, &p("attn.k.weight"), &[d, d])?,
                attn_k_b: Self::take(&mut tensors, &p("attn.k.bias"), &[d])?,
                attn_v_w: Self::take(&mut tensors, &p("attn.v.weight"), &[d, d])?,
                attn_v_b: Self::take(&mut tensors, &p("attn.v.bias"), &[d])?,
                attn_out_w: Self::take(&mut tensors, &p("attn.out.weight"), &[d, d])?,
                attn_out_b: Self::take(&mut tensors, &p("attn.out.bias"), &[d])?,
                norm1_gamma: Self::take(&mut tensors, &p("norm1.gamma"), &[d])?,
                norm1_beta: Self::take(&mut tensors, &p("norm1.beta"), &[d])?,
                ffn_w1: Self::take(&mut tensors, &p("ffn.w1"), &[d, cfg.ffn_dim])?,
                ffn_b1: Self::take(&mut tensors, &p("ffn.b1"), &[cfg.ffn_dim])?,
                ffn_w2: Self::take(&mut tensors, &p("ffn.w2"), &[cfg.ffn_dim, d])?,
                ffn_b2: Self::take(&mut tensors, &p("ffn.b2"), &[d])?,
                norm2_gamma: Self::take(&mut tensors, &p("norm2.gamma"), &[d])?,
                norm2_beta: Self::take(&mut tensors, &p("norm2.beta"), &[d])?,
            });
        }
        let weights = ModelWeights {
            input_w: Self::take(&mut tensors, "input_proj.weight", &[cfg.n_features, d])?,
            input_b: Self::take(&mut tensors, "input_proj.bias", &[d])?,
            cls_embed: Self::take(&mut tensors, "cls_embed", &[1, d])?,
            pos_table: Self::take(&mut tensors, "pos_table", &[cfg.seq_len, d])?,
            layers,
            decoder_w: Self::take(&mut tensors, "decoder.weight", &[d, cfg.n_features])?,
            decoder_b: Self::take(&mut tensors, "decoder.bias", &[cfg.n_features])?,
            cls_head: HeadWeights {
                hidden_w: Self::take(
                    &mut tensors,
                    "cls_head.hidden.weight",
                    &[d + static_full, cfg.head_hidden],
                )?,
                hidden_b: Self::take(&mut tensors, "cls_head.hidden.bias", &[cfg.head_hidden])?,
                out_w: Self::take(&mut tensors, "cls_head.out.weight", &[cfg.head_hidden, 2])?,
                out_b: Self::take(&mut tensors, "cls_head.out.bias", &[2])?,
            },
            reg_head: HeadWeights {
                hidden_w: Self::take(
                    &mut tensors,
                    "reg_head.hidden.weight",
                    &[d + static_scorefree, cfg.head_hidden],
                )?,
                hidden_b: Self::take(&mut tensors, "reg_head.hidden.bias", &[cfg.head_hidden])?,
                out_w: Self::take(&mut tensors, "reg_head.out.weight", &[cfg.head_hidden, 4])?,
                out_b: Self::take(&mut tensors, "reg_head.out.bias", &[4])?,
            },
            config: cfg,
        };
        if let Some(name) = tensors.keys().next() {
            return Err(ModelError::BadTensor {
                name: format!("unexpected tensor {name}"),
                expected: vec![],
                actual: tensors[name].shape.clone(),
            });
        }
        Ok(weights)
    }

    pub fn expect_stage(&self, expected: Stage) -> Result<(), ModelError> {
        if self.stage != expected {
            return Err(ModelError::WrongStage {
                expected,
                actual: self.stage,
            });
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        fs::write(path, self.to_json()).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = fs::read_to_string(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }
}
