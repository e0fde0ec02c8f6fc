use rand_chacha::ChaCha8Rng;

use super::config::EncoderConfig;
use super::mask::{apply_mask, MaskPlan};
use super::weights::ModelWeights;
use super::ModelError;
use crate::numerics::{NodeId, Tape, Tensor};

/// Node ids of one staged layer.
#[derive(Debug, Clone)]
pub struct TapeLayer {
    pub attn_q_w: NodeId,
    pub attn_q_b: NodeId,
    pub attn_k_w: NodeId,
    pub attn_k_b: NodeId,
    pub attn_v_w: NodeId,
    pub attn_v_b: NodeId,
    pub attn_out_w: NodeId,
    pub attn_out_b: NodeId,
    pub norm1_gamma: NodeId,
    pub norm1_beta: NodeId,
    pub ffn_w1: NodeId,
    pub ffn_b1: NodeId,
    pub ffn_w2: NodeId,
    pub ffn_b2: NodeId,
    pub norm2_gamma: NodeId,
    pub norm2_beta: NodeId,
}

#[derive(Debug, Clone)]
pub struct TapeHead {
    pub hidden_w: NodeId,
    pub hidden_b: NodeId,
    pub out_w: NodeId,
    pub out_b: NodeId,
}

/// Model weights staged onto a tape as leaves, in the same order as
/// `ModelWeights::trainable`.
#[derive(Debug, Clone)]
pub struct TapeModel {
    pub config: EncoderConfig,
    pub input_w: NodeId,
    pub input_b: NodeId,
    pub cls_embed: NodeId,
    pub pos_table: NodeId,
    pub layers: Vec<TapeLayer>,
    pub decoder_w: NodeId,
    pub decoder_b: NodeId,
    pub cls_head: TapeHead,
    pub reg_head: TapeHead,
}

impl TapeModel {
    /// Rebuild a staged model from leaf ids laid out in
    /// `ModelWeights::trainable(true)` order plus a separately staged
    /// positional table. Lets gradient checks own the parameter leaves.
    pub fn from_ids(config: EncoderConfig, ids: &[NodeId], pos_table: NodeId) -> Self {
        let mut cursor = ids.iter().copied();
        let mut next = || cursor.next().expect("id list too short for config");
        let input_w = next();
        let input_b = next();
        let cls_embed = next();
        let mut layers = Vec::with_capacity(config.n_layers);
        for _ in 0..config.n_layers {
            layers.push(TapeLayer {
                attn_q_w: next(),
                attn_q_b: next(),
                attn_k_w: next(),
                attn_k_b: next(),
                attn_v_w: next(),
                attn_v_b: next(),
                attn_out_w: next(),
                attn_out_b: next(),
                norm1_gamma: next(),
                norm1_beta: next(),
                ffn_w1: next(),
                ffn_b1: next(),
                ffn_w2: next(),
                ffn_b2: next(),
                norm2_gamma: next(),
                norm2_beta: next(),
            });
        }
        let decoder_w = next();
        let decoder_b = next();
        let cls_head = TapeHead {
            hidden_w: next(),
            hidden_b: next(),
            out_w: next(),
            out_b: next(),
        };
        let reg_head = TapeHead {
            hidden_w: next(),
            hidden_b: next(),
            out_w: next(),
            out_b: next(),
        };
        Self {
            config,
            input_w,
            input_b,
            cls_embed,
            pos_table,
            layers,
            decoder_w,
            decoder_b,
            cls_head,
            reg_head,
        }
    }

    /// Leaf ids aligned with `ModelWeights::params_mut(filter)`.
    pub fn param_ids(&self, filter: super::weights::ParamFilter) -> Vec<NodeId> {
        let mut out = vec![self.input_w, self.input_b, self.cls_embed];
        for l in &self.layers {
            out.extend([
                l.attn_q_w,
                l.attn_q_b,
                l.attn_k_w,
                l.attn_k_b,
                l.attn_v_w,
                l.attn_v_b,
                l.attn_out_w,
                l.attn_out_b,
                l.norm1_gamma,
                l.norm1_beta,
                l.ffn_w1,
                l.ffn_b1,
                l.ffn_w2,
                l.ffn_b2,
                l.norm2_gamma,
                l.norm2_beta,
            ]);
        }
        if filter.decoder {
            out.extend([self.decoder_w, self.decoder_b]);
        }
        if filter.cls_head {
            out.extend([
                self.cls_head.hidden_w,
                self.cls_head.hidden_b,
                self.cls_head.out_w,
                self.cls_head.out_b,
            ]);
        }
        if filter.reg_head {
            out.extend([
                self.reg_head.hidden_w,
                self.reg_head.hidden_b,
                self.reg_head.out_w,
                self.reg_head.out_b,
            ]);
        }
        out
    }

    /// Leaf ids aligned with `ModelWeights::trainable_mut(include_reg_head)`.
    pub fn trainable_ids(&self, include_reg_head: bool) -> Vec<NodeId> {
        self.param_ids(super::weights::ParamFilter {
            decoder: true,
            cls_head: true,
            reg_head: include_reg_head,
        })
    }
}

/// Put every weight tensor on the tape. `trainable` controls whether the
/// learnable tensors receive gradients; the positional table never does.
pub fn stage_weights(tape: &mut Tape, weights: &ModelWeights, trainable: bool) -> TapeModel {
    let mut leaf = |t: &Tensor| tape.leaf(t.clone().with_requires_grad(trainable));
    let input_w = leaf(&weights.input_w);
    let input_b = leaf(&weights.input_b);
    let cls_embed = leaf(&weights.cls_embed);
    let mut layers = Vec::with_capacity(weights.layers.len());
    for l in &weights.layers {
        layers.push(TapeLayer {
            attn_q_w: leaf(&l.attn_q_w),
            attn_q_b: leaf(&l.attn_q_b),
            attn_k_w: leaf(&l.attn_k_w),
            attn_k_b: leaf(&l.attn_k_b),
            attn_v_w: leaf(&l.attn_v_w),
            attn_v_b: leaf(&l.attn_v_b),
            attn_out_w: leaf(&l.attn_out_w),
            attn_out_b: leaf(&l.attn_out_b),
            norm1_gamma: leaf(&l.norm1_gamma),
            norm1_beta: leaf(&l.norm1_beta),
            ffn_w1: leaf(&l.ffn_w1),
            ffn_b1: leaf(&l.ffn_b1),
            ffn_w2: leaf(&l.ffn_w2),
            ffn_b2: leaf(&l.ffn_b2),
            norm2_gamma: leaf(&l.norm2_gamma),
            norm2_beta: leaf(&l.norm2_beta),
        });
    }
    let decoder_w = leaf(&weights.decoder_w);
    let decoder_b = leaf(&weights.decoder_b);
    let cls_head = TapeHead {
        hidden_w: leaf(&weights.cls_head.hidden_w),
        hidden_b: leaf(&weights.cls_head.hidden_b),
        out_w: leaf(&weights.cls_head.out_w),
        out_b: leaf(&weights.cls_head.out_b),
    };
    let reg_head = TapeHead {
        hidden_w: leaf(&weights.reg_head.hidden_w),
        hidden_b: leaf(&weights.reg_head.hidden_b),
        out_w: leaf(&weights.reg_head.out_w),
        out_b: leaf(&weights.reg_head.out_b),
    };
    let pos_table = tape.constant(weights.pos_table.clone());
    TapeModel {
        config: weights.config.clone(),
        input_w,
        input_b,
        cls_embed,
        pos_table,
        layers,
        decoder_w,
        decoder_b,
        cls_head,
        reg_head,
    }
}

/// Mask, project and assemble the token sequence: zero the masked cells,
/// project each hour to d_model, add the positional table, prepend the CLS
/// embedding. Returns the pre-attention [B, seq+1, d] sequence.
pub fn embed_tokens(
    tape: &mut Tape,
    model: &TapeModel,
    x: &Tensor,
    mask: Option<&MaskPlan>,
) -> Result<NodeId, ModelError> {
    let cfg = &model.config;
    let expected = [x.len() / (cfg.seq_len * cfg.n_features), cfg.seq_len, cfg.n_features];
    if x.ndim() != 3 || x.shape() != expected {
        return Err(ModelError::Config(format!(
            "encoder input shape {:?}, expected [B, {}, {}]",
            x.shape(),
            cfg.seq_len,
            cfg.n_features
        )));
    }
    let batch = x.shape()[0];
    let masked = match mask {
        Some(plan) => {
            if plan.batch_size() != batch {
                return Err(ModelError::Config(format!(
                    "mask plan covers {} samples, batch has {batch}",
                    plan.batch_size()
                )));
            }
            Tensor::new(x.shape().to_vec(), apply_mask(x.data(), plan))?
        }
        None => x.clone(),
    };
    let x_id = tape.constant(masked);
    let tokens = tape.matmul(x_id, model.input_w)?;
    let tokens = tape.bias_add(tokens, model.input_b)?;
    // positional encoding goes on the data tokens only; CLS is a learned
    // embedding without a positional term
    let tokens = tape.add_table(tokens, model.pos_table)?;
    let cls = tape.gather(model.cls_embed, &vec![0; batch])?;
    let cls = tape.reshape(cls, vec![batch, 1, cfg.d_model])?;
    Ok(tape.concat(cls, tokens, 1)?)
}

fn multi_head_attention(
    tape: &mut Tape,
    layer: &TapeLayer,
    seq: NodeId,
    batch: usize,
    tokens: usize,
    d_model: usize,
    n_heads: usize,
) -> Result<NodeId, ModelError> {
    let dh = d_model / n_heads;
    let split = |tape: &mut Tape, id: NodeId| -> Result<NodeId, ModelError> {
        let r4 = tape.reshape(id, vec![batch, tokens, n_heads, dh])?;
        let p = tape.permute(r4, &[0, 2, 1, 3])?;
        Ok(tape.reshape(p, vec![batch * n_heads, tokens, dh])?)
    };
    let q = tape.matmul(seq, layer.attn_q_w)?;
    let q = tape.bias_add(q, layer.attn_q_b)?;
    let k = tape.matmul(seq, layer.attn_k_w)?;
    let k = tape.bias_add(k, layer.attn_k_b)?;
    let v = tape.matmul(seq, layer.attn_v_w)?;
    let v = tape.bias_add(v, layer.attn_v_b)?;
    let (q, k, v) = (split(tape, q)?, split(tape, k)?, split(tape, v)?);
    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let scores = tape.scale(scores, 1.0 / (dh as f64).sqrt())?;
    // full bidirectional attention: no masking beyond the zeroed input cells
    let probs = tape.softmax(scores)?;
    let ctx = tape.matmul(probs, v)?;
    let ctx = tape.reshape(ctx, vec![batch, n_heads, tokens, dh])?;
    let ctx = tape.permute(ctx, &[0, 2, 1, 3])?;
    let ctx = tape.reshape(ctx, vec![batch, tokens, d_model])?;
    let out = tape.matmul(ctx, layer.attn_out_w)?;
    Ok(tape.bias_add(out, layer.attn_out_b)?)
}

/// Full encoder: embed, then `n_layers` post-norm Transformer layers.
/// Position 0 of the output is the CLS representation.
pub fn encoder_forward(
    tape: &mut Tape,
    model: &TapeModel,
    x: &Tensor,
    mask: Option<&MaskPlan>,
    train_mode: bool,
    rng: &mut ChaCha8Rng,
) -> Result<NodeId, ModelError> {
    let cfg = model.config.clone();
    let batch = x.shape().first().copied().unwrap_or(0);
    let tokens = cfg.tokens();
    let mut seq = embed_tokens(tape, model, x, mask)?;
    for layer in &model.layers {
        let attn = multi_head_attention(tape, layer, seq, batch, tokens, cfg.d_model, cfg.n_heads)?;
        let attn = tape.dropout(attn, cfg.dropout, train_mode, rng)?;
        let residual = tape.add(seq, attn)?;
        seq = tape.layer_norm(residual, layer.norm1_gamma, layer.norm1_beta)?;

        let h = tape.matmul(seq, layer.ffn_w1)?;
        let h = tape.bias_add(h, layer.ffn_b1)?;
        let h = tape.relu(h)?;
        let h = tape.matmul(h, layer.ffn_w2)?;
        let h = tape.bias_add(h, layer.ffn_b2)?;
        let h = tape.dropout(h, cfg.dropout, train_mode, rng)?;
        let residual = tape.add(seq, h)?;
        seq = tape.layer_norm(residual, layer.norm2_gamma, layer.norm2_beta)?;
    }
    Ok(seq)
}

/// Drop the CLS position and map every data token back to the feature space.
pub fn decoder_forward(
    tape: &mut Tape,
    model: &TapeModel,
    latent: NodeId,
) -> Result<NodeId, ModelError> {
    let cfg = &model.config;
    let shape = tape.value(latent).shape().to_vec();
    if shape.len() != 3 || shape[1] != cfg.tokens() || shape[2] != cfg.d_model {
        return Err(ModelError::Config(format!(
            "decoder input shape {shape:?}, expected [B, {}, {}]",
            cfg.tokens(),
            cfg.d_model
        )));
    }
    let data_tokens = tape.slice(latent, 1, 1, cfg.seq_len)?;
    let recon = tape.matmul(data_tokens, model.decoder_w)?;
    Ok(tape.bias_add(recon, model.decoder_b)?)
}

/// The CLS representation: position 0 of the latent, as a [B, d] matrix.
pub fn cls_token(tape: &mut Tape, model: &TapeModel, latent: NodeId) -> Result<NodeId, ModelError> {
    let batch = tape.value(latent).shape()[0];
    let cls = tape.slice(latent, 1, 0, 1)?;
    Ok(tape.reshape(cls, vec![batch, model.config.d_model])?)
}

fn head_forward(
    tape: &mut Tape,
    head: &TapeHead,
    cls: NodeId,
    statics: NodeId,
    dropout: f64,
    train_mode: bool,
    rng: &mut ChaCha8Rng,
) -> Result<NodeId, ModelError> {
    let joined = tape.concat(cls, statics, 1)?;
    let h = tape.matmul(joined, head.hidden_w)?;
    let h = tape.bias_add(h, head.hidden_b)?;
    let h = tape.relu(h)?;
    let h = tape.dropout(h, dropout, train_mode, rng)?;
    let out = tape.matmul(h, head.out_w)?;
    Ok(tape.bias_add(out, head.out_b)?)
}

/// Mortality logits from the CLS representation and the full 51-dim statics.
pub fn classify_head(
    tape: &mut Tape,
    model: &TapeModel,
    cls: NodeId,
    static_full: NodeId,
    train_mode: bool,
    rng: &mut ChaCha8Rng,
) -> Result<NodeId, ModelError> {
    head_forward(
        tape,
        &model.cls_head,
        cls,
        static_full,
        model.config.head_dropout,
        train_mode,
        rng,
    )
}

/// Severity predictions from the CLS representation and the score-free
/// 47-dim statics (normalized scale).
pub fn regress_head(
    tape: &mut Tape,
    model: &TapeModel,
    cls: NodeId,
    static_score_free: NodeId,
    train_mode: bool,
    rng: &mut ChaCha8Rng,
) -> Result<NodeId, ModelError> {
    head_forward(
        tape,
        &model.reg_head,
        cls,
        static_score_free,
        model.config.head_dropout,
        train_mode,
        rng,
    )
}

/// Encoder plus both heads. Returns (classification logits, regression
/// predictions, latent sequence).
#[allow(clippy::too_many_arguments)]
pub fn full_forward(
    tape: &mut Tape,
    model: &TapeModel,
    x: &Tensor,
    static_full: &Tensor,
    static_score_free: &Tensor,
    train_mode: bool,
    rng: &mut ChaCha8Rng,
) -> Result<(NodeId, NodeId, NodeId), ModelError> {
    let latent = encoder_forward(tape, model, x, None, train_mode, rng)?;
    let cls = cls_token(tape, model, latent)?;
    let sf = tape.constant(static_full.clone());
    let ssf = tape.constant(static_score_free.clone());
    let logits = classify_head(tape, model, cls, sf, train_mode, rng)?;
    let reg = regress_head(tape, model, cls, ssf, train_mode, rng)?;
    Ok((logits, reg, latent))
}
