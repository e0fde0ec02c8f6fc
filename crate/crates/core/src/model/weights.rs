use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::config::EncoderConfig;
use super::ModelError;
use crate::numerics::Tensor;
use crate::rng;

/// Fixed sinusoidal positional table for the data tokens:
/// PE(pos, 2i) = sin(pos / 10000^(2i/d)), PE(pos, 2i+1) = cos(same).
pub fn positional_encoding(seq_len: usize, d_model: usize) -> Result<Tensor, ModelError> {
    if d_model == 0 || d_model % 2 != 0 {
        return Err(ModelError::Config(format!(
            "positional encoding needs an even d_model, got {d_model}"
        )));
    }
    let mut data = vec![0.0; seq_len * d_model];
    for pos in 0..seq_len {
        for i in 0..d_model / 2 {
            let rate = 1.0 / 10_000f64.powf(2.0 * i as f64 / d_model as f64);
            let angle = pos as f64 * rate;
            data[pos * d_model + 2 * i] = angle.sin();
            data[pos * d_model + 2 * i + 1] = angle.cos();
        }
    }
    Ok(Tensor::new(vec![seq_len, d_model], data).expect("shape matches construction"))
}

/// One Transformer layer: attention projections, post-attention norm,
/// feed-forward block, post-FFN norm.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub attn_q_w: Tensor,
    pub attn_q_b: Tensor,
    pub attn_k_w: Tensor,
    pub attn_k_b: Tensor,
    pub attn_v_w: Tensor,
    pub attn_v_b: Tensor,
    pub attn_out_w: Tensor,
    pub attn_out_b: Tensor,
    pub norm1_gamma: Tensor,
    pub norm1_beta: Tensor,
    pub ffn_w1: Tensor,
    pub ffn_b1: Tensor,
    pub ffn_w2: Tensor,
    pub ffn_b2: Tensor,
    pub norm2_gamma: Tensor,
    pub norm2_beta: Tensor,
}

/// concat -> linear -> relu -> dropout -> linear head.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadWeights {
    pub hidden_w: Tensor,
    pub hidden_b: Tensor,
    pub out_w: Tensor,
    pub out_b: Tensor,
}

/// Every learnable tensor of the model plus the fixed positional table.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub config: EncoderConfig,
    pub input_w: Tensor,
    pub input_b: Tensor,
    pub cls_embed: Tensor,
    pub pos_table: Tensor,
    pub layers: Vec<LayerWeights>,
    pub decoder_w: Tensor,
    pub decoder_b: Tensor,
    pub cls_head: HeadWeights,
    pub reg_head: HeadWeights,
}

pub const N_CLASSES: usize = 2;
pub const N_REG_TARGETS: usize = 4;

/// Which components join the encoder in an optimizer parameter list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamFilter {
    pub decoder: bool,
    pub cls_head: bool,
    pub reg_head: bool,
}

impl ParamFilter {
    /// Reconstruction pretraining: encoder plus decoder.
    pub fn pretrain() -> Self {
        Self {
            decoder: true,
            cls_head: false,
            reg_head: false,
        }
    }

    /// Supervised multitask training: encoder plus heads; the regression
    /// head stays untouched when the regression branch is disabled.
    pub fn student(multitask: bool) -> Self {
        Self {
            decoder: false,
            cls_head: true,
            reg_head: multitask,
        }
    }
}

fn uniform_fan_in(shape: Vec<usize>, fan_in: usize, r: &mut ChaCha8Rng) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| r.gen_range(-bound..bound)).collect();
    Tensor::new(shape, data).expect("shape matches construction")
}

fn head(input_dim: usize, hidden: usize, outputs: usize, r: &mut ChaCha8Rng) -> HeadWeights {
    HeadWeights {
        hidden_w: uniform_fan_in(vec![input_dim, hidden], input_dim, r),
        hidden_b: Tensor::zeros(vec![hidden]),
        out_w: uniform_fan_in(vec![hidden, outputs], hidden, r),
        out_b: Tensor::zeros(vec![outputs]),
    }
}

impl ModelWeights {
    /// Fresh parameters: weights uniform in +-1/sqrt(fan_in) from the `init`
    /// substream, zero biases, unit norm scales, sinusoidal positions.
    pub fn init(
        config: &EncoderConfig,
        static_full_dims: usize,
        static_scorefree_dims: usize,
        seed: u64,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let d = config.d_model;
        let mut r = rng::substream(seed, "init");
        let mut layers = Vec::with_capacity(config.n_layers);
        for _ in 0..config.n_layers {
            layers.push(LayerWeights {
                attn_q_w: uniform_fan_in(vec![d, d], d, &mut r),
                attn_q_b: Tensor::zeros(vec![d]),
                attn_k_w: uniform_fan_in(vec![d, d], d, &mut r),
                attn_k_b: Tensor::zeros(vec![d]),
                attn_v_w: uniform_fan_in(vec![d, d], d, &mut r),
                attn_v_b: Tensor::zeros(vec![d]),
                attn_out_w: uniform_fan_in(vec![d, d], d, &mut r),
                attn_out_b: Tensor::zeros(vec![d]),
                norm1_gamma: Tensor::full(vec![d], 1.0),
                norm1_beta: Tensor::zeros(vec![d]),
                ffn_w1: uniform_fan_in(vec![d, config.ffn_dim], d, &mut r),
                ffn_b1: Tensor::zeros(vec![config.ffn_dim]),
                ffn_w2: uniform_fan_in(vec![config.ffn_dim, d], config.ffn_dim, &mut r),
                ffn_b2: Tensor::zeros(vec![d]),
                norm2_gamma: Tensor::full(vec![d], 1.0),
                norm2_beta: Tensor::zeros(vec![d]),
            });
        }
        Ok(Self {
            config: config.clone(),
            input_w: uniform_fan_in(vec![config.n_features, d], config.n_features, &mut r),
            input_b: Tensor::zeros(vec![d]),
            cls_embed: uniform_fan_in(vec![1, d], d, &mut r),
            pos_table: positional_encoding(config.seq_len, d)?,
            layers,
            decoder_w: uniform_fan_in(vec![d, config.n_features], d, &mut r),
            decoder_b: Tensor::zeros(vec![config.n_features]),
            cls_head: head(d + static_full_dims, config.head_hidden, N_CLASSES, &mut r),
            reg_head: head(
                d + static_scorefree_dims,
                config.head_hidden,
                N_REG_TARGETS,
                &mut r,
            ),
        })
    }

    /// Stable (name, tensor) listing covering every stored tensor.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![
            ("input_proj.weight".into(), &self.input_w),
            ("input_proj.bias".into(), &self.input_b),
            ("cls_embed".into(), &self.cls_embed),
            ("pos_table".into(), &self.pos_table),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            let p = |suffix: &str| format!("layers.{i}.{suffix}");
            out.extend([
                (p("attn.q.weight"), &l.attn_q_w),
                (p("attn.q.bias"), &l.attn_q_b),
                (p("attn.k.weight"), &l.attn_k_w),
                (p("attn.k.bias"), &l.attn_k_b),
                (p("attn.v.weight"), &l.attn_v_w),
                (p("attn.v.bias"), &l.attn_v_b),
                (p("attn.out.weight"), &l.attn_out_w),
                (p("attn.out.bias"), &l.attn_out_b),
                (p("norm1.gamma"), &l.norm1_gamma),
                (p("norm1.beta"), &l.norm1_beta),
                (p("ffn.w1"), &l.ffn_w1),
                (p("ffn.b1"), &l.ffn_b1),
                (p("ffn.w2"), &l.ffn_w2),
                (p("ffn.b2"), &l.ffn_b2),
                (p("norm2.gamma"), &l.norm2_gamma),
                (p("norm2.beta"), &l.norm2_beta),
            ]);
        }
        out.extend([
            ("decoder.weight".into(), &self.decoder_w),
            ("decoder.bias".into(), &self.decoder_b),
            ("cls_head.hidden.weight".into(), &self.cls_head.hidden_w),
            ("cls_head.hidden.bias".into(), &self.cls_head.hidden_b),
            ("cls_head.out.weight".into(), &self.cls_head.out_w),
            ("cls_head.out.bias".into(), &self.cls_head.out_b),
            ("reg_head.hidden.weight".into(), &self.reg_head.hidden_w),
            ("reg_head.hidden.bias".into(), &self.reg_head.hidden_b),
            ("reg_head.out.weight".into(), &self.reg_head.out_w),
            ("reg_head.out.bias".into(), &self.reg_head.out_b),
        ]);
        out
    }

    /// Trainable tensors in optimizer order: the encoder always, plus the
    /// selected components. The fixed positional table is never included.
    pub fn params_mut(&mut self, filter: ParamFilter) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = vec![
            &mut self.input_w,
            &mut self.input_b,
            &mut self.cls_embed,
        ];
        for l in &mut self.layers {
            out.extend([
                &mut l.attn_q_w,
                &mut l.attn_q_b,
                &mut l.attn_k_w,
                &mut l.attn_k_b,
                &mut l.attn_v_w,
                &mut l.attn_v_b,
                &mut l.attn_out_w,
                &mut l.attn_out_b,
                &mut l.norm1_gamma,
                &mut l.norm1_beta,
                &mut l.ffn_w1,
                &mut l.ffn_b1,
                &mut l.ffn_w2,
                &mut l.ffn_b2,
                &mut l.norm2_gamma,
                &mut l.norm2_beta,
            ]);
        }
        if filter.decoder {
            out.extend([&mut self.decoder_w, &mut self.decoder_b]);
        }
        if filter.cls_head {
            out.extend([
                &mut self.cls_head.hidden_w,
                &mut self.cls_head.hidden_b,
                &mut self.cls_head.out_w,
                &mut self.cls_head.out_b,
            ]);
        }
        if filter.reg_head {
            out.extend([
                &mut self.reg_head.hidden_w,
                &mut self.reg_head.hidden_b,
                &mut self.reg_head.out_w,
                &mut self.reg_head.out_b,
            ]);
        }
        out
    }

    pub fn params(&self, filter: ParamFilter) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = vec![&self.input_w, &self.input_b, &self.cls_embed];
        for l in &self.layers {
            out.extend([
                &l.attn_q_w,
                &l.attn_q_b,
                &l.attn_k_w,
                &l.attn_k_b,
                &l.attn_v_w,
                &l.attn_v_b,
                &l.attn_out_w,
                &l.attn_out_b,
                &l.norm1_gamma,
                &l.norm1_beta,
                &l.ffn_w1,
                &l.ffn_b1,
                &l.ffn_w2,
                &l.ffn_b2,
                &l.norm2_gamma,
                &l.norm2_beta,
            ]);
        }
        if filter.decoder {
            out.extend([&self.decoder_w, &self.decoder_b]);
        }
        if filter.cls_head {
            out.extend([
                &self.cls_head.hidden_w,
                &self.cls_head.hidden_b,
                &self.cls_head.out_w,
                &self.cls_head.out_b,
            ]);
        }
        if filter.reg_head {
            out.extend([
                &self.reg_head.hidden_w,
                &self.reg_head.hidden_b,
                &self.reg_head.out_w,
                &self.reg_head.out_b,
            ]);
        }
        out
    }

    pub fn trainable_mut(&mut self, include_reg_head: bool) -> Vec<&mut Tensor> {
        self.params_mut(ParamFilter {
            decoder: true,
            cls_head: true,
            reg_head: include_reg_head,
        })
    }

    pub fn trainable(&self, include_reg_head: bool) -> Vec<&Tensor> {
        self.params(ParamFilter {
            decoder: true,
            cls_head: true,
            reg_head: include_reg_head,
        })
    }

    /// Copy the encoder (input projection, CLS, layers) from another model;
    /// heads and decoder keep their current values.
    pub fn load_encoder_from(&mut self, other: &ModelWeights) {
        self.input_w = other.input_w.clone();
        self.input_b = other.input_b.clone();
        self.cls_embed = other.cls_embed.clone();
        self.pos_table = other.pos_table.clone();
        self.layers = other.layers.clone();
    }

    /// Fingerprint over every tensor's name, shape and exact value bits.
    pub fn content_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for (name, tensor) in self.named() {
            for b in name.bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
            h ^= tensor.content_hash();
            h = h.wrapping_mul(0x100000001b3);
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn positional_encoding_first_row_alternates_zero_one() {
        let pe = positional_encoding(48, 64).unwrap();
        for i in 0..32 {
            assert_eq!(pe.data()[2 * i], 0.0); // sin 0
            assert_eq!(pe.data()[2 * i + 1], 1.0); // cos 0
        }
    }

    #[test]
    fn positional_encoding_hand_value_and_range() {
        let pe = positional_encoding(48, 64).unwrap();
        // PE(1, 0) = sin(1)
        assert!((pe.data()[64] - 1f64.sin()).abs() <= 1e-12);
        assert!(pe.data().iter().all(|&v| (-1.0..=1.0).contains(&v)));
    }

    #[test]
    fn positional_encoding_rejects_odd_dims() {
        assert!(matches!(
            positional_encoding(48, 63),
            Err(ModelError::Config(_))
        ));
    }

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let cfg = EncoderConfig::test_scale();
        let a = ModelWeights::init(&cfg, 51, 47, 1).unwrap();
        let b = ModelWeights::init(&cfg, 51, 47, 1).unwrap();
        assert_eq!(a.content_hash(), b.content_hash());
        let c = ModelWeights::init(&cfg, 51, 47, 2).unwrap();
        assert_ne!(a.content_hash(), c.content_hash());
    }

    #[test]
    fn trainable_listing_excludes_pos_table_and_optionally_reg_head() {
        let cfg = EncoderConfig::test_scale();
        let w = ModelWeights::init(&cfg, 51, 47, 1).unwrap();
        let with_reg = w.trainable(true).len();
        let without = w.trainable(false).len();
        assert_eq!(with_reg - without, 4);
        // named() lists everything incl. pos_table
        assert_eq!(w.named().len(), with_reg + 1);
    }

    #[test]
    fn head_shapes_follow_config() {
        let cfg = EncoderConfig::default();
        let w = ModelWeights::init(&cfg, 51, 47, 3).unwrap();
        assert_eq!(w.cls_head.hidden_w.shape(), &[64 + 51, 64]);
        assert_eq!(w.cls_head.out_w.shape(), &[64, 2]);
        assert_eq!(w.reg_head.hidden_w.shape(), &[64 + 47, 64]);
        assert_eq!(w.reg_head.out_w.shape(), &[64, 4]);
        assert_eq!(w.decoder_w.shape(), &[64, 7]);
    }
}
