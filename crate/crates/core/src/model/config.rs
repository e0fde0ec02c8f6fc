use serde::{Deserialize, Serialize};

use super::ModelError;

/// What a mask cell covers: individual (hour, feature) cells, or whole
/// hours across all 7 features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MaskGranularity {
    #[default]
    Cell,
    Timestep,
}

/// Encoder architecture and masking settings.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub ffn_dim: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub dropout: f64,
    pub seq_len: usize,
    pub n_features: usize,
    pub mask_ratio: f64,
    pub head_dropout: f64,
    /// Hidden width of the classification/regression heads.
    pub head_hidden: usize,
    pub mask_granularity: MaskGranularity,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            ffn_dim: 256,
            n_heads: 8,
            n_layers: 2,
            dropout: 0.1,
            seq_len: 48,
            n_features: 7,
            mask_ratio: 0.05,
            head_dropout: 0.2,
            head_hidden: 64,
            mask_granularity: MaskGranularity::Cell,
        }
    }
}

impl EncoderConfig {
    /// Reduced architecture for tests: gradients check faster at d_model 8.
    pub fn test_scale() -> Self {
        Self {
            d_model: 8,
            ffn_dim: 16,
            n_heads: 2,
            head_hidden: 8,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.d_model == 0 || self.d_model % 2 != 0 {
            return Err(ModelError::Config(format!(
                "d_model {} must be even and positive",
                self.d_model
            )));
        }
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(ModelError::Config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.n_layers == 0 || self.ffn_dim == 0 || self.head_hidden == 0 {
            return Err(ModelError::Config(
                "n_layers, ffn_dim and head_hidden must be positive".into(),
            ));
        }
        if self.seq_len == 0 || self.n_features == 0 {
            return Err(ModelError::Config(
                "seq_len and n_features must be positive".into(),
            ));
        }
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return Err(ModelError::Config(format!(
                "mask_ratio {} outside (0, 1)",
                self.mask_ratio
            )));
        }
        for (name, v) in [("dropout", self.dropout), ("head_dropout", self.head_dropout)] {
            if !(0.0..1.0).contains(&v) {
                return Err(ModelError::Config(format!("{name} {v} outside [0, 1)")));
            }
        }
        Ok(())
    }

    /// Cells masked per sample under the configured granularity.
    pub fn masked_cells(&self) -> usize {
        match self.mask_granularity {
            MaskGranularity::Cell => {
                (self.mask_ratio * (self.seq_len * self.n_features) as f64).ceil() as usize
            }
            MaskGranularity::Timestep => {
                let rows = (self.mask_ratio * self.seq_len as f64).ceil() as usize;
                rows * self.n_features
            }
        }
    }

    /// Tokens the encoder emits: the data positions plus the CLS slot.
    pub fn tokens(&self) -> usize {
        self.seq_len + 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_masks_seventeen_cells() {
        // ceil(0.05 * 336) = 17
        assert_eq!(EncoderConfig::default().masked_cells(), 17);
    }

    #[test]
    fn full_mask_ratio_is_rejected() {
        let cfg = EncoderConfig {
            mask_ratio: 1.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = EncoderConfig {
            mask_ratio: 0.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn head_divisibility_is_checked() {
        let cfg = EncoderConfig {
            d_model: 62,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        assert!(EncoderConfig::default().validate().is_ok());
        assert!(EncoderConfig::test_scale().validate().is_ok());
    }

    #[test]
    fn timestep_granularity_masks_whole_rows() {
        let cfg = EncoderConfig {
            mask_granularity: MaskGranularity::Timestep,
            ..Default::default()
        };
        // ceil(0.05 * 48) = 3 rows of 7 features
        assert_eq!(cfg.masked_cells(), 21);
    }
}
