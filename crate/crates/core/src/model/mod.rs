//! The masked-autoencoder encoder/decoder and the multitask heads: a 2-layer
//! post-norm Transformer over the 48x7 dose matrix with a prepended CLS
//! token, a linear reconstruction decoder, and small feed-forward heads for
//! mortality classification and severity regression.

mod checkpoint;
mod config;
mod forward;
mod mask;
mod weights;

pub use checkpoint::{ModelCheckpoint, Stage, TensorRecord};
pub use config::{EncoderConfig, MaskGranularity};
pub use forward::{
    classify_head, cls_token, decoder_forward, embed_tokens, encoder_forward, full_forward,
    regress_head, stage_weights, TapeHead, TapeLayer, TapeModel,
};
pub use mask::{apply_mask, make_mask, MaskPlan};
pub use weights::{
    positional_encoding, HeadWeights, LayerWeights, ModelWeights, ParamFilter, N_CLASSES,
    N_REG_TARGETS,
};

use thiserror::Error;

use crate::numerics::NumericsError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("checkpoint stage {actual:?} where {expected:?} is required")]
    WrongStage { expected: Stage, actual: Stage },
    #[error("checkpoint tensor {name}: expected shape {expected:?}, got {actual:?}")]
    BadTensor {
        name: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("checkpoint is missing tensor {0}")]
    MissingTensor(String),
    #[error("checkpoint io on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("checkpoint format: {0}")]
    Format(#[from] serde_json::Error),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}
