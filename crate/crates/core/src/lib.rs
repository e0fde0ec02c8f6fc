//! Mortality prediction from 48-hour vasoactive-inotropic dose series.
//!
//! The pipeline has three stages: self-supervised masked-autoencoder
//! pretraining of a small Transformer encoder on 48x7 dose matrices, a frozen
//! teacher built from the pretrained encoder, and a multitask student
//! (mortality classification + severity-score regression) trained with
//! optional knowledge distillation against the teacher's class probabilities.
//!
//! Modules:
//! - [`numerics`]: dense f64 tensors, a reverse-mode gradient tape, loss
//!   primitives and the AdamW optimizer.
//! - [`data`]: cohort schema, synthetic cohort generation and the
//!   preprocessing pipeline (imputation, log1p + z-score normalization,
//!   one-hot encoding, stratified splitting, class weights).
//! - [`model`]: encoder/decoder/head forward passes, cell masking and the
//!   checkpoint format.
//! - [`training`]: the three-stage training loop, loss assembly, early
//!   stopping and the ablation harness.
//! - [`evaluation`]: confusion metrics, AUROC/ROC, R^2 and bootstrap
//!   confidence intervals.
//! - [`attribution`]: permutation-sampling Shapley values over the static
//!   features.

pub mod attribution;
pub mod data;
pub mod evaluation;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod training;

/// Format version stamped into every persisted artifact.
pub const FORMAT_VERSION: u32 = 1;
