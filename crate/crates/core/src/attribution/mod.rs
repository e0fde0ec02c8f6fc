//! Sampling-based Shapley attribution over the static features.
//!
//! Players are the semantic features, not raw dims: each one-hot group is
//! toggled atomically between the background and the patient's value, and
//! continuous features are single dims. The explained quantity is the
//! model's positive-class probability with the dose series held fixed at the
//! patient's own values.

mod engine;
mod student;

pub use engine::{sample_shapley, CoalitionModel, Player, ShapleyEstimate};
pub use student::{
    background_static_vector, player_layout, rank_features, shapley_static, AttributionResult,
};

use thiserror::Error;

use crate::model::ModelError;
use crate::numerics::NumericsError;

#[derive(Debug, Error)]
pub enum AttributionError {
    #[error("invalid attribution setup: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}
