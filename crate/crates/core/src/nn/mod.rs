//! Small dense-network stack: MLPs with manual backprop, Adam, and the
//! stochastic policy heads used by every agent.

mod adam;
mod net;
mod policy;
pub mod special;

pub use adam::{Adam, AdamConfig};
pub use net::{DenseNet, ForwardCache};
pub(crate) use net::{read_u32, read_u64};
pub use policy::{softplus, Action, PolicyHead, Sample};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite input")]
    NonFiniteInput,
    #[error("parameter/gradient shape mismatch: {params} vs {grads}")]
    ShapeMismatch { params: usize, grads: usize },
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("non-finite distribution parameters")]
    NonFiniteParams,
    #[error("action does not match policy head: {0}")]
    ActionMismatch(String),
    #[error("invalid layer dimensions {0:?}")]
    InvalidDims(Vec<usize>),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
