//! Minimal differentiable core: tensors, forward kernels, a reverse-mode
//! tape and the Adam optimizer.

mod adam;
mod graph;
mod init;
pub mod ops;
mod real;
mod tensor;

pub use adam::{AdamState, DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_EPS};
pub use graph::{Gradients, Graph, NodeId};
pub use init::glorot_uniform;
pub use ops::{avgpool2d, conv2d, dense, mae_loss, mse_loss, relu, sample_mae, sample_mse, sigmoid, upsample2d};
pub use real::Real;
pub use tensor::Tensor;

/// Mean reduction applied to elementwise residuals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    Mae,
    Mse,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum NnError {
    #[error("{op}: shape mismatch, expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("{op}: expected rank {expected}, found shape {found:?}")]
    RankMismatch {
        op: &'static str,
        expected: &'static str,
        found: Vec<usize>,
    },
    #[error("shape {shape:?} does not hold {len} values")]
    LengthMismatch { shape: Vec<usize>, len: usize },
    #[error("invalid shape {0:?}")]
    InvalidShape(Vec<usize>),
    #[error("backward requires a single-element loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("{0}")]
    InvalidArgument(String),
}
