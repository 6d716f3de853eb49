//! Cross-layer Tucker adaptation of stacked attention projections.
//!
//! The weights of one projection type across all layers form a
//! `layers x d_out x d_in` tensor. A truncated higher-order SVD gives a core
//! and three orthonormal factors; fine-tuning trains only three small square
//! matrices `J_n` that act on the factors, while the original tensor is kept
//! and only the change in reconstruction is added to it.

pub mod adapter;
pub mod analysis;
pub mod error;
pub mod io;
pub mod linalg;
pub mod pipeline;
pub mod tensor;
pub mod toy;
pub mod tucker;

pub use adapter::{init_adapter, trainable_param_count, AdapterGrads, CraftAdapter, InitConfig};
pub use error::{CraftError, Result};
pub use tensor::{Matrix, Tensor3};
pub use tucker::{
    approximation_error, compression_counts, hosvd, reconstruct, ApproximationError,
    CompressionCounts, TuckerFactors, TuckerRanks,
};
