//! Slow, independent reference computations for checking the `ocdl` crate:
//! dense per-frequency solves, spatial-domain operators, history arrays
//! summed from scratch, a subgradient coding solver and a tiny batch
//! dictionary learner.

pub mod batch;
pub mod dense;
pub mod spatial;
pub mod systems;

pub use batch::{batch_cdl_tiny, dictionary_fit, BatchResult};
pub use dense::{dense_solve, relative_residual, CMatrix};
pub use spatial::{spatial_convolve, spatial_correlate, spatial_objective, spatial_reconstruct, subgradient_csc};
pub use systems::{naive_alpha, naive_beta, FrequencyNormalSystem};

#[derive(Debug, thiserror::Error)]
pub enum OracleError {
    #[error("matrix is singular to working precision")]
    Singular,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("instance too large for the oracle: {0}")]
    TooLarge(String),
    #[error(transparent)]
    Core(#[from] ocdl::Error),
}

pub type Result<T> = std::result::Result<T, OracleError>;
