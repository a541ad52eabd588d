//! Covariance-adaptive sequential black-box optimization.
//!
//! The library optimizes cumulative objectives `sum_k f_k(x_1, ..., x_k)` where each
//! step score depends on the whole trajectory prefix through hidden dynamics. It
//! maintains one full-covariance Gaussian search distribution per step and updates
//! the precision matrices directly.
//!
//! Modules:
//!
//! - [`linalg`]: symmetric matrix square root, inverse and eigenvalue clamping.
//! - [`policy`]: the chain of per-step Gaussians and batch sampling.
//! - [`problems`]: test functions, rotation dynamics and a toy diffusion rollout.
//! - [`estimators`]: cumulative and normalized scores, the pre-conditioning matrix
//!   and the zeroth-order mean-gradient estimator.
//! - [`optimizer`]: the practical normalized loop ([`optimizer::bdtg`]), the
//!   scheduled loop with feasibility projection ([`optimizer::casbo`]) and a
//!   fixed-variance ES baseline ([`optimizer::es`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimators;
pub mod linalg;
pub mod optimizer;
pub mod policy;
pub mod problems;

pub use error::{Error, Result};
pub use estimators::ScoreTable;
pub use linalg::SpdMatrix;
pub use optimizer::{
    run_optimizer, run_optimizer_with, BdtgConfig, CasboConfig, CasboSchedules, EsConfig, Mode,
    OptimizerConfig, RunOptions, RunTrace, TraceRecord,
};
pub use policy::{GaussianStepParam, PolicyChain, TrajectoryBatch};
pub use problems::{RolloutState, ScoreMatrix, SequentialProblem, TestFunction};

/// Random stream used for every stochastic routine. One stream per run, seeded from
/// a 64-bit value.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Builds the per-run random stream for `seed`.
pub fn rng_from_seed(seed: u64) -> Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}
