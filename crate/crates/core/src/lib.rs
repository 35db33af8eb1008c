//! Differentiable gradient-domain depth integration.
//!
//! A depth map is recovered from a field of neighbouring-pixel depth
//! differences plus sparse depth observations by solving a linear
//! least-squares problem with matrix-free conjugate gradient. The solve has
//! exact backward passes for the gradient field and for an optional
//! per-observation confidence map, both computed with one extra adjoint
//! solve. Around the integrator sit a refinement loop with pluggable
//! refiners, training losses, and a depth-completion evaluation toolkit.
//!
//! The `parallel` feature (on by default) runs the grid kernels and batch
//! work on rayon; without it everything runs sequentially with identical
//! numerical results.

pub mod cg;
pub mod cli;
pub mod ddi;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod grid;
pub mod io;
pub mod loss;
pub mod operators;
pub mod par;
pub mod refine;

pub use cg::{solve, LinearOperator, SolveStats, StopConfig, StopReason};
pub use ddi::{
    ddi_backward, ddi_backward_confidence, ddi_backward_gradients, ddi_forward, ddi_forward_batch,
    DdiContext, DdiGrads, DdiSolution, DEFAULT_ALPHA,
};
pub use error::{Error, Result};
pub use grid::{
    convex_upsample, finite_difference, masked_avg_pool, ConfidenceMap, DepthMap, GradientField,
    Mask, SparseObservations, UpsampleWeights,
};
pub use operators::{ResidualVector, SystemConfig};
pub use par::Exec;
pub use refine::{run_refinement, run_refinement_with, RefinementTrace, Refiner, RefinerSpec};
