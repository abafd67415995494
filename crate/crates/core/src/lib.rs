//! Dual space preconditioned gradient descent (DSPGD) for overparameterized
//! linear models.
//!
//! The iteration is `W_i = W_{i-1} - eta * grad K(grad L(W_{i-1}))`, where `L`
//! is a separable convex loss of the residual `XW - Y` and `K` is a convex
//! dual reference function. The crate provides the optimizer, the adjusted
//! Bregman divergence machinery used to analyse it, reference interpolating
//! solutions (minimum l1/l2/linf distance from the initialization), bound
//! checkers for the convergence and proximity results, and the sweep
//! experiments that compare the limit point against those references.

pub mod bregman;
pub mod error;
pub mod experiment;
pub mod format;
pub mod loss;
pub mod optimizer;
pub mod plot;
pub mod precond;
pub mod problem;
pub mod reference;
pub mod verify;

pub(crate) mod linalg;

pub use error::{Error, Result};
pub use loss::{SeparableLoss, SpanElement};
pub use optimizer::{RunConfig, Trajectory};
pub use precond::{Preconditioner, PreconditionerKind};
pub use problem::{GenSpec, ProblemInstance, SpectralInfo};
pub use reference::{PNorm, ReferenceSolution};

/// Dense real matrix used throughout the crate.
pub type Mat = nalgebra::DMatrix<f64>;
