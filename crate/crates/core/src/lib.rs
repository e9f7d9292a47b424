//! Regionally-implicit discontinuous Galerkin (RIDG) solver for scalar
//! hyperbolic conservation laws on periodic Cartesian meshes, with a
//! quasi-quadrature-free Jacobian assembly and an SSP-RKDG reference scheme.

pub mod basis;
pub mod dg;
pub mod error;
pub mod harness;
pub mod law;
pub mod mesh;
pub mod metrics;
pub mod parallel;
pub mod predictor;
pub mod stepper;
pub mod tensor;

pub use error::{Error, Result};
