//! Adaptive isogeometric defeaturing of planar domains.
//!
//! A simplified spline geometry is grown from a coarse boundary fit until the
//! first-order shape sensitivity of a PDE-constrained quantity of interest drops
//! below a tolerance. The pipeline is: fit the exact boundary on a THB-spline
//! trace, parameterize the interior by a harmonic map, solve the state and adjoint
//! problems, evaluate per-function shape gradients, then mark and refine.

pub mod error;
pub mod quadrature;
pub mod spline;
pub mod hierarchy;
pub mod linalg;
pub mod boundary;
pub mod assembly;
pub mod param;
pub mod pde;
pub mod shape;
pub mod defeature;
pub mod problem;
pub mod record;

pub use error::{Error, Result};
