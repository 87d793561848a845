//! Finite-resolution convex-integration toolkit for nonmonotone diffusion
//! systems: T_N/tau_N-configuration geometry, lamination hulls, oscillatory
//! building blocks, the staircase approximation, and certified refinement of
//! subsolutions toward approximate weak solutions.
//!
//! Everything is generic over the scalar type via [`scalar::Real`]; concrete
//! `f64` aliases for the main types live at the crate root.

pub mod error;
pub mod scalar;

pub mod linalg;
pub mod tn;

pub use error::{ConvintError, Result};
pub use scalar::{real, to_f64, Real};

/// `f64` aliases for the central types.
pub type BlockMatrix64 = linalg::BlockMatrix<f64>;
pub type DiagPoint64 = linalg::DiagPoint<f64>;
pub type Flux64 = linalg::Flux<f64>;
