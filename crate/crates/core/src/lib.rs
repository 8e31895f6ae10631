//! Carleman-lifted policy iteration for polynomial input-affine systems.
//!
//! The crate lifts `ẋ = f(x) + g(x)u` onto a truncated monomial basis,
//! learns quadratic-in-lifted-state value functions and feedback gains from
//! sampled trajectories, and refines the gains into structured
//! (zero-pattern) or sparse (ℓ1 / ADMM) variants.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basis;
pub mod error;
pub mod learn;
pub mod lift;
pub mod linalg;
pub mod par;
pub mod plant;
pub mod poly;
pub mod shaped;
pub mod sim;
pub mod sparse;
pub mod structured;

pub use basis::{Monomial, MonomialBasis, QuadBasis};
pub use error::{Error, Result};
pub use lift::CarlemanModel;
pub use par::Execution;
pub use plant::{Dynamics, PolynomialPlant, TugboatFleet};
pub use sim::{CostWeights, Excitation, ExcitationSpec, SimOptions, Trajectory};
