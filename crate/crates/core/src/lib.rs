//! Numerical toolkit for recovering lower-order perturbations of the biharmonic
//! operator from partial Cauchy data, built around complex geometrical optics
//! solutions on grid-embedded planar domains.

pub mod biharmonic_core;
pub mod density_approx;
pub mod error;
pub mod geometry;
pub mod linearized_dn;
pub mod numerics;
pub mod recovery;
pub mod segal_bargmann;
pub mod special_solutions;
pub mod verification;

pub use error::{Error, Result};
pub use numerics::C64;
