//! Modulated Fourier expansions for semilinear wave equations with a slowly
//! varying wave speed, together with a spectral reference solver.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cheb;
pub mod error;
pub mod harness;
pub mod mfe;
pub mod mfe1d;
pub mod mfe_nd;
pub mod par;
pub mod profiles;
pub mod solver;
pub mod spectral;

pub use error::{Error, Result};
