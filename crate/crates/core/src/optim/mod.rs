//! Numerical optimizers used by the model fits.

mod lbfgs;
mod nelder_mead;

pub use lbfgs::{minimize_lbfgs, LbfgsConfig, LbfgsResult, Termination};
pub use nelder_mead::{minimize_nelder_mead, NelderMeadConfig, NelderMeadResult};
