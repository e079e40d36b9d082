//! Hidden Markov models with Beta emissions whose means follow smooth
//! covariate curves.
//!
//! The observation at each time point is a proportion in (0, 1). Conditional
//! on a latent K-state Markov chain, it is Beta distributed with a state
//! specific precision and a state specific mean curve built from penalized
//! B-splines on the covariates. Fitting is penalized EM with a quasi-Newton
//! M-step; model selection couples penalized-likelihood criteria on an
//! effective-dimension scale with boundary diagnostics; uncertainty comes
//! from a parametric bootstrap.

pub mod bootstrap;
pub mod emission;
pub mod error;
pub mod fit;
pub mod hmm;
pub mod linalg;
pub mod numeric;
pub mod optim;
pub mod select;
pub mod sim;
pub mod spline;

pub use error::{Error, Result};
