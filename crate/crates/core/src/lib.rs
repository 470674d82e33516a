//! Latent-moment threshold models for recurrent binary outcomes.
//!
//! Each binary outcome is `1{Z_it > 0}` for a latent `Z_it` whose location,
//! scale, skewness and tail weight follow their own regressions. Two fitting
//! routes are provided: an exact sinh–arcsinh likelihood sampled by
//! Hamiltonian Monte Carlo, and a pseudo-likelihood built on a smoothed
//! simulated probability surface. Baselines (GEE, logistic GLMM), data
//! generators, metrics and a replication harness round out the crate.

pub mod baselines;
pub mod bspline;
pub mod diagnostics;
pub mod error;
pub mod hmc;
pub mod io;
pub mod metrics;
pub mod model;
pub mod normal;
pub mod panel;
pub mod posterior;
pub mod par;
pub mod quadrature;
pub mod rng;
pub mod sas;
pub mod simstudy;
pub mod structure;
pub mod surface;

pub use error::{Error, Result};
pub use panel::{Membership, Moment, ObservationRow, PanelData};
pub use sas::SasParams;
pub use structure::{Design, MomentCoefficients, MomentSpec, MomentTerms, Variant};
