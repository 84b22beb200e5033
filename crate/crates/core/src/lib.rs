//! Fixed-domain inference for spatial Gaussian process regression with a nugget.
//!
//! The crate covers stationary covariance families, stratified designs on the
//! unit cube, higher-order quadratic-variation estimators of the microergodic
//! parameter and the nugget, Metropolis sampling of the covariance parameters
//! with the regression coefficients integrated out, kriging prediction, and a
//! small experiment harness driven from the `infillgp` binary.

pub mod analysis;
pub mod covariance;
pub mod design;
pub mod error;
pub mod gp_sim;
pub mod harness;
pub mod inference;
pub mod linalg;
pub mod prediction;
pub mod quadvar;
pub mod rng;
pub mod specialfn;

pub use covariance::{CovarianceModel, Family, TaperDescriptor, TaperKind};
pub use design::{Design, FeatureSpec, IndexSet};
pub use error::{Error, Result};
pub use gp_sim::Dataset;
pub use inference::{McmcConfig, PosteriorChain, PriorSpec};
pub use quadvar::{QvConfig, QvEstimate};
