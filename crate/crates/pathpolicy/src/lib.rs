//! Simulation, identification, and policy learning for path-specific
//! dynamic treatment regimes on finite longitudinal causal models.
//!
//! The crate is organized around one pipeline:
//!
//! * [`scm`] specifies a finite structural model and samples observational
//!   or counterfactual data from it, including worlds where treatment edges
//!   into mediators carry a different value than the rest.
//! * [`ident`] computes interventional and path-specific policy values
//!   exactly from a spec by summing the corresponding identifying
//!   functional over all configurations.
//! * [`oracle`] derives ground truth independently of the estimators:
//!   exact values and the optimal regime within a mode, found by dynamic
//!   programming over history strata.
//! * [`models`] fits the logistic and linear working models everything
//!   downstream shares.
//! * [`policylearn`] estimates optimal regimes and their values from data
//!   (plug-in, weighted Q-learning, structural nested mean models, and
//!   direct value search) with inverse-probability and robust estimators.
//! * [`evalboot`] wraps any estimator in a seeded nonparametric bootstrap
//!   and formats comparison tables.
//! * [`studies`] holds the built-in benchmark processes and end-to-end
//!   study drivers the command line exposes.

pub mod cli;
pub mod dataset;
pub mod error;
pub mod evalboot;
pub mod features;
pub mod ident;
pub mod layout;
pub mod models;
pub mod oracle;
pub mod policy;
pub mod policylearn;
mod rng;
pub mod scm;
pub mod studies;

pub use cli::run;
pub use error::{Error, Result};
