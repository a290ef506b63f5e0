//! Two-stage Bayesian scalar-on-quantile-function regression for count outcomes.

pub mod basis;
pub mod error;
pub mod gmrf;
pub mod health_stage;
pub mod io;
pub mod mcmc;
pub mod panel;
pub mod pg;
pub mod quantile_stage;
pub mod simkit;

pub use error::{Error, Result};
pub use panel::ExposurePanel;
