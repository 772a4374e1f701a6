//! Probabilistic projection of female life expectancy with a Bayesian
//! hierarchical double-logistic model extended by an HIV/ART covariate.

pub mod artifacts;
pub mod covariate;
pub mod data;
pub mod double_logistic;
pub mod error;
pub mod loess;
pub mod mcmc;
pub mod pipeline;
pub mod projection;
pub mod rng;
pub mod slice;
pub mod synthetic;
pub mod trajectories;
pub mod validation;
pub mod truncnorm;
pub mod variance;

pub use error::{Error, Result};
