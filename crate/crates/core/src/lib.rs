//! Bayesian inference for longitudinal self-reported counts with reporting
//! error modelled by a linear birth-death process over a Poisson
//! random-effects model.

pub mod bd;
pub mod config;
pub mod dataset;
pub mod error;
pub mod math;
pub mod mcmc;
pub mod output;
pub mod prem;
pub mod priors;
pub mod report;
pub mod simulation;
pub mod trace_io;

pub use error::{Error, Result};
