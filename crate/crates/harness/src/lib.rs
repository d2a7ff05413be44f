//! Reproducible experiments for the data-driven predictive controller.

pub mod config;
pub mod sim;
pub mod experiments;
pub mod metrics;
