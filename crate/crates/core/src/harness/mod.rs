//! Experiment configuration, Monte Carlo evaluation, cost accounting and the
//! command-line front end.

pub mod cli;
pub mod config;
pub mod experiments;
pub mod flops;
pub mod metrics;
pub mod plot;
