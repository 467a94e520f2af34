//! Simulation and estimation toolkit for IRS-assisted direction-of-arrival
//! estimation in non-line-of-sight geometry.
//!
//! The classic path designs IRS phases (closed-form SNR maximization or
//! CRLB minimization on the complex circle manifold) and estimates the DoA by
//! an exhaustive maximum-likelihood grid search. The learned path trains an
//! IRS layer, whose weights are block-diagonal 2x2 rotations parameterized by
//! the cell phases, jointly with a dense regressor.

pub mod channel;
pub mod dataset;
pub mod error;
pub mod exec;
pub mod geometry;
pub mod harness;
pub mod irs;
pub mod ml_estimator;
pub mod nn;
pub mod phase_design;
pub mod rng;

pub use error::{Error, Result};
pub use geometry::{DoA, SceneGeometry};
