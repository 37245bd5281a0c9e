//! Averaging process and Binomial Splitting on weighted graphs: exact
//! generators, dualities and intertwinings, Monte Carlo simulation, distance
//! functionals and an experiment harness.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix it to `f64`, which is what the simulator and harness use.

pub mod averaging;
pub mod distance;
pub mod error;
pub mod duality;
pub mod exact;
pub mod graphs;
pub mod harness;
pub mod scalar;
pub mod sim;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Graph = graphs::WeightedGraph<f64>;
pub type Weights = graphs::SiteWeights<f64>;
pub type Rates = exact::RateMatrix<f64>;
pub type Spectrum = exact::Spectrum<f64>;
pub type Simplex = averaging::SimplexPoint<f64>;
pub type Config = harness::ExperimentConfig;
