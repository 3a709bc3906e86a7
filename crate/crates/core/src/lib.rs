//! Digital-twin informed Gaussian-process prediction of spatial channel
//! statistics.
//!
//! A randomized, uncalibrated propagation twin ([`scene`], [`propagate`])
//! produces realizations of the log ε-quantile channel power over a grid of
//! candidate locations ([`stats`]). Their sample moments form a
//! geometry-aware GP prior ([`prior`]), which drives mutual-information
//! probing design ([`select`]), closed-form conditioning on a few noisy
//! measurements ([`gp`]) and URLLC rate selection under a meta-probability
//! constraint ([`urllc`]). [`harness`] wires the pipeline into reproducible
//! experiments against stationary-kernel baselines.
//!
//! The statistical code is generic over [`Real`] (`f32` or `f64`); the
//! aliases below fix the scalar to `f64`, which is what the harness uses.

pub mod error;
pub mod geom;
pub mod gp;
pub mod harness;
pub mod linalg;
pub mod prior;
pub mod propagate;
pub mod scalar;
pub mod scene;
pub mod select;
pub mod stats;
pub mod urllc;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Matrix = linalg::Matrix<f64>;
pub type GpPrior = prior::GpPrior<f64>;
pub type MaternParams = prior::MaternParams<f64>;
pub type QuantileDataset = stats::QuantileDataset<f64>;
pub type Observations = gp::Observations<f64>;
pub type PosteriorField = gp::PosteriorField<f64>;
pub type ProbePlan = select::ProbePlan<f64>;
pub type RateDecision = urllc::RateDecision<f64>;

pub type Matrix32 = linalg::Matrix<f32>;
pub type GpPrior32 = prior::GpPrior<f32>;
pub type PosteriorField32 = gp::PosteriorField<f32>;
