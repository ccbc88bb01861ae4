//! Budget-constrained sequential coupon allocation.
//!
//! A decision transformer conditioned on return-to-go, cost-to-go and a dual
//! variable λ picks a coupon per user per round; an outer Lagrangian loop
//! tunes λ until spend lands just under the budget.

pub mod bench;
pub mod config;
pub mod datapipe;
pub mod dualopt;
pub mod error;
pub mod model;
pub mod rng;
pub mod scalar;
pub mod simenv;
pub mod trainer;

pub use error::{Error, Result};

/// Model parameters at training and inference precision.
pub type Params = model::ModelParams<f32>;
/// Model parameters in double precision, for gradient checks.
pub type ParamsF64 = model::ModelParams<f64>;
pub type Gradients = model::ModelParams<f32>;
pub type Adam = trainer::AdamState<f32>;
