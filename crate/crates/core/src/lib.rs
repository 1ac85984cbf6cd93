//! Network autoregressive NAR(q1, q2) models with node-specific coefficients,
//! exogenous covariates and structured error covariances.
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision. The replication harness, panel ingestion and
//! geographic weights work in `f64`.

pub mod covariance;
pub mod data;
pub mod error;
pub mod estimation;
pub mod geo;
pub mod harness;
pub mod inference;
pub mod model;
pub mod panel_io;
pub mod rng;
pub mod scalar;
pub mod simulation;

pub use data::Panel;
pub use error::{NarError, Result};
pub use scalar::Scalar;

pub type PanelF64 = data::Panel<f64>;
pub type PanelF32 = data::Panel<f32>;
pub type NarSpecF64 = model::NarSpec<f64>;
pub type NarSpecF32 = model::NarSpec<f32>;
pub type CoefVectorF64 = model::CoefVector<f64>;
pub type CoefVectorF32 = model::CoefVector<f32>;
pub type FitResultF64 = estimation::FitResult<f64>;
pub type FitResultF32 = estimation::FitResult<f32>;
pub type ErrorModelF64 = simulation::ErrorModel<f64>;
pub type ErrorModelF32 = simulation::ErrorModel<f32>;
pub type SarFitF64 = covariance::SarFit<f64>;
pub type FactorFitF64 = covariance::FactorFit<f64>;
