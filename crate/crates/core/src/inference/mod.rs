//! Residual bootstrap, lag-order selection and one-step forecasting.

mod bic;
mod bootstrap;
mod forecast;

pub use bic::{select_q_bic, BicSelection};
pub use bootstrap::{
    percentile_interval, residual_bootstrap, BootstrapConfig, BootstrapEstimator, BootstrapResult,
    PercentileInterval, BOOTSTRAP_BURN_IN, MIN_BOOTSTRAP_REPS,
};
pub use forecast::{forecast_one_step, forecast_path, pmse};
