//! Least-squares estimators of the stacked coefficient vector and their
//! asymptotic inference.

mod fit;
mod intervals;
mod linalg;
pub(crate) mod regressors;

pub use fit::{
    fit, fit_egls, fit_gls, fit_ols, fit_ridge_gls, fit_ridge_ols, CovKind, Estimator,
    EstimatorTag, FitOptions, FitResult, Inference, RidgePenalty, SigmaUsed,
};
pub(crate) use fit::{covariance_step, gls_solve, ols_solve};
pub use intervals::{
    confidence_intervals, confidence_region, normal_quantile, CoefInterval, ConfidenceRegion,
    ContrastMatrix,
};
