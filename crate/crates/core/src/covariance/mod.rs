//! Structured estimates of the error covariance from residuals.

mod factor;
mod sar;

pub use factor::{
    default_kmax, fit_factor, ic_penalty, select_k, FactorCovariance, FactorFit, KSelection,
};
pub use sar::{
    fit_sar_qmle, sar_profile_loglik, sigma_sar, SarCovariance, SarFit, SAR_BOUNDS,
};

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::scalar::Scalar;

/// A covariance matrix with a cheap inverse.
pub trait ErrorCovariance<T: Scalar> {
    fn dim(&self) -> usize;

    /// Dense `Sigma`.
    fn matrix(&self) -> DMatrix<T>;

    /// `Sigma^{-1} v` without forming a dense inverse.
    fn apply_inverse(&self, v: &DVector<T>) -> DVector<T>;

    /// Dense `Sigma^{-1}`.
    fn inverse_matrix(&self) -> Result<DMatrix<T>> {
        let n = self.dim();
        let mut out = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut e = DVector::zeros(n);
            e[j] = T::one();
            out.set_column(j, &self.apply_inverse(&e));
        }
        Ok(out)
    }
}
