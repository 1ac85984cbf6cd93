use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};
use statrs::function::gamma::ln_gamma;

use super::fit::FitResult;
use crate::error::{NarError, Result};
use crate::model::{CoefKind, CoefLayout};
use crate::scalar::Scalar;

/// Normal-approximation interval for one free coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoefInterval {
    /// Position in the padded coefficient vector.
    pub index: usize,
    pub kind: CoefKind,
    pub node: usize,
    pub estimate: f64,
    pub se: f64,
    pub lo: f64,
    pub hi: f64,
}

impl CoefInterval {
    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn length(&self) -> f64 {
        self.hi - self.lo
    }
}

fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(NarError::InvalidParameter(format!("level must lie in (0, 1), got {level}")))
    }
}

/// Standard normal quantile `z_{(1 + level) / 2}`.
pub fn normal_quantile(level: f64) -> Result<f64> {
    check_level(level)?;
    Ok(Normal::standard().inverse_cdf(0.5 * (1.0 + level)))
}

/// `beta_i +- z sqrt(vcov_ii)` for every free coefficient.
pub fn confidence_intervals<T: Scalar>(fit: &FitResult<T>, level: f64) -> Result<Vec<CoefInterval>> {
    let z = normal_quantile(level)?;
    let vcov = fit.vcov()?;
    let layout = fit.layout();
    Ok(layout
        .free_indices()
        .into_iter()
        .enumerate()
        .map(|(j, index)| {
            let (kind, node) = layout.describe(index);
            let estimate = fit.beta_hat.values()[index].as_f64();
            let se = vcov[(j, j)].as_f64().max(0.0).sqrt();
            CoefInterval {
                index,
                kind,
                node,
                estimate,
                se,
                lo: estimate - z * se,
                hi: estimate + z * se,
            }
        })
        .collect())
}

/// `k x (2Nq + Np)` contrast with bounded absolute row sums.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastMatrix<T: Scalar> {
    pub d: DMatrix<T>,
    pub row_sum_bound: f64,
}

impl<T: Scalar> ContrastMatrix<T> {
    pub fn new(d: DMatrix<T>, row_sum_bound: f64) -> Result<Self> {
        for (r, row) in d.row_iter().enumerate() {
            let s: f64 = row.iter().map(|v| v.abs().as_f64()).sum();
            if s > row_sum_bound {
                return Err(NarError::InvalidParameter(format!(
                    "contrast row {r} has absolute sum {s} above the bound {row_sum_bound}"
                )));
            }
        }
        Ok(Self { d, row_sum_bound })
    }

    /// Rows selecting the given coefficients of the padded layout.
    pub fn select(layout: &CoefLayout, indices: &[usize]) -> Result<Self> {
        let mut d = DMatrix::zeros(indices.len(), layout.len());
        for (r, &j) in indices.iter().enumerate() {
            if j >= layout.len() {
                return Err(NarError::Dimension(format!("coefficient index {j} out of range")));
            }
            d[(r, j)] = T::one();
        }
        Self::new(d, 1.0)
    }
}

/// Wald region `{beta_0 : K' (D Q D')^{-1} K <= chi2_k}` with
/// `K = T^{-1/2} D (sum Z'Z) (beta_hat - beta_0)`.
#[derive(Debug, Clone)]
pub struct ConfidenceRegion<T: Scalar> {
    /// `D beta_hat`.
    pub center: DVector<T>,
    /// Quadratic form of the region in contrast coordinates when the
    /// remaining coefficients sit at their estimates.
    pub shape: DMatrix<T>,
    pub threshold: f64,
    d_free: DMatrix<T>,
    db: DMatrix<T>,
    dmd_inv: DMatrix<T>,
    beta_free: DVector<T>,
    layout: CoefLayout,
}

impl<T: Scalar> ConfidenceRegion<T> {
    /// Wald statistic at `beta0` (full padded vector).
    pub fn statistic(&self, beta0: &DVector<T>) -> Result<f64> {
        if beta0.len() != self.layout.len() {
            return Err(NarError::Dimension("beta0 has the wrong length".into()));
        }
        let diff = &self.beta_free - self.layout.restrict(beta0);
        let u = &self.db * diff;
        Ok((u.transpose() * &self.dmd_inv * &u)[(0, 0)].as_f64())
    }

    pub fn contains(&self, beta0: &DVector<T>) -> Result<bool> {
        Ok(self.statistic(beta0)? <= self.threshold)
    }

    /// Volume of the ellipsoid `{c : (c - center)' shape (c - center) <= threshold}`.
    pub fn volume(&self) -> f64 {
        let k = self.center.len() as f64;
        let det = self.shape.clone().determinant().as_f64();
        let log_ball = 0.5 * k * std::f64::consts::PI.ln() - ln_gamma(0.5 * k + 1.0);
        (log_ball + 0.5 * k * self.threshold.ln() - 0.5 * det.ln()).exp()
    }

    /// Contrast restricted to the free coefficients.
    pub fn contrast(&self) -> &DMatrix<T> {
        &self.d_free
    }
}

pub fn confidence_region<T: Scalar>(
    fit: &FitResult<T>,
    d: &ContrastMatrix<T>,
    level: f64,
) -> Result<ConfidenceRegion<T>> {
    check_level(level)?;
    let layout = fit.layout();
    if d.d.ncols() != layout.len() {
        return Err(NarError::Dimension(format!(
            "contrast has {} columns, expected {}",
            d.d.ncols(),
            layout.len()
        )));
    }
    let k = d.d.nrows();
    if k == 0 {
        return Err(NarError::Dimension("contrast has no rows".into()));
    }
    let inf = fit
        .inference
        .as_ref()
        .ok_or_else(|| NarError::InvalidParameter("fit was computed without inference".into()))?;
    let free = layout.free_indices();
    let d_free = DMatrix::from_fn(k, free.len(), |r, c| d.d[(r, free[c])]);
    let db = &d_free * &inf.bread;
    let dmd = &d_free * &inf.meat * d_free.transpose();
    let dmd_inv = dmd
        .clone()
        .cholesky()
        .ok_or_else(|| NarError::Singular("D Q D' of the confidence region".into()))?
        .inverse();
    let dbd = &db * d_free.transpose();
    let shape = &dbd * &dmd_inv * &dbd;
    let threshold = ChiSquared::new(k as f64)
        .map_err(|e| NarError::InvalidParameter(e.to_string()))?
        .inverse_cdf(level);
    let beta_free = fit.free_estimates();
    Ok(ConfidenceRegion {
        center: &d_free * &beta_free,
        shape,
        threshold,
        d_free,
        db,
        dmd_inv,
        beta_free,
        layout,
    })
}
