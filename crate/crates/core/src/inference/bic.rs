use nalgebra::DMatrix;
use serde::Serialize;

use crate::data::Panel;
use crate::error::{NarError, Result};
use crate::estimation::{fit, Estimator, FitOptions};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Serialize)]
pub struct BicSelection {
    pub q_hat: usize,
    /// `BIC(q)` for `q = 1 ..= qmax` (infinite when the fit failed).
    pub bic_values: Vec<f64>,
    /// Candidates whose residual covariance needed a ridge to be invertible.
    pub regularized: Vec<bool>,
}

/// `BIC(q) = log|Sigma_hat(q)| + (2Nq + p) log(T) / T` over NAR(q, q)
/// candidates fitted by OLS on a common response window.
pub fn select_q_bic<T: Scalar>(panel: &Panel<T>, w: &DMatrix<T>, qmax: usize) -> Result<BicSelection> {
    if qmax == 0 {
        return Err(NarError::InvalidParameter("qmax must be at least 1".into()));
    }
    let n = panel.n_nodes();
    let p = panel.n_covariates();
    if panel.len() < qmax + 2 {
        return Err(NarError::InsufficientHistory {
            needed: qmax + 2,
            got: panel.len(),
        });
    }
    let t = (panel.len() - qmax) as f64;
    let mut bic_values = Vec::with_capacity(qmax);
    let mut regularized = Vec::with_capacity(qmax);
    let mut last_err = None;
    for q in 1..=qmax {
        let window = panel.window(qmax - q, panel.len())?;
        let opts = FitOptions {
            inference: false,
            ols_meat_sigma: None,
        };
        let res = match fit(&window, w, q, q, &Estimator::Ols, &opts) {
            Ok(f) => f.residuals,
            Err(e) => {
                log::warn!("BIC candidate q = {q} failed: {e}");
                last_err = Some(e);
                bic_values.push(f64::INFINITY);
                regularized.push(false);
                continue;
            }
        };
        let sigma = res.tr_mul(&res).map(|v| v.as_f64()) / t;
        let (logdet, flagged) = match log_det_pd(&sigma) {
            Some(v) => (v, false),
            None => {
                let delta = 1e-8 * sigma.trace() / n as f64;
                let ridged = &sigma + DMatrix::identity(n, n) * delta;
                match log_det_pd(&ridged) {
                    Some(v) => (v, true),
                    None => (f64::INFINITY, true),
                }
            }
        };
        bic_values.push(logdet + (2 * n * q + p) as f64 * t.ln() / t);
        regularized.push(flagged);
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, &b) in bic_values.iter().enumerate() {
        if b.is_finite() && best.map_or(true, |(_, v)| b < v) {
            best = Some((i + 1, b));
        }
    }
    match best {
        Some((q_hat, _)) => Ok(BicSelection {
            q_hat,
            bic_values,
            regularized,
        }),
        None => Err(last_err.unwrap_or_else(|| {
            NarError::Singular("every BIC candidate has a singular residual covariance".into())
        })),
    }
}

fn log_det_pd(m: &DMatrix<f64>) -> Option<f64> {
    let chol = m.clone().cholesky()?;
    let l = chol.l_dirty();
    let mut acc = 0.0;
    for i in 0..m.nrows() {
        let d = l[(i, i)];
        if !(d * d > 1e-12 * m[(i, i)]) {
            return None;
        }
        acc += 2.0 * d.ln();
    }
    acc.is_finite().then_some(acc)
}
