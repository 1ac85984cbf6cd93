use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use crate::data::Panel;
use crate::error::{NarError, Result};
use crate::estimation::FitResult;
use crate::scalar::Scalar;
use crate::simulation::Recursion;

/// `X_hat_t = Z_{t-1} beta_hat`. `history[l]` is `X_{t-1-l}`; `y_prev` is the
/// `N x p` covariate matrix `Y_{t-1}`.
pub fn forecast_one_step<T: Scalar>(
    fit: &FitResult<T>,
    history: &[DVector<T>],
    y_prev: &DMatrix<T>,
) -> Result<DVector<T>> {
    let layout = fit.layout();
    let q = layout.q();
    if history.len() < q {
        return Err(NarError::InsufficientHistory {
            needed: q,
            got: history.len(),
        });
    }
    if y_prev.shape() != (layout.n, layout.p) || history.iter().any(|x| x.len() != layout.n) {
        return Err(NarError::Dimension("history or covariates do not match the fit".into()));
    }
    let rec = Recursion::from_coefficients(&layout, fit.beta_hat.values(), &fit.weights);
    let mut out = DVector::zeros(layout.n);
    for k in 0..layout.p {
        out.axpy(T::one(), &rec.c.column(k).component_mul(&y_prev.column(k)), T::one());
    }
    for (g, x) in rec.g.iter().zip(history) {
        out.gemv(T::one(), g, x, T::one());
    }
    Ok(out)
}

/// One-step forecasts of panel rows `range`, each from realized lags and a
/// fixed `beta_hat` (`|range| x N`).
pub fn forecast_path<T: Scalar>(fit: &FitResult<T>, panel: &Panel<T>, range: Range<usize>) -> Result<DMatrix<T>> {
    let layout = fit.layout();
    let q = layout.q();
    if range.start < q || range.end > panel.len() || range.is_empty() {
        return Err(NarError::InsufficientHistory {
            needed: q,
            got: range.start,
        });
    }
    if panel.n_nodes() != layout.n || panel.n_covariates() != layout.p {
        return Err(NarError::Dimension("panel does not match the fit".into()));
    }
    let mut out = DMatrix::zeros(range.len(), layout.n);
    for (r, t) in range.enumerate() {
        let history: Vec<_> = (1..=q).map(|l| panel.x_at(t - l)).collect();
        let f = forecast_one_step(fit, &history, &panel.y_at(t - 1))?;
        out.row_mut(r).copy_from(&f.transpose());
    }
    Ok(out)
}

/// Mean squared one-step prediction error over panel rows `test`.
pub fn pmse<T: Scalar>(fit: &FitResult<T>, panel: &Panel<T>, test: Range<usize>) -> Result<f64> {
    let f = forecast_path(fit, panel, test.clone())?;
    let actual = panel.x.rows(test.start, test.len());
    let sse: f64 = (actual - f).iter().map(|v| v.as_f64().powi(2)).sum();
    Ok(sse / (test.len() * panel.n_nodes()) as f64)
}
