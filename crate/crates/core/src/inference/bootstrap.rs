use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::data::Panel;
use crate::error::{NarError, Result};
use crate::estimation::regressors::Regressors;
use crate::estimation::{covariance_step, gls_solve, ols_solve, CovKind, SigmaUsed};
use crate::model::{CoefKind, CoefLayout};
use crate::rng::{rng_for, NarRng};
use crate::scalar::Scalar;
use crate::simulation::Recursion;

/// Smallest accepted number of bootstrap replicates.
pub const MIN_BOOTSTRAP_REPS: usize = 100;
/// Steps discarded before each bootstrap path when the lag order exceeds one.
pub const BOOTSTRAP_BURN_IN: usize = 50;

const MAX_DROP_SHARE: f64 = 0.05;

#[derive(Debug, Clone)]
pub enum BootstrapEstimator<T: Scalar> {
    Ols,
    /// Feasible GLS with a SAR covariance estimated once from OLS residuals
    /// and held fixed across replicates.
    EglsSar { phi: DMatrix<T> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BootstrapConfig {
    pub b_reps: usize,
    pub level: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PercentileInterval {
    pub index: usize,
    pub kind: CoefKind,
    pub node: usize,
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
}

impl PercentileInterval {
    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }
}

#[derive(Debug, Clone)]
pub struct BootstrapResult<T: Scalar> {
    /// Successful replicates by free coefficients.
    pub draws: DMatrix<T>,
    pub percentile_cis: Vec<PercentileInterval>,
    pub b_reps: usize,
    pub dropped: usize,
    /// Point estimate the bootstrap paths were generated from (padded layout).
    pub beta_hat: DVector<T>,
    pub layout: CoefLayout,
}

/// Order-statistic interval of `sorted` at `level`.
pub fn percentile_interval(sorted: &[f64], level: f64) -> (f64, f64) {
    let b = sorted.len();
    let lo = ((b as f64) * (1.0 - level) / 2.0).floor() as usize;
    let hi = (((b as f64) * (1.0 + level) / 2.0).ceil() as usize).saturating_sub(1);
    (sorted[lo.min(b - 1)], sorted[hi.min(b - 1)])
}

/// Point estimate plus what a replicate refit needs.
struct Base<T: Scalar> {
    beta: DVector<T>,
    residuals: DMatrix<T>,
    omega: Option<DMatrix<T>>,
}

fn base_fit<T: Scalar>(reg: &Regressors<T>, est: &BootstrapEstimator<T>) -> Result<Base<T>> {
    let ols = ols_solve(reg, None, None)?;
    match est {
        BootstrapEstimator::Ols => Ok(Base {
            residuals: &reg.xr - reg.fitted(&ols.beta),
            beta: ols.beta,
            omega: None,
        }),
        BootstrapEstimator::EglsSar { phi } => {
            let res = &reg.xr - reg.fitted(&ols.beta);
            let (sigma, omega) = covariance_step(&res, &CovKind::Sar { phi: phi.clone() })?;
            if let SigmaUsed::Sar(s) = &sigma {
                log::debug!("bootstrap SAR plug-in rho = {}", s.rho_hat);
            }
            let (beta, _, _) = gls_solve(reg, &reg.cross(), &omega, None)?;
            Ok(Base {
                residuals: &reg.xr - reg.fitted(&beta),
                beta,
                omega: Some(omega),
            })
        }
    }
}

/// Residual bootstrap: resample centred residuals, rebuild the panel
/// recursively from the point estimate and refit with the same estimator.
pub fn residual_bootstrap<T: Scalar>(
    panel: &Panel<T>,
    w: &DMatrix<T>,
    q1: usize,
    q2: usize,
    estimator: &BootstrapEstimator<T>,
    cfg: &BootstrapConfig,
) -> Result<BootstrapResult<T>> {
    if cfg.b_reps < MIN_BOOTSTRAP_REPS {
        return Err(NarError::InvalidParameter(format!(
            "at least {MIN_BOOTSTRAP_REPS} bootstrap replicates are required"
        )));
    }
    if !(cfg.level > 0.0 && cfg.level < 1.0) {
        return Err(NarError::InvalidParameter("level must lie in (0, 1)".into()));
    }
    if let BootstrapEstimator::EglsSar { phi } = estimator {
        if phi.shape() != w.shape() {
            return Err(NarError::Dimension("Phi must be N x N".into()));
        }
    }
    let reg = Regressors::build(panel, w, q1, q2)?;
    let base = base_fit(&reg, estimator)?;
    let layout = reg.layout;
    let full_beta = layout.expand(&base.beta);
    let rec = Recursion::from_coefficients(&layout, &full_beta, w);

    let t_eff = base.residuals.nrows();
    let mean = base.residuals.row_mean();
    let mut centred = base.residuals.clone();
    for mut row in centred.row_iter_mut() {
        row -= &mean;
    }

    let draws: Vec<Option<DVector<T>>> = (0..cfg.b_reps)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng_for(cfg.seed, b as u64);
            let star = bootstrap_panel(panel, &rec, &centred, t_eff, &mut rng).ok()?;
            refit(&star, w, q1, q2, base.omega.as_ref()).ok()
        })
        .collect();

    let dropped = draws.iter().filter(|d| d.is_none()).count();
    if dropped as f64 > MAX_DROP_SHARE * cfg.b_reps as f64 {
        return Err(NarError::BootstrapFailures {
            dropped,
            requested: cfg.b_reps,
        });
    }
    if dropped > 0 {
        log::warn!("{dropped} bootstrap replicates failed and were dropped");
    }
    let ok: Vec<DVector<T>> = draws.into_iter().flatten().collect();
    let n_free = reg.n_free();
    let draws = DMatrix::from_fn(ok.len(), n_free, |r, c| ok[r][c]);
    let free = layout.free_indices();
    let percentile_cis = (0..n_free)
        .map(|j| {
            let mut col: Vec<f64> = draws.column(j).iter().map(|v| v.as_f64()).collect();
            col.sort_by(f64::total_cmp);
            let (lo, hi) = percentile_interval(&col, cfg.level);
            let (kind, node) = layout.describe(free[j]);
            PercentileInterval {
                index: free[j],
                kind,
                node,
                estimate: base.beta[j].as_f64(),
                lo,
                hi,
            }
        })
        .collect();
    Ok(BootstrapResult {
        draws,
        percentile_cis,
        b_reps: cfg.b_reps,
        dropped,
        beta_hat: full_beta,
        layout,
    })
}

/// Bootstrap panel with the observed shape. For a single lag the path starts
/// at `X*_0 = eps*_1`; longer lags start from independent draws followed by a
/// burn-in without covariates.
fn bootstrap_panel<T: Scalar>(
    panel: &Panel<T>,
    rec: &Recursion<T>,
    centred: &DMatrix<T>,
    t_eff: usize,
    rng: &mut NarRng,
) -> Result<Panel<T>> {
    let n = panel.n_nodes();
    let p = panel.n_covariates();
    let q = rec.q();
    let total = panel.len();
    let mut draw = |rows: usize| -> DMatrix<T> {
        let mut m = DMatrix::zeros(rows, n);
        for r in 0..rows {
            let k = rng.random_range(0..t_eff);
            m.row_mut(r).copy_from(&centred.row(k));
        }
        m
    };
    let x = if q == 1 {
        let eps = draw(total - 1);
        let x0 = eps.row(0).transpose();
        let y_init = panel.y_at(0);
        let y_rest: Vec<_> = panel.y.iter().map(|m| m.rows(1, total - 1).into_owned()).collect();
        let path = rec.propagate(&[x0.clone()], &y_init, &y_rest, &eps)?;
        let mut x = DMatrix::zeros(total, n);
        x.row_mut(0).copy_from(&x0.transpose());
        x.rows_mut(1, total - 1).copy_from(&path);
        x
    } else {
        let init = draw(q);
        let init: Vec<_> = (0..q).map(|l| init.row(l).transpose()).collect();
        let zeros_y: Vec<_> = (0..p).map(|_| DMatrix::zeros(BOOTSTRAP_BURN_IN, n)).collect();
        let burn = rec.propagate(&init, &DMatrix::zeros(n, p), &zeros_y, &draw(BOOTSTRAP_BURN_IN))?;
        let lags: Vec<_> = (0..q)
            .map(|l| burn.row(BOOTSTRAP_BURN_IN - 1 - l).transpose())
            .collect();
        // row 0 has no observed covariate predecessor
        rec.propagate(&lags, &DMatrix::zeros(n, p), &panel.y, &draw(total))?
    };
    Ok(Panel {
        x,
        y: panel.y.clone(),
    })
}

fn refit<T: Scalar>(
    star: &Panel<T>,
    w: &DMatrix<T>,
    q1: usize,
    q2: usize,
    omega: Option<&DMatrix<T>>,
) -> Result<DVector<T>> {
    let reg = Regressors::build(star, w, q1, q2)?;
    match omega {
        None => Ok(ols_solve(&reg, None, None)?.beta),
        Some(omega) => Ok(gls_solve(&reg, &reg.cross(), omega, None)?.0),
    }
}
