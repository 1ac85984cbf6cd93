use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use super::linalg::{cholesky_checked, symmetrize};
use super::regressors::{tile_hadamard, Regressors};
use crate::covariance::{
    default_kmax, fit_factor, fit_sar_qmle, ic_penalty, select_k, ErrorCovariance, FactorFit,
    SarFit, SAR_BOUNDS,
};
use crate::data::Panel;
use crate::error::{NarError, Result};
use crate::model::{CoefLayout, CoefVector, CompanionForm, Stability, spectral_radius};
use crate::scalar::Scalar;

/// Ridge weights for the self-lag, network-lag and covariate blocks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RidgePenalty {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl RidgePenalty {
    pub fn new(lambda1: f64, lambda2: f64, lambda3: f64) -> Result<Self> {
        let p = Self {
            lambda1,
            lambda2,
            lambda3,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn uniform(lambda: f64) -> Result<Self> {
        Self::new(lambda, lambda, lambda)
    }

    /// `lambda = T^{-0.6}` for every block, which is `o(1/sqrt(T))`.
    pub fn default_for(t: usize) -> Self {
        let l = (t.max(1) as f64).powf(-0.6);
        Self {
            lambda1: l,
            lambda2: l,
            lambda3: l,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for l in [self.lambda1, self.lambda2, self.lambda3] {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(NarError::InvalidParameter(format!(
                    "ridge penalties must be finite and >= 0, got {l}"
                )));
            }
        }
        Ok(())
    }

    /// Diagonal of `M` over the full padded coefficient layout.
    pub fn diagonal<T: Scalar>(&self, layout: &CoefLayout) -> DVector<T> {
        DVector::from_fn(layout.len(), |j, _| {
            T::of(match layout.describe(j).0 {
                crate::model::CoefKind::A { .. } => self.lambda1,
                crate::model::CoefKind::B { .. } => self.lambda2,
                crate::model::CoefKind::Gamma { .. } => self.lambda3,
            })
        })
    }

    fn triple(&self) -> (f64, f64, f64) {
        (self.lambda1, self.lambda2, self.lambda3)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorTag {
    Ols,
    RidgeOls,
    Gls,
    RidgeGls,
    EglsSar,
    EglsFactor,
}

impl EstimatorTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            EstimatorTag::Ols => "ols",
            EstimatorTag::RidgeOls => "ridge_ols",
            EstimatorTag::Gls => "gls",
            EstimatorTag::RidgeGls => "ridge_gls",
            EstimatorTag::EglsSar => "egls_sar",
            EstimatorTag::EglsFactor => "egls_factor",
        }
    }
}

/// Structured covariance family used by the feasible GLS estimator.
#[derive(Debug, Clone, PartialEq)]
pub enum CovKind<T: Scalar> {
    Sar { phi: DMatrix<T> },
    /// Factor model with `k` chosen by the information criterion up to `kmax`
    /// (default `min(8, min(N, T) / 2)`).
    Factor { kmax: Option<usize> },
}

/// Error covariance the estimator weighted by.
#[derive(Debug, Clone)]
pub enum SigmaUsed<T: Scalar> {
    Identity,
    PlugIn(DMatrix<T>),
    Sar(SarFit<T>),
    Factor(FactorFit<T>),
}

/// Estimator choice for [`fit`].
#[derive(Debug, Clone)]
pub enum Estimator<T: Scalar> {
    Ols,
    RidgeOls(RidgePenalty),
    Gls(DMatrix<T>),
    RidgeGls(DMatrix<T>, RidgePenalty),
    Egls {
        cov: CovKind<T>,
        penalty: Option<RidgePenalty>,
        iterate: bool,
    },
}

#[derive(Debug, Clone)]
pub struct FitOptions<T: Scalar> {
    /// Compute `bread`, `meat` and `vcov`.
    pub inference: bool,
    /// Error covariance used in the OLS sandwich instead of the residual
    /// estimate `E'E / T`.
    pub ols_meat_sigma: Option<DMatrix<T>>,
}

impl<T: Scalar> Default for FitOptions<T> {
    fn default() -> Self {
        Self {
            inference: true,
            ols_meat_sigma: None,
        }
    }
}

/// Variance ingredients over the free coefficients:
/// `vcov = bread^{-1} meat bread^{-1}`.
#[derive(Debug, Clone)]
pub struct Inference<T: Scalar> {
    pub bread: DMatrix<T>,
    pub meat: DMatrix<T>,
    pub vcov: DMatrix<T>,
}

#[derive(Debug, Clone)]
pub struct FitResult<T: Scalar> {
    pub estimator: EstimatorTag,
    pub beta_hat: CoefVector<T>,
    /// `X_t - Z_{t-1} beta_hat` for every response period (`T_eff x N`).
    pub residuals: DMatrix<T>,
    pub sigma_used: SigmaUsed<T>,
    pub inference: Option<Inference<T>>,
    pub penalties: Option<RidgePenalty>,
    pub weights: DMatrix<T>,
    pub t_eff: usize,
    /// Feasible GLS passes performed (0 for the other estimators).
    pub egls_rounds: usize,
}

impl<T: Scalar> FitResult<T> {
    pub fn layout(&self) -> CoefLayout {
        self.beta_hat.layout()
    }

    /// Covariance of the free coefficients, in layout order.
    pub fn vcov(&self) -> Result<&DMatrix<T>> {
        self.inference
            .as_ref()
            .map(|i| &i.vcov)
            .ok_or_else(|| NarError::InvalidParameter("fit was computed without inference".into()))
    }

    pub fn free_estimates(&self) -> DVector<T> {
        self.layout().restrict(self.beta_hat.values())
    }

    /// Spectral radius of the fitted process.
    pub fn stability(&self) -> Result<Stability> {
        let c = CompanionForm::from_coefficients(&self.layout(), self.beta_hat.values(), &self.weights)?;
        let radius = spectral_radius(&c)?;
        Ok(Stability {
            stable: radius < 1.0,
            radius,
        })
    }

    /// Max over nodes of the summed absolute lag coefficients.
    pub fn max_abs_row_sum(&self) -> f64 {
        let l = self.layout();
        (0..l.n)
            .map(|i| {
                (1..=l.q())
                    .map(|lag| {
                        self.beta_hat.a(lag, i).abs().as_f64() + self.beta_hat.b(lag, i).abs().as_f64()
                    })
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }
}

pub fn fit_ols<T: Scalar>(panel: &Panel<T>, w: &DMatrix<T>, q1: usize, q2: usize) -> Result<FitResult<T>> {
    fit(panel, w, q1, q2, &Estimator::Ols, &FitOptions::default())
}

pub fn fit_ridge_ols<T: Scalar>(
    panel: &Panel<T>,
    w: &DMatrix<T>,
    q1: usize,
    q2: usize,
    pen: RidgePenalty,
) -> Result<FitResult<T>> {
    fit(panel, w, q1, q2, &Estimator::RidgeOls(pen), &FitOptions::default())
}

pub fn fit_gls<T: Scalar>(
    panel: &Panel<T>,
    w: &DMatrix<T>,
    q1: usize,
    q2: usize,
    sigma: &DMatrix<T>,
) -> Result<FitResult<T>> {
    fit(panel, w, q1, q2, &Estimator::Gls(sigma.clone()), &FitOptions::default())
}

pub fn fit_ridge_gls<T: Scalar>(
    panel: &Panel<T>,
    w: &DMatrix<T>,
    q1: usize,
    q2: usize,
    sigma: &DMatrix<T>,
    pen: RidgePenalty,
) -> Result<FitResult<T>> {
    fit(
        panel,
        w,
        q1,
        q2,
        &Estimator::RidgeGls(sigma.clone(), pen),
        &FitOptions::default(),
    )
}

/// Feasible GLS: OLS, covariance fit on its residuals, then GLS with the
/// fitted covariance. `iterate` repeats the last two steps until the
/// coefficients move by less than `1e-6` (at most 10 rounds).
pub fn fit_egls<T: Scalar>(
    panel: &Panel<T>,
    w: &DMatrix<T>,
    q1: usize,
    q2: usize,
    cov: &CovKind<T>,
    pen: Option<RidgePenalty>,
    iterate: bool,
) -> Result<FitResult<T>> {
    fit(
        panel,
        w,
        q1,
        q2,
        &Estimator::Egls {
            cov: cov.clone(),
            penalty: pen,
            iterate,
        },
        &FitOptions::default(),
    )
}

pub fn fit<T: Scalar>(
    panel: &Panel<T>,
    w: &DMatrix<T>,
    q1: usize,
    q2: usize,
    estimator: &Estimator<T>,
    opts: &FitOptions<T>,
) -> Result<FitResult<T>> {
    let reg = Regressors::build(panel, w, q1, q2)?;
    fit_regressors(&reg, w, estimator, opts)
}

pub(crate) fn fit_regressors<T: Scalar>(
    reg: &Regressors<T>,
    w: &DMatrix<T>,
    estimator: &Estimator<T>,
    opts: &FitOptions<T>,
) -> Result<FitResult<T>> {
    match estimator {
        Estimator::Ols => ols(reg, w, None, opts),
        Estimator::RidgeOls(p) => {
            p.validate()?;
            ols(reg, w, Some(*p), opts)
        }
        Estimator::Gls(sigma) => {
            let omega = precision(sigma, reg.n())?;
            gls(reg, w, &omega, SigmaUsed::PlugIn(sigma.clone()), None, opts.inference)
        }
        Estimator::RidgeGls(sigma, p) => {
            p.validate()?;
            let omega = precision(sigma, reg.n())?;
            gls(reg, w, &omega, SigmaUsed::PlugIn(sigma.clone()), Some(*p), opts.inference)
        }
        Estimator::Egls {
            cov,
            penalty,
            iterate,
        } => egls(reg, w, cov, *penalty, *iterate, opts.inference),
    }
}

fn precision<T: Scalar>(sigma: &DMatrix<T>, n: usize) -> Result<DMatrix<T>> {
    if sigma.shape() != (n, n) {
        return Err(NarError::Dimension(format!(
            "error covariance must be {n}x{n}, got {}x{}",
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    let chol = sigma
        .clone()
        .cholesky()
        .ok_or_else(|| NarError::NotPositiveDefinite("error covariance".into()))?;
    let mut omega = chol.inverse();
    symmetrize(&mut omega);
    Ok(omega)
}

fn check_identified<T: Scalar>(reg: &Regressors<T>) -> Result<()> {
    if reg.t_eff() <= reg.m_free() {
        return Err(NarError::InsufficientHistory {
            needed: reg.m_free() + reg.layout.q() + 1,
            got: reg.t_eff() + reg.layout.q(),
        });
    }
    Ok(())
}

fn singular<T: Scalar>(reg: &Regressors<T>, j: usize) -> NarError {
    NarError::SingularGram {
        block: reg.describe(j),
    }
}

/// Per-node normal equations (the OLS Gram is block diagonal by node).
pub(crate) struct NodeSystems<T: Scalar> {
    pub beta: DVector<T>,
    pub factors: Vec<Cholesky<T, Dyn>>,
}

pub(crate) fn ols_solve<T: Scalar>(
    reg: &Regressors<T>,
    pen: Option<RidgePenalty>,
    cross: Option<&DMatrix<T>>,
) -> Result<NodeSystems<T>> {
    let n = reg.n();
    let m = reg.m_free();
    let t_eff = T::of_usize(reg.t_eff());
    let pen_diag = pen.map(|p| reg.penalty_diagonal(p.triple()));
    let mut beta = DVector::zeros(reg.n_free());
    let mut factors = Vec::with_capacity(n);
    for i in 0..n {
        let cols: Vec<usize> = reg.node_columns(i).collect();
        let mut g = DMatrix::zeros(m, m);
        let mut h = DVector::zeros(m);
        for (a, &ca) in cols.iter().enumerate() {
            for (b, &cb) in cols.iter().enumerate().take(a + 1) {
                let v = match cross {
                    Some(c) => c[(ca, cb)],
                    None => reg.v.column(ca).dot(&reg.v.column(cb)),
                };
                g[(a, b)] = v;
                g[(b, a)] = v;
            }
            h[a] = reg.v.column(ca).dot(&reg.xr.column(i));
            if let Some(d) = &pen_diag {
                g[(a, a)] += t_eff * d[ca];
            }
        }
        let chol = cholesky_checked(&g, T::rank_tol()).map_err(|j| singular(reg, cols[j]))?;
        let sol = chol.solve(&h);
        for (a, &ca) in cols.iter().enumerate() {
            beta[ca] = sol[a];
        }
        factors.push(chol);
    }
    Ok(NodeSystems { beta, factors })
}

/// `H M` where `H` is block diagonal by node with blocks `h[i]`.
fn node_block_left<T: Scalar>(h: &[DMatrix<T>], n: usize, mat: &DMatrix<T>) -> DMatrix<T> {
    let m = h.first().map(|b| b.nrows()).unwrap_or(0);
    let mut out = DMatrix::zeros(mat.nrows(), mat.ncols());
    for (i, hi) in h.iter().enumerate() {
        for f in 0..m {
            for g in 0..m {
                let c = hi[(f, g)];
                if c != T::zero() {
                    for col in 0..mat.ncols() {
                        out[(f * n + i, col)] += c * mat[(g * n + i, col)];
                    }
                }
            }
        }
    }
    out
}

fn finish<T: Scalar>(
    reg: &Regressors<T>,
    w: &DMatrix<T>,
    tag: EstimatorTag,
    beta_free: &DVector<T>,
    sigma_used: SigmaUsed<T>,
    inference: Option<Inference<T>>,
    penalties: Option<RidgePenalty>,
    egls_rounds: usize,
) -> Result<FitResult<T>> {
    let residuals = &reg.xr - reg.fitted(beta_free);
    let beta_hat = CoefVector::new(reg.layout, reg.layout.expand(beta_free))?;
    Ok(FitResult {
        estimator: tag,
        beta_hat,
        residuals,
        sigma_used,
        inference,
        penalties,
        weights: w.clone(),
        t_eff: reg.t_eff(),
        egls_rounds,
    })
}

fn ols<T: Scalar>(
    reg: &Regressors<T>,
    w: &DMatrix<T>,
    pen: Option<RidgePenalty>,
    opts: &FitOptions<T>,
) -> Result<FitResult<T>> {
    if pen.is_none() {
        check_identified(reg)?;
    }
    let tag = if pen.is_some() {
        EstimatorTag::RidgeOls
    } else {
        EstimatorTag::Ols
    };
    if !opts.inference {
        let sys = ols_solve(reg, pen, None)?;
        return finish(reg, w, tag, &sys.beta, SigmaUsed::Identity, None, pen, 0);
    }
    let cross = reg.cross();
    let sys = ols_solve(reg, pen, Some(&cross))?;
    let n = reg.n();
    let residuals = &reg.xr - reg.fitted(&sys.beta);
    let sigma_meat = match &opts.ols_meat_sigma {
        Some(s) => {
            if s.shape() != (n, n) {
                return Err(NarError::Dimension("sandwich covariance must be N x N".into()));
            }
            s.clone()
        }
        None => residuals.tr_mul(&residuals) / T::of_usize(reg.t_eff()),
    };
    let meat = tile_hadamard(&cross, &sigma_meat);
    let mut bread = tile_hadamard(&cross, &DMatrix::identity(n, n));
    if let Some(p) = pen {
        let d = reg.penalty_diagonal(p.triple());
        let t_eff = T::of_usize(reg.t_eff());
        for j in 0..bread.nrows() {
            bread[(j, j)] += t_eff * d[j];
        }
    }
    let h: Vec<DMatrix<T>> = sys.factors.iter().map(|c| c.inverse()).collect();
    let left = node_block_left(&h, n, &meat);
    let mut vcov = node_block_left(&h, n, &left.transpose());
    symmetrize(&mut vcov);
    finish(
        reg,
        w,
        tag,
        &sys.beta,
        SigmaUsed::Identity,
        Some(Inference { bread, meat, vcov }),
        pen,
        0,
    )
}

/// GLS coefficients with precision matrix `omega`.
pub(crate) fn gls_solve<T: Scalar>(
    reg: &Regressors<T>,
    cross: &DMatrix<T>,
    omega: &DMatrix<T>,
    pen: Option<RidgePenalty>,
) -> Result<(DVector<T>, DMatrix<T>, Cholesky<T, Dyn>)> {
    let n = reg.n();
    let weighted = tile_hadamard(cross, omega);
    let mut g = weighted.clone();
    if let Some(p) = pen {
        let d = reg.penalty_diagonal(p.triple());
        let t_eff = T::of_usize(reg.t_eff());
        for j in 0..g.nrows() {
            g[(j, j)] += t_eff * d[j];
        }
    }
    let xo = &reg.xr * omega;
    let h = DVector::from_fn(reg.n_free(), |j, _| reg.v.column(j).dot(&xo.column(j % n)));
    let chol = cholesky_checked(&g, T::rank_tol()).map_err(|j| singular(reg, j))?;
    let beta = chol.solve(&h);
    Ok((beta, weighted, chol))
}

fn gls<T: Scalar>(
    reg: &Regressors<T>,
    w: &DMatrix<T>,
    omega: &DMatrix<T>,
    sigma_used: SigmaUsed<T>,
    pen: Option<RidgePenalty>,
    inference: bool,
) -> Result<FitResult<T>> {
    if pen.is_none() {
        check_identified(reg)?;
    }
    let tag = match (&sigma_used, pen.is_some()) {
        (SigmaUsed::Sar(_), _) => EstimatorTag::EglsSar,
        (SigmaUsed::Factor(_), _) => EstimatorTag::EglsFactor,
        (_, true) => EstimatorTag::RidgeGls,
        (_, false) => EstimatorTag::Gls,
    };
    let cross = reg.cross();
    let (beta, weighted, chol) = gls_solve(reg, &cross, omega, pen)?;
    let inf = if inference {
        let g_inv = chol.inverse();
        let (bread, meat, mut vcov) = if pen.is_some() {
            let bread = chol.l() * chol.l().transpose();
            let vcov = &g_inv * &weighted * &g_inv;
            (bread, weighted, vcov)
        } else {
            (weighted.clone(), weighted, g_inv)
        };
        symmetrize(&mut vcov);
        Some(Inference { bread, meat, vcov })
    } else {
        None
    };
    finish(reg, w, tag, &beta, sigma_used, inf, pen, 0)
}

/// Fits the structured covariance to `residuals` and returns it with its precision.
pub(crate) fn covariance_step<T: Scalar>(
    residuals: &DMatrix<T>,
    cov: &CovKind<T>,
) -> Result<(SigmaUsed<T>, DMatrix<T>)> {
    match cov {
        CovKind::Sar { phi } => {
            let fit = fit_sar_qmle(residuals, phi, SAR_BOUNDS)?;
            let omega = fit.covariance()?.inverse_matrix()?;
            Ok((SigmaUsed::Sar(fit), omega))
        }
        CovKind::Factor { kmax } => {
            let (t, n) = residuals.shape();
            let kmax = kmax.unwrap_or_else(|| default_kmax(n, t));
            let k = select_k(residuals, kmax, ic_penalty)?.k_hat;
            let fit = fit_factor(residuals, k)?;
            let omega = fit.covariance()?.inverse_matrix()?;
            Ok((SigmaUsed::Factor(fit), omega))
        }
    }
}

fn egls<T: Scalar>(
    reg: &Regressors<T>,
    w: &DMatrix<T>,
    cov: &CovKind<T>,
    pen: Option<RidgePenalty>,
    iterate: bool,
    inference: bool,
) -> Result<FitResult<T>> {
    let pen = match pen {
        Some(p) => {
            p.validate()?;
            Some(p)
        }
        None if reg.n() > reg.t_eff() => {
            let p = RidgePenalty::default_for(reg.t_eff());
            log::info!("N > T: using ridge penalty {}", p.lambda1);
            Some(p)
        }
        None => None,
    };
    if let CovKind::Sar { phi } = cov {
        if phi.shape() != (reg.n(), reg.n()) {
            return Err(NarError::Dimension("Phi must be N x N".into()));
        }
    }
    let first = ols_solve(reg, pen, None).map_err(|e| e.at_stage("initial OLS"))?;
    let mut beta = first.beta;
    let max_rounds = if iterate { 10 } else { 1 };
    let mut rounds = 0;
    loop {
        rounds += 1;
        let residuals = &reg.xr - reg.fitted(&beta);
        let (sigma_used, omega) =
            covariance_step(&residuals, cov).map_err(|e| e.at_stage("covariance fit"))?;
        let last = rounds >= max_rounds;
        let mut out = gls(reg, w, &omega, sigma_used, pen, inference && last)
            .map_err(|e| e.at_stage("GLS"))?;
        let next = out.free_estimates();
        let change = (&next - &beta).norm().as_f64();
        beta = next;
        if last || change < 1e-6 {
            if inference && out.inference.is_none() {
                out = gls(reg, w, &omega, out.sigma_used, pen, true).map_err(|e| e.at_stage("GLS"))?;
            }
            out.egls_rounds = rounds;
            return Ok(out);
        }
    }
}
