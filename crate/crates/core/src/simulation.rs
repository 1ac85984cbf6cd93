//! Error generators, NAR trajectory simulation and weight-matrix perturbation.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{NarError, Result};
use crate::model::{is_stable, CoefLayout, NarSpec};
use crate::rng::{rng_for, NarRng};
use crate::scalar::Scalar;

/// Generative model for the error vectors `eps_t`.
#[derive(Debug, Clone, PartialEq)]
pub enum ErrorModel<T: Scalar> {
    /// `eps_t ~ N(0, sigma2 I)`; `sigma2 = 0` gives a noiseless process.
    GaussianIid { sigma2: T },
    /// `eps_t = (I - rho Phi)^{-1} u_t`, `u_t ~ N(0, sigma_u2 I)`.
    SarGaussian { rho: T, phi: DMatrix<T>, sigma_u2: T },
    /// `eps_t = Lambda F_t + u_t` with `F_t ~ N(0, I_k)`, `u_t ~ N(0, sigma2 I)`.
    FactorGaussian { lambda: DMatrix<T>, sigma2: T },
    /// Multivariate Student-t with `nu` degrees of freedom and the given scale
    /// matrix. The covariance is `scale * nu / (nu - 2)`.
    StudentT { nu: f64, scale: DMatrix<T> },
}

impl<T: Scalar> ErrorModel<T> {
    pub fn n_nodes(&self) -> Option<usize> {
        match self {
            ErrorModel::GaussianIid { .. } => None,
            ErrorModel::SarGaussian { phi, .. } => Some(phi.nrows()),
            ErrorModel::FactorGaussian { lambda, .. } => Some(lambda.nrows()),
            ErrorModel::StudentT { scale, .. } => Some(scale.nrows()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ErrorModel::GaussianIid { sigma2 } => {
                if *sigma2 >= T::zero() && sigma2.is_finite() {
                    Ok(())
                } else {
                    Err(NarError::InvalidParameter("sigma2 must be finite and >= 0".into()))
                }
            }
            ErrorModel::SarGaussian { rho, phi, sigma_u2 } => {
                positive("sigma_u2", *sigma_u2)?;
                if !(rho.abs() < T::one()) {
                    return Err(NarError::InvalidParameter(format!(
                        "SAR rho must lie in (-1, 1), got {}",
                        rho.as_f64()
                    )));
                }
                sar_operator(*rho, phi).map(|_| ())
            }
            ErrorModel::FactorGaussian { lambda, sigma2 } => {
                if lambda.iter().any(|v| !v.is_finite()) {
                    return Err(NarError::InvalidParameter("loadings must be finite".into()));
                }
                if *sigma2 < T::zero() {
                    return Err(NarError::InvalidParameter("sigma2 must be >= 0".into()));
                }
                Ok(())
            }
            ErrorModel::StudentT { nu, scale } => {
                if !(*nu > 2.0) {
                    return Err(NarError::InvalidParameter(format!(
                        "degrees of freedom must exceed 2, got {nu}"
                    )));
                }
                scale_factor(scale).map(|_| ())
            }
        }
    }

    /// Closed-form covariance of `eps_t` on `n` nodes.
    pub fn covariance(&self, n: usize) -> Result<DMatrix<T>> {
        self.validate()?;
        Ok(match self {
            ErrorModel::GaussianIid { sigma2 } => DMatrix::identity(n, n) * *sigma2,
            ErrorModel::SarGaussian { rho, phi, sigma_u2 } => {
                let s_inv = sar_operator(*rho, phi)?
                    .try_inverse()
                    .ok_or_else(|| NarError::Singular("I - rho Phi".into()))?;
                &s_inv * s_inv.transpose() * *sigma_u2
            }
            ErrorModel::FactorGaussian { lambda, sigma2 } => {
                lambda * lambda.transpose() + DMatrix::identity(n, n) * *sigma2
            }
            ErrorModel::StudentT { nu, scale } => scale * T::of(nu / (nu - 2.0)),
        })
    }

    /// The matrix that parameterizes the law: the covariance for the
    /// Gaussian models and the scale matrix for Student-t errors.
    pub fn nominal_sigma(&self, n: usize) -> Result<DMatrix<T>> {
        match self {
            ErrorModel::StudentT { scale, .. } => {
                self.validate()?;
                Ok(scale.clone())
            }
            _ => self.covariance(n),
        }
    }
}

fn positive<T: Scalar>(name: &str, v: T) -> Result<()> {
    if v > T::zero() && v.is_finite() {
        Ok(())
    } else {
        Err(NarError::InvalidParameter(format!("{name} must be positive")))
    }
}

pub(crate) fn sar_operator<T: Scalar>(rho: T, phi: &DMatrix<T>) -> Result<DMatrix<T>> {
    if !phi.is_square() {
        return Err(NarError::Dimension("Phi must be square".into()));
    }
    let n = phi.nrows();
    let s = DMatrix::identity(n, n) - phi * rho;
    if s.clone().lu().is_invertible() {
        Ok(s)
    } else {
        Err(NarError::Singular(format!("I - rho Phi at rho = {}", rho.as_f64())))
    }
}

fn scale_factor<T: Scalar>(scale: &DMatrix<T>) -> Result<DMatrix<T>> {
    if !scale.is_square() {
        return Err(NarError::Dimension("scale matrix must be square".into()));
    }
    scale
        .clone()
        .cholesky()
        .map(|c| c.unpack())
        .ok_or_else(|| NarError::NotPositiveDefinite("Student-t scale matrix".into()))
}

fn normal_matrix<T: Scalar>(rows: usize, cols: usize, rng: &mut NarRng) -> DMatrix<T> {
    DMatrix::from_fn(rows, cols, |_, _| T::of(rng.sample::<f64, _>(StandardNormal)))
}

/// `t_len x n` matrix of iid error rows.
pub fn gen_errors<T: Scalar>(model: &ErrorModel<T>, n: usize, t_len: usize, seed: u64) -> Result<DMatrix<T>> {
    gen_errors_with(model, n, t_len, &mut rng_for(seed, 0))
}

pub fn gen_errors_with<T: Scalar>(
    model: &ErrorModel<T>,
    n: usize,
    t_len: usize,
    rng: &mut NarRng,
) -> Result<DMatrix<T>> {
    model.validate()?;
    if let Some(m) = model.n_nodes() {
        if m != n {
            return Err(NarError::Dimension(format!(
                "error model has {m} nodes, expected {n}"
            )));
        }
    }
    // Columns are time points while generating, rows at the end.
    let cols: DMatrix<T> = match model {
        ErrorModel::GaussianIid { sigma2 } => normal_matrix::<T>(n, t_len, rng) * sigma2.sqrt(),
        ErrorModel::SarGaussian { rho, phi, sigma_u2 } => {
            let u = normal_matrix::<T>(n, t_len, rng) * sigma_u2.sqrt();
            sar_operator(*rho, phi)?
                .lu()
                .solve(&u)
                .ok_or_else(|| NarError::Singular("I - rho Phi".into()))?
        }
        ErrorModel::FactorGaussian { lambda, sigma2 } => {
            let f = normal_matrix::<T>(lambda.ncols(), t_len, rng);
            let u = normal_matrix::<T>(n, t_len, rng) * sigma2.sqrt();
            lambda * f + u
        }
        ErrorModel::StudentT { nu, scale } => {
            let l = scale_factor(scale)?;
            let chi = ChiSquared::new(*nu).map_err(|e| NarError::InvalidParameter(e.to_string()))?;
            let mut z = l * normal_matrix::<T>(n, t_len, rng);
            for mut col in z.column_iter_mut() {
                let w: f64 = chi.sample(rng);
                col *= T::of((nu / w).sqrt());
            }
            z
        }
    };
    Ok(cols.transpose())
}

/// Distribution of the exogenous covariates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CovariateMode {
    /// Every `Y_{ik,t}` iid standard normal.
    #[default]
    StandardNormal,
    /// `(Y_{i1,t}, .., Y_{ip,t}) ~ t_nu(0, I_p)` independently over nodes and time.
    StudentT { nu: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub t_len: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    pub seed: u64,
    #[serde(default)]
    pub y_mode: CovariateMode,
    /// Simulate even when the spectral radius is at or above one.
    #[serde(default)]
    pub allow_unstable: bool,
}

fn default_burn_in() -> usize {
    200
}

impl SimConfig {
    pub fn new(t_len: usize, seed: u64) -> Self {
        Self {
            t_len,
            burn_in: default_burn_in(),
            seed,
            y_mode: CovariateMode::StandardNormal,
            allow_unstable: false,
        }
    }
}

/// Simulated panel. Row `t` of `x` satisfies the NAR recursion with `y` row
/// `t - 1` (row `-1` lives in the discarded burn-in) and `errors` row `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput<T: Scalar> {
    pub x: DMatrix<T>,
    pub y: Vec<DMatrix<T>>,
    pub errors: DMatrix<T>,
}

impl<T: Scalar> SimOutput<T> {
    pub fn panel(&self) -> crate::data::Panel<T> {
        crate::data::Panel {
            x: self.x.clone(),
            y: self.y.clone(),
        }
    }
}

pub fn gen_covariates<T: Scalar>(
    mode: CovariateMode,
    n: usize,
    p: usize,
    t_len: usize,
    rng: &mut NarRng,
) -> Result<Vec<DMatrix<T>>> {
    let mut y: Vec<DMatrix<T>> = (0..p).map(|_| DMatrix::zeros(t_len, n)).collect();
    match mode {
        CovariateMode::StandardNormal => {
            for m in y.iter_mut() {
                for v in m.iter_mut() {
                    *v = T::of(rng.sample::<f64, _>(StandardNormal));
                }
            }
        }
        CovariateMode::StudentT { nu } => {
            let chi = ChiSquared::new(nu).map_err(|e| NarError::InvalidParameter(e.to_string()))?;
            for t in 0..t_len {
                for i in 0..n {
                    let s = (nu / chi.sample(rng)).sqrt();
                    for m in y.iter_mut() {
                        m[(t, i)] = T::of(s * rng.sample::<f64, _>(StandardNormal));
                    }
                }
            }
        }
    }
    Ok(y)
}

/// Transition blocks and covariate loadings of a NAR recursion.
#[derive(Debug, Clone)]
pub struct Recursion<T: Scalar> {
    pub g: Vec<DMatrix<T>>,
    pub c: DMatrix<T>,
}

impl<T: Scalar> Recursion<T> {
    pub fn from_spec(spec: &NarSpec<T>) -> Self {
        let q = spec.layout().q();
        Self {
            g: (1..=q).map(|l| spec.transition(l)).collect(),
            c: spec.gamma().clone(),
        }
    }

    /// From a stacked coefficient vector and an arbitrary weight matrix.
    pub fn from_coefficients(layout: &CoefLayout, beta: &DVector<T>, w: &DMatrix<T>) -> Self {
        let n = layout.n;
        let g = (1..=layout.q())
            .map(|lag| {
                let mut g = w.clone();
                for i in 0..n {
                    g.row_mut(i).scale_mut(beta[layout.index_b(lag, i)]);
                    g[(i, i)] += beta[layout.index_a(lag, i)];
                }
                g
            })
            .collect();
        let c = DMatrix::from_fn(n, layout.p, |i, k| beta[layout.index_gamma(k, i)]);
        Self { g, c }
    }

    pub fn q(&self) -> usize {
        self.g.len()
    }

    /// Runs the recursion. `x_init[l]` is `X_{-1-l}`, `y_init` is the `N x p`
    /// covariate matrix `Y_{-1}`; `y` and `errors` have one row per output step.
    pub fn propagate(
        &self,
        x_init: &[DVector<T>],
        y_init: &DMatrix<T>,
        y: &[DMatrix<T>],
        errors: &DMatrix<T>,
    ) -> Result<DMatrix<T>> {
        let n = self.c.nrows();
        let q = self.q();
        let p = self.c.ncols();
        if x_init.len() != q || y.len() != p || y_init.shape() != (n, p) {
            return Err(NarError::Dimension(format!(
                "recursion needs {q} initial lags and {p} covariates"
            )));
        }
        let t_len = errors.nrows();
        if errors.ncols() != n || y.iter().any(|m| m.shape() != (t_len, n)) {
            return Err(NarError::Dimension("errors and covariates must be T x N".into()));
        }
        let mut out = DMatrix::zeros(t_len, n);
        // lags[l] holds X_{t-1-l}
        let mut lags: Vec<DVector<T>> = x_init.to_vec();
        let mut next = DVector::zeros(n);
        for t in 0..t_len {
            next.copy_from(&errors.row(t).transpose());
            for (g, lag) in self.g.iter().zip(lags.iter()) {
                next.gemv(T::one(), g, lag, T::one());
            }
            for k in 0..p {
                let ck = self.c.column(k);
                for i in 0..n {
                    let yv = if t == 0 { y_init[(i, k)] } else { y[k][(t - 1, i)] };
                    next[i] += ck[i] * yv;
                }
            }
            out.row_mut(t).copy_from(&next.transpose());
            lags.rotate_right(1);
            lags[0].copy_from(&next);
        }
        Ok(out)
    }
}

/// Deterministic NAR recursion driven by the given covariates and errors.
pub fn propagate<T: Scalar>(
    spec: &NarSpec<T>,
    x_init: &[DVector<T>],
    y_init: &DMatrix<T>,
    y: &[DMatrix<T>],
    errors: &DMatrix<T>,
) -> Result<DMatrix<T>> {
    Recursion::from_spec(spec).propagate(x_init, y_init, y, errors)
}

pub fn simulate<T: Scalar>(spec: &NarSpec<T>, model: &ErrorModel<T>, cfg: &SimConfig) -> Result<SimOutput<T>> {
    simulate_with(spec, model, cfg, &mut rng_for(cfg.seed, 0))
}

/// As [`simulate`], drawing from a caller-supplied generator (`cfg.seed` is ignored).
pub fn simulate_with<T: Scalar>(
    spec: &NarSpec<T>,
    model: &ErrorModel<T>,
    cfg: &SimConfig,
    rng: &mut NarRng,
) -> Result<SimOutput<T>> {
    let stability = is_stable(spec, 0.0)?;
    if !stability.stable {
        if cfg.allow_unstable {
            log::warn!("simulating an unstable process (radius {})", stability.radius);
        } else {
            return Err(NarError::Unstable {
                radius: stability.radius,
            });
        }
    }
    let n = spec.n_nodes();
    let p = spec.n_covariates();
    let q = spec.layout().q();
    let total = cfg.burn_in + cfg.t_len;
    let errors = gen_errors_with(model, n, total, rng)?;
    // one extra leading row supplies Y_{-1}
    let y_full = gen_covariates::<T>(cfg.y_mode, n, p, total + 1, rng)?;
    let y_init = DMatrix::from_fn(n, p, |i, k| y_full[k][(0, i)]);
    let y_steps: Vec<_> = y_full.iter().map(|m| m.rows(1, total).into_owned()).collect();
    let x_init = vec![DVector::zeros(n); q];
    let x = propagate(spec, &x_init, &y_init, &y_steps, &errors)?;
    let keep = cfg.burn_in;
    Ok(SimOutput {
        x: x.rows(keep, cfg.t_len).into_owned(),
        y: y_steps
            .iter()
            .map(|m| m.rows(keep, cfg.t_len).into_owned())
            .collect(),
        errors: errors.rows(keep, cfg.t_len).into_owned(),
    })
}

/// Additive perturbation `pi` of a weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MisspecPerturbation<T: Scalar> {
    pub pi: DMatrix<T>,
    pub target_inf_norm: f64,
    pub preserve_row_sums: bool,
}

/// Max absolute row sum.
pub fn inf_norm<T: Scalar>(m: &DMatrix<T>) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|v| v.abs().as_f64()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Returns `(W + pi, pi)` with `pi` drawn uniformly on `(-1, 1)` off the
/// diagonal, optionally row-centred, then rescaled to `||pi||_inf = target`.
pub fn perturb_weights<T: Scalar>(
    w: &DMatrix<T>,
    target_inf_norm: f64,
    preserve_row_sums: bool,
    seed: u64,
) -> Result<(DMatrix<T>, MisspecPerturbation<T>)> {
    perturb_weights_with(w, target_inf_norm, preserve_row_sums, &mut rng_for(seed, 0))
}

pub fn perturb_weights_with<T: Scalar>(
    w: &DMatrix<T>,
    target_inf_norm: f64,
    preserve_row_sums: bool,
    rng: &mut NarRng,
) -> Result<(DMatrix<T>, MisspecPerturbation<T>)> {
    if !(target_inf_norm >= 0.0) || !target_inf_norm.is_finite() {
        return Err(NarError::InvalidParameter("target norm must be finite and >= 0".into()));
    }
    let n = w.nrows();
    if !w.is_square() {
        return Err(NarError::Dimension("weight matrix must be square".into()));
    }
    let mut pi = DMatrix::<f64>::zeros(n, n);
    if target_inf_norm > 0.0 && n > 1 {
        let unif = Uniform::new(-1.0, 1.0).expect("valid bounds");
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    pi[(i, j)] = rng.sample(unif);
                }
            }
        }
        if preserve_row_sums {
            for i in 0..n {
                let mean = pi.row(i).sum() / (n - 1) as f64;
                for j in 0..n {
                    if i != j {
                        pi[(i, j)] -= mean;
                    }
                }
            }
        }
        let norm = inf_norm(&pi);
        if norm > 0.0 {
            pi *= target_inf_norm / norm;
        }
    }
    let pi: DMatrix<T> = pi.map(T::of);
    Ok((
        w + &pi,
        MisspecPerturbation {
            pi,
            target_inf_norm,
            preserve_row_sums,
        },
    ))
}
