use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::ErrorCovariance;
use crate::error::{NarError, Result};
use crate::scalar::Scalar;

/// Default search interval for the SAR parameter.
pub const SAR_BOUNDS: (f64, f64) = (-0.99, 0.99);

const SCAN_POINTS: usize = 81;
const RHO_TOL: f64 = 1e-7;

/// Quasi-ML fit of `eps = rho Phi eps + u`.
#[derive(Debug, Clone, Serialize)]
pub struct SarFit<T: Scalar> {
    pub rho_hat: f64,
    pub sigma_u2_hat: f64,
    pub loglik: f64,
    /// Profile score at the optimum, `d loglik / d rho`.
    pub score: f64,
    /// The optimum sits on the edge of the search interval.
    pub at_boundary: bool,
    #[serde(skip)]
    pub phi: DMatrix<T>,
}

impl<T: Scalar> SarFit<T> {
    pub fn covariance(&self) -> Result<SarCovariance<T>> {
        sigma_sar(T::of(self.rho_hat), T::of(self.sigma_u2_hat), &self.phi)
    }
}

/// Sufficient statistics of the residuals for the profile likelihood:
/// `sum ||e||^2`, `sum e' Phi e` and `sum ||Phi e||^2`.
struct Moments<T: Scalar> {
    c0: f64,
    c1: f64,
    c2: f64,
    n: usize,
    t: usize,
    phi: DMatrix<T>,
}

impl<T: Scalar> Moments<T> {
    fn new(residuals: &DMatrix<T>, phi: &DMatrix<T>) -> Result<Self> {
        let (t, n) = residuals.shape();
        if phi.shape() != (n, n) {
            return Err(NarError::Dimension(format!(
                "Phi is {}x{}, residuals have {n} columns",
                phi.nrows(),
                phi.ncols()
            )));
        }
        if t == 0 || residuals.iter().any(|v| !v.is_finite()) {
            return Err(NarError::Data("residuals must be non-empty and finite".into()));
        }
        let lagged = residuals * phi.transpose();
        let c0 = residuals.iter().map(|v| v.as_f64().powi(2)).sum::<f64>();
        if c0 == 0.0 {
            return Err(NarError::Data("residuals are identically zero".into()));
        }
        let c1 = residuals
            .iter()
            .zip(lagged.iter())
            .map(|(a, b)| a.as_f64() * b.as_f64())
            .sum();
        let c2 = lagged.iter().map(|v| v.as_f64().powi(2)).sum();
        Ok(Self {
            c0,
            c1,
            c2,
            n,
            t,
            phi: phi.clone(),
        })
    }

    fn nt(&self) -> f64 {
        (self.n * self.t) as f64
    }

    fn quad(&self, rho: f64) -> f64 {
        self.c0 - 2.0 * rho * self.c1 + rho * rho * self.c2
    }

    fn sigma2(&self, rho: f64) -> f64 {
        self.quad(rho) / self.nt()
    }

    fn s(&self, rho: f64) -> DMatrix<T> {
        DMatrix::identity(self.n, self.n) - &self.phi * T::of(rho)
    }

    fn log_abs_det(&self, rho: f64) -> Result<f64> {
        let lu = self.s(rho).lu();
        let u = lu.u();
        let mut acc = 0.0;
        for i in 0..self.n {
            let d = u[(i, i)].as_f64();
            if d == 0.0 || !d.is_finite() {
                return Err(NarError::Singular(format!("I - rho Phi at rho = {rho}")));
            }
            acc += d.abs().ln();
        }
        Ok(acc)
    }

    fn loglik(&self, rho: f64) -> Result<f64> {
        let nt = self.nt();
        let s2 = self.sigma2(rho);
        if !(s2 > 0.0) {
            return Err(NarError::Data("profile variance is not positive".into()));
        }
        Ok(-0.5 * nt * (2.0 * std::f64::consts::PI).ln() - 0.5 * nt
            + self.t as f64 * self.log_abs_det(rho)?
            - 0.5 * nt * s2.ln())
    }

    fn score(&self, rho: f64) -> Result<f64> {
        let lu = self.s(rho).lu();
        let sol = lu
            .solve(&self.phi)
            .ok_or_else(|| NarError::Singular(format!("I - rho Phi at rho = {rho}")))?;
        let trace = sol.trace().as_f64();
        Ok(-(self.t as f64) * trace + self.nt() * (self.c1 - rho * self.c2) / self.quad(rho))
    }
}

/// Profile quasi-log-likelihood of `rho` with `sigma_u^2` concentrated out.
pub fn sar_profile_loglik<T: Scalar>(rho: f64, residuals: &DMatrix<T>, phi: &DMatrix<T>) -> Result<f64> {
    if !(rho.abs() < 1.0) {
        return Err(NarError::InvalidParameter(format!("rho must lie in (-1, 1), got {rho}")));
    }
    Moments::new(residuals, phi)?.loglik(rho)
}

/// Maximizes the profile likelihood over `bounds`: a coarse scan locates the
/// best cell, Brent's method refines it.
pub fn fit_sar_qmle<T: Scalar>(residuals: &DMatrix<T>, phi: &DMatrix<T>, bounds: (f64, f64)) -> Result<SarFit<T>> {
    let (lo, hi) = bounds;
    if !(lo < hi && lo > -1.0 && hi < 1.0) {
        return Err(NarError::InvalidParameter(format!(
            "SAR bounds must satisfy -1 < lo < hi < 1, got ({lo}, {hi})"
        )));
    }
    let m = Moments::new(residuals, phi)?;
    let step = (hi - lo) / (SCAN_POINTS - 1) as f64;
    let mut best = (0usize, f64::NEG_INFINITY);
    for k in 0..SCAN_POINTS {
        let v = m.loglik(lo + step * k as f64)?;
        if v > best.1 {
            best = (k, v);
        }
    }
    let a = lo + step * best.0.saturating_sub(1) as f64;
    let b = (lo + step * (best.0 + 1) as f64).min(hi);
    let mut failure = None;
    let (rho, neg) = brent_min(
        |r| match m.loglik(r) {
            Ok(v) => -v,
            Err(e) => {
                failure.get_or_insert(e);
                f64::INFINITY
            }
        },
        a,
        b,
        RHO_TOL,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let (rho, loglik) = if -neg >= best.1 {
        (rho, -neg)
    } else {
        (lo + step * best.0 as f64, best.1)
    };
    let at_boundary = rho - lo < 10.0 * RHO_TOL || hi - rho < 10.0 * RHO_TOL;
    if at_boundary {
        log::warn!("SAR estimate {rho} is on the boundary of ({lo}, {hi})");
    }
    Ok(SarFit {
        rho_hat: rho,
        sigma_u2_hat: m.sigma2(rho),
        loglik,
        score: m.score(rho)?,
        at_boundary,
        phi: phi.clone(),
    })
}

/// Brent's method (golden section with parabolic steps) for a minimum on `[a, b]`.
fn brent_min(mut f: impl FnMut(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    const GOLD: f64 = 0.381_966_011_250_105_1;
    let mut x = a + GOLD * (b - a);
    let (mut w, mut v) = (x, x);
    let mut fx = f(x);
    let (mut fw, mut fv) = (fx, fx);
    let (mut d, mut e) = (0.0_f64, 0.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        let tol1 = tol * 0.5 + 1e-12 * x.abs();
        let tol2 = 2.0 * tol1;
        if (x - mid).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            if p.abs() < (0.5 * q * e).abs() && p > q * (a - x) && p < q * (b - x) {
                e = d;
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if mid > x { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= mid { a - x } else { b - x };
            d = GOLD * e;
        }
        let u = if d.abs() >= tol1 { x + d } else { x + tol1.copysign(d) };
        let fu = f(u);
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            (v, fv, w, fw, x, fx) = (w, fw, x, fx, u, fu);
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                (v, fv, w, fw) = (w, fw, u, fu);
            } else if fu <= fv || v == x || v == w {
                (v, fv) = (u, fu);
            }
        }
    }
    (x, fx)
}

/// `Sigma = sigma_u^2 S^{-1} S^{-T}` with `S = I - rho Phi`.
#[derive(Debug, Clone)]
pub struct SarCovariance<T: Scalar> {
    pub rho: T,
    pub sigma_u2: T,
    s: DMatrix<T>,
}

pub fn sigma_sar<T: Scalar>(rho: T, sigma_u2: T, phi: &DMatrix<T>) -> Result<SarCovariance<T>> {
    if !(rho.abs() < T::one()) {
        return Err(NarError::InvalidParameter("rho must lie in (-1, 1)".into()));
    }
    if !(sigma_u2 > T::zero()) {
        return Err(NarError::InvalidParameter("sigma_u2 must be positive".into()));
    }
    let s = crate::simulation::sar_operator(rho, phi)?;
    Ok(SarCovariance { rho, sigma_u2, s })
}

impl<T: Scalar> SarCovariance<T> {
    pub fn s(&self) -> &DMatrix<T> {
        &self.s
    }
}

impl<T: Scalar> ErrorCovariance<T> for SarCovariance<T> {
    fn dim(&self) -> usize {
        self.s.nrows()
    }

    fn matrix(&self) -> DMatrix<T> {
        let n = self.dim();
        let s_inv = self
            .s
            .clone()
            .lu()
            .solve(&DMatrix::identity(n, n))
            .expect("S is nonsingular by construction");
        &s_inv * s_inv.transpose() * self.sigma_u2
    }

    fn apply_inverse(&self, v: &DVector<T>) -> DVector<T> {
        self.s.tr_mul(&(&self.s * v)) / self.sigma_u2
    }

    fn inverse_matrix(&self) -> Result<DMatrix<T>> {
        Ok(self.s.tr_mul(&self.s) / self.sigma_u2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::banded_weights;
    use crate::simulation::{gen_errors, ErrorModel};
    use nalgebra::dmatrix;

    #[test]
    fn rho_zero_is_iid_gaussian_loglik() {
        let e = dmatrix![0.5, -1.0, 0.25; 2.0, 0.0, -0.5];
        let phi = banded_weights::<f64>(3, 1).unwrap();
        let nt = 6.0;
        let s2 = e.iter().map(|v| v * v).sum::<f64>() / nt;
        let expected = -0.5 * nt * (2.0 * std::f64::consts::PI * s2).ln() - 0.5 * nt;
        assert!((sar_profile_loglik(0.0, &e, &phi).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn profile_matches_joint_likelihood_at_concentrated_variance() {
        // 3 nodes, 4 periods
        let e = dmatrix![
            0.3, -1.2, 0.8;
            1.1, 0.4, -0.6;
            -0.2, 0.9, 1.5;
            0.7, -0.3, -1.1
        ];
        let phi = dmatrix![0.0, 0.7, 0.3; 0.5, 0.0, 0.5; 0.2, 0.8, 0.0];
        for rho in [-0.6f64, -0.1, 0.0, 0.35, 0.8] {
            let s = DMatrix::identity(3, 3) - &phi * rho;
            let det: f64 = s.determinant();
            let ss: f64 = (0..4).map(|t| (&s * e.row(t).transpose()).norm_squared()).sum();
            let s2 = ss / 12.0;
            let joint = -6.0 * (2.0 * std::f64::consts::PI).ln() - 6.0 * s2.ln()
                + 4.0 * det.abs().ln()
                - ss / (2.0 * s2);
            let profile = sar_profile_loglik(rho, &e, &phi).unwrap();
            assert!((profile - joint).abs() < 1e-10, "rho {rho}: {profile} vs {joint}");
        }
    }

    #[test]
    fn zero_residuals_are_rejected() {
        let phi = banded_weights::<f64>(3, 1).unwrap();
        assert!(fit_sar_qmle(&DMatrix::zeros(5, 3), &phi, SAR_BOUNDS).is_err());
    }

    #[test]
    fn qmle_recovers_rho_and_zeroes_score() {
        let n = 30;
        let phi = banded_weights::<f64>(n, 2).unwrap();
        let model = ErrorModel::SarGaussian { rho: 0.5, phi: phi.clone(), sigma_u2: 2.0 };
        let e = gen_errors(&model, n, 500, 11).unwrap();
        let fit = fit_sar_qmle(&e, &phi, SAR_BOUNDS).unwrap();
        assert!((fit.rho_hat - 0.5).abs() < 0.05);
        assert!((fit.sigma_u2_hat - 2.0).abs() < 0.15);
        assert!(fit.score.abs() < 1e-3 * (n * 500) as f64);
        assert!(!fit.at_boundary);
        for k in 0..=400 {
            let r = -0.99 + 1.98 * k as f64 / 400.0;
            assert!(sar_profile_loglik(r, &e, &phi).unwrap() <= fit.loglik + 1e-9);
        }
    }

    #[test]
    fn boundary_solutions_are_flagged() {
        // strongly positive spatial dependence beyond the search interval
        let n = 20;
        let phi = banded_weights::<f64>(n, 1).unwrap();
        let model = ErrorModel::SarGaussian { rho: 0.95, phi: phi.clone(), sigma_u2: 1.0 };
        let e = gen_errors(&model, n, 400, 3).unwrap();
        let fit = fit_sar_qmle(&e, &phi, (-0.5, 0.5)).unwrap();
        assert!(fit.at_boundary);
        assert!((fit.rho_hat - 0.5).abs() < 1e-6);
    }

    #[test]
    fn covariance_and_inverse() {
        let phi = dmatrix![0.0, 1.0, 0.0; 0.5, 0.0, 0.5; 0.0, 1.0, 0.0];
        let cov = sigma_sar(0.4, 1.5, &phi).unwrap();
        let s = DMatrix::identity(3, 3) - &phi * 0.4;
        let s_inv = s.clone().try_inverse().unwrap();
        let dense = &s_inv * s_inv.transpose() * 1.5;
        assert!((cov.matrix() - &dense).norm() < 1e-12);
        let v = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        assert!((cov.apply_inverse(&(&dense * &v)) - &v).norm() < 1e-9);
        assert!((cov.inverse_matrix().unwrap() * &dense - DMatrix::identity(3, 3)).norm() < 1e-9);
        let iid = sigma_sar(0.0, 2.0, &phi).unwrap();
        assert!((iid.matrix() - DMatrix::identity(3, 3) * 2.0).norm() < 1e-15);
    }
}
