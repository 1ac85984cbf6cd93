use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::ErrorCovariance;
use crate::error::{NarError, Result};
use crate::scalar::Scalar;

/// Principal-components fit of `E = F Lambda' + U`.
#[derive(Debug, Clone, Serialize)]
pub struct FactorFit<T: Scalar> {
    pub k: usize,
    /// `N x k`.
    #[serde(skip)]
    pub lambda_hat: DMatrix<T>,
    /// `T x k`, normalized so that `F'F / T = I`.
    #[serde(skip)]
    pub f_hat: DMatrix<T>,
    pub sigma2_hat: f64,
    /// `S(j)` for `j = 0 ..= min(N, T)`.
    pub s_of_k: Vec<f64>,
}

impl<T: Scalar> FactorFit<T> {
    /// `Lambda Lambda' + sigma^2 I`.
    pub fn covariance(&self) -> Result<FactorCovariance<T>> {
        FactorCovariance::new(self.lambda_hat.clone(), T::of(self.sigma2_hat))
    }
}

/// Singular values sorted descending together with the matching vectors.
struct SortedSvd<T: Scalar> {
    u: DMatrix<T>,
    s: Vec<f64>,
    v: DMatrix<T>,
}

fn sorted_svd<T: Scalar>(e: &DMatrix<T>, vectors: bool) -> Result<SortedSvd<T>> {
    let svd = e
        .clone()
        .try_svd(vectors, vectors, T::default_epsilon(), 10_000)
        .ok_or_else(|| NarError::NoConvergence("SVD of residual matrix".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .as_f64()
            .total_cmp(&svd.singular_values[a].as_f64())
    });
    let s = order.iter().map(|&i| svd.singular_values[i].as_f64()).collect();
    let (u, v) = if vectors {
        let u_all = svd.u.expect("requested");
        let vt_all = svd.v_t.expect("requested");
        (
            DMatrix::from_fn(e.nrows(), order.len(), |r, c| u_all[(r, order[c])]),
            DMatrix::from_fn(e.ncols(), order.len(), |r, c| vt_all[(order[c], r)]),
        )
    } else {
        (DMatrix::zeros(0, 0), DMatrix::zeros(0, 0))
    };
    Ok(SortedSvd { u, s, v })
}

fn check_residuals<T: Scalar>(e: &DMatrix<T>) -> Result<()> {
    if e.nrows() == 0 || e.ncols() == 0 {
        return Err(NarError::Dimension("residual matrix is empty".into()));
    }
    if e.iter().any(|v| !v.is_finite()) {
        return Err(NarError::Data("residuals must be finite".into()));
    }
    Ok(())
}

/// `S(j) = (1/NT) sum_{i > j} s_i^2` for every `j`.
fn reconstruction_errors(s: &[f64], nt: f64) -> Vec<f64> {
    let mut out = vec![0.0; s.len() + 1];
    for j in (0..s.len()).rev() {
        out[j] = out[j + 1] + s[j] * s[j] / nt;
    }
    out
}

/// Extracts `k` factors from the `T x N` residual matrix.
pub fn fit_factor<T: Scalar>(residuals: &DMatrix<T>, k: usize) -> Result<FactorFit<T>> {
    check_residuals(residuals)?;
    let (t, n) = residuals.shape();
    if k > t.min(n) {
        return Err(NarError::InvalidParameter(format!(
            "k = {k} exceeds min(N, T) = {}",
            t.min(n)
        )));
    }
    let dof = (n * t) as f64 - (k * (t + n - k)) as f64;
    if dof <= 0.0 {
        return Err(NarError::InvalidParameter(format!(
            "k = {k} leaves no degrees of freedom"
        )));
    }
    let svd = sorted_svd(residuals, true)?;
    let nt = (n * t) as f64;
    let s_of_k = reconstruction_errors(&svd.s, nt);
    let root_t = (t as f64).sqrt();
    let f_hat = svd.u.columns(0, k) * T::of(root_t);
    let mut lambda_hat = svd.v.columns(0, k).into_owned();
    for (j, mut col) in lambda_hat.column_iter_mut().enumerate() {
        col *= T::of(svd.s[j] / root_t);
    }
    Ok(FactorFit {
        k,
        lambda_hat,
        f_hat,
        sigma2_hat: s_of_k[k] * nt / dof,
        s_of_k,
    })
}

/// Outcome of the information-criterion search over `k`.
#[derive(Debug, Clone, Serialize)]
pub struct KSelection {
    pub k_hat: usize,
    /// `IC(j)` for the candidates examined.
    pub ic_values: Vec<f64>,
    pub s_of_k: Vec<f64>,
}

/// Default penalty weight `g(N, T, k) = ((N + T - k) / (N T)) ln(N T)`.
pub fn ic_penalty(n: usize, t: usize, k: usize) -> f64 {
    let nt = (n * t) as f64;
    (n + t - k) as f64 / nt * nt.ln()
}

/// Default largest factor count: `min(8, floor(min(N, T) / 2))`.
pub fn default_kmax(n: usize, t: usize) -> usize {
    8.min(n.min(t) / 2)
}

/// `k_hat = argmin_k ln S(k) + k g(N, T, k)`, ties to the smaller `k`.
pub fn select_k<T: Scalar>(
    residuals: &DMatrix<T>,
    kmax: usize,
    penalty: impl Fn(usize, usize, usize) -> f64,
) -> Result<KSelection> {
    check_residuals(residuals)?;
    let (t, n) = residuals.shape();
    let svd = sorted_svd(residuals, false)?;
    let s_of_k = reconstruction_errors(&svd.s, (n * t) as f64);
    let kmax = kmax.min(t.min(n));
    let floor = s_of_k[0] * 1e-28;
    let mut ic_values = Vec::with_capacity(kmax + 1);
    let mut best = (0usize, f64::INFINITY);
    for k in 0..=kmax {
        if s_of_k[k] <= floor {
            // perfect fit: nothing left to explain
            ic_values.push(f64::NEG_INFINITY);
            best = (k, f64::NEG_INFINITY);
            break;
        }
        let ic = s_of_k[k].ln() + k as f64 * penalty(n, t, k);
        ic_values.push(ic);
        if ic < best.1 {
            best = (k, ic);
        }
    }
    Ok(KSelection {
        k_hat: best.0,
        ic_values,
        s_of_k,
    })
}

/// `Sigma = Lambda Lambda' + sigma^2 I` with a Woodbury inverse.
#[derive(Debug, Clone)]
pub struct FactorCovariance<T: Scalar> {
    pub lambda: DMatrix<T>,
    pub sigma2: T,
    /// Cholesky factor of `sigma^2 I_k + Lambda' Lambda`.
    core: nalgebra::Cholesky<T, nalgebra::Dyn>,
}

impl<T: Scalar> FactorCovariance<T> {
    pub fn new(lambda: DMatrix<T>, sigma2: T) -> Result<Self> {
        if !(sigma2 > T::zero()) {
            return Err(NarError::InvalidParameter(
                "factor covariance needs a positive idiosyncratic variance".into(),
            ));
        }
        let k = lambda.ncols();
        let core = (DMatrix::identity(k, k) * sigma2 + lambda.tr_mul(&lambda))
            .cholesky()
            .ok_or_else(|| NarError::NotPositiveDefinite("factor core matrix".into()))?;
        Ok(Self { lambda, sigma2, core })
    }
}

impl<T: Scalar> ErrorCovariance<T> for FactorCovariance<T> {
    fn dim(&self) -> usize {
        self.lambda.nrows()
    }

    fn matrix(&self) -> DMatrix<T> {
        let n = self.dim();
        &self.lambda * self.lambda.transpose() + DMatrix::identity(n, n) * self.sigma2
    }

    fn apply_inverse(&self, v: &DVector<T>) -> DVector<T> {
        let inner = self.core.solve(&self.lambda.tr_mul(v));
        (v - &self.lambda * inner) / self.sigma2
    }

    fn inverse_matrix(&self) -> Result<DMatrix<T>> {
        let n = self.dim();
        let inner = self.core.solve(&self.lambda.transpose());
        Ok((DMatrix::identity(n, n) - &self.lambda * inner) / self.sigma2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn normal(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = rng_for(seed, 0);
        DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
    }

    #[test]
    fn zero_factors_use_plain_mean_square() {
        let e = normal(30, 7, 1);
        let fit = fit_factor(&e, 0).unwrap();
        assert_eq!(fit.lambda_hat.ncols(), 0);
        let ms = e.norm_squared() / 210.0;
        assert!((fit.sigma2_hat - ms).abs() < 1e-12);
    }

    #[test]
    fn exact_low_rank_is_recovered() {
        let f = normal(60, 2, 2);
        let lambda = normal(9, 2, 3);
        let e = &f * lambda.transpose();
        let fit = fit_factor(&e, 2).unwrap();
        assert!(fit.s_of_k[2] < 1e-20);
        // columns of the true loadings lie in the span of the estimate
        let q = fit.lambda_hat.clone().qr().q();
        let resid = &lambda - &q * q.tr_mul(&lambda);
        assert!(resid.norm() < 1e-6 * lambda.norm());
        let sel = select_k(&e, 5, ic_penalty).unwrap();
        assert_eq!(sel.k_hat, 2);
    }

    #[test]
    fn normalization_and_diagonal_loadings() {
        let e = normal(80, 12, 4);
        let fit = fit_factor(&e, 3).unwrap();
        let ftf = fit.f_hat.tr_mul(&fit.f_hat) / 80.0;
        assert!((ftf - DMatrix::identity(3, 3)).norm() < 1e-8);
        let ltl = fit.lambda_hat.tr_mul(&fit.lambda_hat);
        let off: f64 = (0..3).flat_map(|i| (0..3).filter(move |&j| j != i).map(move |j| (i, j))).map(|ij| ltl[ij].abs()).sum();
        assert!(off < 1e-6 * ltl.diagonal().sum());
        let back = fit.f_hat.tr_mul(&e) / 80.0;
        assert!((back - fit.lambda_hat.transpose()).norm() < 1e-10);
    }

    #[test]
    fn reconstruction_error_matches_eigenvalue_share() {
        let e = normal(40, 10, 5);
        let fit = fit_factor(&e, 3).unwrap();
        let direct = (&e - &fit.f_hat * fit.lambda_hat.transpose()).norm_squared() / 400.0;
        assert!((fit.s_of_k[3] - direct).abs() < 1e-12);
        let gram = &e * e.transpose() / 400.0;
        let mut eig: Vec<f64> = gram.symmetric_eigen().eigenvalues.iter().copied().collect();
        eig.sort_by(|a, b| b.total_cmp(a));
        let total: f64 = eig.iter().sum();
        let top: f64 = eig[..3].iter().sum();
        assert!((fit.s_of_k[3] / fit.s_of_k[0] - (1.0 - top / total)).abs() < 1e-10);
    }

    #[test]
    fn woodbury_matches_dense_inverse() {
        let lambda = normal(20, 3, 6);
        let cov = FactorCovariance::new(lambda, 0.7).unwrap();
        let dense = cov.matrix();
        let inv = dense.clone().try_inverse().unwrap();
        assert!((cov.inverse_matrix().unwrap() - &inv).norm() < 1e-9 * inv.norm());
        let v = normal(20, 1, 7).column(0).into_owned();
        assert!((cov.apply_inverse(&(&dense * &v)) - &v).norm() < 1e-9);
        let iid = FactorCovariance::new(DMatrix::<f64>::zeros(4, 0), 2.0).unwrap();
        let v = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(iid.apply_inverse(&v), &v / 2.0);
        assert!(FactorCovariance::new(DMatrix::<f64>::zeros(4, 1), 0.0).is_err());
    }

    #[test]
    fn too_many_factors_rejected() {
        let e = normal(5, 4, 8);
        assert!(fit_factor(&e, 5).is_err());
        assert!(fit_factor(&e, 4).is_err());
    }
}
