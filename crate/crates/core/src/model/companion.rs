use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::spec::{CoefLayout, NarSpec};
use crate::error::{NarError, Result};
use crate::scalar::Scalar;

/// Largest companion dimension handled by the dense Schur eigensolver.
/// Larger systems fall back to power iteration.
pub const DENSE_EIGEN_LIMIT: usize = 2000;

const SCHUR_MAX_ITER: usize = 10_000;
const POWER_MAX_ITER: usize = 10_000;
const POWER_TOL: f64 = 1e-6;

/// VAR(1) lifting of a NAR process: `G_1 .. G_q` along the top block row
/// and identity blocks on the subdiagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct CompanionForm<T: Scalar> {
    pub g: DMatrix<T>,
    pub n: usize,
    pub q: usize,
}

impl<T: Scalar> CompanionForm<T> {
    /// Builds the companion from transition blocks `G_1 .. G_q`.
    pub fn from_blocks(blocks: &[DMatrix<T>]) -> Result<Self> {
        let q = blocks.len();
        let n = blocks.first().map(|g| g.nrows()).unwrap_or(0);
        if q == 0 || n == 0 {
            return Err(NarError::Dimension("companion needs at least one block".into()));
        }
        if blocks.iter().any(|g| g.nrows() != n || g.ncols() != n) {
            return Err(NarError::Dimension(format!(
                "transition blocks must all be {n}x{n}"
            )));
        }
        let mut g = DMatrix::zeros(n * q, n * q);
        for (l, block) in blocks.iter().enumerate() {
            g.view_mut((0, l * n), (n, n)).copy_from(block);
        }
        for l in 1..q {
            g.view_mut((l * n, (l - 1) * n), (n, n)).fill_with_identity();
        }
        Ok(Self { g, n, q })
    }

    /// Builds the companion directly from a stacked coefficient vector and an
    /// arbitrary (possibly misspecified) weight matrix.
    pub fn from_coefficients(layout: &CoefLayout, beta: &DVector<T>, w: &DMatrix<T>) -> Result<Self> {
        let n = layout.n;
        if beta.len() != layout.len() || w.nrows() != n || w.ncols() != n {
            return Err(NarError::Dimension(
                "coefficients, layout and weights disagree".into(),
            ));
        }
        let blocks: Vec<_> = (1..=layout.q())
            .map(|lag| {
                let mut g = w.clone();
                for i in 0..n {
                    g.row_mut(i).scale_mut(beta[layout.index_b(lag, i)]);
                    g[(i, i)] += beta[layout.index_a(lag, i)];
                }
                g
            })
            .collect();
        Self::from_blocks(&blocks)
    }

    pub fn dim(&self) -> usize {
        self.g.nrows()
    }
}

pub fn build_companion<T: Scalar>(spec: &NarSpec<T>) -> Result<CompanionForm<T>> {
    let q = spec.layout().q();
    let blocks: Vec<_> = (1..=q).map(|lag| spec.transition(lag)).collect();
    CompanionForm::from_blocks(&blocks)
}

/// Maximum eigenvalue modulus of the companion matrix.
pub fn spectral_radius<T: Scalar>(c: &CompanionForm<T>) -> Result<f64> {
    spectral_radius_of(&c.g)
}

pub(crate) fn spectral_radius_of<T: Scalar>(g: &DMatrix<T>) -> Result<f64> {
    if g.nrows() != g.ncols() {
        return Err(NarError::Dimension("spectral radius needs a square matrix".into()));
    }
    if g.nrows() == 0 || g.iter().all(|v| *v == T::zero()) {
        return Ok(0.0);
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err(NarError::InvalidParameter("matrix has non-finite entries".into()));
    }
    if g.nrows() > DENSE_EIGEN_LIMIT {
        return power_radius(g);
    }
    let schur = g
        .clone()
        .try_schur(T::default_epsilon(), SCHUR_MAX_ITER)
        .ok_or_else(|| {
            NarError::NoConvergence(format!("Schur decomposition of {}x{} matrix", g.nrows(), g.ncols()))
        })?;
    let radius = schur
        .complex_eigenvalues()
        .iter()
        .map(|z| z.re.as_f64().hypot(z.im.as_f64()))
        .fold(0.0_f64, f64::max);
    if radius.is_finite() {
        Ok(radius)
    } else {
        Err(NarError::NoConvergence("eigenvalues are not finite".into()))
    }
}

/// Power iteration on the growth rate `||G^k v||^(1/k)`.
///
/// The per-step log growth is averaged over windows of doubling length, which
/// also converges when the dominant eigenvalues form a complex pair.
fn power_radius<T: Scalar>(g: &DMatrix<T>) -> Result<f64> {
    let n = g.nrows();
    let mut v = DVector::from_fn(n, |i, _| T::of(1.0 + (i % 7) as f64 / 7.0));
    v /= v.norm();
    let mut window = 16usize;
    let mut done = 0usize;
    let mut previous: Option<f64> = None;
    while done < POWER_MAX_ITER {
        let mut log_growth = 0.0;
        let steps = window.min(POWER_MAX_ITER - done);
        for _ in 0..steps {
            v = g * &v;
            let norm = v.norm().as_f64();
            if norm == 0.0 {
                return Ok(0.0);
            }
            log_growth += norm.ln();
            v /= T::of(norm);
        }
        done += steps;
        let estimate = (log_growth / steps as f64).exp();
        if let Some(prev) = previous {
            if (estimate - prev).abs() < POWER_TOL * estimate.max(1.0) {
                return Ok(estimate);
            }
        }
        previous = Some(estimate);
        window *= 2;
    }
    Err(NarError::NoConvergence(format!(
        "power iteration did not settle within {POWER_MAX_ITER} iterations"
    )))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stability {
    pub stable: bool,
    pub radius: f64,
}

/// Stationarity check: stable iff the spectral radius is below `1 - margin_tol`.
pub fn is_stable<T: Scalar>(spec: &NarSpec<T>, margin_tol: f64) -> Result<Stability> {
    if !(margin_tol >= 0.0) {
        return Err(NarError::InvalidParameter("margin_tol must be >= 0".into()));
    }
    let radius = spectral_radius(&build_companion(spec)?)?;
    Ok(Stability {
        stable: radius < 1.0 - margin_tol,
        radius,
    })
}

/// Row-sum condition `max_i sum_l (|a_i^l| + |b_i^l|) < 1`.
pub fn sufficient_condition<T: Scalar>(spec: &NarSpec<T>) -> bool {
    (0..spec.n_nodes())
        .map(|i| {
            let a: T = spec.a().iter().fold(T::zero(), |s, v| s + v[i].abs());
            let b: T = spec.b().iter().fold(T::zero(), |s, v| s + v[i].abs());
            a + b
        })
        .all(|s| s < T::one())
}
