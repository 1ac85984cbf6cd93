use nalgebra::{DMatrix, DVector};

use crate::data::Panel;
use crate::error::{NarError, Result};
use crate::model::{CoefKind, CoefLayout};
use crate::scalar::Scalar;

/// Regressor columns of the stacked design, one per free coefficient.
///
/// Column `f * N + i` of `v` holds, for every response period, the single
/// nonzero entry that row `i` of `Z_{t-1}` has in free block `f`. Every
/// cross-product over the design reduces to products of these columns.
#[derive(Debug, Clone)]
pub(crate) struct Regressors<T: Scalar> {
    pub layout: CoefLayout,
    pub free_blocks: Vec<usize>,
    /// `T_eff x (m_f N)`.
    pub v: DMatrix<T>,
    /// Responses, `T_eff x N`.
    pub xr: DMatrix<T>,
}

impl<T: Scalar> Regressors<T> {
    pub fn build(panel: &Panel<T>, w: &DMatrix<T>, q1: usize, q2: usize) -> Result<Self> {
        let n = panel.n_nodes();
        if w.shape() != (n, n) {
            return Err(NarError::Dimension(format!(
                "weight matrix is {}x{}, panel has {n} nodes",
                w.nrows(),
                w.ncols()
            )));
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(NarError::InvalidWeights("weights must be finite".into()));
        }
        let layout = CoefLayout::new(n, q1, q2, panel.n_covariates())?;
        let q = layout.q();
        let total = panel.len();
        if total < q + 2 {
            return Err(NarError::InsufficientHistory {
                needed: q + 2,
                got: total,
            });
        }
        let t_eff = total - q;
        let wx = &panel.x * w.transpose();
        let free_blocks = layout.free_blocks();
        let mut v = DMatrix::zeros(t_eff, free_blocks.len() * n);
        for (f, &block) in free_blocks.iter().enumerate() {
            let (src, shift) = match layout.block_kind(block) {
                CoefKind::A { lag } => (&panel.x, lag),
                CoefKind::B { lag } => (&wx, lag),
                CoefKind::Gamma { covariate } => (&panel.y[covariate], 1),
            };
            v.columns_mut(f * n, n)
                .copy_from(&src.rows(q - shift, t_eff));
        }
        Ok(Self {
            layout,
            free_blocks,
            v,
            xr: panel.x.rows(q, t_eff).into_owned(),
        })
    }

    pub fn t_eff(&self) -> usize {
        self.xr.nrows()
    }

    pub fn n(&self) -> usize {
        self.layout.n
    }

    pub fn m_free(&self) -> usize {
        self.free_blocks.len()
    }

    pub fn n_free(&self) -> usize {
        self.v.ncols()
    }

    /// Column indices belonging to node `i`.
    pub fn node_columns(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let n = self.n();
        (0..self.m_free()).map(move |f| f * n + i)
    }

    /// Human-readable name of free coordinate `j`.
    pub fn describe(&self, j: usize) -> String {
        let n = self.n();
        let kind = self.layout.block_kind(self.free_blocks[j / n]);
        format!("{} of node {}", kind.label(), j % n)
    }

    /// `V' V`, the matrix of all column cross-products.
    pub fn cross(&self) -> DMatrix<T> {
        self.v.tr_mul(&self.v)
    }

    /// `Z_{t-1} beta` for every response period (`T_eff x N`).
    pub fn fitted(&self, beta_free: &DVector<T>) -> DMatrix<T> {
        let n = self.n();
        let mut out = DMatrix::zeros(self.t_eff(), n);
        for f in 0..self.m_free() {
            for i in 0..n {
                let c = beta_free[f * n + i];
                if c != T::zero() {
                    out.column_mut(i).axpy(c, &self.v.column(f * n + i), T::one());
                }
            }
        }
        out
    }

    /// Penalty weight per free coordinate.
    pub fn penalty_diagonal(&self, lambdas: (f64, f64, f64)) -> DVector<T> {
        let n = self.n();
        DVector::from_fn(self.n_free(), |j, _| {
            T::of(match self.layout.block_kind(self.free_blocks[j / n]) {
                CoefKind::A { .. } => lambdas.0,
                CoefKind::B { .. } => lambdas.1,
                CoefKind::Gamma { .. } => lambdas.2,
            })
        })
    }
}

/// `C o (1 1' (x) S)`: entry `(f N + i, g N + k)` is `C[..] * S[i, k]`.
pub(crate) fn tile_hadamard<T: Scalar>(c: &DMatrix<T>, s: &DMatrix<T>) -> DMatrix<T> {
    let n = s.nrows();
    DMatrix::from_fn(c.nrows(), c.ncols(), |r, col| c[(r, col)] * s[(r % n, col % n)])
}
