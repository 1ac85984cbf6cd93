use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::weights::validate_weights;
use crate::error::{NarError, Result};
use crate::scalar::Scalar;

/// Dimensions of a NAR(q1, q2) model with `p` covariates on `n` nodes.
///
/// The stacked coefficient vector has `m = 2q + p` blocks of length `n`
/// (`q = max(q1, q2)`): for each lag `l = 1..q` an `a` block followed by a
/// `b` block, then one block per covariate. Blocks for `a` lags beyond `q1`
/// and `b` lags beyond `q2` are padding and are identically zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoefLayout {
    pub n: usize,
    pub q1: usize,
    pub q2: usize,
    pub p: usize,
}

/// Role of a coefficient block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoefKind {
    /// Self-lag coefficient for the given lag (1-based).
    A { lag: usize },
    /// Network-lag coefficient for the given lag (1-based).
    B { lag: usize },
    /// Covariate coefficient for the given covariate (0-based).
    Gamma { covariate: usize },
}

impl CoefKind {
    pub fn label(&self) -> String {
        match self {
            CoefKind::A { lag } => format!("a lag {lag}"),
            CoefKind::B { lag } => format!("b lag {lag}"),
            CoefKind::Gamma { covariate } => format!("gamma covariate {covariate}"),
        }
    }
}

impl CoefLayout {
    pub fn new(n: usize, q1: usize, q2: usize, p: usize) -> Result<Self> {
        if n == 0 {
            return Err(NarError::InvalidParameter("n must be positive".into()));
        }
        if q1.max(q2) == 0 {
            return Err(NarError::InvalidParameter(
                "at least one of q1, q2 must be positive".into(),
            ));
        }
        Ok(Self { n, q1, q2, p })
    }

    #[inline]
    pub fn q(&self) -> usize {
        self.q1.max(self.q2)
    }

    /// Number of coefficient blocks, `2q + p`.
    #[inline]
    pub fn n_blocks(&self) -> usize {
        2 * self.q() + self.p
    }

    /// Length of the padded coefficient vector, `2Nq + Np`.
    #[inline]
    pub fn len(&self) -> usize {
        self.n * self.n_blocks()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn block_kind(&self, block: usize) -> CoefKind {
        let two_q = 2 * self.q();
        if block < two_q {
            let lag = block / 2 + 1;
            if block % 2 == 0 {
                CoefKind::A { lag }
            } else {
                CoefKind::B { lag }
            }
        } else {
            CoefKind::Gamma {
                covariate: block - two_q,
            }
        }
    }

    pub fn block_is_free(&self, block: usize) -> bool {
        match self.block_kind(block) {
            CoefKind::A { lag } => lag <= self.q1,
            CoefKind::B { lag } => lag <= self.q2,
            CoefKind::Gamma { .. } => true,
        }
    }

    /// Blocks that are estimated (padding excluded), in layout order.
    pub fn free_blocks(&self) -> Vec<usize> {
        (0..self.n_blocks()).filter(|&b| self.block_is_free(b)).collect()
    }

    pub fn n_free(&self) -> usize {
        self.free_blocks().len() * self.n
    }

    /// Indices of the free coefficients in the padded vector.
    pub fn free_indices(&self) -> Vec<usize> {
        self.free_blocks()
            .into_iter()
            .flat_map(|b| (b * self.n)..((b + 1) * self.n))
            .collect()
    }

    #[inline]
    pub fn index_a(&self, lag: usize, node: usize) -> usize {
        (lag - 1) * 2 * self.n + node
    }

    #[inline]
    pub fn index_b(&self, lag: usize, node: usize) -> usize {
        (lag - 1) * 2 * self.n + self.n + node
    }

    #[inline]
    pub fn index_gamma(&self, covariate: usize, node: usize) -> usize {
        (2 * self.q() + covariate) * self.n + node
    }

    /// `(kind, node)` of a padded-vector index.
    pub fn describe(&self, index: usize) -> (CoefKind, usize) {
        (self.block_kind(index / self.n), index % self.n)
    }

    /// Scatters free-coordinate values into a zero-padded full vector.
    pub fn expand<T: Scalar>(&self, free: &DVector<T>) -> DVector<T> {
        let mut full = DVector::zeros(self.len());
        for (k, idx) in self.free_indices().into_iter().enumerate() {
            full[idx] = free[k];
        }
        full
    }

    /// Gathers the free coordinates of a full vector.
    pub fn restrict<T: Scalar>(&self, full: &DVector<T>) -> DVector<T> {
        DVector::from_iterator(
            self.n_free(),
            self.free_indices().into_iter().map(|i| full[i]),
        )
    }
}

/// Stacked coefficient vector with its layout. Padding positions are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefVector<T: Scalar> {
    layout: CoefLayout,
    values: DVector<T>,
}

impl<T: Scalar> CoefVector<T> {
    pub fn new(layout: CoefLayout, values: DVector<T>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(NarError::Dimension(format!(
                "coefficient vector has length {}, layout expects {}",
                values.len(),
                layout.len()
            )));
        }
        for b in 0..layout.n_blocks() {
            if !layout.block_is_free(b)
                && values.rows(b * layout.n, layout.n).iter().any(|v| *v != T::zero())
            {
                return Err(NarError::InvalidParameter(format!(
                    "padding block {} must be zero",
                    layout.block_kind(b).label()
                )));
            }
        }
        Ok(Self { layout, values })
    }

    pub fn zeros(layout: CoefLayout) -> Self {
        Self {
            layout,
            values: DVector::zeros(layout.len()),
        }
    }

    pub fn layout(&self) -> CoefLayout {
        self.layout
    }

    pub fn values(&self) -> &DVector<T> {
        &self.values
    }

    pub fn into_values(self) -> DVector<T> {
        self.values
    }

    pub fn a(&self, lag: usize, node: usize) -> T {
        self.values[self.layout.index_a(lag, node)]
    }

    pub fn b(&self, lag: usize, node: usize) -> T {
        self.values[self.layout.index_b(lag, node)]
    }

    pub fn gamma(&self, covariate: usize, node: usize) -> T {
        self.values[self.layout.index_gamma(covariate, node)]
    }

    /// Rebuilds the model parameterization (inverse of [`NarSpec::flatten`]).
    pub fn to_spec(&self, w: &DMatrix<T>) -> Result<NarSpec<T>> {
        let l = self.layout;
        let a = (1..=l.q1)
            .map(|lag| DVector::from_fn(l.n, |i, _| self.a(lag, i)))
            .collect();
        let b = (1..=l.q2)
            .map(|lag| DVector::from_fn(l.n, |i, _| self.b(lag, i)))
            .collect();
        let gamma = DMatrix::from_fn(l.n, l.p, |i, k| self.gamma(k, i));
        NarSpec::new(a, b, gamma, w.clone())
    }
}

/// Full NAR(q1, q2) parameterization with node-specific coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct NarSpec<T: Scalar> {
    layout: CoefLayout,
    a: Vec<DVector<T>>,
    b: Vec<DVector<T>>,
    gamma: DMatrix<T>,
    w: DMatrix<T>,
}

impl<T: Scalar> NarSpec<T> {
    /// `a[l]` and `b[l]` hold the lag-`l+1` coefficients of every node,
    /// `gamma` is `N x p` and `w` the row-normalized weight matrix.
    pub fn new(
        a: Vec<DVector<T>>,
        b: Vec<DVector<T>>,
        gamma: DMatrix<T>,
        w: DMatrix<T>,
    ) -> Result<Self> {
        let n = w.nrows();
        let layout = CoefLayout::new(n, a.len(), b.len(), gamma.ncols())?;
        let w = validate_weights(&w)?;
        for (name, vs) in [("a", &a), ("b", &b)] {
            if let Some(v) = vs.iter().find(|v| v.len() != n) {
                return Err(NarError::Dimension(format!(
                    "{name} lag vector has length {}, expected {n}",
                    v.len()
                )));
            }
        }
        if gamma.nrows() != n {
            return Err(NarError::Dimension(format!(
                "gamma has {} rows, expected {n}",
                gamma.nrows()
            )));
        }
        Ok(Self {
            layout,
            a,
            b,
            gamma,
            w,
        })
    }

    /// Homogeneous-by-lag helper: `a[l]` / `b[l]` are broadcast over all nodes.
    pub fn homogeneous(a: &[f64], b: &[f64], gamma: &[f64], w: DMatrix<T>) -> Result<Self> {
        let n = w.nrows();
        NarSpec::new(
            a.iter().map(|&v| DVector::from_element(n, T::of(v))).collect(),
            b.iter().map(|&v| DVector::from_element(n, T::of(v))).collect(),
            DMatrix::from_fn(n, gamma.len(), |_, k| T::of(gamma[k])),
            w,
        )
    }

    pub fn layout(&self) -> CoefLayout {
        self.layout
    }

    pub fn n_nodes(&self) -> usize {
        self.layout.n
    }

    pub fn q1(&self) -> usize {
        self.layout.q1
    }

    pub fn q2(&self) -> usize {
        self.layout.q2
    }

    pub fn n_covariates(&self) -> usize {
        self.layout.p
    }

    pub fn a(&self) -> &[DVector<T>] {
        &self.a
    }

    pub fn b(&self) -> &[DVector<T>] {
        &self.b
    }

    pub fn gamma(&self) -> &DMatrix<T> {
        &self.gamma
    }

    pub fn weights(&self) -> &DMatrix<T> {
        &self.w
    }

    /// Self-lag coefficients of lag `lag` (1-based), zero past `q1`.
    pub fn a_lag(&self, lag: usize) -> DVector<T> {
        self.a
            .get(lag - 1)
            .cloned()
            .unwrap_or_else(|| DVector::zeros(self.layout.n))
    }

    /// Network-lag coefficients of lag `lag` (1-based), zero past `q2`.
    pub fn b_lag(&self, lag: usize) -> DVector<T> {
        self.b
            .get(lag - 1)
            .cloned()
            .unwrap_or_else(|| DVector::zeros(self.layout.n))
    }

    /// `G_l = diag(a_l) + diag(b_l) W`.
    pub fn transition(&self, lag: usize) -> DMatrix<T> {
        let a = self.a_lag(lag);
        let b = self.b_lag(lag);
        let mut g = self.w.clone();
        for i in 0..self.layout.n {
            g.row_mut(i).scale_mut(b[i]);
            g[(i, i)] += a[i];
        }
        g
    }

    /// Stacks the coefficients into the padded layout.
    pub fn flatten(&self) -> CoefVector<T> {
        let l = self.layout;
        let mut v = DVector::zeros(l.len());
        for (lag0, a) in self.a.iter().enumerate() {
            v.rows_mut(l.index_a(lag0 + 1, 0), l.n).copy_from(a);
        }
        for (lag0, b) in self.b.iter().enumerate() {
            v.rows_mut(l.index_b(lag0 + 1, 0), l.n).copy_from(b);
        }
        for k in 0..l.p {
            v.rows_mut(l.index_gamma(k, 0), l.n)
                .copy_from(&self.gamma.column(k));
        }
        CoefVector { layout: l, values: v }
    }
}
