use nalgebra::{DMatrix, DVector};

use crate::error::{NarError, Result};
use crate::scalar::Scalar;

/// Observed panel: responses `x` (`T x N`, one row per time point) and `p`
/// covariate matrices of the same shape.
///
/// Row `t` of `x` is explained by lags of `x` and by row `t - 1` of each
/// covariate.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel<T: Scalar> {
    pub x: DMatrix<T>,
    pub y: Vec<DMatrix<T>>,
}

impl<T: Scalar> Panel<T> {
    pub fn new(x: DMatrix<T>, y: Vec<DMatrix<T>>) -> Result<Self> {
        if let Some(m) = y.iter().find(|m| m.shape() != x.shape()) {
            return Err(NarError::Dimension(format!(
                "covariate is {}x{}, responses are {}x{}",
                m.nrows(),
                m.ncols(),
                x.nrows(),
                x.ncols()
            )));
        }
        if x.iter().chain(y.iter().flat_map(|m| m.iter())).any(|v| !v.is_finite()) {
            return Err(NarError::Data("panel contains non-finite values".into()));
        }
        Ok(Self { x, y })
    }

    /// Panel without covariates.
    pub fn from_x(x: DMatrix<T>) -> Result<Self> {
        Self::new(x, Vec::new())
    }

    pub fn n_nodes(&self) -> usize {
        self.x.ncols()
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn n_covariates(&self) -> usize {
        self.y.len()
    }

    /// Observation at time `t` as a column vector.
    pub fn x_at(&self, t: usize) -> DVector<T> {
        self.x.row(t).transpose()
    }

    /// Covariates at time `t` as an `N x p` matrix.
    pub fn y_at(&self, t: usize) -> DMatrix<T> {
        let n = self.n_nodes();
        DMatrix::from_fn(n, self.y.len(), |i, k| self.y[k][(t, i)])
    }

    /// Rows `start..end`.
    pub fn window(&self, start: usize, end: usize) -> Result<Self> {
        if start > end || end > self.len() {
            return Err(NarError::Dimension(format!(
                "window {start}..{end} outside 0..{}",
                self.len()
            )));
        }
        Ok(Self {
            x: self.x.rows(start, end - start).into_owned(),
            y: self.y.iter().map(|m| m.rows(start, end - start).into_owned()).collect(),
        })
    }

    /// Converts to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Panel<U> {
        let conv = |m: &DMatrix<T>| m.map(|v| U::of(v.as_f64()));
        Panel {
            x: conv(&self.x),
            y: self.y.iter().map(conv).collect(),
        }
    }
}
