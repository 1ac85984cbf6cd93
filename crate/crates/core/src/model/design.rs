use nalgebra::{DMatrix, DVector};

use crate::error::{NarError, Result};
use crate::scalar::Scalar;

/// `Z_{t-1} = [diag(X_{t-1}), diag(W X_{t-1}), .., diag(X_{t-q}), diag(W X_{t-q}), diag(Y_1), .., diag(Y_p)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix<T: Scalar> {
    pub z: DMatrix<T>,
}

/// Dense design matrix for one time step. `x_history[0]` is `X_{t-1}`,
/// `x_history[l-1]` is `X_{t-l}`; `y_prev` holds `Y_{t-1}` as an `N x p` matrix.
///
/// Intended for inspection and small problems; the estimators never
/// materialize it.
pub fn build_design<T: Scalar>(
    x_history: &[DVector<T>],
    y_prev: &DMatrix<T>,
    w: &DMatrix<T>,
) -> Result<DesignMatrix<T>> {
    let n = w.nrows();
    let q = x_history.len();
    if q == 0 {
        return Err(NarError::InsufficientHistory { needed: 1, got: 0 });
    }
    if w.ncols() != n || y_prev.nrows() != n || x_history.iter().any(|x| x.len() != n) {
        return Err(NarError::Dimension(
            "history, covariates and weights must share the node dimension".into(),
        ));
    }
    let p = y_prev.ncols();
    let mut z = DMatrix::zeros(n, n * (2 * q + p));
    for (l, x) in x_history.iter().enumerate() {
        let wx = w * x;
        for i in 0..n {
            z[(i, 2 * l * n + i)] = x[i];
            z[(i, (2 * l + 1) * n + i)] = wx[i];
        }
    }
    for k in 0..p {
        for i in 0..n {
            z[(i, (2 * q + k) * n + i)] = y_prev[(i, k)];
        }
    }
    Ok(DesignMatrix { z })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    #[test]
    fn hand_expanded_two_nodes() {
        let w = dmatrix![0.0, 1.0; 1.0, 0.0];
        let d = build_design(&[dvector![1.0, 2.0]], &DMatrix::zeros(2, 0), &w).unwrap();
        assert_eq!(d.z, dmatrix![1.0, 0.0, 2.0, 0.0; 0.0, 2.0, 0.0, 1.0]);
    }

    #[test]
    fn zero_inputs_give_zero_matrix() {
        let w = crate::model::banded_weights::<f64>(4, 1).unwrap();
        let d = build_design(&[DVector::zeros(4), DVector::zeros(4)], &DMatrix::zeros(4, 3), &w)
            .unwrap();
        assert_eq!(d.z.shape(), (4, 4 * 7));
        assert!(d.z.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn one_nonzero_per_row_in_each_half() {
        let w = crate::model::banded_weights::<f64>(5, 2).unwrap();
        let x = DVector::from_fn(5, |i, _| 1.0 + i as f64);
        let d = build_design(&[x], &DMatrix::from_element(5, 1, 3.0), &w).unwrap();
        for half in 0..3 {
            for i in 0..5 {
                let nz = (0..5).filter(|&j| d.z[(i, half * 5 + j)] != 0.0).count();
                assert_eq!(nz, 1);
                assert!(d.z[(i, half * 5 + i)] != 0.0);
            }
        }
    }

    #[test]
    fn empty_history_is_an_error() {
        let w = dmatrix![0.0, 1.0; 1.0, 0.0];
        assert!(matches!(
            build_design::<f64>(&[], &DMatrix::zeros(2, 0), &w),
            Err(NarError::InsufficientHistory { .. })
        ));
    }
}
