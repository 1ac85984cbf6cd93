use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::scalar::Scalar;

/// Cholesky factorization that reports the first pivot whose remaining
/// variance falls below `rel_tol` times its diagonal entry.
pub(crate) fn cholesky_checked<T: Scalar>(
    g: &DMatrix<T>,
    rel_tol: T,
) -> std::result::Result<Cholesky<T, Dyn>, usize> {
    if let Some(c) = g.clone().cholesky() {
        let l = c.l_dirty();
        let n = g.nrows();
        if (0..n).all(|j| l[(j, j)] * l[(j, j)] > rel_tol * g[(j, j)].abs()) {
            return Ok(c);
        }
    }
    locate_pivot(g, rel_tol)
}

/// Unblocked factorization used to name the failing pivot.
fn locate_pivot<T: Scalar>(
    g: &DMatrix<T>,
    rel_tol: T,
) -> std::result::Result<Cholesky<T, Dyn>, usize> {
    let n = g.nrows();
    let mut l = g.clone();
    for j in 0..n {
        let mut d = l[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        let scale = g[(j, j)].abs();
        if !(d > rel_tol * scale) || !(scale > T::zero()) {
            return Err(j);
        }
        let root = d.sqrt();
        l[(j, j)] = root;
        for i in (j + 1)..n {
            let mut s = l[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / root;
        }
    }
    for j in 0..n {
        for i in 0..j {
            l[(i, j)] = T::zero();
        }
    }
    Ok(Cholesky::pack_dirty(l))
}

pub(crate) fn symmetrize<T: Scalar>(m: &mut DMatrix<T>) {
    let half = T::of(0.5);
    for j in 0..m.ncols() {
        for i in 0..j {
            let v = (m[(i, j)] + m[(j, i)]) * half;
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}
