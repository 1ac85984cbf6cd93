use std::io::{Read, Write};

use nalgebra::DMatrix;

use crate::error::{NarError, Result};
use crate::scalar::Scalar;

/// Tolerance on `|row sum - 1|` for a row-normalized weight matrix.
pub const ROW_SUM_TOL: f64 = 1e-10;

/// Checks that `w` is square, nonnegative and row-normalized. The diagonal is
/// set to zero first: self-weight is absorbed by the autoregressive term.
pub fn validate_weights<T: Scalar>(w: &DMatrix<T>) -> Result<DMatrix<T>> {
    if !w.is_square() {
        return Err(NarError::InvalidWeights(format!(
            "weight matrix must be square, got {}x{}",
            w.nrows(),
            w.ncols()
        )));
    }
    let mut w = w.clone();
    w.fill_diagonal(T::zero());
    for i in 0..w.nrows() {
        let mut sum = T::zero();
        for j in 0..w.ncols() {
            let v = w[(i, j)];
            if !v.is_finite() || v < T::zero() {
                return Err(NarError::InvalidWeights(format!(
                    "entry ({i}, {j}) = {v} is negative or not finite"
                )));
            }
            sum += v;
        }
        if (sum - T::one()).abs() > T::of(ROW_SUM_TOL).max(T::default_epsilon() * T::of(16.0)) {
            return Err(NarError::InvalidWeights(format!(
                "row {i} sums to {sum}, expected 1"
            )));
        }
    }
    Ok(w)
}

/// Rescales every row to sum to one. Never applied implicitly.
pub fn renormalize<T: Scalar>(w: &DMatrix<T>) -> Result<DMatrix<T>> {
    let mut out = w.clone();
    out.fill_diagonal(T::zero());
    for i in 0..out.nrows() {
        let sum = out.row(i).sum();
        if sum <= T::zero() {
            return Err(NarError::InvalidWeights(format!("row {i} has no positive weight")));
        }
        out.row_mut(i).unscale_mut(sum);
    }
    Ok(out)
}

/// Row-normalized band matrix: `w_ij = 1` for `0 < |i - j| <= width`.
pub fn banded_weights<T: Scalar>(n: usize, width: usize) -> Result<DMatrix<T>> {
    if n < 2 || width == 0 {
        return Err(NarError::InvalidParameter(format!(
            "banded weights need n >= 2 and width >= 1 (n={n}, width={width})"
        )));
    }
    let raw = DMatrix::from_fn(n, n, |i, j| {
        let d = i.abs_diff(j);
        if d > 0 && d <= width {
            T::one()
        } else {
            T::zero()
        }
    });
    renormalize(&raw)
}

/// Reads a dense matrix from CSV: one row per line, comma separated, no header.
pub fn read_matrix_csv<R: Read>(reader: R) -> Result<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|e| NarError::Data(format!("row {}: cannot parse {s:?}: {e}", line + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(NarError::Data("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

/// Writes a dense matrix as header-less CSV with round-trip float formatting.
pub fn write_matrix_csv<W: Write>(mut writer: W, m: &DMatrix<f64>) -> Result<()> {
    for i in 0..m.nrows() {
        let line = (0..m.ncols())
            .map(|j| format!("{}", m[(i, j)]))
            .collect::<Vec<_>>()
            .join(",");
        writeln!(writer, "{line}")?;
    }
    Ok(())
}
