//! Model parameterization: coefficient layout, weight matrices, the stacked
//! design matrix and the companion form used for stability analysis.

mod companion;
mod design;
mod spec;
mod weights;

pub use companion::{
    build_companion, is_stable, spectral_radius, sufficient_condition, CompanionForm, Stability,
    DENSE_EIGEN_LIMIT,
};
pub use design::{build_design, DesignMatrix};
pub use spec::{CoefKind, CoefLayout, CoefVector, NarSpec};
pub use weights::{
    banded_weights, read_matrix_csv, renormalize, validate_weights, write_matrix_csv,
    ROW_SUM_TOL,
};
