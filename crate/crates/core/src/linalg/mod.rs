//! Dense linear algebra: the row-major matrix type and Jacobi decompositions.

mod matrix;
mod svd;

pub use matrix::DenseMatrix;
pub use svd::{singular_values, svd, symmetric_eigenvalues, Svd, MAX_SWEEPS, ROTATION_TOL};

pub(crate) use matrix::dot;
