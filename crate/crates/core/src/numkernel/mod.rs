//! Dense linear algebra kernels and proximal operators.

mod matrix;
mod prox;
mod svd;

pub use matrix::{dot, fmt_real, norm2, Matrix};
pub(crate) use matrix::parse_reals;
pub use prox::{fro_norm, l1_norm, nuclear_norm, numerical_rank, rank_of, shrink, soft_threshold, svt};
pub(crate) use prox::svt_warm;
pub use svd::{svd, svd_warm, Svd, JACOBI_TOL, MAX_SWEEPS};

#[cfg(test)]
pub(crate) mod test_util;
