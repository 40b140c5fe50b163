//! Low-rank latent subspaces of differentiable generators.
//!
//! The pipeline: take the Jacobian of a generator at a latent code, form the
//! Gram matrix of the rows inside a region, split it into low-rank plus
//! sparse parts with principal component pursuit, and read editing
//! directions off the singular vectors of the low-rank part. Directions for
//! one region are made local by projecting out the attribute span of the
//! complementary region.

pub mod error;
pub mod genzoo;
pub mod harness;
pub mod numkernel;
pub mod rng;
pub mod rpca;
pub mod subspace;

pub use error::{Error, Result};
pub use numkernel::Matrix;
