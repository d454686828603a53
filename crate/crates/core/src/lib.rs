//! Robust high-dimensional linear learning.
//!
//! The crate combines two multistage first-order solvers, mirror descent
//! ([`solvers::ammd`]) and dual averaging ([`solvers::amda`]), with robust
//! gradient estimators ([`estimators`]) so that sparse, group-sparse and
//! low-rank linear models can be fitted on heavy-tailed and partially
//! corrupted data.
//!
//! Parameters are stored as dense matrices ([`Param`]): a `d x 1` column for
//! vanilla sparsity, a `d x K` matrix whose rows are the groups for group
//! sparsity, and a `p x q` matrix for low-rank recovery. Covariates are the
//! column-major flattening of the same shape, so `<theta, x>` is the
//! Frobenius inner product.

pub mod bench;
pub mod datagen;
pub mod error;
pub mod estimators;
pub mod geometry;
pub mod model;
pub mod solvers;

pub use error::{Error, Result};

/// Parameter (and dual/gradient) storage shared by every geometry.
pub type Param = nalgebra::DMatrix<f64>;
