//! Sensitivity-analysis toolkit for designed simulation experiments.
//!
//! - [`design`]: regular three-level fractional factorial designs over GF(3)
//! - [`tensor`]: run x time x pixel outcome tensors, aggregation and persistence
//! - [`anova`]: saturated ANOVA sensitivity indexes (scalar, dynamic, spatial)
//! - [`mvsa`]: PCA-based multivariate sensitivity
//! - [`cluster`]: k-means, Ward linkage, partition comparison and synthesis

pub mod anova;
pub mod cluster;
pub mod design;
pub mod error;
pub mod factors;
pub mod mvsa;
pub mod tensor;

pub use error::{Error, Result};
