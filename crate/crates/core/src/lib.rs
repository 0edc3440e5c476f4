//! Volumetric R2* classification with relevance-guided training and
//! concept-level explanation mapping.
//!
//! The crate covers the full desk-scale pipeline: mono-exponential R2*
//! fitting from multi-echo magnitude data, synthetic phantom cohorts with
//! planted group effects, a small 3-D CNN trained with a relevance-guided
//! loss, z+ relevance/concept propagation, and the nonparametric ROI
//! statistics used to compare the two.

pub mod error;
pub mod kernels;
pub mod tape;
pub mod tensor;

pub use error::{CoreError, Result};
pub use tensor::Tensor;
