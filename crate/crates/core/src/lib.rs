//! Synthetic sound-field datasets with object silhouettes, and joint
//! frequency-domain denoising and silhouette segmentation.

// `!(x > 0.0)` is used on purpose so NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod acoustics;
pub mod error;
pub mod field;
pub mod filters;
pub mod geometry;
pub mod metrics;
pub mod model;
pub mod noise;
pub mod pipeline;
pub mod rng;
pub mod spectral;
pub mod tensor;

pub use error::{Error, Result};
pub use field::{FieldVideo, SilhouetteMask, SpectralImage};
pub use rng::Rng;
