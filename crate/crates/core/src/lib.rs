//! Blind Tweedie denoising: identify the noise family and level of an image
//! from its score field alone, then apply the matching posterior-mean
//! correction.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimation;
pub mod image;
pub mod noise;
pub mod pipeline;
pub mod quadrature;
pub mod rng;
pub mod score;
pub mod tweedie;

pub use error::{Error, Result};
pub use image::{ImageTensor, INTENSITY_FLOOR};
pub use noise::{GmmPrior, NoiseRange};
pub use score::{ScoreBackend, ScoreField, ScoreRegistry};
pub use tweedie::{NoiseKind, NoiseModel, TweedieParams};
