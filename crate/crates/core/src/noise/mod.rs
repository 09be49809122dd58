//! Synthetic data: clean-image priors, noise injection and image metrics.

mod metrics;
mod prior;
mod sample;
mod synth;

pub use metrics::{mse, psnr};
pub use prior::{GmmComponent, GmmPrior};
pub use sample::{sample_gamma, sample_noisy, sample_noisy_counted, sample_poisson, NoiseRange};
pub use synth::{gen_clean, SynthKind, SynthSpec};
