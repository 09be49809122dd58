//! Noise injection and the scalar samplers behind it.
//!
//! Sampler choices are fixed per build so a seed reproduces the same image:
//!
//! * Poisson, mean < 30: inversion by sequential search of the CDF.
//! * Poisson, mean >= 30: Hörmann's PTRS transformed rejection with squeeze
//!   (constants `b = 0.931 + 2.53 sqrt(lam)`, `a = -0.059 + 0.02483 b`,
//!   `1/alpha = 1.1239 + 1.1328 / (b - 3.4)`, `v_r = 0.9277 - 3.6224 / (b - 2)`).
//! * Gamma, shape >= 1: Marsaglia-Tsang squeeze/rejection. With
//!   `d = shape - 1/3`, `c = 1 / sqrt(9 d)`: draw `z ~ N(0,1)`, `v = (1 + c z)^3`;
//!   reject `v <= 0`; accept `d v` if `u < 1 - 0.0331 z^4` or
//!   `ln u < z^2 / 2 + d (1 - v + ln v)`. Shape < 1 boosts with `u^(1/shape)`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{domain, Error, Result};
use crate::image::ImageTensor;
use crate::rng::{domain as stream_domain, stream};
use crate::tweedie::{NoiseKind, NoiseModel};

const POISSON_INVERSION_LIMIT: f64 = 30.0;

pub fn sample_poisson<R: Rng + ?Sized>(rng: &mut R, lam: f64) -> u64 {
    if lam <= 0.0 {
        return 0;
    }
    if lam < POISSON_INVERSION_LIMIT {
        let u: f64 = rng.random();
        let mut k = 0u64;
        let mut p = (-lam).exp();
        let mut cdf = p;
        while u > cdf {
            k += 1;
            p *= lam / k as f64;
            cdf += p;
            if p < f64::MIN_POSITIVE && k as f64 > lam {
                break;
            }
        }
        return k;
    }
    let slam = lam.sqrt();
    let loglam = lam.ln();
    let b = 0.931 + 2.53 * slam;
    let a = -0.059 + 0.02483 * b;
    let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    let vr = 0.9277 - 3.6224 / (b - 2.0);
    loop {
        let u: f64 = rng.random::<f64>() - 0.5;
        let v: f64 = rng.random();
        let us = 0.5 - u.abs();
        let k = ((2.0 * a / us + b) * u + lam + 0.43).floor();
        if us >= 0.07 && v <= vr {
            return k as u64;
        }
        if k < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        if v.ln() + inv_alpha.ln() - (a / (us * us) + b).ln() <= -lam + k * loglam - ln_gamma(k + 1.0) {
            return k as u64;
        }
    }
}

/// Gamma variate with the given shape and unit scale.
pub fn sample_gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64) -> f64 {
    if shape < 1.0 {
        let g = sample_gamma(rng, shape + 1.0);
        let u: f64 = rng.random();
        return g * u.powf(1.0 / shape);
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let z: f64 = rng.sample(StandardNormal);
        let t = 1.0 + c * z;
        if t <= 0.0 {
            continue;
        }
        let v = t * t * t;
        let u: f64 = rng.random();
        if u < 1.0 - 0.0331 * z * z * z * z {
            return d * v;
        }
        if u.ln() < 0.5 * z * z + d * (1.0 - v + v.ln()) {
            return d * v;
        }
    }
}

/// Draws a noisy observation of `x` under `model`, one independent stream per
/// pixel. Returns the image (clamped to the intensity floor) and the number of
/// clamped pixels.
pub fn sample_noisy_counted(x: &ImageTensor, model: NoiseModel, seed: u64) -> Result<(ImageTensor, usize)> {
    if !(model.level > 0.0) {
        return Err(domain(format!("noise level must be positive, got {}", model.level)));
    }
    let level = model.level;
    let data = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, &xi)| {
            let mut rng = stream(seed, stream_domain::NOISE, i as u64);
            match model.kind {
                NoiseKind::Gaussian => {
                    let n: f64 = rng.sample(StandardNormal);
                    Ok(xi + level.sqrt() * n)
                }
                NoiseKind::Poisson => Ok(level * sample_poisson(&mut rng, xi.max(0.0) / level) as f64),
                NoiseKind::Gamma => Ok(xi * sample_gamma(&mut rng, level) / level),
                NoiseKind::InverseGaussian => Err(Error::Invalid("inverse Gaussian sampling is not supported".into())),
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    let (img, clamped) = ImageTensor::new(x.height(), x.width(), data)?.clamp_floor();
    Ok((img, clamped))
}

pub fn sample_noisy(x: &ImageTensor, model: NoiseModel, seed: u64) -> Result<ImageTensor> {
    Ok(sample_noisy_counted(x, model, seed)?.0)
}

/// Interval of noise levels for one family, in unit-intensity scale.
///
/// Gaussian bounds are standard deviations sigma (not variances); Poisson
/// bounds are zeta; Gamma bounds are k.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseRange {
    pub kind: NoiseKind,
    pub lo: f64,
    pub hi: f64,
}

impl NoiseRange {
    pub fn new(kind: NoiseKind, lo: f64, hi: f64) -> Result<Self> {
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::Invalid(format!("invalid {kind} range [{lo}, {hi}]")));
        }
        if kind == NoiseKind::Gamma && lo <= 1.0 {
            return Err(Error::Invalid(format!("Gamma k range must exceed 1, got [{lo}, {hi}]")));
        }
        Ok(Self { kind, lo, hi })
    }

    /// Training ranges: sigma in [5, 55]/255, zeta in [0.005, 0.1], k in [40, 120].
    pub fn default_for(kind: NoiseKind) -> Result<Self> {
        match kind {
            NoiseKind::Gaussian => Self::new(kind, 5.0 / 255.0, 55.0 / 255.0),
            NoiseKind::Poisson => Self::new(kind, 0.005, 0.1),
            NoiseKind::Gamma => Self::new(kind, 40.0, 120.0),
            NoiseKind::InverseGaussian => Err(Error::Invalid("no default inverse Gaussian range".into())),
        }
    }

    /// Noise model for the range value at fraction `t` in [0, 1].
    pub fn model_at(&self, t: f64) -> Result<NoiseModel> {
        let v = self.lo + (self.hi - self.lo) * t.clamp(0.0, 1.0);
        match self.kind {
            NoiseKind::Gaussian => NoiseModel::gaussian_sigma(v),
            kind => NoiseModel::new(kind, v),
        }
    }
}
