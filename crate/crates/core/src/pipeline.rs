//! End-to-end denoising: blind (family and level estimated from the score
//! field) and known-model paths, plus a brute-force posterior mean for
//! checking both.

use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimation::{
    estimate_level, model_label, perturb, EstimationConfig, LevelEstimate, ModelEstimate, PerturbationPair, PixelSet,
    RhoEstimator,
};
use crate::image::{ImageTensor, INTENSITY_FLOOR};
use crate::noise::GmmPrior;
use crate::quadrature::GaussLegendre;
use crate::rng::{derive_seed, domain};
use crate::score::{ScoreBackend, ScoreField};
use crate::tweedie::{denoise_special, BatchEstimate, NoiseKind, NoiseModel};

/// Wall-clock stage timings in milliseconds. Kept out of serialized reports
/// so that reruns produce identical files.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Timings {
    pub perturb_ms: f64,
    pub score_ms: f64,
    pub estimate_ms: f64,
    pub apply_ms: f64,
}

fn elapsed_ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Everything the blind estimate produced for one image.
#[derive(Debug, Clone)]
pub struct BlindEstimate {
    pub pair: PerturbationPair,
    pub s1: ScoreField,
    pub s2: ScoreField,
    pub model: ModelEstimate,
    /// Present when the family was identified and its level estimated.
    pub level: Option<LevelEstimate>,
    pub timings: Timings,
}

/// Perturbs `y`, scores both copies, and estimates the family and, when the
/// family is known, its level. An unknown family is not an error here.
pub fn estimate_blind(
    y: &ImageTensor,
    backend: &dyn ScoreBackend,
    rho: &dyn RhoEstimator,
    config: &EstimationConfig,
    seed: u64,
) -> Result<BlindEstimate> {
    config.validate()?;
    let mut timings = Timings::default();
    let t = Instant::now();
    let pair = perturb(y, config.epsilon, seed)?;
    timings.perturb_ms = elapsed_ms(t);

    let t = Instant::now();
    let s1 = backend.score(&pair.y1)?;
    let s2 = backend.score(&pair.y2)?;
    timings.score_ms = elapsed_ms(t);

    let t = Instant::now();
    let pixels = PixelSet::from_pair(&pair, &s1, &s2)?;
    let model = rho.estimate(&pixels)?;
    let level = match model.model {
        Some(kind) => Some(estimate_level(kind, &pixels, config.quorum)?),
        None => None,
    };
    timings.estimate_ms = elapsed_ms(t);
    Ok(BlindEstimate { pair, s1, s2, model, level, timings })
}

/// Per-image summary of a denoising run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DenoiseReport {
    pub rho_hat: Option<f64>,
    pub model: Option<String>,
    pub level: Option<f64>,
    pub mask_fraction: Option<f64>,
    pub valid_pixels: Option<usize>,
    pub singular_pixels: usize,
    pub score_evaluations: usize,
    pub backend: String,
    pub strategy: Option<String>,
    pub seed: u64,
    #[serde(skip)]
    pub timings: Timings,
}

/// Table-2 correction for a known model, clamped to `[floor, 1]`.
pub fn apply_known(y: &ImageTensor, model: NoiseModel, scores: &[f64]) -> Result<BatchEstimate> {
    let est = denoise_special(y, model, scores)?;
    let image = est.image.map(|v| v.clamp(INTENSITY_FLOOR, 1.0))?;
    Ok(BatchEstimate { image, singular_pixels: est.singular_pixels })
}

/// Blind denoising: two score evaluations, family and level estimation, then
/// the closed-form correction for the identified family.
pub fn denoise_blind(
    y: &ImageTensor,
    backend: &dyn ScoreBackend,
    rho: &dyn RhoEstimator,
    config: &EstimationConfig,
    seed: u64,
) -> Result<(ImageTensor, DenoiseReport)> {
    let mut est = estimate_blind(y, backend, rho, config, seed)?;
    let Some(level) = est.level else {
        return Err(Error::EstimationFailure(format!(
            "rho_hat = {} matches no supported noise family",
            est.model.rho_hat
        )));
    };
    let t = Instant::now();
    let out = apply_known(&est.pair.y1, level.model()?, est.s1.values())?;
    est.timings.apply_ms = elapsed_ms(t);
    let report = DenoiseReport {
        rho_hat: Some(est.model.rho_hat),
        model: Some(model_label(est.model.model).to_string()),
        level: Some(level.level),
        mask_fraction: Some(est.model.mask_fraction),
        valid_pixels: Some(level.valid_pixels),
        singular_pixels: out.singular_pixels,
        score_evaluations: 2,
        backend: est.s1.backend().to_string(),
        strategy: Some(est.model.strategy.clone()),
        seed,
        timings: est.timings,
    };
    Ok((out.image, report))
}

/// Known-model denoising with a single score evaluation.
pub fn denoise_known(
    y: &ImageTensor,
    model: NoiseModel,
    backend: &dyn ScoreBackend,
) -> Result<(ImageTensor, DenoiseReport)> {
    let (y, _) = y.clamp_floor();
    let t = Instant::now();
    let s = backend.score(&y)?;
    let score_ms = elapsed_ms(t);
    let t = Instant::now();
    let out = apply_known(&y, model, s.values())?;
    let report = DenoiseReport {
        rho_hat: None,
        model: Some(model.kind.name().to_string()),
        level: Some(model.level),
        mask_fraction: None,
        valid_pixels: None,
        singular_pixels: out.singular_pixels,
        score_evaluations: 1,
        backend: s.backend().to_string(),
        strategy: None,
        seed: 0,
        timings: Timings { score_ms, apply_ms: elapsed_ms(t), ..Timings::default() },
    };
    Ok((out.image, report))
}

/// Estimates one family and level from several images at once. Image `i` is
/// perturbed with a seed derived from `seed` and `i`.
pub fn estimate_pooled(
    images: &[ImageTensor],
    backend: &dyn ScoreBackend,
    rho: &dyn RhoEstimator,
    config: &EstimationConfig,
    seed: u64,
) -> Result<(ModelEstimate, Option<LevelEstimate>)> {
    config.validate()?;
    let mut pixels = PixelSet::default();
    for (i, y) in images.iter().enumerate() {
        let pair = perturb(y, config.epsilon, derive_seed(seed, domain::PERTURB, i as u64))?;
        let s1 = backend.score(&pair.y1)?;
        let s2 = backend.score(&pair.y2)?;
        pixels.extend(&PixelSet::from_pair(&pair, &s1, &s2)?);
    }
    let model = rho.estimate(&pixels)?;
    let level = match model.model {
        Some(kind) => Some(estimate_level(kind, &pixels, config.quorum)?),
        None => None,
    };
    Ok((model, level))
}

/// `E[x | y]` by adaptive composite Gauss-Legendre quadrature over the prior,
/// using the exact likelihood. Poisson observations must lie on the lattice
/// `y = zeta * n`.
pub fn brute_posterior_mean(y: f64, prior: &GmmPrior, model: NoiseModel) -> Result<f64> {
    if !y.is_finite() {
        return Err(Error::Domain(format!("observation must be finite, got {y}")));
    }
    let level = model.level;
    let log_lik: Box<dyn Fn(f64) -> f64> = match model.kind {
        NoiseKind::Gaussian => {
            if level == 0.0 {
                return Ok(y);
            }
            Box::new(move |x: f64| -(y - x).powi(2) / (2.0 * level))
        }
        NoiseKind::Poisson => {
            let n = (y / level).round();
            if !(n >= 0.0) || (y / level - n).abs() > 1e-6 * n.max(1.0) {
                return Err(Error::Domain(format!("y = {y} is not on the Poisson lattice of step {level}")));
            }
            Box::new(move |x: f64| n * x.ln() - x / level)
        }
        NoiseKind::Gamma => {
            if !(y > 0.0) {
                return Err(Error::Domain(format!("Gamma observation must be positive, got {y}")));
            }
            Box::new(move |x: f64| -level * (x.ln() + y / x))
        }
        NoiseKind::InverseGaussian => {
            return Err(Error::Invalid("no brute-force posterior for inverse Gaussian noise".into()));
        }
    };
    let positive = model.kind != NoiseKind::Gaussian;
    let rule = GaussLegendre::new(32);
    let ratio_at = |panels: usize| -> f64 {
        let mut nodes = Vec::new();
        for c in prior.components().iter().filter(|c| c.weight > 0.0) {
            let mut lo = c.mean - 12.0 * c.std;
            if positive {
                lo = lo.max(INTENSITY_FLOOR);
            }
            for (x, w) in rule.composite(lo, c.mean + 12.0 * c.std, panels) {
                let z = (x - c.mean) / c.std;
                nodes.push((x, w.ln() + c.weight.ln() - c.std.ln() - 0.5 * z * z + log_lik(x)));
            }
        }
        let m = nodes.iter().map(|n| n.1).fold(f64::NEG_INFINITY, f64::max);
        let (mut num, mut den) = (0.0, 0.0);
        for (x, lw) in nodes {
            let r = (lw - m).exp();
            num += r * x;
            den += r;
        }
        num / den
    };
    let mut panels = 2;
    let mut prev = ratio_at(panels);
    while panels < 4096 {
        panels *= 2;
        let next = ratio_at(panels);
        if (next - prev).abs() <= 1e-10 * next.abs().max(1e-3) {
            return Ok(next);
        }
        prev = next;
    }
    Err(Error::Quadrature(format!("posterior mean at y = {y} did not settle by {panels} panels")))
}
