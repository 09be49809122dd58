//! Tweedie exponential dispersion models: unit deviance, saddle-point density,
//! variance function and the posterior-mean (denoising) formulas.
//!
//! A Tweedie model is indexed by the power `rho` of its variance function
//! `V[mu] = phi * mu^rho` and by the dispersion `phi`. Gaussian, Poisson, Gamma
//! and inverse Gaussian noise are the cases `rho = 0, 1, 2, 3`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::image::{ImageTensor, INTENSITY_FLOOR};

/// `|rho - b| < BRANCH_EPS` for `b` in {1, 2} is routed to the analytic limit.
pub const BRANCH_EPS: f64 = 1e-6;

/// Lower clamp for the Gamma denominator `(k - 1) - y l'(y)` in batch mode.
pub const GAMMA_DENOMINATOR_FLOOR: f64 = 1e-6;

/// Power index and dispersion of a Tweedie model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TweedieParams {
    rho: f64,
    phi: f64,
}

impl TweedieParams {
    /// Any finite `rho` is accepted (estimates may land in `(0, 1)`); use
    /// [`TweedieParams::check_density`] before evaluating a density.
    pub fn new(rho: f64, phi: f64) -> Result<Self> {
        if !rho.is_finite() {
            return Err(domain(format!("rho must be finite, got {rho}")));
        }
        if !(phi > 0.0 && phi.is_finite()) {
            return Err(domain(format!("phi must be positive and finite, got {phi}")));
        }
        Ok(Self { rho, phi })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    /// No exponential dispersion model exists for `0 < rho < 1`.
    pub fn check_density(&self) -> Result<()> {
        if self.rho > 0.0 && self.rho < 1.0 {
            return Err(domain(format!("rho = {} lies in (0, 1), where no Tweedie density exists", self.rho)));
        }
        Ok(())
    }
}

/// Noise families handled by the denoiser.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Gaussian,
    Poisson,
    Gamma,
    InverseGaussian,
}

impl NoiseKind {
    pub fn rho(self) -> f64 {
        match self {
            NoiseKind::Gaussian => 0.0,
            NoiseKind::Poisson => 1.0,
            NoiseKind::Gamma => 2.0,
            NoiseKind::InverseGaussian => 3.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::Gaussian => "gaussian",
            NoiseKind::Poisson => "poisson",
            NoiseKind::Gamma => "gamma",
            NoiseKind::InverseGaussian => "inverse_gaussian",
        }
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(NoiseKind::Gaussian),
            "poisson" => Ok(NoiseKind::Poisson),
            "gamma" => Ok(NoiseKind::Gamma),
            "inverse_gaussian" => Ok(NoiseKind::InverseGaussian),
            other => Err(Error::Invalid(format!("unknown noise model {other:?}"))),
        }
    }
}

/// A noise family together with its level.
///
/// `level` is sigma^2 for Gaussian, zeta for Poisson, the shape/rate `k` for
/// Gamma (multiplicative noise with mean one) and phi for inverse Gaussian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    pub level: f64,
}

impl NoiseModel {
    /// A Gaussian level of exactly zero is allowed and denotes the noise-free
    /// identity; every other level must be positive, and Gamma needs `k > 1`.
    pub fn new(kind: NoiseKind, level: f64) -> Result<Self> {
        if !level.is_finite() {
            return Err(domain(format!("{kind} level must be finite, got {level}")));
        }
        let ok = match kind {
            NoiseKind::Gaussian => level >= 0.0,
            NoiseKind::Gamma => level > 1.0,
            NoiseKind::Poisson | NoiseKind::InverseGaussian => level > 0.0,
        };
        if !ok {
            return Err(domain(format!("invalid {kind} level {level}")));
        }
        Ok(Self { kind, level })
    }

    pub fn gaussian_sigma(sigma: f64) -> Result<Self> {
        Self::new(NoiseKind::Gaussian, sigma * sigma)
    }

    pub fn poisson(zeta: f64) -> Result<Self> {
        Self::new(NoiseKind::Poisson, zeta)
    }

    pub fn gamma(k: f64) -> Result<Self> {
        Self::new(NoiseKind::Gamma, k)
    }

    /// Dispersion phi of the equivalent Tweedie model.
    pub fn phi(&self) -> f64 {
        match self.kind {
            NoiseKind::Gamma => 1.0 / self.level,
            _ => self.level,
        }
    }

    pub fn params(&self) -> Result<TweedieParams> {
        TweedieParams::new(self.kind.rho(), self.phi())
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(domain(format!("{name} must be positive and finite, got {v}")));
    }
    Ok(())
}

/// Unit deviance `d(y, mu)`.
///
/// The general power form is singular at `rho` in {1, 2}; those points (and a
/// `BRANCH_EPS` neighbourhood) use the analytic limits, and `rho = 0` uses
/// `(y - mu)^2`.
pub fn unit_deviance(y: f64, mu: f64, rho: f64) -> Result<f64> {
    check_positive("y", y)?;
    check_positive("mu", mu)?;
    if !rho.is_finite() {
        return Err(domain("rho must be finite"));
    }
    let d = if rho == 0.0 {
        (y - mu) * (y - mu)
    } else if (rho - 1.0).abs() < BRANCH_EPS {
        2.0 * (y * (y / mu).ln() - (y - mu))
    } else if (rho - 2.0).abs() < BRANCH_EPS {
        let r = y / mu;
        2.0 * (r - r.ln() - 1.0)
    } else {
        2.0 * (y.powf(2.0 - rho) / ((1.0 - rho) * (2.0 - rho)) - y * mu.powf(1.0 - rho) / (1.0 - rho)
            + mu.powf(2.0 - rho) / (2.0 - rho))
    };
    // Rounding can leave a tiny negative value when y ~ mu.
    Ok(d.max(0.0))
}

/// Log of the saddle-point density.
pub fn log_saddle_density(y: f64, params: TweedieParams, mu: f64) -> Result<f64> {
    params.check_density()?;
    let d = unit_deviance(y, mu, params.rho)?;
    let phi = params.phi;
    Ok(-0.5 * (2.0 * PI * phi).ln() - 0.5 * params.rho * y.ln() - d / (2.0 * phi))
}

/// Saddle-point density `(2 pi phi y^rho)^(-1/2) exp(-d(y, mu) / (2 phi))`.
///
/// Evaluated in log space; extreme exponents saturate to `0` or `+inf`.
pub fn saddle_density(y: f64, params: TweedieParams, mu: f64) -> Result<f64> {
    Ok(log_saddle_density(y, params, mu)?.exp())
}

/// `V[mu] = phi * mu^rho`.
pub fn variance_function(mu: f64, params: TweedieParams) -> Result<f64> {
    check_positive("mu", mu)?;
    Ok(params.phi * mu.powf(params.rho))
}

/// `alpha(y, rho, phi) = phi y^(rho - 1) (rho / (2y) + l'(y))`.
pub fn alpha_term(y: f64, params: TweedieParams, score: f64) -> Result<f64> {
    check_positive("y", y)?;
    if !score.is_finite() {
        return Err(domain(format!("score must be finite, got {score}")));
    }
    let rho = params.rho;
    Ok(params.phi * y.powf(rho - 1.0) * (rho / (2.0 * y) + score))
}

/// Universal posterior mean `y (1 + (1 - rho) alpha)^(1 / (1 - rho))`.
///
/// Near `rho = 1` the `exp(alpha(y, 1, phi))` limit is used instead. Fails with
/// [`Error::SingularEstimate`] when the base of the fractional power is not
/// positive.
pub fn posterior_mean_universal(y: f64, params: TweedieParams, score: f64) -> Result<f64> {
    universal_at(0, y, params, score)
}

fn universal_at(index: usize, y: f64, params: TweedieParams, score: f64) -> Result<f64> {
    let rho = params.rho;
    if (rho - 1.0).abs() < BRANCH_EPS {
        let limit = TweedieParams { rho: 1.0, ..params };
        return Ok(y * alpha_term(y, limit, score)?.exp());
    }
    let alpha = alpha_term(y, params, score)?;
    let base = 1.0 + (1.0 - rho) * alpha;
    if rho == 0.0 {
        return Ok(y * base);
    }
    if !(base > 0.0) {
        return Err(Error::SingularEstimate { index, reason: format!("1 + (1 - rho) alpha = {base} at rho = {rho}") });
    }
    Ok(y * base.powf(1.0 / (1.0 - rho)))
}

/// Closed-form posterior means for the three named noise models.
pub fn posterior_mean_special(y: f64, model: NoiseModel, score: f64) -> Result<f64> {
    special_at(0, y, model, score, false)
}

fn special_at(index: usize, y: f64, model: NoiseModel, score: f64, clamp: bool) -> Result<f64> {
    check_positive("y", y)?;
    if !score.is_finite() {
        return Err(domain(format!("score must be finite, got {score}")));
    }
    let level = model.level;
    match model.kind {
        NoiseKind::Gaussian => Ok(y + level * score),
        NoiseKind::Poisson => Ok((y + level / 2.0) * (level * score).exp()),
        NoiseKind::Gamma => {
            let mut denom = (level - 1.0) - y * score;
            if denom <= GAMMA_DENOMINATOR_FLOOR {
                if !clamp {
                    return Err(Error::SingularEstimate {
                        index,
                        reason: format!("Gamma denominator (k - 1) - y l'(y) = {denom}"),
                    });
                }
                denom = GAMMA_DENOMINATOR_FLOOR;
            }
            Ok(level * y / denom)
        }
        NoiseKind::InverseGaussian => universal_at(index, y, model.params()?, score),
    }
}

/// Result of applying a posterior-mean formula to every pixel.
#[derive(Debug, Clone)]
pub struct BatchEstimate {
    pub image: ImageTensor,
    /// Pixels where the formula was singular and a fallback was used.
    pub singular_pixels: usize,
}

fn check_scores(y: &ImageTensor, scores: &[f64]) -> Result<()> {
    if scores.len() != y.len() {
        return Err(Error::Invalid(format!("{} scores for {} pixels", scores.len(), y.len())));
    }
    Ok(())
}

/// Per-pixel universal formula. Inputs are clamped to [`INTENSITY_FLOOR`];
/// pixels with a non-positive fractional-power base fall back to `y`.
pub fn denoise_universal(y: &ImageTensor, params: TweedieParams, scores: &[f64]) -> Result<BatchEstimate> {
    check_scores(y, scores)?;
    let mut singular = 0;
    let mut out = Vec::with_capacity(y.len());
    for (i, (&yi, &si)) in y.data().iter().zip(scores).enumerate() {
        let yi = yi.max(INTENSITY_FLOOR);
        match universal_at(i, yi, params, si) {
            Ok(v) if v.is_finite() => out.push(v),
            Ok(_) | Err(Error::SingularEstimate { .. }) => {
                singular += 1;
                out.push(yi);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(BatchEstimate { image: ImageTensor::new(y.height(), y.width(), out)?, singular_pixels: singular })
}

/// Per-pixel special-case formula. The Gamma denominator is clamped at
/// [`GAMMA_DENOMINATOR_FLOOR`]; clamped pixels are counted as singular.
pub fn denoise_special(y: &ImageTensor, model: NoiseModel, scores: &[f64]) -> Result<BatchEstimate> {
    check_scores(y, scores)?;
    let mut singular = 0;
    let mut out = Vec::with_capacity(y.len());
    for (i, (&yi, &si)) in y.data().iter().zip(scores).enumerate() {
        let yi = yi.max(INTENSITY_FLOOR);
        if model.kind == NoiseKind::Gamma && (model.level - 1.0) - yi * si <= GAMMA_DENOMINATOR_FLOOR {
            singular += 1;
        }
        match special_at(i, yi, model, si, true) {
            Ok(v) if v.is_finite() => out.push(v),
            Ok(_) | Err(Error::SingularEstimate { .. }) => {
                singular += 1;
                out.push(yi);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(BatchEstimate { image: ImageTensor::new(y.height(), y.width(), out)?, singular_pixels: singular })
}
