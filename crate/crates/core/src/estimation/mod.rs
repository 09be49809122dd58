//! Blind identification of the noise family and level from two score
//! evaluations: one at the observation `y1` and one at the perturbed
//! `y2 = y1 + eps * u`, `u ~ N(0, I)`.

mod curvature;
mod level;
mod listing;

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use curvature::CurvatureRho;
pub use level::{estimate_level, LevelEstimate};
pub use listing::ListingRho;

use crate::error::{Error, Result};
use crate::image::{ImageTensor, INTENSITY_FLOOR};
use crate::rng::{domain, stream};
use crate::score::ScoreField;
use crate::tweedie::NoiseKind;

/// An observation and its perturbed copy.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationPair {
    pub y1: ImageTensor,
    pub y2: ImageTensor,
    /// The unclamped perturbation direction.
    pub u: Vec<f64>,
    pub eps: f64,
    /// Pixels of `y2` raised to the intensity floor.
    pub clamped: usize,
}

/// Draws `u` from the perturbation stream of `seed` and forms `y2`. `y1` is
/// first raised to the intensity floor.
pub fn perturb(y1: &ImageTensor, eps: f64, seed: u64) -> Result<PerturbationPair> {
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::Invalid(format!("perturbation size must be non-negative, got {eps}")));
    }
    let (y1, _) = y1.clamp_floor();
    let u: Vec<f64> = (0..y1.len()).map(|i| stream(seed, domain::PERTURB, i as u64).sample(StandardNormal)).collect();
    let raw: Vec<f64> = y1.data().iter().zip(&u).map(|(y, u)| y + eps * u).collect();
    let (y2, clamped) = ImageTensor::new(y1.height(), y1.width(), raw)?.clamp_floor();
    Ok(PerturbationPair { y1, y2, u, eps, clamped })
}

/// Flat per-pixel inputs to the estimators. Several images can be pooled.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PixelSet {
    pub y1: Vec<f64>,
    pub y2: Vec<f64>,
    pub u: Vec<f64>,
    pub s1: Vec<f64>,
    pub s2: Vec<f64>,
    pub eps: Vec<f64>,
}

impl PixelSet {
    pub fn from_pair(pair: &PerturbationPair, s1: &ScoreField, s2: &ScoreField) -> Result<Self> {
        for s in [s1, s2] {
            if s.shape() != pair.y1.shape() {
                return Err(Error::Shape { expected: pair.y1.shape(), actual: s.shape() });
            }
        }
        Ok(Self {
            y1: pair.y1.data().to_vec(),
            y2: pair.y2.data().to_vec(),
            u: pair.u.clone(),
            s1: s1.values().to_vec(),
            s2: s2.values().to_vec(),
            eps: vec![pair.eps; pair.u.len()],
        })
    }

    pub fn extend(&mut self, other: &PixelSet) {
        self.y1.extend_from_slice(&other.y1);
        self.y2.extend_from_slice(&other.y2);
        self.u.extend_from_slice(&other.u);
        self.s1.extend_from_slice(&other.s1);
        self.s2.extend_from_slice(&other.s2);
        self.eps.extend_from_slice(&other.eps);
    }

    pub fn len(&self) -> usize {
        self.y1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y1.is_empty()
    }

    /// True when neither observation sits on the intensity floor, so that
    /// `y2 - y1 = eps * u` holds.
    pub(crate) fn unclamped(&self, i: usize) -> bool {
        self.y1[i] > INTENSITY_FLOOR && self.y1[i] + self.eps[i] * self.u[i] > INTENSITY_FLOOR
    }
}

/// Noise family implied by a power index: `[0, 0.9)` Gaussian, `[0.9, 1.9)`
/// Poisson, `[1.9, 2.9)` Gamma, anything else unknown.
pub fn classify_model(rho: f64) -> Option<NoiseKind> {
    if !(rho >= 0.0) {
        None
    } else if rho < 0.9 {
        Some(NoiseKind::Gaussian)
    } else if rho < 1.9 {
        Some(NoiseKind::Poisson)
    } else if rho < 2.9 {
        Some(NoiseKind::Gamma)
    } else {
        None
    }
}

pub fn model_label(kind: Option<NoiseKind>) -> &'static str {
    kind.map_or("unknown", NoiseKind::name)
}

/// Output of a power-index estimator.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelEstimate {
    pub rho_hat: f64,
    #[serde(serialize_with = "ser_kind")]
    pub model: Option<NoiseKind>,
    /// Fraction of pixels that contributed.
    pub mask_fraction: f64,
    /// Pixels skipped because an intermediate value was not finite.
    pub nonfinite: usize,
    pub strategy: String,
    /// Averaged quadratic roots (listing strategy only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub roots: Option<(f64, f64)>,
}

fn ser_kind<S: serde::Serializer>(k: &Option<NoiseKind>, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(model_label(*k))
}

impl ModelEstimate {
    pub(crate) fn new(rho_hat: f64, mask_fraction: f64, nonfinite: usize, strategy: &str) -> Self {
        Self {
            rho_hat,
            model: classify_model(rho_hat),
            mask_fraction,
            nonfinite,
            strategy: strategy.to_string(),
            roots: None,
        }
    }
}

/// A way of recovering the power index from paired scores.
pub trait RhoEstimator: Send + Sync {
    fn name(&self) -> &str;
    fn estimate(&self, pixels: &PixelSet) -> Result<ModelEstimate>;
}

/// Tunables shared by the estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimationConfig {
    /// Perturbation size.
    pub epsilon: f64,
    /// Power-index strategy name.
    pub rho_strategy: String,
    /// Listing strategy: mask threshold on `|w / (b + rho_assumed)|`.
    pub mask_eps: f64,
    /// Listing strategy: power index assumed when building the mask.
    pub rho_assumed: f64,
    /// Curvature strategy: quantile bins in `log y`.
    pub bins: usize,
    /// Minimum valid pixels for a level estimate.
    pub quorum: usize,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self { epsilon: 1e-5, rho_strategy: "curvature".into(), mask_eps: 1e-5, rho_assumed: 2.2, bins: 8, quorum: 16 }
    }
}

impl EstimationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Invalid(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.mask_eps > 0.0) {
            return Err(Error::Invalid(format!("mask_eps must be positive, got {}", self.mask_eps)));
        }
        if !self.rho_assumed.is_finite() {
            return Err(Error::Invalid("rho_assumed must be finite".into()));
        }
        if self.bins < 2 {
            return Err(Error::Invalid(format!("need at least 2 bins, got {}", self.bins)));
        }
        if self.quorum == 0 {
            return Err(Error::Invalid("quorum must be positive".into()));
        }
        Ok(())
    }
}

pub type RhoFactory = Box<dyn Fn(&EstimationConfig) -> Box<dyn RhoEstimator> + Send + Sync>;

/// Name -> factory map for power-index estimators.
pub struct RhoRegistry {
    factories: BTreeMap<String, RhoFactory>,
}

impl RhoRegistry {
    pub fn with_builtins() -> Self {
        let mut reg = Self { factories: BTreeMap::new() };
        reg.register(
            "listing",
            Box::new(|c: &EstimationConfig| {
                Box::new(ListingRho { mask_eps: c.mask_eps, rho_assumed: c.rho_assumed }) as Box<dyn RhoEstimator>
            }),
        );
        reg.register(
            "curvature",
            Box::new(|c: &EstimationConfig| {
                Box::new(CurvatureRho { bins: c.bins, ..CurvatureRho::default() }) as Box<dyn RhoEstimator>
            }),
        );
        reg
    }

    pub fn register(&mut self, name: &str, factory: RhoFactory) {
        self.factories.insert(name.to_string(), factory);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }

    pub fn build(&self, config: &EstimationConfig) -> Result<Box<dyn RhoEstimator>> {
        let name = &config.rho_strategy;
        let f = self.factories.get(name).ok_or_else(|| {
            let known: Vec<&str> = self.names().collect();
            Error::Invalid(format!("unknown rho strategy {name:?}; known: {}", known.join(", ")))
        })?;
        Ok(f(config))
    }
}

pub(crate) fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Mean of the finite entries and the number skipped.
pub(crate) fn nan_mean(v: impl Iterator<Item = f64>) -> (Option<f64>, usize) {
    let (mut sum, mut n, mut skipped) = (0.0, 0usize, 0usize);
    for x in v {
        if x.is_finite() {
            sum += x;
            n += 1;
        } else {
            skipped += 1;
        }
    }
    ((n > 0).then(|| sum / n as f64), skipped)
}

/// Estimation summary written next to each processed image.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimationReport {
    pub rho_hat: f64,
    pub model: String,
    pub level: Option<f64>,
    pub mask_fraction: f64,
    pub pixel_count: usize,
    pub seed: u64,
    pub backend: String,
    pub strategy: String,
}
