use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::INTENSITY_FLOOR;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GmmComponent {
    pub weight: f64,
    pub mean: f64,
    pub std: f64,
}

/// Finite Gaussian-mixture prior on clean pixel intensities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<GmmComponent>", into = "Vec<GmmComponent>")]
pub struct GmmPrior {
    components: Vec<GmmComponent>,
}

impl GmmPrior {
    pub fn new(components: Vec<GmmComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Invalid("prior needs at least one component".into()));
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Invalid(format!("prior weights sum to {total}, expected 1")));
        }
        for c in &components {
            if !(c.weight >= 0.0) {
                return Err(Error::Invalid(format!("negative prior weight {}", c.weight)));
            }
            if !(c.mean > INTENSITY_FLOOR && c.mean <= 1.0) {
                return Err(Error::Invalid(format!("prior mean {} outside (floor, 1]", c.mean)));
            }
            if !(c.std > 0.0 && c.std.is_finite()) {
                return Err(Error::Invalid(format!("prior std must be positive, got {}", c.std)));
            }
        }
        Ok(Self { components })
    }

    /// Equal-weight mixture from `(mean, std)` pairs.
    pub fn uniform(parts: &[(f64, f64)]) -> Result<Self> {
        let w = 1.0 / parts.len() as f64;
        let mut comps: Vec<GmmComponent> =
            parts.iter().map(|&(mean, std)| GmmComponent { weight: w, mean, std }).collect();
        // Put rounding slack on the last weight so the sum is exact.
        if let Some((last, head)) = comps.split_last_mut() {
            last.weight = 1.0 - head.iter().map(|c| c.weight).sum::<f64>();
        }
        Self::new(comps)
    }

    /// Two well-separated narrow levels; the default desk-scale prior for
    /// piecewise-constant images.
    pub fn two_level() -> Self {
        Self::uniform(&[(0.3, 0.003), (0.9, 0.003)]).expect("valid built-in prior")
    }

    pub fn components(&self) -> &[GmmComponent] {
        &self.components
    }

    pub fn mean(&self) -> f64 {
        self.components.iter().map(|c| c.weight * c.mean).sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.components.iter().map(|c| c.weight * (c.std * c.std + (c.mean - m) * (c.mean - m))).sum()
    }

    /// `[lo, hi]` covering every component to `width` standard deviations,
    /// cut at the intensity floor.
    pub fn support(&self, width: f64) -> (f64, f64) {
        let lo = self.components.iter().map(|c| c.mean - width * c.std).fold(f64::INFINITY, f64::min);
        let hi = self.components.iter().map(|c| c.mean + width * c.std).fold(f64::NEG_INFINITY, f64::max);
        (lo.max(INTENSITY_FLOOR), hi)
    }
}

impl TryFrom<Vec<GmmComponent>> for GmmPrior {
    type Error = Error;

    fn try_from(v: Vec<GmmComponent>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<GmmPrior> for Vec<GmmComponent> {
    fn from(p: GmmPrior) -> Self {
        p.components
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(GmmPrior::uniform(&[(0.3, 0.02), (0.7, 0.02)]).is_ok());
        assert!(GmmPrior::uniform(&[(0.3, 0.0)]).is_err());
        assert!(GmmPrior::uniform(&[(1.5, 0.1)]).is_err());
        assert!(GmmPrior::new(vec![]).is_err());
        let c = GmmComponent { weight: 0.6, mean: 0.5, std: 0.1 };
        assert!(GmmPrior::new(vec![c, c]).is_err());
    }

    #[test]
    fn uniform_weights_sum_exactly() {
        let p = GmmPrior::uniform(&[(0.1, 0.01), (0.2, 0.01), (0.3, 0.01)]).unwrap();
        let s: f64 = p.components().iter().map(|c| c.weight).sum();
        assert!((s - 1.0).abs() <= 1e-15);
    }

    #[test]
    fn moments() {
        let p = GmmPrior::uniform(&[(0.3, 0.02), (0.7, 0.02)]).unwrap();
        assert!((p.mean() - 0.5).abs() < 1e-15);
        assert!((p.variance() - (0.0004 + 0.04)).abs() < 1e-15);
    }

    #[test]
    fn serde_validates() {
        let ok: GmmPrior = serde_json::from_str(r#"[{"weight":1.0,"mean":0.5,"std":0.1}]"#).unwrap();
        assert_eq!(ok.components().len(), 1);
        assert!(serde_json::from_str::<GmmPrior>(r#"[{"weight":0.5,"mean":0.5,"std":0.1}]"#).is_err());
    }
}
