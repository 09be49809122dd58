use serde::Serialize;

use super::{median, PixelSet};
use crate::error::{Error, Result};
use crate::tweedie::{NoiseKind, NoiseModel};

const MIN_DENOMINATOR: f64 = 1e-12;

/// Median noise level over valid pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LevelEstimate {
    pub kind: NoiseKind,
    /// `sigma^2`, `zeta` or `k` depending on `kind`.
    pub level: f64,
    pub valid_pixels: usize,
}

impl LevelEstimate {
    pub fn model(&self) -> Result<NoiseModel> {
        NoiseModel::new(self.kind, self.level).map_err(|e| {
            Error::EstimationFailure(format!("estimated {} level {} is unusable: {e}", self.kind, self.level))
        })
    }
}

/// Per-pixel level from the paired scores, or `None` when the pixel is
/// degenerate.
fn pixel_level(kind: NoiseKind, px: &PixelSet, i: usize) -> Option<f64> {
    let (y1, y2) = (px.y1[i], px.y2[i]);
    let ds = px.s2[i] - px.s1[i];
    let step = px.eps[i] * px.u[i];
    let v = match kind {
        NoiseKind::Gaussian => {
            if ds.abs() < MIN_DENOMINATOR {
                return None;
            }
            -step / ds
        }
        NoiseKind::Poisson => {
            if ds.abs() < MIN_DENOMINATOR {
                return None;
            }
            let c = step / ds;
            let radicand = y1 * y1 - 2.0 * c;
            if radicand < 0.0 {
                return None;
            }
            -y1 + radicand.sqrt()
        }
        NoiseKind::Gamma => {
            let d = 1.0 / y2 - 1.0 / y1;
            if d.abs() < MIN_DENOMINATOR {
                return None;
            }
            1.0 + ds / d
        }
        NoiseKind::InverseGaussian => return None,
    };
    v.is_finite().then_some(v)
}

/// Estimates the level of `kind` as the median of per-pixel values, which
/// are exact for a marginal whose score is locally that of the noise model
/// itself.
pub fn estimate_level(kind: NoiseKind, pixels: &PixelSet, quorum: usize) -> Result<LevelEstimate> {
    if kind == NoiseKind::InverseGaussian {
        return Err(Error::EstimationFailure("no level estimator for inverse Gaussian noise".into()));
    }
    let mut values: Vec<f64> =
        (0..pixels.len()).filter(|&i| pixels.unclamped(i)).filter_map(|i| pixel_level(kind, pixels, i)).collect();
    if values.len() < quorum {
        return Err(Error::EstimationFailure(format!(
            "only {} valid pixels for the {kind} level, need {quorum}",
            values.len()
        )));
    }
    let valid_pixels = values.len();
    let level = median(&mut values);
    Ok(LevelEstimate { kind, level, valid_pixels })
}
