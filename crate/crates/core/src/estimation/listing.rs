use super::{nan_mean, ModelEstimate, PixelSet, RhoEstimator};
use crate::error::{Error, Result};

/// Power index from a per-pixel quadratic in `rho`.
///
/// With `w = 2(y2 s2 - y1 s1)`, `a = ln(y2 / y1)` and `b = 2 y1 s1`, pixels
/// with `|w / (b + rho_assumed)| <= mask_eps` are kept; `w` and `b` are
/// averaged over the mask, `a` stays per pixel, and the roots of
/// `a rho^2 + a(b - 2) rho + (w - 2ab) = 0` are averaged last. The larger
/// mean root, floored at zero, is the estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ListingRho {
    pub mask_eps: f64,
    pub rho_assumed: f64,
}

impl Default for ListingRho {
    fn default() -> Self {
        Self { mask_eps: 1e-5, rho_assumed: 2.2 }
    }
}

impl RhoEstimator for ListingRho {
    fn name(&self) -> &str {
        "listing"
    }

    fn estimate(&self, px: &PixelSet) -> Result<ModelEstimate> {
        if px.is_empty() {
            return Err(Error::EstimationFailure("no pixels".into()));
        }
        let n = px.len();
        let w: Vec<f64> = (0..n).map(|i| 2.0 * (px.y2[i] * px.s2[i] - px.y1[i] * px.s1[i])).collect();
        let b: Vec<f64> = (0..n).map(|i| 2.0 * px.y1[i] * px.s1[i]).collect();
        let mask: Vec<usize> = (0..n).filter(|&i| (w[i] / (b[i] + self.rho_assumed)).abs() <= self.mask_eps).collect();
        if mask.is_empty() {
            return Err(Error::EstimationFailure(format!(
                "empty mask at mask_eps = {}; increase mask_eps",
                self.mask_eps
            )));
        }
        let mask_fraction = mask.len() as f64 / n as f64;
        let (w_bar, _) = nan_mean(mask.iter().map(|&i| w[i]));
        let (b_bar, _) = nan_mean(mask.iter().map(|&i| b[i]));
        let (Some(w_bar), Some(b_bar)) = (w_bar, b_bar) else {
            return Err(Error::EstimationFailure("masked w or b has no finite value".into()));
        };
        let mut p1 = Vec::with_capacity(mask.len());
        let mut p2 = Vec::with_capacity(mask.len());
        for &i in &mask {
            let a = (px.y2[i] / px.y1[i]).ln();
            let first = a * (b_bar - 2.0);
            let second = 4.0 * a * (-2.0 * a * b_bar + w_bar);
            let root = (first * first - second).sqrt();
            p1.push((-first + root) / (2.0 * a));
            p2.push((-first - root) / (2.0 * a));
        }
        let (m1, skipped1) = nan_mean(p1.into_iter());
        let (m2, skipped2) = nan_mean(p2.into_iter());
        let (Some(m1), Some(m2)) = (m1, m2) else {
            return Err(Error::EstimationFailure("every quadratic root is non-finite".into()));
        };
        let rho = m1.max(m2).max(0.0);
        let mut est = ModelEstimate::new(rho, mask_fraction, skipped1.max(skipped2), self.name());
        est.roots = Some((m1, m2));
        Ok(est)
    }
}
