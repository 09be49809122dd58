use super::{median, ModelEstimate, PixelSet, RhoEstimator};
use crate::error::{Error, Result};

/// Power index from the curvature of the log-marginal.
///
/// For a saddle-point marginal `-l''(y) + rho / (2 y^2) = y^(-rho) / phi`, so
/// `log(c + rho / (2 y^2))` is linear in `log y` with slope `-rho`, where
/// `c = -(s2 - s1) / (y2 - y1)`. Pixels are grouped into quantile bins of
/// `log y1`; a least-squares line through the per-bin medians gives the next
/// `rho`, and the fixed point is iterated from `rho = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvatureRho {
    pub bins: usize,
    pub min_per_bin: usize,
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for CurvatureRho {
    fn default() -> Self {
        Self { bins: 8, min_per_bin: 8, max_iterations: 50, tolerance: 1e-10 }
    }
}

/// Slope and intercept of the fitted line, with the number of bins used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvatureFit {
    pub slope: f64,
    pub intercept: f64,
    pub bins: usize,
    pub valid: usize,
}

impl CurvatureRho {
    /// Fits one line at a fixed `rho` over pixels with finite positive
    /// corrected curvature.
    pub fn fit(&self, log_y: &[f64], curvature: &[f64], y: &[f64], rho: f64) -> Result<CurvatureFit> {
        let mut pts: Vec<(f64, f64)> = (0..log_y.len())
            .filter_map(|i| {
                let v = curvature[i] + rho / (2.0 * y[i] * y[i]);
                (v > 0.0 && v.is_finite()).then(|| (log_y[i], v.ln()))
            })
            .collect();
        let valid = pts.len();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut xs = Vec::new();
        let mut zs = Vec::new();
        for k in 0..self.bins {
            let chunk = &pts[k * valid / self.bins..(k + 1) * valid / self.bins];
            if chunk.len() < self.min_per_bin {
                continue;
            }
            xs.push(median(&mut chunk.iter().map(|p| p.0).collect::<Vec<_>>()));
            zs.push(median(&mut chunk.iter().map(|p| p.1).collect::<Vec<_>>()));
        }
        let m = xs.len() as f64;
        let x_bar = xs.iter().sum::<f64>() / m;
        let z_bar = zs.iter().sum::<f64>() / m;
        let sxx: f64 = xs.iter().map(|x| (x - x_bar).powi(2)).sum();
        if xs.len() < 2 || !(sxx > 1e-12) {
            return Err(Error::EstimationFailure(format!(
                "intensity spread too small for a curvature fit ({} usable bins of {valid} pixels)",
                xs.len()
            )));
        }
        let sxz: f64 = xs.iter().zip(&zs).map(|(x, z)| (x - x_bar) * (z - z_bar)).sum();
        let slope = sxz / sxx;
        Ok(CurvatureFit { slope, intercept: z_bar - slope * x_bar, bins: xs.len(), valid })
    }
}

impl RhoEstimator for CurvatureRho {
    fn name(&self) -> &str {
        "curvature"
    }

    fn estimate(&self, px: &PixelSet) -> Result<ModelEstimate> {
        let n = px.len();
        if n == 0 {
            return Err(Error::EstimationFailure("no pixels".into()));
        }
        let mut log_y = Vec::with_capacity(n);
        let mut curv = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        let mut nonfinite = 0;
        for i in 0..n {
            let dy = px.y2[i] - px.y1[i];
            if !px.unclamped(i) || dy == 0.0 {
                continue;
            }
            let c = -(px.s2[i] - px.s1[i]) / dy;
            if !c.is_finite() {
                nonfinite += 1;
                continue;
            }
            log_y.push(px.y1[i].ln());
            curv.push(c);
            ys.push(px.y1[i]);
        }
        let mut rho = 1.0;
        let mut fit = self.fit(&log_y, &curv, &ys, rho)?;
        for _ in 0..self.max_iterations {
            let next = (-fit.slope).max(0.0);
            let done = (next - rho).abs() < self.tolerance;
            rho = next;
            fit = self.fit(&log_y, &curv, &ys, rho)?;
            if done {
                break;
            }
        }
        Ok(ModelEstimate::new(rho, fit.valid as f64 / n as f64, nonfinite, self.name()))
    }
}
