use std::f64::consts::PI;

use statrs::function::gamma::{digamma, ln_gamma};

use super::{ScoreBackend, ScoreField};
use crate::error::{Error, Result};
use crate::image::{ImageTensor, INTENSITY_FLOOR};
use crate::noise::GmmPrior;
use crate::quadrature::GaussLegendre;
use crate::tweedie::{NoiseKind, NoiseModel};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + values.map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Exact score of a Gaussian mixture observed through additive Gaussian
/// noise: each component stays Gaussian with variance `std^2 + sigma^2`.
#[derive(Debug, Clone)]
pub struct AnalyticGaussianOracle {
    prior: GmmPrior,
    sigma: f64,
}

impl AnalyticGaussianOracle {
    pub fn new(prior: GmmPrior, sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::Invalid(format!("noise sigma must be non-negative, got {sigma}")));
        }
        Ok(Self { prior, sigma })
    }

    fn terms(&self, y: f64) -> impl Iterator<Item = (f64, f64)> + Clone + '_ {
        self.prior.components().iter().filter(|c| c.weight > 0.0).map(move |c| {
            let v = c.std * c.std + self.sigma * self.sigma;
            let log_w = c.weight.ln() - 0.5 * (2.0 * PI * v).ln() - (y - c.mean).powi(2) / (2.0 * v);
            (log_w, (c.mean - y) / v)
        })
    }

    pub fn log_marginal(&self, y: f64) -> f64 {
        log_sum_exp(self.terms(y).map(|t| t.0))
    }

    pub fn score_at(&self, y: f64) -> f64 {
        let terms = self.terms(y);
        let m = terms.clone().map(|t| t.0).fold(f64::NEG_INFINITY, f64::max);
        let (mut num, mut den) = (0.0, 0.0);
        for (lw, g) in terms {
            let r = (lw - m).exp();
            num += r * g;
            den += r;
        }
        num / den
    }
}

impl ScoreBackend for AnalyticGaussianOracle {
    fn name(&self) -> &str {
        "oracle-gaussian"
    }

    fn describe(&self) -> String {
        format!("oracle-gaussian(sigma={})", self.sigma)
    }

    fn score(&self, y: &ImageTensor) -> Result<ScoreField> {
        let values = y.data().iter().map(|&v| self.score_at(v)).collect();
        ScoreField::new(y.height(), y.width(), values, self.describe())
    }
}

#[derive(Debug, Clone, Copy)]
struct Node {
    x: f64,
    ln_x: f64,
    log_weight: f64,
}

/// Score of a Gaussian-mixture prior pushed through Gaussian, Poisson or
/// Gamma noise, by Gauss-Legendre quadrature over the prior.
///
/// Poisson observations are treated as `y = zeta * n` with the count
/// likelihood interpolated to non-integer `n` through `ln_gamma`, which
/// makes the log-marginal differentiable in `y`. Each evaluation is checked
/// against a rule of twice the order.
#[derive(Debug, Clone)]
pub struct QuadratureOracle {
    prior: GmmPrior,
    model: NoiseModel,
    order: usize,
    window: f64,
    panels: usize,
    tolerance: f64,
    coarse: Vec<Node>,
    fine: Vec<Node>,
}

impl QuadratureOracle {
    pub const DEFAULT_ORDER: usize = 32;

    pub fn new(prior: GmmPrior, model: NoiseModel) -> Result<Self> {
        if model.kind == NoiseKind::InverseGaussian {
            return Err(Error::Invalid("quadrature oracle supports Gaussian, Poisson and Gamma noise".into()));
        }
        if model.level <= 0.0 {
            return Err(Error::Invalid(format!("quadrature oracle needs a positive noise level, got {}", model.level)));
        }
        let mut o = Self {
            prior,
            model,
            order: Self::DEFAULT_ORDER,
            window: 10.0,
            panels: 8,
            tolerance: 1e-6,
            coarse: Vec::new(),
            fine: Vec::new(),
        };
        o.rebuild();
        Ok(o)
    }

    pub fn with_order(mut self, order: usize) -> Result<Self> {
        if order < 2 {
            return Err(Error::Invalid(format!("quadrature order must be at least 2, got {order}")));
        }
        self.order = order;
        self.rebuild();
        Ok(self)
    }

    /// Relative disagreement between the two rules above which an
    /// evaluation fails.
    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn model(&self) -> NoiseModel {
        self.model
    }

    fn rebuild(&mut self) {
        self.coarse = self.nodes(self.order);
        self.fine = self.nodes(2 * self.order);
    }

    fn nodes(&self, order: usize) -> Vec<Node> {
        let rule = GaussLegendre::new(order);
        let positive = self.model.kind != NoiseKind::Gaussian;
        let mut out = Vec::new();
        for c in self.prior.components().iter().filter(|c| c.weight > 0.0) {
            let mut lo = c.mean - self.window * c.std;
            if positive {
                lo = lo.max(INTENSITY_FLOOR);
            }
            let hi = c.mean + self.window * c.std;
            for (x, w) in rule.composite(lo, hi, self.panels) {
                let z = (x - c.mean) / c.std;
                let log_prior = c.weight.ln() - 0.5 * z * z - c.std.ln() - LN_SQRT_2PI;
                out.push(Node { x, ln_x: if x > 0.0 { x.ln() } else { f64::NAN }, log_weight: log_prior + w.ln() });
            }
        }
        out
    }

    /// Log-likelihood in `x` up to terms that depend on `y` only.
    fn log_lik_x(&self, y: f64, n: &Node) -> f64 {
        let level = self.model.level;
        match self.model.kind {
            NoiseKind::Gaussian => -(y - n.x).powi(2) / (2.0 * level),
            NoiseKind::Poisson => (y * n.ln_x - n.x) / level,
            NoiseKind::Gamma => -level * (n.ln_x + y / n.x),
            NoiseKind::InverseGaussian => unreachable!(),
        }
    }

    /// Terms of the log-likelihood that depend on `y` only.
    fn log_lik_y(&self, y: f64) -> f64 {
        let level = self.model.level;
        match self.model.kind {
            NoiseKind::Gaussian => -0.5 * (2.0 * PI * level).ln(),
            NoiseKind::Poisson => -(y / level) * level.ln() - ln_gamma(y / level + 1.0) - level.ln(),
            NoiseKind::Gamma => level * level.ln() + (level - 1.0) * y.ln() - ln_gamma(level),
            NoiseKind::InverseGaussian => unreachable!(),
        }
    }

    fn check_y(&self, y: f64) -> Result<()> {
        if self.model.kind != NoiseKind::Gaussian && !(y > 0.0) {
            return Err(Error::Domain(format!("{} likelihood needs y > 0, got {y}", self.model.kind)));
        }
        Ok(())
    }

    pub fn log_marginal(&self, y: f64) -> Result<f64> {
        self.check_y(y)?;
        let lse = log_sum_exp(self.fine.iter().map(|n| n.log_weight + self.log_lik_x(y, n)));
        Ok(lse + self.log_lik_y(y))
    }

    fn score_with(&self, y: f64, nodes: &[Node]) -> f64 {
        let m = nodes.iter().map(|n| n.log_weight + self.log_lik_x(y, n)).fold(f64::NEG_INFINITY, f64::max);
        let (mut den, mut num) = (0.0, 0.0);
        for n in nodes {
            let r = (n.log_weight + self.log_lik_x(y, n) - m).exp();
            den += r;
            num += r * match self.model.kind {
                NoiseKind::Gaussian => n.x,
                NoiseKind::Poisson => n.ln_x,
                NoiseKind::Gamma => 1.0 / n.x,
                NoiseKind::InverseGaussian => unreachable!(),
            };
        }
        let moment = num / den;
        let level = self.model.level;
        match self.model.kind {
            NoiseKind::Gaussian => (moment - y) / level,
            NoiseKind::Poisson => (moment - level.ln() - digamma(y / level + 1.0)) / level,
            NoiseKind::Gamma => (level - 1.0) / y - level * moment,
            NoiseKind::InverseGaussian => unreachable!(),
        }
    }

    pub fn score_at(&self, y: f64) -> Result<f64> {
        self.check_y(y)?;
        let coarse = self.score_with(y, &self.coarse);
        let fine = self.score_with(y, &self.fine);
        if !fine.is_finite() || (fine - coarse).abs() > self.tolerance * (1.0 + fine.abs()) {
            return Err(Error::Quadrature(format!(
                "score at y={y}: order {} gives {coarse}, order {} gives {fine}",
                self.order,
                2 * self.order
            )));
        }
        Ok(fine)
    }
}

impl ScoreBackend for QuadratureOracle {
    fn name(&self) -> &str {
        "oracle-quadrature"
    }

    fn describe(&self) -> String {
        format!("oracle-quadrature({}, level={}, order={})", self.model.kind, self.model.level, self.order)
    }

    fn score(&self, y: &ImageTensor) -> Result<ScoreField> {
        let values = y.data().iter().map(|&v| self.score_at(v)).collect::<Result<Vec<_>>>()?;
        ScoreField::new(y.height(), y.width(), values, self.describe())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prior() -> GmmPrior {
        GmmPrior::uniform(&[(0.3, 0.03), (0.65, 0.05)]).unwrap()
    }

    fn fd(f: impl Fn(f64) -> f64, y: f64) -> f64 {
        let h = 1e-5;
        (f(y + h) - f(y - h)) / (2.0 * h)
    }

    #[test]
    fn gaussian_score_is_derivative_of_log_marginal() {
        let o = AnalyticGaussianOracle::new(prior(), 0.05).unwrap();
        for y in [0.1, 0.3, 0.47, 0.8] {
            let d = fd(|v| o.log_marginal(v), y);
            assert!((o.score_at(y) - d).abs() < 1e-6 * (1.0 + d.abs()), "y={y}");
        }
    }

    #[test]
    fn quadrature_matches_analytic_for_gaussian_noise() {
        let sigma: f64 = 0.04;
        let a = AnalyticGaussianOracle::new(prior(), sigma).unwrap();
        let q = QuadratureOracle::new(prior(), NoiseModel::gaussian_sigma(sigma).unwrap()).unwrap();
        for y in [0.05, 0.3, 0.5, 0.7, 0.95] {
            let (sa, sq) = (a.score_at(y), q.score_at(y).unwrap());
            assert!((sa - sq).abs() < 1e-9 * (1.0 + sa.abs()), "y={y}: {sa} vs {sq}");
            assert!((a.log_marginal(y) - q.log_marginal(y).unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn poisson_and_gamma_scores_differentiate_log_marginal() {
        for model in [NoiseModel::poisson(0.01).unwrap(), NoiseModel::gamma(60.0).unwrap()] {
            let q = QuadratureOracle::new(prior(), model).unwrap();
            for y in [0.2, 0.33, 0.5, 0.72] {
                let d = fd(|v| q.log_marginal(v).unwrap(), y);
                let s = q.score_at(y).unwrap();
                assert!((s - d).abs() < 1e-5 * (1.0 + d.abs()), "{model:?} y={y}: {s} vs {d}");
            }
        }
    }

    #[test]
    fn doubling_order_is_stable() {
        for model in [
            NoiseModel::gaussian_sigma(0.03).unwrap(),
            NoiseModel::poisson(0.02).unwrap(),
            NoiseModel::gamma(80.0).unwrap(),
        ] {
            let q1 = QuadratureOracle::new(prior(), model).unwrap();
            let q2 = q1.clone().with_order(64).unwrap();
            for y in [0.25, 0.4, 0.6] {
                let (a, b) = (q1.score_at(y).unwrap(), q2.score_at(y).unwrap());
                assert!((a - b).abs() <= 1e-8 * (1.0 + a.abs()), "{model:?}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn coarse_rule_reports_non_convergence() {
        let narrow = NoiseModel::gaussian_sigma(1e-4).unwrap();
        let q = QuadratureOracle::new(prior(), narrow).unwrap().with_order(2).unwrap();
        assert!(matches!(q.score_at(0.31), Err(Error::Quadrature(_))));
    }

    #[test]
    fn rejects_non_positive_observation() {
        let q = QuadratureOracle::new(prior(), NoiseModel::gamma(10.0).unwrap()).unwrap();
        assert!(q.score_at(0.0).is_err());
    }
}
