//! Score fields `l'(y) = d/dy log p(y)` and the interchangeable backends that
//! produce them.
//!
//! Backends implement [`ScoreBackend`] and are constructed by name through a
//! [`ScoreRegistry`]; the built-in names are `oracle-gaussian`,
//! `oracle-quadrature` and `ardae`.

pub mod ardae;
pub mod checkpoint;
pub mod mlp;
mod oracle;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

pub use oracle::{AnalyticGaussianOracle, QuadratureOracle};

use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::noise::GmmPrior;
use crate::tweedie::{NoiseKind, NoiseModel};

/// Per-pixel score values for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreField {
    height: usize,
    width: usize,
    values: Vec<f64>,
    backend: String,
}

impl ScoreField {
    pub fn new(height: usize, width: usize, values: Vec<f64>, backend: impl Into<String>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::Invalid(format!("{} score values for a {height}x{width} field", values.len())));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite score {} at pixel {i}", values[i])));
        }
        Ok(Self { height, width, values, backend: backend.into() })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Identifies what produced the field (oracle kind or checkpoint).
    pub fn backend(&self) -> &str {
        &self.backend
    }
}

/// Something that evaluates a score field for a noisy image.
pub trait ScoreBackend: Send + Sync {
    /// Registry name of the backend family.
    fn name(&self) -> &str;

    /// Provenance string recorded in each produced field.
    fn describe(&self) -> String {
        self.name().to_string()
    }

    fn score(&self, y: &ImageTensor) -> Result<ScoreField>;
}

impl<T: ScoreBackend + ?Sized> ScoreBackend for Arc<T> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn describe(&self) -> String {
        (**self).describe()
    }

    fn score(&self, y: &ImageTensor) -> Result<ScoreField> {
        (**self).score(y)
    }
}

/// Wraps a backend and counts score evaluations.
pub struct CountingBackend<B> {
    inner: B,
    calls: AtomicUsize,
}

impl<B: ScoreBackend> CountingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self { inner, calls: AtomicUsize::new(0) }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn reset(&self) {
        self.calls.store(0, Ordering::SeqCst);
    }
}

impl<B: ScoreBackend> ScoreBackend for CountingBackend<B> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn describe(&self) -> String {
        self.inner.describe()
    }

    fn score(&self, y: &ImageTensor) -> Result<ScoreField> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.score(y)
    }
}

/// What a backend factory may draw on. Oracles need the clean prior and the
/// true noise model; the network backend needs a checkpoint.
#[derive(Debug, Clone, Default)]
pub struct BackendContext {
    pub prior: Option<GmmPrior>,
    pub model: Option<NoiseModel>,
    pub checkpoint: Option<PathBuf>,
    /// Gauss-Legendre order for quadrature oracles.
    pub quadrature_order: Option<usize>,
}

pub type BackendFactory = Box<dyn Fn(&BackendContext) -> Result<Box<dyn ScoreBackend>> + Send + Sync>;

/// Name -> factory map for score backends.
pub struct ScoreRegistry {
    factories: BTreeMap<String, BackendFactory>,
}

impl ScoreRegistry {
    pub fn empty() -> Self {
        Self { factories: BTreeMap::new() }
    }

    pub fn with_builtins() -> Self {
        let mut reg = Self::empty();
        reg.register(
            "oracle-gaussian",
            Box::new(|ctx: &BackendContext| {
                let prior = ctx.prior.clone().ok_or_else(|| Error::Invalid("oracle-gaussian needs a prior".into()))?;
                let model =
                    ctx.model.ok_or_else(|| Error::Invalid("oracle-gaussian needs the true noise model".into()))?;
                if model.kind != NoiseKind::Gaussian {
                    return Err(Error::Invalid(format!(
                        "oracle-gaussian applies to Gaussian noise, not {}",
                        model.kind
                    )));
                }
                Ok(Box::new(AnalyticGaussianOracle::new(prior, model.level.sqrt())?) as Box<dyn ScoreBackend>)
            }),
        );
        reg.register(
            "oracle-quadrature",
            Box::new(|ctx: &BackendContext| {
                let prior =
                    ctx.prior.clone().ok_or_else(|| Error::Invalid("oracle-quadrature needs a prior".into()))?;
                let model =
                    ctx.model.ok_or_else(|| Error::Invalid("oracle-quadrature needs the true noise model".into()))?;
                let mut oracle = QuadratureOracle::new(prior, model)?;
                if let Some(order) = ctx.quadrature_order {
                    oracle = oracle.with_order(order)?;
                }
                Ok(Box::new(oracle) as Box<dyn ScoreBackend>)
            }),
        );
        reg.register(
            "ardae",
            Box::new(|ctx: &BackendContext| {
                let path =
                    ctx.checkpoint.as_ref().ok_or_else(|| Error::Invalid("ardae needs a checkpoint path".into()))?;
                let params = checkpoint::read(path)?.params;
                Ok(Box::new(ardae::ArdaeBackend::new(params, path.display().to_string())) as Box<dyn ScoreBackend>)
            }),
        );
        reg
    }

    pub fn register(&mut self, name: &str, factory: BackendFactory) {
        self.factories.insert(name.to_string(), factory);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }

    pub fn build(&self, name: &str, ctx: &BackendContext) -> Result<Box<dyn ScoreBackend>> {
        let factory = self.factories.get(name).ok_or_else(|| {
            let known: Vec<&str> = self.names().collect();
            Error::Invalid(format!("unknown score backend {name:?}; known: {}", known.join(", ")))
        })?;
        factory(ctx)
    }
}
