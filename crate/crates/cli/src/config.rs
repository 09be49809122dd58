//! Experiment configuration, read from a single TOML file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tweedie_blind::estimation::{EstimationConfig, RhoRegistry};
use tweedie_blind::noise::{SynthKind, SynthSpec};
use tweedie_blind::score::ardae::ArdaeConfig;
use tweedie_blind::score::checkpoint;
use tweedie_blind::{Error, GmmPrior, NoiseKind, NoiseRange, Result, ScoreRegistry};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    #[serde(default)]
    pub seed: u64,
    /// Run directory; `--out` takes precedence.
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Input manifest; defaults to `<out>/manifest.json`.
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    #[serde(default)]
    pub synth: SynthConfig,
    #[serde(default)]
    pub score: ScoreConfig,
    #[serde(default)]
    pub ardae: ArdaeConfig,
    #[serde(default)]
    pub estimation: EstimationConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub clean: SynthKind,
    pub height: usize,
    pub width: usize,
    pub prior: GmmPrior,
    pub noise: Vec<NoiseSpec>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            clean: SynthKind::PiecewiseConstant { regions: 16 },
            height: 64,
            width: 64,
            prior: GmmPrior::two_level(),
            noise: Vec::new(),
        }
    }
}

/// A block of synthetic images whose levels are spaced evenly over
/// `[lo, hi]`. Gaussian bounds are standard deviations on the 0-255 scale;
/// Poisson bounds are zeta and Gamma bounds are k.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub lo: f64,
    pub hi: f64,
    pub images: usize,
}

impl NoiseSpec {
    pub fn range(&self) -> Result<NoiseRange> {
        let scale = if self.kind == NoiseKind::Gaussian { 255.0 } else { 1.0 };
        NoiseRange::new(self.kind, self.lo / scale, self.hi / scale)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreConfig {
    /// Registered backend name.
    pub backend: String,
    /// Checkpoint for the learned backend; defaults to `<out>/model.ckpt`.
    pub checkpoint: Option<PathBuf>,
    pub quadrature_order: Option<usize>,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self { backend: "oracle-quadrature".into(), checkpoint: None, quadrature_order: None }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Invalid(format!("cannot read config {}: {e}", path.display())))?;
        let config: Self = toml::from_str(&text).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
        if config.version != CONFIG_VERSION {
            return Err(Error::Invalid(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                config.version
            )));
        }
        Ok(config)
    }

    pub fn out_dir(&self) -> Result<&Path> {
        self.out.as_deref().ok_or_else(|| Error::Invalid("no output directory: set `out` or pass --out".into()))
    }

    pub fn manifest_path(&self) -> Result<PathBuf> {
        match &self.manifest {
            Some(p) => Ok(p.clone()),
            None => Ok(self.out_dir()?.join("manifest.json")),
        }
    }

    pub fn checkpoint_path(&self) -> Result<PathBuf> {
        match &self.score.checkpoint {
            Some(p) => Ok(p.clone()),
            None => Ok(self.out_dir()?.join("model.ckpt")),
        }
    }

    pub fn synth_spec(&self, seed: u64) -> SynthSpec {
        SynthSpec {
            kind: self.synth.clean.clone(),
            height: self.synth.height,
            width: self.synth.width,
            prior: self.synth.prior.clone(),
            seed,
        }
    }

    pub fn validate_synth(&self) -> Result<()> {
        self.out_dir()?;
        self.synth_spec(self.seed).validate()?;
        if self.synth.noise.is_empty() {
            return Err(Error::Invalid("synth.noise lists no noise blocks".into()));
        }
        for n in &self.synth.noise {
            n.range()?;
            if n.images == 0 {
                return Err(Error::Invalid(format!("{} block has zero images", n.kind)));
            }
        }
        Ok(())
    }

    pub fn validate_train(&self) -> Result<()> {
        self.out_dir()?;
        self.ardae.validate()?;
        require_file(&self.manifest_path()?)
    }

    /// Checks that score and estimation settings are usable and every
    /// referenced file exists.
    pub fn validate_inference(&self) -> Result<()> {
        self.out_dir()?;
        self.estimation.validate()?;
        RhoRegistry::with_builtins().build(&self.estimation)?;
        let scores = ScoreRegistry::with_builtins();
        if !scores.names().any(|n| n == self.score.backend) {
            let known: Vec<&str> = scores.names().collect();
            return Err(Error::Invalid(format!(
                "unknown score backend {:?}; known: {}",
                self.score.backend,
                known.join(", ")
            )));
        }
        if self.score.backend == "ardae" {
            require_file(&self.checkpoint_path()?)?;
        }
        require_file(&self.manifest_path()?)
    }
}

/// Hex SHA-256 of the JSON encoding of `value`.
pub fn hash_of<T: Serialize>(value: &T) -> Result<String> {
    Ok(checkpoint::config_hash(&serde_json::to_vec(value)?))
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Invalid(format!("{} does not exist", path.display())))
    }
}
