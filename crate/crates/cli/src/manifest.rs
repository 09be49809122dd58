//! Index of a synthetic dataset: where each clean/noisy pair lives and which
//! noise produced it.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tweedie_blind::{Error, GmmPrior, ImageTensor, NoiseModel, Result};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub prior: GmmPrior,
    pub images: Vec<Entry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Entry {
    pub name: String,
    /// Paths are relative to the manifest's directory.
    pub clean: PathBuf,
    pub noisy: PathBuf,
    pub truth: NoiseModel,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<(Self, PathBuf)> {
        let manifest: Self = serde_json::from_slice(&fs::read(path)?)?;
        if manifest.version != MANIFEST_VERSION {
            return Err(Error::Invalid(format!("manifest version {} is not supported", manifest.version)));
        }
        if manifest.images.is_empty() {
            return Err(Error::Invalid(format!("{} lists no images", path.display())));
        }
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((manifest, root))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        fs::write(path, bytes)?;
        Ok(())
    }
}

impl Entry {
    pub fn load_noisy(&self, root: &Path) -> Result<ImageTensor> {
        ImageTensor::read_raw(&root.join(&self.noisy))
    }

    pub fn load_clean(&self, root: &Path) -> Result<ImageTensor> {
        ImageTensor::read_raw(&root.join(&self.clean))
    }
}
