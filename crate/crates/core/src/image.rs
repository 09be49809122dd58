//! Single-channel image grid plus its on-disk formats.
//!
//! The raw tensor format is a little-endian `f32` payload (`<name>.raw`) with a
//! JSON sidecar (`<name>.json`) of the form `{"dtype":"f32","shape":[H,W]}`.
//! A binary 8-bit PGM (P5) writer exists for visual inspection only.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower clamp applied to every intensity entering a Tweedie formula.
pub const INTENSITY_FLOOR: f64 = 1e-4;

/// Row-major 2-D grid of intensities in nominal range (0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Invalid(format!("image dimensions must be positive, got {height}x{width}")));
        }
        if data.len() != height * width {
            return Err(Error::Invalid(format!("data length {} does not match {height}x{width}", data.len())));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite intensity at pixel {i}")));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    /// Reflect-padded access (`-1 -> 1`, `h -> h-2`), used for patch extraction.
    pub fn get_reflect(&self, row: isize, col: isize) -> f64 {
        let r = reflect(row, self.height);
        let c = reflect(col, self.width);
        self.data[r * self.width + c]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.height, self.width, self.data.iter().map(|&v| f(v)).collect())
    }

    /// Elementwise clamp to at least [`INTENSITY_FLOOR`]. Returns the image and
    /// the number of clamped entries.
    pub fn clamp_floor(&self) -> (Self, usize) {
        let mut clamped = 0;
        let data = self
            .data
            .iter()
            .map(|&v| {
                if v < INTENSITY_FLOOR {
                    clamped += 1;
                    INTENSITY_FLOOR
                } else {
                    v
                }
            })
            .collect();
        (Self { height: self.height, width: self.width, data }, clamped)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn ensure_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape { expected: self.shape(), actual: other.shape() });
        }
        Ok(())
    }

    /// Writes `<stem>.raw` and `<stem>.json`; returns the payload path.
    pub fn write_raw(&self, stem: &Path) -> Result<PathBuf> {
        let raw = stem.with_extension("raw");
        let mut bytes = Vec::with_capacity(self.data.len() * 4);
        for &v in &self.data {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
        fs::write(&raw, bytes)?;
        let sidecar = RawSidecar { dtype: "f32".to_string(), shape: [self.height, self.width] };
        fs::write(stem.with_extension("json"), serde_json::to_vec(&sidecar)?)?;
        Ok(raw)
    }

    /// Reads a raw tensor given either the payload path or its stem.
    pub fn read_raw(path: &Path) -> Result<Self> {
        let raw = path.with_extension("raw");
        let sidecar: RawSidecar = serde_json::from_slice(&fs::read(path.with_extension("json"))?)?;
        if sidecar.dtype != "f32" {
            return Err(Error::Format(format!("unsupported dtype {:?} in {}", sidecar.dtype, raw.display())));
        }
        let [h, w] = sidecar.shape;
        let bytes = fs::read(&raw)?;
        if bytes.len() != h * w * 4 {
            return Err(Error::Format(format!(
                "{} holds {} bytes, expected {}",
                raw.display(),
                bytes.len(),
                h * w * 4
            )));
        }
        let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
        Self::new(h, w, data)
    }

    /// 8-bit binary PGM, values clipped to [0, 1].
    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        write!(f, "P5\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        f.write_all(&bytes)?;
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSidecar {
    dtype: String,
    shape: [usize; 2],
}

fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut k = i.rem_euclid(period);
    if k >= n as isize {
        k = period - k;
    }
    k as usize
}
