use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::prior::GmmPrior;
use crate::error::{Error, Result};
use crate::image::{ImageTensor, INTENSITY_FLOOR};
use crate::rng::{domain, stream};

/// How clean images are generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SynthKind {
    /// Axis-aligned rectangles, each filled with one draw from the prior.
    PiecewiseConstant { regions: usize },
    /// Every pixel drawn independently from the prior.
    GmmIid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub kind: SynthKind,
    pub height: usize,
    pub width: usize,
    pub prior: GmmPrior,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height < 8 || self.width < 8 {
            return Err(Error::Invalid(format!(
                "synthetic images must be at least 8x8, got {}x{}",
                self.height, self.width
            )));
        }
        if let SynthKind::PiecewiseConstant { regions } = self.kind {
            if regions == 0 {
                return Err(Error::Invalid("region count must be at least 1".into()));
            }
            if regions > self.height * self.width {
                return Err(Error::Invalid(format!("{regions} regions exceed the pixel count")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Rect {
    r0: usize,
    c0: usize,
    r1: usize,
    c1: usize,
}

impl Rect {
    fn area(&self) -> usize {
        (self.r1 - self.r0) * (self.c1 - self.c0)
    }
}

fn pick_component(prior: &GmmPrior, u: f64) -> usize {
    let mut acc = 0.0;
    let comps = prior.components();
    for (i, c) in comps.iter().enumerate() {
        acc += c.weight;
        if u < acc {
            return i;
        }
    }
    comps.len() - 1
}

/// Generates a clean image; a pure function of `spec`.
pub fn gen_clean(spec: &SynthSpec) -> Result<ImageTensor> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    match spec.kind {
        SynthKind::GmmIid => {
            let data = (0..h * w)
                .map(|i| {
                    let mut rng = stream(spec.seed, domain::CLEAN, i as u64);
                    let c = spec.prior.components()[pick_component(&spec.prior, rng.random())];
                    let z: f64 = rng.sample(StandardNormal);
                    (c.mean + c.std * z).clamp(INTENSITY_FLOOR, 1.0)
                })
                .collect();
            ImageTensor::new(h, w, data)
        }
        SynthKind::PiecewiseConstant { regions } => {
            let mut rng = stream(spec.seed, domain::CLEAN, 0);
            // Repeatedly split the largest splittable rectangle at a random cut.
            let mut rects = vec![Rect { r0: 0, c0: 0, r1: h, c1: w }];
            while rects.len() < regions {
                let (idx, _) = rects
                    .iter()
                    .enumerate()
                    .filter(|(_, r)| r.area() > 1)
                    .max_by_key(|(i, r)| (r.area(), usize::MAX - i))
                    .expect("regions <= pixel count");
                let r = rects.swap_remove(idx);
                let (rh, rw) = (r.r1 - r.r0, r.c1 - r.c0);
                let horizontal = if rh > 1 && rw > 1 { rh >= rw } else { rh > 1 };
                if horizontal {
                    let cut = r.r0 + 1 + rng.random_range(0..rh - 1);
                    rects.push(Rect { r1: cut, ..r });
                    rects.push(Rect { r0: cut, ..r });
                } else {
                    let cut = r.c0 + 1 + rng.random_range(0..rw - 1);
                    rects.push(Rect { c1: cut, ..r });
                    rects.push(Rect { c0: cut, ..r });
                }
            }
            let mut data = vec![0.0; h * w];
            for r in &rects {
                let c = spec.prior.components()[pick_component(&spec.prior, rng.random())];
                let z: f64 = rng.sample(StandardNormal);
                let level = (c.mean + c.std * z).clamp(INTENSITY_FLOOR, 1.0);
                for row in r.r0..r.r1 {
                    data[row * w + r.c0..row * w + r.c1].fill(level);
                }
            }
            ImageTensor::new(h, w, data)
        }
    }
}
