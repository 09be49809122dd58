//! Residual denoising score estimator trained on noisy patches only.
//!
//! The network `R` maps a `(2r+1)^2` patch to the score at its centre. A
//! training step perturbs each patch by `sigma_a * u`, `u ~ N(0, I)`, and
//! minimises the mean of `(u_c + sigma_a R(patch + sigma_a u))^2` where `u_c`
//! is the perturbation of the centre pixel. The minimiser is the score of the
//! data smoothed at scale `sigma_a`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::mlp::{Activation, Mlp, Scratch};
use super::{ScoreBackend, ScoreField};
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::rng::{domain, stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArdaeConfig {
    pub patch_radius: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub sigma_a_max: f64,
    pub sigma_a_min: f64,
    pub schedule_len: usize,
    pub batch_size: usize,
    pub epochs: usize,
    /// Steps per epoch; defaults to one pass over all pixels.
    pub steps_per_epoch: Option<usize>,
    pub learning_rate: f64,
    pub decayed_learning_rate: f64,
    /// Epoch at which the decayed rate takes over; defaults to `epochs / 2`.
    pub decay_epoch: Option<usize>,
    pub ema_decay: f64,
}

impl Default for ArdaeConfig {
    fn default() -> Self {
        Self {
            patch_radius: 4,
            hidden: vec![128, 128],
            activation: Activation::Silu,
            sigma_a_max: 0.1,
            sigma_a_min: 0.001,
            schedule_len: 10,
            batch_size: 64,
            epochs: 20,
            steps_per_epoch: None,
            learning_rate: 2e-4,
            decayed_learning_rate: 2e-5,
            decay_epoch: None,
            ema_decay: 0.999,
        }
    }
}

impl ArdaeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(m));
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad(format!("hidden widths must be positive, got {:?}", self.hidden));
        }
        if !(self.sigma_a_min > 0.0 && self.sigma_a_max >= self.sigma_a_min && self.sigma_a_max.is_finite()) {
            return bad(format!(
                "need 0 < sigma_a_min <= sigma_a_max, got [{}, {}]",
                self.sigma_a_min, self.sigma_a_max
            ));
        }
        if self.schedule_len == 0 || self.batch_size == 0 {
            return bad("schedule length and batch size must be positive".into());
        }
        if self.steps_per_epoch == Some(0) {
            return bad("steps_per_epoch must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.decayed_learning_rate > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return bad(format!("ema_decay must lie in [0, 1), got {}", self.ema_decay));
        }
        Ok(())
    }

    pub fn patch_len(&self) -> usize {
        (2 * self.patch_radius + 1).pow(2)
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        std::iter::once(self.patch_len()).chain(self.hidden.iter().copied()).chain(std::iter::once(1)).collect()
    }
}

/// Trained parameters: the online network, its exponential moving average
/// (used at inference) and the patch geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub net: Mlp,
    pub ema: Mlp,
    pub patch_radius: usize,
}

impl MlpParams {
    pub fn new(net: Mlp, ema: Mlp, patch_radius: usize) -> Result<Self> {
        let len = (2 * patch_radius + 1).pow(2);
        if net.input_dim() != len || net.sizes() != ema.sizes() || net.activation() != ema.activation() {
            return Err(Error::Format(format!(
                "networks {:?}/{:?} do not fit patch radius {patch_radius}",
                net.sizes(),
                ema.sizes()
            )));
        }
        Ok(Self { net, ema, patch_radius })
    }
}

/// `sigma_max * (sigma_min / sigma_max)^(t / (len - 1))` for `t = 0..len`.
pub fn geometric_schedule(sigma_max: f64, sigma_min: f64, len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![sigma_max];
    }
    let ratio = sigma_min / sigma_max;
    (0..len).map(|t| sigma_max * ratio.powf(t as f64 / (len - 1) as f64)).collect()
}

/// Writes the reflect-padded patch centred at `(row, col)` into `out`.
pub fn extract_patch(img: &ImageTensor, row: usize, col: usize, radius: usize, out: &mut Vec<f64>) {
    out.clear();
    let r = radius as isize;
    for dr in -r..=r {
        for dc in -r..=r {
            out.push(img.get_reflect(row as isize + dr, col as isize + dc));
        }
    }
}

/// Mean of `(u_c + sigma_a * R)^2` given network outputs.
pub fn ardae_loss(outputs: &[f64], u_center: &[f64], sigma_a: f64) -> f64 {
    let n = outputs.len() as f64;
    outputs.iter().zip(u_center).map(|(r, u)| (u + sigma_a * r).powi(2)).sum::<f64>() / n
}

/// Loss and parameter gradient for a batch of flattened patches and matching
/// perturbations.
pub fn ardae_loss_and_grad(net: &Mlp, patches: &[f64], u: &[f64], sigma_a: f64) -> Result<(f64, Mlp)> {
    let d = net.input_dim();
    if patches.is_empty() || !patches.len().is_multiple_of(d) || u.len() != patches.len() {
        return Err(Error::Invalid(format!(
            "batch of {} values and {} perturbations does not fit patch length {d}",
            patches.len(),
            u.len()
        )));
    }
    let b = patches.len() / d;
    let centre = d / 2;
    let mut grad = net.zeros_like();
    let mut scratch = Scratch::default();
    let mut input = vec![0.0; d];
    let mut loss = 0.0;
    for i in 0..b {
        let p = &patches[i * d..(i + 1) * d];
        let ui = &u[i * d..(i + 1) * d];
        for ((x, pv), uv) in input.iter_mut().zip(p).zip(ui) {
            *x = pv + sigma_a * uv;
        }
        let r = net.forward(&input, &mut scratch);
        let resid = ui[centre] + sigma_a * r;
        loss += resid * resid;
        net.backward(&input, 2.0 * sigma_a * resid / b as f64, &mut scratch, &mut grad);
    }
    Ok((loss / b as f64, grad))
}

/// `ema <- decay * ema + (1 - decay) * net`.
pub fn ema_update(ema: &mut Mlp, net: &Mlp, decay: f64) {
    for (e, p) in ema.params_mut().zip(net.params()) {
        *e = decay * *e + (1.0 - decay) * p;
    }
}

/// One logged optimisation step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub running_min: f64,
    pub sigma_a: f64,
}

/// Stepwise AR-DAE optimiser (Adam with a one-time learning-rate decay and
/// an EMA shadow of the weights).
pub struct Trainer<'a> {
    config: ArdaeConfig,
    data: &'a [ImageTensor],
    seed: u64,
    net: Mlp,
    ema: Mlp,
    m: Mlp,
    v: Mlp,
    schedule: Vec<f64>,
    step: usize,
    steps_per_epoch: usize,
    running_min: f64,
}

impl<'a> Trainer<'a> {
    pub fn new(config: ArdaeConfig, data: &'a [ImageTensor], seed: u64) -> Result<Self> {
        config.validate()?;
        if data.is_empty() {
            return Err(Error::Invalid("no training images".into()));
        }
        for img in data {
            if img.height() <= config.patch_radius || img.width() <= config.patch_radius {
                return Err(Error::Invalid(format!(
                    "{}x{} image is too small for patch radius {}",
                    img.height(),
                    img.width(),
                    config.patch_radius
                )));
            }
        }
        let net = Mlp::new(&config.layer_sizes(), config.activation, seed)?;
        let pixels: usize = data.iter().map(ImageTensor::len).sum();
        let steps_per_epoch = config.steps_per_epoch.unwrap_or_else(|| pixels.div_ceil(config.batch_size));
        Ok(Self {
            schedule: geometric_schedule(config.sigma_a_max, config.sigma_a_min, config.schedule_len),
            ema: net.clone(),
            m: net.zeros_like(),
            v: net.zeros_like(),
            net,
            config,
            data,
            seed,
            step: 0,
            steps_per_epoch,
            running_min: f64::INFINITY,
        })
    }

    pub fn total_steps(&self) -> usize {
        self.config.epochs * self.steps_per_epoch
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn is_finished(&self) -> bool {
        self.step >= self.total_steps()
    }

    pub fn params(&self) -> MlpParams {
        MlpParams { net: self.net.clone(), ema: self.ema.clone(), patch_radius: self.config.patch_radius }
    }

    fn learning_rate(&self) -> f64 {
        let epoch = self.step / self.steps_per_epoch;
        let decay_at = self.config.decay_epoch.unwrap_or(self.config.epochs / 2);
        if epoch < decay_at {
            self.config.learning_rate
        } else {
            self.config.decayed_learning_rate
        }
    }

    fn draw_batch(&self) -> (f64, Vec<f64>, Vec<f64>) {
        let mut rng = stream(self.seed, domain::TRAIN, self.step as u64);
        let sigma_a = self.schedule[rng.random_range(0..self.schedule.len())];
        let d = self.config.patch_len();
        let mut patches = Vec::with_capacity(self.config.batch_size * d);
        let mut patch = Vec::with_capacity(d);
        for _ in 0..self.config.batch_size {
            let img = &self.data[rng.random_range(0..self.data.len())];
            let row = rng.random_range(0..img.height());
            let col = rng.random_range(0..img.width());
            extract_patch(img, row, col, self.config.patch_radius, &mut patch);
            patches.extend_from_slice(&patch);
        }
        let mut urng = stream(self.seed, domain::LOSS, self.step as u64);
        let u = (0..patches.len()).map(|_| urng.sample::<f64, _>(StandardNormal)).collect();
        (sigma_a, patches, u)
    }

    /// Runs one optimisation step. A non-finite loss or gradient leaves the
    /// parameters at their last good values and returns an error.
    pub fn step(&mut self) -> Result<StepRecord> {
        let (sigma_a, patches, u) = self.draw_batch();
        let (loss, grad) = ardae_loss_and_grad(&self.net, &patches, &u, sigma_a)?;
        if !loss.is_finite() || grad.params().any(|g| !g.is_finite()) {
            return Err(Error::TrainingDivergence { step: self.step, loss });
        }
        let lr = self.learning_rate();
        let t = (self.step + 1) as i32;
        let (b1, b2, eps) = (0.9_f64, 0.999_f64, 1e-8);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for (((p, g), m), v) in
            self.net.params_mut().zip(grad.params()).zip(self.m.params_mut()).zip(self.v.params_mut())
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        }
        ema_update(&mut self.ema, &self.net, self.config.ema_decay);
        self.running_min = self.running_min.min(loss);
        let record = StepRecord { step: self.step, loss, running_min: self.running_min, sigma_a };
        self.step += 1;
        Ok(record)
    }
}

/// Trains to completion and returns the parameters with the loss history.
pub fn train_ardae(config: &ArdaeConfig, data: &[ImageTensor], seed: u64) -> Result<(MlpParams, Vec<StepRecord>)> {
    let mut trainer = Trainer::new(config.clone(), data, seed)?;
    let mut history = Vec::with_capacity(trainer.total_steps());
    while !trainer.is_finished() {
        history.push(trainer.step()?);
    }
    Ok((trainer.params(), history))
}

/// Score field from the EMA network.
pub fn eval_score(params: &MlpParams, y: &ImageTensor) -> Result<Vec<f64>> {
    let r = params.patch_radius;
    if y.height() <= r || y.width() <= r {
        return Err(Error::Invalid(format!("{}x{} image is too small for patch radius {r}", y.height(), y.width())));
    }
    let mut patch = Vec::with_capacity((2 * r + 1).pow(2));
    let mut scratch = Scratch::default();
    let mut out = Vec::with_capacity(y.len());
    for row in 0..y.height() {
        for col in 0..y.width() {
            extract_patch(y, row, col, r, &mut patch);
            out.push(params.ema.forward(&patch, &mut scratch));
        }
    }
    Ok(out)
}

/// Score backend backed by a trained network.
pub struct ArdaeBackend {
    params: MlpParams,
    source: String,
}

impl ArdaeBackend {
    pub fn new(params: MlpParams, source: impl Into<String>) -> Self {
        Self { params, source: source.into() }
    }

    pub fn params(&self) -> &MlpParams {
        &self.params
    }
}

impl ScoreBackend for ArdaeBackend {
    fn name(&self) -> &str {
        "ardae"
    }

    fn describe(&self) -> String {
        format!("ardae({})", self.source)
    }

    fn score(&self, y: &ImageTensor) -> Result<ScoreField> {
        ScoreField::new(y.height(), y.width(), eval_score(&self.params, y)?, self.describe())
    }
}
