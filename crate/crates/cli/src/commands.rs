//! Subcommand bodies. Each is a pure function of the configuration and its
//! input files; wall-clock timings go only to `timings.log`.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::Serialize;
use tweedie_blind::estimation::{model_label, EstimationReport, RhoEstimator, RhoRegistry};
use tweedie_blind::noise::{gen_clean, psnr, sample_noisy};
use tweedie_blind::pipeline::{brute_posterior_mean, denoise_blind, denoise_known, estimate_blind, Timings};
use tweedie_blind::rng::{derive_seed, domain};
use tweedie_blind::score::ardae::train_ardae;
use tweedie_blind::score::checkpoint;
use tweedie_blind::score::BackendContext;
use tweedie_blind::{Error, GmmPrior, ImageTensor, NoiseKind, Result, ScoreBackend, ScoreRegistry, INTENSITY_FLOOR};

use crate::config::{hash_of, ExperimentConfig};
use crate::manifest::{Entry, Manifest, MANIFEST_VERSION};

struct TimingLog {
    path: PathBuf,
    command: &'static str,
    lines: Vec<String>,
}

impl TimingLog {
    fn new(out: &Path, command: &'static str) -> Self {
        Self { path: out.join("timings.log"), command, lines: Vec::new() }
    }

    fn record(&mut self, what: &str, ms: f64) {
        self.lines.push(format!("{what} {ms:.3}"));
    }

    fn stages(&mut self, image: &str, t: &Timings) {
        self.lines.push(format!(
            "{image} perturb={:.3} score={:.3} estimate={:.3} apply={:.3}",
            t.perturb_ms, t.score_ms, t.estimate_ms, t.apply_ms
        ));
    }

    fn flush(self) -> Result<()> {
        let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis());
        let mut f = OpenOptions::new().create(true).append(true).open(&self.path)?;
        for line in self.lines {
            writeln!(f, "{stamp} {} {line}", self.command)?;
        }
        Ok(())
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("csv: {other:?}")),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes)?;
    Ok(())
}

fn batch_result(failed: usize, total: usize, what: &str) -> Result<()> {
    if failed == 0 {
        Ok(())
    } else {
        Err(Error::EstimationFailure(format!("{failed} of {total} images failed; see {what}")))
    }
}

pub fn synth(cfg: &ExperimentConfig) -> Result<()> {
    cfg.validate_synth()?;
    let out = cfg.out_dir()?;
    let started = Instant::now();
    fs::create_dir_all(out.join("clean"))?;
    fs::create_dir_all(out.join("noisy"))?;
    let mut jobs = Vec::new();
    for block in &cfg.synth.noise {
        let range = block.range()?;
        for j in 0..block.images {
            let t = if block.images == 1 { 0.5 } else { j as f64 / (block.images - 1) as f64 };
            jobs.push(range.model_at(t)?);
        }
    }
    let images = jobs
        .par_iter()
        .enumerate()
        .map(|(i, &truth)| {
            let name = format!("img{i:04}");
            let x = gen_clean(&cfg.synth_spec(derive_seed(cfg.seed, domain::CLEAN, i as u64)))?;
            let y = sample_noisy(&x, truth, derive_seed(cfg.seed, domain::NOISE, i as u64))?;
            let clean = PathBuf::from("clean").join(&name);
            let noisy = PathBuf::from("noisy").join(&name);
            x.write_raw(&out.join(&clean))?;
            y.write_raw(&out.join(&noisy))?;
            Ok(Entry { name, clean: clean.with_extension("raw"), noisy: noisy.with_extension("raw"), truth })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        config_hash: hash_of(&(cfg.seed, &cfg.synth))?,
        seed: cfg.seed,
        prior: cfg.synth.prior.clone(),
        images,
    };
    manifest.write(&out.join("manifest.json"))?;
    let mut log = TimingLog::new(out, "synth");
    log.record("total", started.elapsed().as_secs_f64() * 1e3);
    log.flush()
}

pub fn train(cfg: &ExperimentConfig) -> Result<()> {
    cfg.validate_train()?;
    let out = cfg.out_dir()?;
    let (manifest, root) = Manifest::read(&cfg.manifest_path()?)?;
    let data = manifest.images.par_iter().map(|e| e.load_noisy(&root)).collect::<Result<Vec<_>>>()?;
    let started = Instant::now();
    let (params, history) = train_ardae(&cfg.ardae, &data, cfg.seed)?;
    let hash = hash_of(&(cfg.seed, &cfg.ardae, &manifest.config_hash))?;
    fs::create_dir_all(out)?;
    let ckpt = cfg.checkpoint_path()?;
    if let Some(dir) = ckpt.parent() {
        fs::create_dir_all(dir)?;
    }
    checkpoint::write(&ckpt, &params, &hash)?;
    write_csv(&out.join("loss.csv"), &history)?;
    let mut log = TimingLog::new(out, "train");
    log.record("total", started.elapsed().as_secs_f64() * 1e3);
    log.flush()
}

/// Everything the inference commands share.
struct Inference {
    out: PathBuf,
    root: PathBuf,
    manifest: Manifest,
    scores: ScoreRegistry,
    rho: Box<dyn RhoEstimator>,
    checkpoint: Option<PathBuf>,
}

impl Inference {
    fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate_inference()?;
        let (manifest, root) = Manifest::read(&cfg.manifest_path()?)?;
        let checkpoint = match cfg.score.backend.as_str() {
            "ardae" => Some(cfg.checkpoint_path()?),
            _ => cfg.score.checkpoint.clone(),
        };
        Ok(Self {
            out: cfg.out_dir()?.to_path_buf(),
            root,
            manifest,
            scores: ScoreRegistry::with_builtins(),
            rho: RhoRegistry::with_builtins().build(&cfg.estimation)?,
            checkpoint,
        })
    }

    /// Oracle backends see the prior and the image's true noise model;
    /// learned backends ignore both.
    fn backend(&self, cfg: &ExperimentConfig, entry: &Entry) -> Result<Box<dyn ScoreBackend>> {
        let ctx = BackendContext {
            prior: Some(self.manifest.prior.clone()),
            model: Some(entry.truth),
            checkpoint: self.checkpoint.clone(),
            quadrature_order: cfg.score.quadrature_order,
        };
        self.scores.build(&cfg.score.backend, &ctx)
    }

    fn seed(&self, cfg: &ExperimentConfig, index: usize) -> u64 {
        derive_seed(cfg.seed, domain::PERTURB, index as u64)
    }
}

#[derive(Debug, Serialize)]
struct SummaryRow {
    image: String,
    rho_hat: Option<f64>,
    model: String,
    level: Option<f64>,
    truth_model: String,
    truth_level: f64,
    correct: bool,
}

#[derive(Debug, Serialize)]
struct EstimateRun {
    config_hash: String,
    images: usize,
    failed: usize,
    accuracy: f64,
}

pub fn estimate(cfg: &ExperimentConfig) -> Result<()> {
    let inf = Inference::new(cfg)?;
    let dir = inf.out.join("estimate");
    fs::create_dir_all(&dir)?;
    let results: Vec<Result<(EstimationReport, Timings)>> = inf
        .manifest
        .images
        .par_iter()
        .enumerate()
        .map(|(i, e)| {
            let y = e.load_noisy(&inf.root)?;
            let backend = inf.backend(cfg, e)?;
            let seed = inf.seed(cfg, i);
            let est = estimate_blind(&y, backend.as_ref(), inf.rho.as_ref(), &cfg.estimation, seed)?;
            let report = EstimationReport {
                rho_hat: est.model.rho_hat,
                model: model_label(est.model.model).to_string(),
                level: est.level.map(|l| l.level),
                mask_fraction: est.model.mask_fraction,
                pixel_count: y.len(),
                seed,
                backend: backend.name().to_string(),
                strategy: est.model.strategy.clone(),
            };
            Ok((report, est.timings))
        })
        .collect();

    let mut log = TimingLog::new(&inf.out, "estimate");
    let mut rows = Vec::with_capacity(results.len());
    let mut failed = 0;
    for (e, res) in inf.manifest.images.iter().zip(results) {
        let path = dir.join(format!("{}.json", e.name));
        let (rho_hat, model, level) = match res {
            Ok((report, timings)) => {
                write_json(&path, &report)?;
                log.stages(&e.name, &timings);
                (Some(report.rho_hat), report.model, report.level)
            }
            Err(err) => {
                failed += 1;
                write_json(&path, &serde_json::json!({ "error": err.to_string() }))?;
                (None, "error".to_string(), None)
            }
        };
        rows.push(SummaryRow {
            image: e.name.clone(),
            rho_hat,
            correct: model == e.truth.kind.name(),
            model,
            level,
            truth_model: e.truth.kind.name().to_string(),
            truth_level: e.truth.level,
        });
    }
    write_csv(&inf.out.join("estimate_summary.csv"), &rows)?;
    let correct = rows.iter().filter(|r| r.correct).count();
    write_json(
        &inf.out.join("estimate.json"),
        &EstimateRun {
            config_hash: hash_of(&(cfg.seed, &cfg.score, &cfg.estimation, &inf.manifest.config_hash))?,
            images: rows.len(),
            failed,
            accuracy: correct as f64 / rows.len() as f64,
        },
    )?;
    log.flush()?;
    batch_result(failed, rows.len(), "estimate/*.json")
}

pub fn denoise(cfg: &ExperimentConfig) -> Result<()> {
    let inf = Inference::new(cfg)?;
    fs::create_dir_all(inf.out.join("denoised"))?;
    fs::create_dir_all(inf.out.join("reports"))?;
    let results: Vec<Result<Timings>> = inf
        .manifest
        .images
        .par_iter()
        .enumerate()
        .map(|(i, e)| {
            let y = e.load_noisy(&inf.root)?;
            let backend = inf.backend(cfg, e)?;
            let (x, report) = denoise_blind(&y, backend.as_ref(), inf.rho.as_ref(), &cfg.estimation, inf.seed(cfg, i))?;
            x.write_raw(&inf.out.join("denoised").join(&e.name))?;
            write_json(&inf.out.join("reports").join(format!("{}.json", e.name)), &report)?;
            Ok(report.timings)
        })
        .collect();
    let mut log = TimingLog::new(&inf.out, "denoise");
    let mut failed = 0;
    for (e, res) in inf.manifest.images.iter().zip(results) {
        match res {
            Ok(t) => log.stages(&e.name, &t),
            Err(err) => {
                failed += 1;
                write_json(
                    &inf.out.join("reports").join(format!("{}.json", e.name)),
                    &serde_json::json!({ "error": err.to_string() }),
                )?;
            }
        }
    }
    log.flush()?;
    batch_result(failed, inf.manifest.images.len(), "reports/*.json")
}

#[derive(Debug, Default, Serialize)]
struct PsnrRow {
    image: String,
    noisy: Option<f64>,
    blind: Option<f64>,
    known: Option<f64>,
    oracle_posterior: Option<f64>,
    error: String,
}

/// Exact posterior mean of every pixel. Poisson pixels sitting at the
/// intensity floor are zero counts.
fn oracle_posterior(y: &ImageTensor, prior: &GmmPrior, entry: &Entry) -> Result<ImageTensor> {
    let zero_count = |v: f64| entry.truth.kind == NoiseKind::Poisson && v <= INTENSITY_FLOOR * (1.0 + 1e-6);
    let data = y
        .data()
        .iter()
        .map(|&v| brute_posterior_mean(if zero_count(v) { 0.0 } else { v }, prior, entry.truth))
        .collect::<Result<Vec<_>>>()?;
    ImageTensor::new(y.height(), y.width(), data)
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn eval(cfg: &ExperimentConfig) -> Result<()> {
    let inf = Inference::new(cfg)?;
    let started = Instant::now();
    let mut rows: Vec<PsnrRow> = inf
        .manifest
        .images
        .par_iter()
        .enumerate()
        .map(|(i, e)| {
            let mut row = PsnrRow { image: e.name.clone(), ..PsnrRow::default() };
            let mut errors = Vec::new();
            let inputs = e.load_clean(&inf.root).and_then(|x| Ok((x, e.load_noisy(&inf.root)?)));
            let (x, y) = match inputs {
                Ok(v) => v,
                Err(err) => {
                    row.error = err.to_string();
                    return row;
                }
            };
            let mut score = |r: Result<ImageTensor>, what: &str| match r.and_then(|xh| psnr(&x, &xh, 1.0)) {
                Ok(p) => Some(p),
                Err(err) => {
                    errors.push(format!("{what}: {err}"));
                    None
                }
            };
            row.noisy = score(Ok(y.clone()), "noisy");
            match inf.backend(cfg, e) {
                Ok(backend) => {
                    let blind =
                        denoise_blind(&y, backend.as_ref(), inf.rho.as_ref(), &cfg.estimation, inf.seed(cfg, i));
                    row.blind = score(blind.map(|r| r.0), "blind");
                    row.known = score(denoise_known(&y, e.truth, backend.as_ref()).map(|r| r.0), "known");
                }
                Err(err) => {
                    score(Err(err), "backend");
                }
            }
            row.oracle_posterior = score(oracle_posterior(&y, &inf.manifest.prior, e), "oracle_posterior");
            row.error = errors.join("; ");
            row
        })
        .collect();
    let failed = rows.iter().filter(|r| !r.error.is_empty()).count();
    rows.push(PsnrRow {
        image: "mean".into(),
        noisy: mean_of(rows.iter().map(|r| r.noisy)),
        blind: mean_of(rows.iter().map(|r| r.blind)),
        known: mean_of(rows.iter().map(|r| r.known)),
        oracle_posterior: mean_of(rows.iter().map(|r| r.oracle_posterior)),
        error: String::new(),
    });
    write_csv(&inf.out.join("psnr.csv"), &rows)?;
    let mut log = TimingLog::new(&inf.out, "eval");
    log.record("total", started.elapsed().as_secs_f64() * 1e3);
    log.flush()?;
    batch_result(failed, inf.manifest.images.len(), "the error column of psnr.csv")
}
