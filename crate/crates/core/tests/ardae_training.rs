use rand::Rng;
use rand_distr::StandardNormal;

use tweedie_blind::noise::{gen_clean, SynthKind, SynthSpec};
use tweedie_blind::rng::stream;
use tweedie_blind::score::ardae::{
    ardae_loss_and_grad, ema_update, eval_score, train_ardae, ArdaeBackend, ArdaeConfig, MlpParams, Trainer,
};
use tweedie_blind::score::checkpoint;
use tweedie_blind::score::mlp::{Activation, Mlp};
use tweedie_blind::score::{AnalyticGaussianOracle, ScoreBackend};
use tweedie_blind::{Error, GmmPrior, ImageTensor};

fn small_config() -> ArdaeConfig {
    ArdaeConfig {
        patch_radius: 1,
        hidden: vec![8, 8],
        batch_size: 16,
        epochs: 2,
        steps_per_epoch: Some(10),
        schedule_len: 4,
        sigma_a_max: 0.05,
        sigma_a_min: 0.01,
        ..ArdaeConfig::default()
    }
}

fn noisy_images(n: usize) -> Vec<ImageTensor> {
    (0..n as u64)
        .map(|seed| {
            ImageTensor::from_fn(12, 12, |r, c| 0.3 + 0.02 * ((r * 7 + c * 3 + seed as usize) % 11) as f64).unwrap()
        })
        .collect()
}

#[test]
fn gradient_matches_finite_differences_for_three_seeds() {
    for seed in 0..3u64 {
        let net = Mlp::new(&[9, 6, 5, 1], Activation::Tanh, seed).unwrap();
        let mut rng = stream(seed, 99, 0);
        let patches: Vec<f64> = (0..36).map(|_| rng.random_range(0.1..0.9)).collect();
        let u: Vec<f64> = (0..36).map(|_| rng.sample(StandardNormal)).collect();
        let (_, grad) = ardae_loss_and_grad(&net, &patches, &u, 0.1).unwrap();
        for (i, g) in grad.params().enumerate() {
            let h = 1e-5;
            let mut p = net.clone();
            *p.params_mut().nth(i).unwrap() += h;
            let mut m = net.clone();
            *m.params_mut().nth(i).unwrap() -= h;
            let fd = (ardae_loss_and_grad(&p, &patches, &u, 0.1).unwrap().0
                - ardae_loss_and_grad(&m, &patches, &u, 0.1).unwrap().0)
                / (2.0 * h);
            assert!((g - fd).abs() <= 1e-4 * g.abs().max(fd.abs()).max(1e-8), "seed {seed} param {i}: {g} vs {fd}");
        }
    }
}

#[test]
fn zero_network_loss_is_mean_squared_centre_perturbation() {
    let net = Mlp::zeros(&[9, 4, 1], Activation::Silu).unwrap();
    let patches = vec![0.5; 18];
    let mut u = vec![0.0; 18];
    u[4] = 1.5;
    u[13] = -0.5;
    let (loss, _) = ardae_loss_and_grad(&net, &patches, &u, 0.2).unwrap();
    assert!((loss - (2.25 + 0.25) / 2.0).abs() < 1e-15);
}

#[test]
fn ema_contracts_by_decay_each_step() {
    let net = Mlp::new(&[4, 3, 1], Activation::Tanh, 1).unwrap();
    let mut ema = Mlp::new(&[4, 3, 1], Activation::Tanh, 2).unwrap();
    let dist = |a: &Mlp, b: &Mlp| a.params().zip(b.params()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let mut d = dist(&ema, &net);
    for _ in 0..5 {
        ema_update(&mut ema, &net, 0.9);
        let next = dist(&ema, &net);
        assert!((next / d - 0.9).abs() < 1e-12);
        d = next;
    }
}

#[test]
fn zero_decay_ema_tracks_online_weights() {
    let data = noisy_images(2);
    let config = ArdaeConfig { ema_decay: 0.0, ..small_config() };
    let mut trainer = Trainer::new(config, &data, 4).unwrap();
    for _ in 0..5 {
        trainer.step().unwrap();
        let p = trainer.params();
        assert_eq!(p.net, p.ema);
    }
}

#[test]
fn training_is_deterministic() {
    let data = noisy_images(3);
    let (p1, h1) = train_ardae(&small_config(), &data, 11).unwrap();
    let (p2, h2) = train_ardae(&small_config(), &data, 11).unwrap();
    assert_eq!(h1, h2);
    assert_eq!(p1, p2);
    let (_, h3) = train_ardae(&small_config(), &data, 12).unwrap();
    assert_ne!(h1, h3);
    assert!(h1.windows(2).all(|w| w[1].running_min <= w[0].running_min));
}

#[test]
fn zero_epochs_returns_initialization() {
    let data = noisy_images(1);
    let config = ArdaeConfig { epochs: 0, ..small_config() };
    let (params, history) = train_ardae(&config, &data, 5).unwrap();
    assert!(history.is_empty());
    let init = Mlp::new(&config.layer_sizes(), config.activation, 5).unwrap();
    assert_eq!(params.net, init);
    assert_eq!(params.ema, init);
}

#[test]
fn divergence_is_reported() {
    let data = vec![ImageTensor::filled(8, 8, 1e300).unwrap()];
    let mut trainer = Trainer::new(small_config(), &data, 0).unwrap();
    let before = trainer.params();
    assert!(matches!(trainer.step(), Err(Error::TrainingDivergence { step: 0, .. })));
    assert_eq!(trainer.params(), before);
}

#[test]
fn inference_properties() {
    let zero = Mlp::zeros(&[25, 4, 1], Activation::Silu).unwrap();
    let params = MlpParams::new(zero.clone(), zero, 2).unwrap();
    let flat = ImageTensor::filled(6, 6, 0.4).unwrap();
    assert!(eval_score(&params, &flat).unwrap().iter().all(|&v| v == 0.0));

    let (trained, _) = train_ardae(&ArdaeConfig { patch_radius: 2, ..small_config() }, &noisy_images(2), 3).unwrap();
    let y = ImageTensor::filled(6, 6, 0.4).unwrap();
    let s = eval_score(&trained, &y).unwrap();
    assert!(s.iter().all(|&v| v == s[0]), "constant image gives constant field");
    let img = noisy_images(1).remove(0);
    assert_eq!(eval_score(&trained, &img).unwrap(), eval_score(&trained, &img).unwrap());
    assert!(eval_score(&trained, &ImageTensor::filled(2, 8, 0.4).unwrap()).is_err());
}

#[test]
fn checkpoint_backend_matches_in_memory_params() {
    let (params, _) = train_ardae(&small_config(), &noisy_images(2), 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    checkpoint::write(&path, &params, &checkpoint::config_hash(b"cfg")).unwrap();
    let loaded = checkpoint::read(&path).unwrap();
    let img = noisy_images(1).remove(0);
    let a = ArdaeBackend::new(params, "mem").score(&img).unwrap();
    let b = ArdaeBackend::new(loaded.params, "disk").score(&img).unwrap();
    assert_eq!(a.values(), b.values());
}

#[test]
fn learned_score_correlates_with_analytic_score() {
    let prior = GmmPrior::uniform(&[(0.3, 0.05), (0.7, 0.05)]).unwrap();
    let sigma = 0.1;
    let draw = |count: usize, seed: u64| -> Vec<f64> {
        let spec = SynthSpec { kind: SynthKind::GmmIid, height: 100, width: count / 100, prior: prior.clone(), seed };
        let x = gen_clean(&spec).unwrap();
        x.data()
            .iter()
            .enumerate()
            .map(|(i, &xi)| xi + sigma * stream(seed, 7, i as u64).sample::<f64, _>(StandardNormal))
            .collect()
    };
    let train = ImageTensor::new(1, 20_000, draw(20_000, 1)).unwrap();
    let config = ArdaeConfig {
        patch_radius: 0,
        hidden: vec![32, 32],
        sigma_a_max: 0.03,
        sigma_a_min: 0.01,
        schedule_len: 5,
        batch_size: 256,
        epochs: 60,
        learning_rate: 3e-3,
        decayed_learning_rate: 3e-4,
        ..ArdaeConfig::default()
    };
    let (params, _) = train_ardae(&config, std::slice::from_ref(&train), 1).unwrap();
    let held = draw(5_000, 2);
    let learned = eval_score(&params, &ImageTensor::new(1, held.len(), held.clone()).unwrap()).unwrap();
    let oracle = AnalyticGaussianOracle::new(prior, sigma).unwrap();
    let truth: Vec<f64> = held.iter().map(|&y| oracle.score_at(y)).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (ml, mt) = (mean(&learned), mean(&truth));
    let cov: f64 = learned.iter().zip(&truth).map(|(a, b)| (a - ml) * (b - mt)).sum();
    let vl: f64 = learned.iter().map(|a| (a - ml).powi(2)).sum();
    let vt: f64 = truth.iter().map(|b| (b - mt).powi(2)).sum();
    let corr = cov / (vl * vt).sqrt();
    assert!(corr >= 0.95, "correlation {corr}");
}
