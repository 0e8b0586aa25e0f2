#![allow(dead_code)]

use std::path::PathBuf;

use fedperl::config::ExperimentConfig;
use fedperl::data::{Augmenter, LabeledSample, UnlabeledSample};
use fedperl::federation::Mode;
use fedperl::nn::{forward, logits, ModelParams};
use fedperl::ssl::{anonymize_peers, local_ssl_loss, EnsembleNorm, LossSettings, PeerContext};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Six clients in two groups of three over four classes; a few seconds of
/// training at most.
pub fn small_config(mode: Mode) -> ExperimentConfig {
    let text = format!(
        r#"
mode = "{mode}"
seed = 11
rounds = 8
warmup_rounds = 3
participation_rate = 0.5
steps_per_round = 5
learning_rate = 0.01
hidden = [8]

[dataset]
kind = "synthetic"
classes = 4
dim = 6
samples = 1600
separation = 3.0

[partition]
kind = "explicit"
class_probs = [
    [0.4, 0.4, 0.1, 0.1],
    [0.4, 0.4, 0.1, 0.1],
    [0.4, 0.4, 0.1, 0.1],
    [0.1, 0.1, 0.4, 0.4],
    [0.1, 0.1, 0.4, 0.4],
    [0.1, 0.1, 0.4, 0.4],
]
sizes = [150, 150, 150, 150, 150, 150]
"#
    );
    ExperimentConfig::parse(&text).expect("small config is valid")
}

pub fn bench_config_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/bench-10c.toml")
}

pub fn bench_config(mode: Mode, seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_path(bench_config_path()).expect("bench config loads");
    cfg.mode = mode;
    cfg.seed = seed;
    cfg
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Worst relative error between the analytic gradient of the full local
/// objective and central differences, for one random configuration.
pub fn full_loss_gradient_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let depth = rng.random_range(1..=3);
    let d = rng.random_range(2..=5);
    let c = rng.random_range(2..=5);
    let mut arch = vec![d];
    for _ in 1..depth {
        arch.push(rng.random_range(2..=6));
    }
    arch.push(c);

    let params = ModelParams::init(&arch, seed).unwrap();
    let frozen = ModelParams::init(&arch, seed + 1000).unwrap();
    let peers: Vec<ModelParams> = (0..rng.random_range(1..=3))
        .map(|k| ModelParams::init(&arch, seed + 2000 + k).unwrap())
        .collect();
    let anonymized = anonymize_peers(&peers).unwrap();
    let labeled: Vec<LabeledSample> = (0..4)
        .map(|i| LabeledSample {
            index: i,
            x: random_vec(&mut rng, d),
            y: rng.random_range(0..c),
        })
        .collect();
    let unlabeled: Vec<UnlabeledSample> = (0..6)
        .map(|i| UnlabeledSample {
            index: i,
            x: random_vec(&mut rng, d),
        })
        .collect();
    let settings = LossSettings {
        // low enough that some pseudo labels are accepted
        tau: 1.0 / c as f64 + 0.01,
        beta: rng.random_range(0.1..1.0),
        gamma: rng.random_range(0.01..1.0),
        norm: EnsembleNorm::Mean,
        augmenter: Augmenter::default(),
    };
    let lref: Vec<&LabeledSample> = labeled.iter().collect();
    let uref: Vec<&UnlabeledSample> = unlabeled.iter().collect();
    let ctx = match seed % 3 {
        0 => PeerContext::Solo,
        1 => PeerContext::Peers(&peers),
        _ => PeerContext::Anonymized(&anonymized),
    };
    let step_seed = seed ^ 0xabcdef;
    let loss = |p: &ModelParams| local_ssl_loss(p, &frozen, ctx, &lref, &uref, &settings, step_seed).unwrap();
    let out = loss(&params);
    let analytic: Vec<f64> = out.grads.values().collect();

    let h = 1e-5;
    let mut worst = 0.0f64;
    for (idx, &a) in analytic.iter().enumerate() {
        let mut plus = params.clone();
        *plus.values_mut().nth(idx).unwrap() += h;
        let mut minus = params.clone();
        *minus.values_mut().nth(idx).unwrap() -= h;
        let fd = (loss(&plus).loss - loss(&minus).loss) / (2.0 * h);
        let err = (fd - a).abs() / fd.abs().max(a.abs()).max(1e-6);
        worst = worst.max(err);
    }
    worst
}

/// Two tanh-MLP peers: largest gap between the anonymized model's output
/// and the mean of the peers' outputs.
pub fn anonymization_gap_nonlinear() -> f64 {
    let scale = |mut p: ModelParams, s: f64| {
        p.values_mut().for_each(|v| *v *= s);
        p
    };
    let a = scale(ModelParams::init(&[3, 6, 3], 5).unwrap(), 3.0);
    let b = scale(ModelParams::init(&[3, 6, 3], 6).unwrap(), 3.0);
    let anon = anonymize_peers(&[a.clone(), b.clone()]).unwrap();
    let x = [1.0, -0.5, 0.8];
    let pa = forward(&a, &x).unwrap().probs;
    let pb = forward(&b, &x).unwrap().probs;
    let pn = forward(&anon, &x).unwrap().probs;
    (0..3)
        .map(|k| (pn[k] - 0.5 * (pa[k] + pb[k])).abs())
        .fold(0.0, f64::max)
}

/// Two linear peers: largest gap between the anonymized model's logits and
/// the mean of the peers' logits.
pub fn anonymization_gap_linear() -> f64 {
    let a = ModelParams::init(&[3, 4], 5).unwrap();
    let b = ModelParams::init(&[3, 4], 6).unwrap();
    let anon = anonymize_peers(&[a.clone(), b.clone()]).unwrap();
    let x = [1.0, -0.5, 0.8];
    let la = logits(&a, &x).unwrap();
    let lb = logits(&b, &x).unwrap();
    let ln = logits(&anon, &x).unwrap();
    (0..4)
        .map(|k| (ln[k] - 0.5 * (la[k] + lb[k])).abs())
        .fold(0.0, f64::max)
}
