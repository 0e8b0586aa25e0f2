//! Forward pass and hand-derived backpropagation for a tanh MLP with a
//! softmax output.

use serde::{Deserialize, Serialize};

use super::params::ModelParams;
use crate::error::{Error, Result};

/// Class-probability output of the classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub probs: Vec<f64>,
}

impl Prediction {
    /// Most probable class; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }

    pub fn max_prob(&self) -> f64 {
        self.probs[self.argmax()]
    }
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `-sum_c t_c ln p_c`
    CrossEntropy,
    /// `||p - t||^2` on probabilities
    MseToTarget,
}

/// One weighted training example.
#[derive(Clone, Copy, Debug)]
pub struct BatchItem<'a> {
    pub x: &'a [f64],
    pub target: &'a [f64],
    pub weight: f64,
}

fn affine(weights: &[f64], bias: &[f64], input: &[f64]) -> Vec<f64> {
    let n_in = input.len();
    bias.iter()
        .enumerate()
        .map(|(o, b)| {
            let row = &weights[o * n_in..(o + 1) * n_in];
            b + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>()
        })
        .collect()
}

fn check_input(params: &ModelParams, x: &[f64]) -> Result<()> {
    if x.len() != params.input_width() {
        return Err(Error::shape(format!(
            "input has {} features, model expects {}",
            x.len(),
            params.input_width()
        )));
    }
    Ok(())
}

/// Pre-softmax outputs.
pub fn logits(params: &ModelParams, x: &[f64]) -> Result<Vec<f64>> {
    check_input(params, x)?;
    let layers = params.layers();
    let last = layers.len() - 1;
    let mut act = x.to_vec();
    for (i, layer) in layers.iter().enumerate() {
        let mut z = affine(&layer.weights, &layer.bias, &act);
        if i != last {
            z.iter_mut().for_each(|v| *v = v.tanh());
        }
        act = z;
    }
    Ok(act)
}

pub fn forward(params: &ModelParams, x: &[f64]) -> Result<Prediction> {
    Ok(Prediction {
        probs: softmax(&logits(params, x)?),
    })
}

/// Accumulates a scaled loss and its parameter gradient over many examples.
///
/// Lets several loss terms with different weights share one gradient buffer.
pub struct GradAccumulator {
    pub loss: f64,
    pub grads: ModelParams,
}

impl GradAccumulator {
    pub fn new(params: &ModelParams) -> Self {
        Self {
            loss: 0.0,
            grads: params.zeros_like(),
        }
    }

    /// Adds `scale * loss(x, target)` and its gradient. Returns the unscaled
    /// per-example loss.
    pub fn add(&mut self, params: &ModelParams, x: &[f64], target: &[f64], kind: LossKind, scale: f64) -> Result<f64> {
        check_input(params, x)?;
        if target.len() != params.num_classes() {
            return Err(Error::shape(format!(
                "target has {} classes, model has {}",
                target.len(),
                params.num_classes()
            )));
        }
        if !x.iter().chain(target).all(|v| v.is_finite()) || !scale.is_finite() {
            return Err(Error::Numeric("NaN or infinity in training batch".into()));
        }

        let layers = params.layers();
        let last = layers.len() - 1;
        // activations[0] = x, activations[i + 1] = output of layer i (tanh for hidden)
        let mut activations: Vec<Vec<f64>> = Vec::with_capacity(layers.len() + 1);
        activations.push(x.to_vec());
        for (i, layer) in layers.iter().enumerate() {
            let mut z = affine(&layer.weights, &layer.bias, &activations[i]);
            if i != last {
                z.iter_mut().for_each(|v| *v = v.tanh());
            }
            activations.push(z);
        }
        let out_logits = &activations[layers.len()];
        let probs = softmax(out_logits);

        let (loss, mut delta) = match kind {
            LossKind::CrossEntropy => {
                let logp = log_softmax(out_logits);
                let loss = -target
                    .iter()
                    .zip(&logp)
                    .filter(|(t, _)| **t != 0.0)
                    .map(|(t, lp)| t * lp)
                    .sum::<f64>();
                let mass: f64 = target.iter().sum();
                let delta: Vec<f64> = probs.iter().zip(target).map(|(p, t)| p * mass - t).collect();
                (loss, delta)
            }
            LossKind::MseToTarget => {
                let g: Vec<f64> = probs.iter().zip(target).map(|(p, t)| 2.0 * (p - t)).collect();
                let loss = probs.iter().zip(target).map(|(p, t)| (p - t).powi(2)).sum::<f64>();
                let pg: f64 = probs.iter().zip(&g).map(|(p, g)| p * g).sum();
                let delta = probs.iter().zip(&g).map(|(p, g)| p * (g - pg)).collect();
                (loss, delta)
            }
        };
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("loss evaluated to {loss}")));
        }
        self.loss += scale * loss;

        for i in (0..layers.len()).rev() {
            let input = &activations[i];
            let n_in = input.len();
            let grad = &mut self.grads.layers_mut()[i];
            for (o, d) in delta.iter().enumerate() {
                let sd = scale * d;
                grad.bias[o] += sd;
                let row = &mut grad.weights[o * n_in..(o + 1) * n_in];
                for (g, a) in row.iter_mut().zip(input) {
                    *g += sd * a;
                }
            }
            if i > 0 {
                let w = &layers[i].weights;
                delta = (0..n_in)
                    .map(|k| {
                        let back: f64 = delta.iter().enumerate().map(|(o, d)| w[o * n_in + k] * d).sum();
                        back * (1.0 - input[k] * input[k])
                    })
                    .collect();
            }
        }
        Ok(loss)
    }

    pub fn finish(self) -> (f64, ModelParams) {
        (self.loss, self.grads)
    }
}

/// Sample-weighted mean loss over `batch` (`sum_i w_i * l_i / n`) and its
/// gradient with respect to every parameter.
pub fn loss_and_grads(params: &ModelParams, batch: &[BatchItem<'_>], kind: LossKind) -> Result<(f64, ModelParams)> {
    if batch.is_empty() {
        return Err(Error::config("batch", "loss over an empty batch"));
    }
    let n = batch.len() as f64;
    let mut acc = GradAccumulator::new(params);
    for item in batch {
        acc.add(params, item.x, item.target, kind, item.weight / n)?;
    }
    Ok(acc.finish())
}

pub fn one_hot(class: usize, classes: usize) -> Vec<f64> {
    let mut v = vec![0.0; classes];
    v[class] = 1.0;
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::Layer;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()
    }

    /// Loss recomputed from `forward` only, independent of the backward pass.
    fn reference_loss(params: &ModelParams, batch: &[(Vec<f64>, Vec<f64>, f64)], kind: LossKind) -> f64 {
        let n = batch.len() as f64;
        batch
            .iter()
            .map(|(x, t, w)| {
                let p = forward(params, x).unwrap().probs;
                let l: f64 = match kind {
                    LossKind::CrossEntropy => -t.iter().zip(&p).map(|(t, p)| t * p.ln()).sum::<f64>(),
                    LossKind::MseToTarget => t.iter().zip(&p).map(|(t, p)| (p - t).powi(2)).sum(),
                };
                w * l / n
            })
            .sum()
    }

    fn check_gradients(arch: &[usize], kind: LossKind, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = ModelParams::init(arch, seed).unwrap();
        let c = *arch.last().unwrap();
        let batch: Vec<(Vec<f64>, Vec<f64>, f64)> = (0..5)
            .map(|_| {
                let x = random_vec(&mut rng, arch[0]);
                let t = match kind {
                    LossKind::CrossEntropy => one_hot(rng.random_range(0..c), c),
                    LossKind::MseToTarget => softmax(&random_vec(&mut rng, c)),
                };
                (x, t, rng.random_range(0.5..2.0))
            })
            .collect();
        let items: Vec<BatchItem> = batch
            .iter()
            .map(|(x, t, w)| BatchItem {
                x,
                target: t,
                weight: *w,
            })
            .collect();
        let (loss, grads) = loss_and_grads(&params, &items, kind).unwrap();
        assert!((loss - reference_loss(&params, &batch, kind)).abs() < 1e-12);

        let h = 1e-5;
        let analytic: Vec<f64> = grads.values().collect();
        assert_eq!(analytic.len(), params.num_params());
        let mut worst = 0.0f64;
        for (idx, &a) in analytic.iter().enumerate() {
            let mut plus = params.clone();
            *plus.values_mut().nth(idx).unwrap() += h;
            let mut minus = params.clone();
            *minus.values_mut().nth(idx).unwrap() -= h;
            let fd = (reference_loss(&plus, &batch, kind) - reference_loss(&minus, &batch, kind)) / (2.0 * h);
            let err = (fd - a).abs() / fd.abs().max(a.abs()).max(1e-6);
            worst = worst.max(err);
        }
        assert!(worst < 1e-4, "arch {arch:?} {kind:?}: max relative error {worst}");
    }

    #[test]
    fn gradients_match_finite_differences() {
        for (s, depth) in [1usize, 2, 3].into_iter().enumerate() {
            for c in [2usize, 3, 8] {
                let mut arch = vec![4];
                arch.extend(std::iter::repeat(5).take(depth - 1));
                arch.push(c);
                for kind in [LossKind::CrossEntropy, LossKind::MseToTarget] {
                    check_gradients(&arch, kind, 100 + s as u64 * 10 + c as u64);
                }
            }
        }
    }

    #[test]
    fn zero_model_predicts_uniform() {
        let p = ModelParams::zeros(&[3, 4, 5]).unwrap();
        let pred = forward(&p, &[0.3, -2.0, 7.0]).unwrap();
        for v in &pred.probs {
            assert!((v - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn single_linear_layer_matches_hand_computation() {
        // W = [[1, -1], [0.5, 2]], b = [0.1, -0.2], x = [2, 1]
        // logits = [2 - 1 + 0.1, 1 + 2 - 0.2] = [1.1, 2.8]
        let p = ModelParams::from_layers(
            vec![2, 2],
            vec![Layer {
                weights: vec![1.0, -1.0, 0.5, 2.0],
                bias: vec![0.1, -0.2],
            }],
        )
        .unwrap();
        let pred = forward(&p, &[2.0, 1.0]).unwrap();
        let p1 = 1.0 / (1.0 + (1.1f64 - 2.8).exp());
        assert!((pred.probs[1] - p1).abs() < 1e-12);
        assert!((pred.probs[0] - (1.0 - p1)).abs() < 1e-12);
        // 1 / (1 + e^{-1.7}) = 0.845534734916...
        assert!((pred.probs[1] - 0.845_534_734_916_465).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_of_uniform_is_ln_c() {
        let p = ModelParams::zeros(&[2, 6]).unwrap();
        let t = one_hot(4, 6);
        let (loss, _) = loss_and_grads(
            &p,
            &[BatchItem {
                x: &[1.0, 2.0],
                target: &t,
                weight: 1.0,
            }],
            LossKind::CrossEntropy,
        )
        .unwrap();
        assert!((loss - 6f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn gradient_vanishes_at_optimum_for_mse() {
        // MSE to the model's own prediction is a stationary point.
        let params = ModelParams::init(&[3, 4, 3], 2).unwrap();
        let x = [0.2, -0.4, 1.0];
        let t = forward(&params, &x).unwrap().probs;
        let (loss, grads) = loss_and_grads(
            &params,
            &[BatchItem {
                x: &x,
                target: &t,
                weight: 1.0,
            }],
            LossKind::MseToTarget,
        )
        .unwrap();
        assert!(loss.abs() < 1e-20);
        assert!(grads.values().all(|g| g.abs() < 1e-9));
    }

    #[test]
    fn cross_entropy_gradient_vanishes_when_prediction_is_one_hot() {
        // Saturate the bias so the prediction equals the one-hot target in f64.
        let p = ModelParams::from_layers(
            vec![1, 2],
            vec![Layer {
                weights: vec![0.0, 0.0],
                bias: vec![800.0, 0.0],
            }],
        )
        .unwrap();
        let t = one_hot(0, 2);
        let (_, grads) = loss_and_grads(
            &p,
            &[BatchItem {
                x: &[1.0],
                target: &t,
                weight: 1.0,
            }],
            LossKind::CrossEntropy,
        )
        .unwrap();
        assert!(grads.values().all(|g| g.abs() < 1e-9));
    }

    #[test]
    fn rejects_nan_and_bad_shapes() {
        let p = ModelParams::zeros(&[2, 2]).unwrap();
        let t = one_hot(0, 2);
        let err = loss_and_grads(
            &p,
            &[BatchItem {
                x: &[f64::NAN, 0.0],
                target: &t,
                weight: 1.0,
            }],
            LossKind::CrossEntropy,
        );
        assert!(matches!(err, Err(Error::Numeric(_))));
        assert!(matches!(forward(&p, &[1.0]), Err(Error::Shape(_))));
        assert!(matches!(
            loss_and_grads(&p, &[], LossKind::CrossEntropy),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.25, 0.5, 0.5, 0.1]), 1);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn softmax_is_a_distribution(logits in proptest::collection::vec(-30.0f64..30.0, 1..10), shift in -50.0f64..50.0) {
                let p = softmax(&logits);
                prop_assert!(p.iter().all(|v| *v >= 0.0 && *v <= 1.0));
                prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                let shifted: Vec<f64> = logits.iter().map(|z| z + shift).collect();
                let q = softmax(&shifted);
                for (a, b) in p.iter().zip(&q) {
                    prop_assert!((a - b).abs() < 1e-9);
                }
            }

            #[test]
            fn forward_is_pure(seed in 0u64..1000, x in proptest::collection::vec(-3.0f64..3.0, 3)) {
                let params = ModelParams::init(&[3, 6, 4], seed).unwrap();
                let a = forward(&params, &x).unwrap();
                let b = forward(&params, &x).unwrap();
                prop_assert_eq!(&a, &b);
                prop_assert!((a.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }
}
