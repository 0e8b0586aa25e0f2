//! Pseudo labeling (solo, peer ensemble, anonymized peer) and the local
//! semi-supervised objective.
//!
//! Ensemble members always see the same soft-augmented view of a sample and
//! their class probabilities are combined before thresholding. With
//! [`EnsembleNorm::Mean`] the combination is an incremental mean, so an
//! ensemble of identical models reproduces the solo decision bit for bit.

use serde::{Deserialize, Serialize};

use crate::data::{Augmenter, LabeledSample, UnlabeledSample};
use crate::error::{Error, Result};
use crate::nn::{argmax, forward, one_hot, GradAccumulator, LossKind, ModelParams};
use crate::rng::derive_seed;

/// Outcome of thresholding one unlabeled sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PseudoLabelDecision {
    /// Assigned class, present only when the sample was accepted.
    pub class: Option<usize>,
    /// The thresholded quantity: the largest combined probability.
    pub score: f64,
}

impl PseudoLabelDecision {
    pub fn accepted(&self) -> bool {
        self.class.is_some()
    }
}

/// How ensemble member probabilities are combined before thresholding.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleNorm {
    #[default]
    Mean,
    /// Raw sum of member probabilities. Scores can exceed 1.
    Sum,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SslHyper {
    /// Confidence threshold.
    pub tau: f64,
    /// Weight of the pseudo-label cross-entropy.
    pub beta: f64,
    /// Weight of the peer consistency term.
    pub gamma: f64,
    /// Number of peers per client.
    pub peers: usize,
}

impl Default for SslHyper {
    fn default() -> Self {
        Self {
            tau: 0.6,
            beta: 0.5,
            gamma: 0.01,
            peers: 2,
        }
    }
}

impl SslHyper {
    pub fn validate(&self) -> Result<()> {
        validate_tau("ssl.tau", self.tau)?;
        if !self.beta.is_finite() || self.beta < 0.0 {
            return Err(Error::config("ssl.beta", format!("must be >= 0, got {}", self.beta)));
        }
        if !self.gamma.is_finite() || self.gamma < 0.0 {
            return Err(Error::config("ssl.gamma", format!("must be >= 0, got {}", self.gamma)));
        }
        Ok(())
    }
}

pub(crate) fn validate_tau(key: &str, tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::config(key, format!("must be in (0, 1], got {tau}")));
    }
    Ok(())
}

/// Accepts `argmax(probs)` when its probability reaches `tau`.
pub fn threshold(probs: &[f64], tau: f64) -> PseudoLabelDecision {
    let class = argmax(probs);
    let score = probs[class];
    PseudoLabelDecision {
        class: (score >= tau).then_some(class),
        score,
    }
}

/// Combines member probability vectors.
pub fn combine_predictions(members: &[Vec<f64>], norm: EnsembleNorm) -> Vec<f64> {
    let mut iter = members.iter();
    let mut acc = iter.next().expect("at least one ensemble member").clone();
    for (k, p) in iter.enumerate() {
        let count = (k + 2) as f64;
        for (a, v) in acc.iter_mut().zip(p) {
            match norm {
                EnsembleNorm::Mean => *a += (v - *a) / count,
                EnsembleNorm::Sum => *a += v,
            }
        }
    }
    acc
}

fn ensemble_decision(
    models: &[&ModelParams],
    x: &[f64],
    tau: f64,
    norm: EnsembleNorm,
    augmenter: &Augmenter,
    seed: u64,
) -> Result<PseudoLabelDecision> {
    let first = models[0];
    for m in &models[1..] {
        first.check_same_arch(m)?;
    }
    let view = augmenter.soft(x, seed);
    let preds = models
        .iter()
        .map(|m| forward(m, &view).map(|p| p.probs))
        .collect::<Result<Vec<_>>>()?;
    Ok(threshold(&combine_predictions(&preds, norm), tau))
}

/// Thresholded prediction of the frozen model on a soft view of `x`.
pub fn solo_pseudo_label(
    frozen: &ModelParams,
    x: &[f64],
    tau: f64,
    augmenter: &Augmenter,
    seed: u64,
) -> Result<PseudoLabelDecision> {
    ensemble_decision(&[frozen], x, tau, EnsembleNorm::Mean, augmenter, seed)
}

/// Thresholded ensemble of the client's frozen model and its frozen peers.
pub fn peer_pseudo_label(
    frozen_self: &ModelParams,
    frozen_peers: &[ModelParams],
    x: &[f64],
    tau: f64,
    norm: EnsembleNorm,
    augmenter: &Augmenter,
    seed: u64,
) -> Result<PseudoLabelDecision> {
    if frozen_peers.is_empty() {
        return Err(Error::config(
            "ssl.peers",
            "peer pseudo labeling needs at least one peer",
        ));
    }
    let models: Vec<&ModelParams> = std::iter::once(frozen_self).chain(frozen_peers).collect();
    ensemble_decision(&models, x, tau, norm, augmenter, seed)
}

/// Coordinate-wise mean of the peers' parameters.
pub fn anonymize_peers(peers: &[ModelParams]) -> Result<ModelParams> {
    if peers.is_empty() {
        return Err(Error::config("ssl.peers", "cannot anonymize an empty peer set"));
    }
    ModelParams::weighted_mean(peers.iter().map(|p| (p, 1.0)))
}

/// Thresholded two-member ensemble of the client and its anonymized peer.
pub fn pa_pseudo_label(
    frozen_self: &ModelParams,
    anonymized: &ModelParams,
    x: &[f64],
    tau: f64,
    norm: EnsembleNorm,
    augmenter: &Augmenter,
    seed: u64,
) -> Result<PseudoLabelDecision> {
    ensemble_decision(&[frozen_self, anonymized], x, tau, norm, augmenter, seed)
}

/// What a client knows about its peers this round.
#[derive(Clone, Copy, Debug)]
pub enum PeerContext<'a> {
    Solo,
    /// The top-T peer models themselves.
    Peers(&'a [ModelParams]),
    /// A single anonymized average of the peers.
    Anonymized(&'a ModelParams),
}

impl PeerContext<'_> {
    fn has_peers(&self) -> bool {
        match self {
            PeerContext::Solo => false,
            PeerContext::Peers(p) => !p.is_empty(),
            PeerContext::Anonymized(_) => true,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LossSettings {
    pub tau: f64,
    pub beta: f64,
    pub gamma: f64,
    pub norm: EnsembleNorm,
    pub augmenter: Augmenter,
}

#[derive(Clone, Debug)]
pub struct SslLoss {
    pub loss: f64,
    pub grads: ModelParams,
    pub supervised: f64,
    pub pseudo: f64,
    pub consistency: f64,
    pub accepted: usize,
    pub considered: usize,
}

/// Per-sample augmentation seeds.
fn sample_seed(seed: u64, stream: u64, i: usize) -> u64 {
    derive_seed(seed, &[stream, i as u64])
}

/// Local objective of one minibatch step.
///
/// `loss = CE(y, f(soft(x_L))) + beta * mean_accepted CE(pseudo, f(hard(x_U)))
///       + gamma * mean_U ||f(x_U) - f_peer(x_U)||^2`
///
/// Pseudo labels come from `frozen` (and the peers), never from `params`, so
/// they are constants with respect to the gradient. The consistency term is
/// only present when peers exist; its target is the anonymized peer's
/// prediction or, without anonymization, the mean of the peers' predictions.
pub fn local_ssl_loss(
    params: &ModelParams,
    frozen: &ModelParams,
    peers: PeerContext<'_>,
    labeled: &[&LabeledSample],
    unlabeled: &[&UnlabeledSample],
    settings: &LossSettings,
    seed: u64,
) -> Result<SslLoss> {
    if labeled.is_empty() {
        return Err(Error::config("batch", "labeled batch is empty"));
    }
    params.check_same_arch(frozen)?;
    let classes = params.num_classes();
    let aug = &settings.augmenter;
    let mut acc = GradAccumulator::new(params);

    let n_l = labeled.len() as f64;
    for (i, s) in labeled.iter().enumerate() {
        if s.y >= classes {
            return Err(Error::shape(format!("label {} outside {classes} classes", s.y)));
        }
        let view = aug.soft(&s.x, sample_seed(seed, 0, i));
        acc.add(params, &view, &one_hot(s.y, classes), LossKind::CrossEntropy, 1.0 / n_l)?;
    }
    let supervised = acc.loss;

    let mut accepted = Vec::new();
    if settings.beta > 0.0 {
        for (i, u) in unlabeled.iter().enumerate() {
            let s = sample_seed(seed, 1, i);
            let decision = match peers {
                PeerContext::Solo | PeerContext::Peers([]) => solo_pseudo_label(frozen, &u.x, settings.tau, aug, s)?,
                PeerContext::Peers(p) => peer_pseudo_label(frozen, p, &u.x, settings.tau, settings.norm, aug, s)?,
                PeerContext::Anonymized(a) => pa_pseudo_label(frozen, a, &u.x, settings.tau, settings.norm, aug, s)?,
            };
            if let Some(class) = decision.class {
                accepted.push((i, class));
            }
        }
    }
    if !accepted.is_empty() {
        let scale = settings.beta / accepted.len() as f64;
        for &(i, class) in &accepted {
            let view = aug.hard(&unlabeled[i].x, sample_seed(seed, 2, i));
            acc.add(params, &view, &one_hot(class, classes), LossKind::CrossEntropy, scale)?;
        }
    }
    let pseudo = acc.loss - supervised;

    if settings.gamma > 0.0 && peers.has_peers() && !unlabeled.is_empty() {
        let scale = settings.gamma / unlabeled.len() as f64;
        for u in unlabeled {
            let target = match peers {
                PeerContext::Anonymized(a) => forward(a, &u.x)?.probs,
                PeerContext::Peers(p) => {
                    let preds = p
                        .iter()
                        .map(|m| forward(m, &u.x).map(|pr| pr.probs))
                        .collect::<Result<Vec<_>>>()?;
                    combine_predictions(&preds, EnsembleNorm::Mean)
                }
                PeerContext::Solo => unreachable!("guarded by has_peers"),
            };
            acc.add(params, &u.x, &target, LossKind::MseToTarget, scale)?;
        }
    }
    let consistency = acc.loss - supervised - pseudo;

    let considered = if settings.beta > 0.0 { unlabeled.len() } else { 0 };
    let (loss, grads) = acc.finish();
    Ok(SslLoss {
        loss,
        grads,
        supervised,
        pseudo,
        consistency,
        accepted: accepted.len(),
        considered,
    })
}
