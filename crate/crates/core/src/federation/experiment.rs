//! Full experiments: data preparation, rounds, checkpoint selection and the
//! final report.

use super::round::{RoundLog, Simulation};
use crate::config::ExperimentConfig;
use crate::data::{partition, ClientShard, Community, SplitFractions};
use crate::error::{Error, Result};
use crate::federation::comm::CommunicationSummary;
use crate::federation::Mode;
use crate::metrics::{evaluate, macro_scores, summarize, ConfusionMatrix};
use crate::nn::ModelParams;
use crate::report::{ClientMetrics, CommunityReport, ExperimentReport, MetricSummary};

/// Report plus the raw material it was computed from.
pub struct ExperimentOutcome {
    pub report: ExperimentReport,
    pub logs: Vec<RoundLog>,
    /// Checkpointed model evaluated for each client.
    pub models: Vec<ModelParams>,
}

/// Loads and partitions the configured data. Label-revealing modes keep
/// every training label; the split is otherwise identical.
pub fn prepare_shards(cfg: &ExperimentConfig) -> Result<(Vec<ClientShard>, usize, usize)> {
    let ds = cfg.load_dataset()?;
    let plan = cfg.partition.plan(ds.classes, cfg.seed)?;
    let split = if cfg.mode.reveals_labels() {
        SplitFractions {
            labeled: 1.0,
            ..cfg.split
        }
    } else {
        cfg.split
    };
    let shards = partition(&ds.samples, &plan, split, cfg.seed)?;
    Ok((shards, ds.classes, ds.dim))
}

pub fn arch_for(cfg: &ExperimentConfig, dim: usize, classes: usize) -> Vec<usize> {
    let mut arch = vec![dim];
    arch.extend(&cfg.hidden);
    arch.push(classes);
    arch
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    run_experiment_with(cfg, |_, _| Ok(()))
}

/// Like [`run_experiment`], calling `observe` after every round.
pub fn run_experiment_with<F>(cfg: &ExperimentConfig, mut observe: F) -> Result<ExperimentOutcome>
where
    F: FnMut(&Simulation, &RoundLog) -> Result<()>,
{
    cfg.validate()?;
    let (shards, classes, dim) = prepare_shards(cfg)?;
    let arch = arch_for(cfg, dim, classes);
    let mut sim = Simulation::new(cfg.clone(), shards, &arch)?;
    let m = sim.clients.len();

    let mut best = Checkpoints::new(&sim);
    let mut logs = Vec::with_capacity(cfg.rounds);
    for round in 0..cfg.rounds {
        let mut log = sim.run_round(round)?;
        if (round + 1) % cfg.eval_every == 0 || round + 1 == cfg.rounds {
            log.val_accuracy = Some(best.update(&sim, round)?);
        }
        observe(&sim, &log)?;
        logs.push(log);
    }

    let models = best.models(m);
    let mut clients = Vec::with_capacity(m);
    let mut matrices = Vec::with_capacity(m);
    for (c, model) in sim.clients.iter().zip(&models) {
        let cm = if c.shard.test.is_empty() {
            ConfusionMatrix::new(classes)
        } else {
            evaluate(model, &c.shard.test)?
        };
        let s = macro_scores(&cm);
        clients.push(ClientMetrics {
            client: c.id,
            f1: s.f1,
            precision: s.precision,
            recall: s.recall,
            accuracy: cm.accuracy(),
            best_round: best.round_for(c.id),
            confusion: cm.clone(),
        });
        matrices.push(cm);
    }

    let summary = MetricSummary {
        f1: summarize(&clients.iter().map(|c| c.f1).collect::<Vec<_>>()),
        precision: summarize(&clients.iter().map(|c| c.precision).collect::<Vec<_>>()),
        recall: summarize(&clients.iter().map(|c| c.recall).collect::<Vec<_>>()),
    };
    let class_f1 = class_level_f1(&matrices, classes);
    let communication = communication_summary(&logs, cfg);
    let (selection_frequency, communities) = if cfg.mode.is_fedperl() {
        let freq = selection_frequency(&logs, m);
        let communities = cfg
            .communities(classes)
            .map(|membership| community_report(&freq, &membership));
        (Some(freq), communities)
    } else {
        (None, None)
    };

    let report = ExperimentReport {
        mode: cfg.mode,
        seed: cfg.seed,
        dataset_signature: cfg.dataset_signature(),
        rounds: cfg.rounds,
        peers: cfg.ssl.peers,
        clients,
        class_f1,
        summary,
        communication,
        selection_frequency,
        communities,
        relative_improvement: None,
    };
    Ok(ExperimentOutcome { report, logs, models })
}

/// Best-validation-accuracy checkpoints: one global model for federated
/// modes, one per client for local modes.
struct Checkpoints {
    federated: bool,
    models: Vec<Option<(f64, usize, ModelParams)>>,
}

impl Checkpoints {
    fn new(sim: &Simulation) -> Self {
        let n = if sim.config().mode.is_federated() {
            1
        } else {
            sim.clients.len()
        };
        Self {
            federated: sim.config().mode.is_federated(),
            models: vec![None; n],
        }
    }

    fn accuracy(model: &ModelParams, shard: &ClientShard) -> Result<Option<f64>> {
        if shard.validation.is_empty() {
            return Ok(None);
        }
        Ok(Some(evaluate(model, &shard.validation)?.accuracy()))
    }

    /// Evaluates the current models, keeps improvements, and returns the
    /// mean validation accuracy over clients that have validation data.
    fn update(&mut self, sim: &Simulation, round: usize) -> Result<f64> {
        let mut accs = Vec::new();
        for c in &sim.clients {
            let model = if self.federated { &sim.server.global } else { &c.params };
            let acc = Self::accuracy(model, &c.shard)?;
            accs.push(acc);
            if !self.federated {
                let score = acc.unwrap_or(f64::NEG_INFINITY);
                let slot = &mut self.models[c.id];
                if slot.as_ref().map_or(true, |(b, _, _)| score > *b) {
                    *slot = Some((score, round, c.params.clone()));
                }
            }
        }
        let known: Vec<f64> = accs.into_iter().flatten().collect();
        let mean = if known.is_empty() {
            0.0
        } else {
            known.iter().sum::<f64>() / known.len() as f64
        };
        if self.federated {
            let slot = &mut self.models[0];
            let score = if known.is_empty() { f64::NEG_INFINITY } else { mean };
            if slot.as_ref().map_or(true, |(b, _, _)| score > *b) {
                *slot = Some((score, round, sim.server.global.clone()));
            }
        }
        Ok(mean)
    }

    fn round_for(&self, client: usize) -> usize {
        let slot = if self.federated {
            &self.models[0]
        } else {
            &self.models[client]
        };
        slot.as_ref().map_or(0, |(_, r, _)| *r)
    }

    fn models(&self, m: usize) -> Vec<ModelParams> {
        (0..m)
            .map(|j| {
                let slot = if self.federated {
                    &self.models[0]
                } else {
                    &self.models[j]
                };
                slot.as_ref().expect("evaluated at least once").2.clone()
            })
            .collect()
    }
}

/// Mean F1 of each class over clients whose test set contains it.
fn class_level_f1(matrices: &[ConfusionMatrix], classes: usize) -> Vec<Option<f64>> {
    (0..classes)
        .map(|c| {
            let scores: Vec<f64> = matrices
                .iter()
                .filter(|cm| cm.support(c) > 0)
                .map(|cm| cm.per_class()[c].f1)
                .collect();
            (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64)
        })
        .collect()
}

fn communication_summary(logs: &[RoundLog], cfg: &ExperimentConfig) -> CommunicationSummary {
    let mut s = CommunicationSummary::default();
    let (mut extra, mut base) = (0u64, 0u64);
    for log in logs {
        s.payloads_down += log.payloads_down;
        s.payloads_up += log.payloads_up;
        s.params_down += log.params_down;
        s.params_up += log.params_up;
        if cfg.mode.is_federated() && log.round >= cfg.warmup_rounds {
            let sampled = log.sampled.len() as u64;
            extra += log.payloads_down - sampled;
            base += sampled;
        }
    }
    s.additional_cost_pct = if base == 0 {
        0.0
    } else {
        100.0 * extra as f64 / base as f64
    };
    s
}

/// `freq[j][k]`: percentage of client `j`'s peer picks that went to `k`.
pub fn selection_frequency(logs: &[RoundLog], m: usize) -> Vec<Vec<f64>> {
    let counts = selection_counts(logs, m);
    counts
        .iter()
        .map(|row| {
            let total: u64 = row.iter().sum();
            row.iter()
                .map(|&c| {
                    if total == 0 {
                        0.0
                    } else {
                        100.0 * c as f64 / total as f64
                    }
                })
                .collect()
        })
        .collect()
}

/// Raw pick counts, `counts[j][k]`.
pub fn selection_counts(logs: &[RoundLog], m: usize) -> Vec<Vec<u64>> {
    let mut counts = vec![vec![0u64; m]; m];
    for log in logs {
        for (&j, peers) in log.sampled.iter().zip(&log.peers) {
            for &k in peers {
                if j < m && k < m {
                    counts[j][k] += 1;
                }
            }
        }
    }
    counts
}

fn community_report(freq: &[Vec<f64>], membership: &[Community]) -> CommunityReport {
    let m = membership.len().min(freq.len());
    let intra = |community: Community| -> f64 {
        let rows: Vec<f64> = (0..m)
            .filter(|&j| membership[j] == community && freq[j].iter().sum::<f64>() > 0.0)
            .map(|j| (0..m).filter(|&k| membership[k] == community).map(|k| freq[j][k]).sum())
            .collect();
        if rows.is_empty() {
            0.0
        } else {
            rows.iter().sum::<f64>() / rows.len() as f64
        }
    };
    let pickers: Vec<&Vec<f64>> = freq.iter().filter(|row| row.iter().sum::<f64>() > 0.0).collect();
    let selected_share = (0..m)
        .map(|k| {
            if pickers.is_empty() {
                0.0
            } else {
                pickers.iter().map(|row| row[k]).sum::<f64>() / pickers.len() as f64
            }
        })
        .collect();
    CommunityReport {
        membership: membership.to_vec(),
        intra_a_pct: intra(Community::A),
        intra_b_pct: intra(Community::B),
        selected_share_pct: selected_share,
    }
}

/// Runs every mode in declaration order with otherwise identical settings.
pub fn run_ladder(base: &ExperimentConfig) -> Result<Vec<ExperimentOutcome>> {
    Mode::ALL
        .into_iter()
        .map(|mode| {
            let cfg = ExperimentConfig { mode, ..base.clone() };
            run_experiment(&cfg).map_err(|e| match e {
                Error::Config { key, message } => Error::Config {
                    key,
                    message: format!("{message} (mode {mode})"),
                },
                other => other,
            })
        })
        .collect()
}
