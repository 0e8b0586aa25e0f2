//! One communication round.
//!
//! The server only ever sees [`Message`] values, which carry model parameters
//! and sample counts. Raw samples stay inside [`ClientState`].

use std::time::Instant;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::aggregate::fedavg_aggregate;
use super::comm::{download_payloads, UPLOAD_PAYLOADS};
use super::mode::PeerExchange;
use super::similarity::{extract_features, select_peers, similarity_matrix, SimilarityMatrix};
use crate::config::{ExperimentConfig, PeersFrom};
use crate::data::{ClientShard, LabeledSample, UnlabeledSample};
use crate::error::{Error, Result};
use crate::nn::{AdamConfig, ModelParams, OptimizerState};
use crate::rng::{derive_seed, stream, tag};
use crate::ssl::{anonymize_peers, local_ssl_loss, LossSettings, PeerContext};

/// A client: its private data, model and optimizer.
#[derive(Clone, Debug)]
pub struct ClientState {
    pub id: usize,
    pub shard: ClientShard,
    pub params: ModelParams,
    pub opt: OptimizerState,
    pub rng_seed: u64,
}

/// Peer knowledge shipped alongside the global model.
#[derive(Clone, Debug, PartialEq)]
pub enum PeerPayload {
    None,
    Peers(Vec<ModelParams>),
    Anonymized(ModelParams),
}

impl PeerPayload {
    fn context(&self) -> PeerContext<'_> {
        match self {
            PeerPayload::None => PeerContext::Solo,
            PeerPayload::Peers(p) => PeerContext::Peers(p),
            PeerPayload::Anonymized(a) => PeerContext::Anonymized(a),
        }
    }
}

/// Everything that crosses the client/server boundary.
#[derive(Clone, Debug, PartialEq)]
pub enum Message {
    Download {
        client: usize,
        global: ModelParams,
        peers: PeerPayload,
    },
    Upload {
        client: usize,
        params: ModelParams,
        num_samples: usize,
    },
}

/// What the server holds between rounds.
#[derive(Clone, Debug)]
pub struct ServerState {
    pub global: ModelParams,
    /// Per-client snapshot used for similarity and as that client's peer model.
    pub reference: Vec<ModelParams>,
    /// Per-client local training set sizes (FedAvg weights).
    pub train_sizes: Vec<usize>,
    pub similarity: SimilarityMatrix,
}

/// Per-round record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoundLog {
    pub round: usize,
    pub sampled: Vec<usize>,
    /// Peers chosen by each sampled client, parallel to `sampled`.
    pub peers: Vec<Vec<usize>>,
    /// Mean local training loss of each sampled client.
    pub train_loss: Vec<f64>,
    /// Share of considered unlabeled samples that received a pseudo label.
    pub acceptance_rate: Vec<Option<f64>>,
    pub payloads_down: u64,
    pub payloads_up: u64,
    pub params_down: u64,
    pub params_up: u64,
    /// Mean validation accuracy after this round, when evaluated.
    pub val_accuracy: Option<f64>,
    pub wall_time_ms: f64,
}

impl RoundLog {
    pub fn parse_line(line: &str) -> Result<Self> {
        serde_json::from_str(line).map_err(|e| Error::Parse(format!("round log: {e}")))
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("round log serializes")
    }

    /// Copy with the wall-clock field zeroed, for determinism checks.
    pub fn without_timing(&self) -> Self {
        Self {
            wall_time_ms: 0.0,
            ..self.clone()
        }
    }
}

struct LocalOutcome {
    mean_loss: f64,
    accepted: usize,
    considered: usize,
}

pub struct Simulation {
    cfg: ExperimentConfig,
    pub server: ServerState,
    pub clients: Vec<ClientState>,
    transcript: Option<Vec<Message>>,
}

impl Simulation {
    pub fn new(cfg: ExperimentConfig, shards: Vec<ClientShard>, arch: &[usize]) -> Result<Self> {
        cfg.validate()?;
        if shards.is_empty() {
            return Err(Error::config("partition", "no clients"));
        }
        let init = ModelParams::init(arch, derive_seed(cfg.seed, &[tag::INIT]))?;
        let adam = AdamConfig {
            learning_rate: cfg.learning_rate,
            ..AdamConfig::default()
        };
        let m = shards.len();
        let clients: Vec<ClientState> = shards
            .into_iter()
            .enumerate()
            .map(|(id, shard)| ClientState {
                id,
                shard,
                params: init.clone(),
                opt: OptimizerState::new(&init, adam),
                rng_seed: derive_seed(cfg.seed, &[tag::CLIENT, id as u64]),
            })
            .collect();
        let server = ServerState {
            train_sizes: clients.iter().map(|c| c.shard.train_size()).collect(),
            reference: vec![init.clone(); m],
            global: init,
            similarity: SimilarityMatrix::ones(m),
        };
        Ok(Self {
            cfg,
            server,
            clients,
            transcript: None,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    /// Keep a copy of every message exchanged from now on.
    pub fn record_messages(&mut self) {
        self.transcript.get_or_insert_with(Vec::new);
    }

    pub fn transcript(&self) -> &[Message] {
        self.transcript.as_deref().unwrap_or(&[])
    }

    /// Cohort for `round`: `ceil(rate * M)` clients uniformly without
    /// replacement, in ascending id order.
    pub fn sample_clients(&self, round: usize) -> Vec<usize> {
        let m = self.clients.len();
        let k = ((self.cfg.participation_rate * m as f64).ceil() as usize).clamp(1, m);
        let mut rng = stream(self.cfg.seed, &[tag::SAMPLING, round as u64]);
        let mut ids = index::sample(&mut rng, m, k).into_vec();
        ids.sort_unstable();
        ids
    }

    fn peers_active(&self, round: usize) -> bool {
        self.cfg.mode.is_fedperl() && round >= self.cfg.warmup_rounds && self.cfg.ssl.peers > 0
    }

    pub fn run_round(&mut self, round: usize) -> Result<RoundLog> {
        if self.cfg.mode.is_federated() {
            self.run_federated_round(round)
        } else {
            self.run_local_round(round)
        }
    }

    fn run_federated_round(&mut self, round: usize) -> Result<RoundLog> {
        let started = Instant::now();
        let m = self.clients.len();
        let sampled = self.sample_clients(round);
        let exchange = self.cfg.mode.peer_exchange();

        // server side: choose peers and build each download
        let mut downloads: Vec<Option<(Vec<usize>, PeerPayload)>> = vec![None; m];
        for &j in &sampled {
            let peers = if self.peers_active(round) {
                let eligible: Vec<usize> = (0..m).filter(|&k| k != j).collect();
                select_peers(&self.server.similarity, j, self.cfg.ssl.peers, &eligible)
            } else {
                Vec::new()
            };
            let payload = match (exchange, peers.is_empty()) {
                (_, true) | (PeerExchange::None, _) => PeerPayload::None,
                (PeerExchange::Direct, false) => {
                    PeerPayload::Peers(peers.iter().map(|&k| self.server.reference[k].clone()).collect())
                }
                (PeerExchange::Anonymized, false) => {
                    let models: Vec<ModelParams> = peers.iter().map(|&k| self.server.reference[k].clone()).collect();
                    PeerPayload::Anonymized(anonymize_peers(&models)?)
                }
            };
            if let Some(t) = self.transcript.as_mut() {
                t.push(Message::Download {
                    client: j,
                    global: self.server.global.clone(),
                    peers: payload.clone(),
                });
            }
            downloads[j] = Some((peers, payload));
        }

        // client side
        let cfg = &self.cfg;
        let global = &self.server.global;
        let outcomes: Vec<(usize, LocalOutcome)> = self
            .clients
            .par_iter_mut()
            .filter_map(|c| downloads[c.id].as_ref().map(|d| (c, d)))
            .map(|(client, (_, payload))| {
                client.params = global.clone();
                train_client(client, global, payload.context(), cfg, round)
                    .map(|o| (client.id, o))
                    .map_err(|e| e.for_client(client.id))
            })
            .collect::<Result<Vec<_>>>()?;

        // uploads and aggregation, in ascending client id
        let updates: Vec<(&ModelParams, usize)> = sampled
            .iter()
            .map(|&j| (&self.clients[j].params, self.server.train_sizes[j]))
            .collect();
        if let Some(t) = self.transcript.as_mut() {
            for (&client, &(p, n)) in sampled.iter().zip(&updates) {
                t.push(Message::Upload {
                    client,
                    params: p.clone(),
                    num_samples: n,
                });
            }
        }
        let new_global = fedavg_aggregate(&updates)?;
        for &j in &sampled {
            self.server.reference[j] = match cfg.peers_from {
                PeersFrom::Local => self.clients[j].params.clone(),
                PeersFrom::Global => new_global.clone(),
            };
        }
        self.server.global = new_global;
        // every client adopts the new global model
        for c in &mut self.clients {
            c.params = self.server.global.clone();
        }
        let features: Vec<_> = self.server.reference.iter().map(extract_features).collect();
        self.server.similarity = similarity_matrix(&features)?;

        let peers: Vec<Vec<usize>> = sampled
            .iter()
            .map(|&j| downloads[j].as_ref().map(|d| d.0.clone()).unwrap_or_default())
            .collect();
        let payloads_down: u64 = peers.iter().map(|p| download_payloads(exchange, p.len())).sum();
        let payloads_up = UPLOAD_PAYLOADS * sampled.len() as u64;
        let n_params = self.server.global.num_params() as u64;
        Ok(RoundLog {
            round,
            peers,
            train_loss: outcomes.iter().map(|(_, o)| o.mean_loss).collect(),
            acceptance_rate: outcomes.iter().map(|(_, o)| acceptance(o)).collect(),
            payloads_down,
            payloads_up,
            params_down: payloads_down * n_params,
            params_up: payloads_up * n_params,
            sampled,
            val_accuracy: None,
            wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
        })
    }

    fn run_local_round(&mut self, round: usize) -> Result<RoundLog> {
        let started = Instant::now();
        let cfg = &self.cfg;
        let outcomes: Vec<LocalOutcome> = self
            .clients
            .par_iter_mut()
            .map(|client| {
                let frozen = client.params.clone();
                train_client(client, &frozen, PeerContext::Solo, cfg, round).map_err(|e| e.for_client(client.id))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(RoundLog {
            round,
            sampled: (0..self.clients.len()).collect(),
            peers: vec![Vec::new(); self.clients.len()],
            train_loss: outcomes.iter().map(|o| o.mean_loss).collect(),
            acceptance_rate: outcomes.iter().map(acceptance).collect(),
            payloads_down: 0,
            payloads_up: 0,
            params_down: 0,
            params_up: 0,
            val_accuracy: None,
            wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
        })
    }
}

fn acceptance(o: &LocalOutcome) -> Option<f64> {
    (o.considered > 0).then(|| o.accepted as f64 / o.considered as f64)
}

/// Runs `steps_per_round` minibatch steps on `client.params`.
fn train_client(
    client: &mut ClientState,
    frozen: &ModelParams,
    peers: PeerContext<'_>,
    cfg: &ExperimentConfig,
    round: usize,
) -> Result<LocalOutcome> {
    let mode = cfg.mode;
    let settings = LossSettings {
        tau: cfg.tau(),
        beta: if mode.uses_unlabeled() { cfg.ssl.beta } else { 0.0 },
        gamma: cfg.ssl.gamma,
        norm: cfg.ensemble_norm,
        augmenter: cfg.augment,
    };
    let shard = &client.shard;
    let n_l = shard.labeled.len();
    let n_u = if mode.uses_unlabeled() {
        shard.unlabeled.len()
    } else {
        0
    };
    if n_l == 0 {
        return Err(Error::config("split.labeled", "client has no labeled training data"));
    }

    let mut rng = stream(client.rng_seed, &[round as u64]);
    let mut total_loss = 0.0;
    let (mut accepted, mut considered) = (0, 0);
    for _ in 0..cfg.steps_per_round {
        let li = index::sample(&mut rng, n_l, cfg.batch_size.min(n_l));
        let labeled: Vec<&LabeledSample> = li.iter().map(|i| &shard.labeled[i]).collect();
        let unlabeled: Vec<&UnlabeledSample> = if n_u > 0 {
            index::sample(&mut rng, n_u, cfg.unlabeled_batch().min(n_u))
                .iter()
                .map(|i| &shard.unlabeled[i])
                .collect()
        } else {
            Vec::new()
        };
        let seed: u64 = rng.random();
        let out = local_ssl_loss(&client.params, frozen, peers, &labeled, &unlabeled, &settings, seed)?;
        client.opt.apply(&mut client.params, &out.grads)?;
        total_loss += out.loss;
        accepted += out.accepted;
        considered += out.considered;
    }
    Ok(LocalOutcome {
        mean_loss: total_loss / cfg.steps_per_round as f64,
        accepted,
        considered,
    })
}
