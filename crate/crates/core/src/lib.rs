//! Simulator for semi-supervised federated learning with peer learning.
//!
//! Clients hold a few labeled and many unlabeled samples. Each round the
//! server samples a cohort, ships the global model (plus, after warm-up, the
//! most similar peers or a single anonymized average of them), and the
//! clients train on a FixMatch-style objective whose pseudo labels come from
//! the ensemble of their own frozen model and those peers. Peer similarity is
//! the cosine between per-tensor mean/std feature vectors of the clients'
//! parameters.
//!
//! Modules:
//! - [`nn`]: the classifier, its gradients and the optimizer.
//! - [`data`]: synthetic data, CSV loading, non-IID partitioning, augmentation.
//! - [`ssl`]: pseudo labeling and the local semi-supervised objective.
//! - [`federation`]: rounds, aggregation, similarity, peers, communication.
//! - [`metrics`]: confusion matrices, macro scores and report assembly.
//! - [`config`]: experiment configuration files.
//! - [`report`]: on-disk outputs and comparison tables.

pub mod config;
pub mod data;
pub mod error;
pub mod federation;
pub mod metrics;
pub mod nn;
pub mod report;
pub mod rng;
pub mod ssl;

pub use error::{Error, Result};
