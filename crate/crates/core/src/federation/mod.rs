//! Federated and local training protocols.

mod aggregate;
mod comm;
mod experiment;
mod mode;
mod round;
mod similarity;

pub use aggregate::fedavg_aggregate;
pub use comm::{additional_cost_pct, download_payloads, CommunicationSummary, UPLOAD_PAYLOADS};
pub use experiment::{
    arch_for, prepare_shards, run_experiment, run_experiment_with, run_ladder, selection_counts, selection_frequency,
    ExperimentOutcome,
};
pub use mode::{Mode, PeerExchange};
pub use round::{ClientState, Message, PeerPayload, RoundLog, ServerState, Simulation};
pub use similarity::{extract_features, select_peers, similarity_matrix, FeatureVector, SimilarityMatrix};
