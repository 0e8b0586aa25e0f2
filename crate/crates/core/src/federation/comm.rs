//! Communication accounting, in whole model payloads.

use serde::{Deserialize, Serialize};

use super::mode::PeerExchange;

/// Models sent from the server to one sampled client in a round: the global
/// model plus whatever peer knowledge the exchange scheme ships.
pub fn download_payloads(exchange: PeerExchange, peers: usize) -> u64 {
    1 + match exchange {
        PeerExchange::None => 0,
        PeerExchange::Direct => peers as u64,
        PeerExchange::Anonymized => u64::from(peers > 0),
    }
}

/// Models sent from one sampled client to the server in a round.
pub const UPLOAD_PAYLOADS: u64 = 1;

/// Extra download cost over plain FedAvg, in percent, once peers are active.
pub fn additional_cost_pct(exchange: PeerExchange, peers: usize) -> u64 {
    100 * (download_payloads(exchange, peers) - download_payloads(PeerExchange::None, 0))
}

/// Totals over an experiment.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CommunicationSummary {
    pub payloads_down: u64,
    pub payloads_up: u64,
    pub params_down: u64,
    pub params_up: u64,
    /// Measured extra download cost over FedAvg across rounds where peers
    /// were active, in percent.
    pub additional_cost_pct: f64,
}
