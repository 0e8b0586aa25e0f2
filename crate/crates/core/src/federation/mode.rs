use serde::{Deserialize, Serialize};

/// Training pipeline of one experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Each client alone, labeled data only.
    LocalLower,
    /// Each client alone, every training label revealed.
    LocalUpper,
    /// Each client alone, FixMatch-style pseudo labeling.
    LocalSsl,
    /// FedAvg on labeled data only.
    FedLower,
    /// FedAvg with every training label revealed.
    FedUpper,
    /// FedAvg with local pseudo labeling.
    Ssfl,
    /// Peer learning, peers shipped individually.
    FedperlNopa,
    /// Peer learning, peers shipped as one anonymized average.
    FedperlPa,
}

/// How peer knowledge reaches a client.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeerExchange {
    None,
    Direct,
    Anonymized,
}

impl Mode {
    /// Declaration order, used for tables.
    pub const ALL: [Mode; 8] = [
        Mode::LocalLower,
        Mode::LocalUpper,
        Mode::LocalSsl,
        Mode::FedLower,
        Mode::FedUpper,
        Mode::Ssfl,
        Mode::FedperlNopa,
        Mode::FedperlPa,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::LocalLower => "local_lower",
            Mode::LocalUpper => "local_upper",
            Mode::LocalSsl => "local_ssl",
            Mode::FedLower => "fed_lower",
            Mode::FedUpper => "fed_upper",
            Mode::Ssfl => "ssfl",
            Mode::FedperlNopa => "fedperl_nopa",
            Mode::FedperlPa => "fedperl_pa",
        }
    }

    pub fn is_federated(self) -> bool {
        !matches!(self, Mode::LocalLower | Mode::LocalUpper | Mode::LocalSsl)
    }

    pub fn reveals_labels(self) -> bool {
        matches!(self, Mode::LocalUpper | Mode::FedUpper)
    }

    /// Whether the loss uses unlabeled data through pseudo labels.
    pub fn uses_unlabeled(self) -> bool {
        matches!(self, Mode::LocalSsl | Mode::Ssfl | Mode::FedperlNopa | Mode::FedperlPa)
    }

    pub fn peer_exchange(self) -> PeerExchange {
        match self {
            Mode::FedperlNopa => PeerExchange::Direct,
            Mode::FedperlPa => PeerExchange::Anonymized,
            _ => PeerExchange::None,
        }
    }

    pub fn is_fedperl(self) -> bool {
        self.peer_exchange() != PeerExchange::None
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Mode {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| crate::Error::config("mode", format!("unknown mode `{s}`")))
    }
}
