//! Experiment configuration (TOML).
//!
//! Only `mode` is required. Every other key falls back to a default; unknown
//! keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{
    load_csv_path, make_synthetic, Augmenter, Community, Dataset, PartitionPlan, PlanKind, SplitFractions,
};
use crate::error::{Error, Result};
use crate::federation::Mode;
use crate::nn::DEFAULT_LEARNING_RATE;
use crate::ssl::{validate_tau, EnsembleNorm, SslHyper};

/// Which snapshot of a client the server uses for similarity and as that
/// client's peer model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeersFrom {
    /// The client's parameters right after its latest local training.
    #[default]
    Local,
    /// The global aggregate produced in the client's latest sampled round.
    Global,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum DatasetSpec {
    Synthetic {
        #[serde(default = "defaults::classes")]
        classes: usize,
        #[serde(default = "defaults::dim")]
        dim: usize,
        #[serde(default = "defaults::samples")]
        samples: usize,
        #[serde(default = "defaults::separation")]
        separation: f64,
    },
    Csv {
        path: PathBuf,
    },
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Synthetic {
            classes: defaults::classes(),
            dim: defaults::dim(),
            samples: defaults::samples(),
            separation: defaults::separation(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum PartitionSpec {
    TwoCommunity {
        template_a: Vec<f64>,
        template_b: Vec<f64>,
        clients_a: usize,
        clients_b: usize,
        #[serde(default)]
        outliers: Vec<Vec<f64>>,
        sizes: Vec<usize>,
    },
    Dirichlet {
        alpha: f64,
        sizes: Vec<usize>,
    },
    Explicit {
        class_probs: Vec<Vec<f64>>,
        sizes: Vec<usize>,
    },
}

impl Default for PartitionSpec {
    /// Ten clients: five on template A, three on template B, two outliers
    /// whose class supports are disjoint from each other.
    fn default() -> Self {
        PartitionSpec::TwoCommunity {
            template_a: vec![0.30, 0.30, 0.15, 0.15, 0.025, 0.025, 0.025, 0.025],
            template_b: vec![0.025, 0.025, 0.025, 0.025, 0.15, 0.15, 0.30, 0.30],
            clients_a: 5,
            clients_b: 3,
            outliers: vec![
                vec![0.0, 0.0, 0.0, 0.85, 0.15, 0.0, 0.0, 0.0],
                vec![0.0, 0.0, 0.15, 0.0, 0.0, 0.85, 0.0, 0.0],
            ],
            sizes: vec![700, 600, 650, 550, 600, 450, 400, 500, 200, 150],
        }
    }
}

impl PartitionSpec {
    pub fn plan(&self, classes: usize, seed: u64) -> Result<PartitionPlan> {
        let plan = match self {
            PartitionSpec::TwoCommunity {
                template_a,
                template_b,
                clients_a,
                clients_b,
                outliers,
                sizes,
            } => PartitionPlan::two_community(
                template_a.clone(),
                template_b.clone(),
                *clients_a,
                *clients_b,
                outliers.clone(),
                sizes.clone(),
            )?,
            PartitionSpec::Dirichlet { alpha, sizes } => {
                PartitionPlan::dirichlet(classes, *alpha, sizes.clone(), seed)?
            }
            PartitionSpec::Explicit { class_probs, sizes } => {
                PartitionPlan::explicit(class_probs.clone(), sizes.clone())?
            }
        };
        if plan.num_classes() != classes {
            return Err(Error::config(
                "partition",
                format!("plan covers {} classes, dataset has {classes}", plan.num_classes()),
            ));
        }
        Ok(plan)
    }
}

mod defaults {
    pub fn classes() -> usize {
        8
    }
    pub fn dim() -> usize {
        16
    }
    pub fn samples() -> usize {
        12_000
    }
    pub fn separation() -> f64 {
        3.0
    }
    pub fn seed() -> u64 {
        0
    }
    pub fn rounds() -> usize {
        500
    }
    pub fn warmup_rounds() -> usize {
        10
    }
    pub fn participation_rate() -> f64 {
        0.3
    }
    pub fn batch_size() -> usize {
        16
    }
    pub fn steps_per_round() -> usize {
        20
    }
    pub fn learning_rate() -> f64 {
        super::DEFAULT_LEARNING_RATE
    }
    pub fn hidden() -> Vec<usize> {
        vec![32]
    }
    pub fn tau_local() -> f64 {
        0.9
    }
    pub fn eval_every() -> usize {
        1
    }
    pub fn output_dir() -> std::path::PathBuf {
        "results".into()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    #[serde(default = "defaults::seed")]
    pub seed: u64,
    #[serde(default = "defaults::rounds")]
    pub rounds: usize,
    #[serde(default = "defaults::warmup_rounds")]
    pub warmup_rounds: usize,
    #[serde(default = "defaults::participation_rate")]
    pub participation_rate: f64,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    /// Unlabeled minibatch size; defaults to `batch_size`.
    #[serde(default)]
    pub unlabeled_batch_size: Option<usize>,
    #[serde(default = "defaults::steps_per_round")]
    pub steps_per_round: usize,
    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f64,
    /// Hidden layer widths of the classifier.
    #[serde(default = "defaults::hidden")]
    pub hidden: Vec<usize>,
    /// Confidence threshold for the purely local SSL baseline.
    #[serde(default = "defaults::tau_local")]
    pub tau_local: f64,
    #[serde(default)]
    pub ensemble_norm: EnsembleNorm,
    #[serde(default)]
    pub peers_from: PeersFrom,
    /// Evaluate on validation data every this many rounds (and at the end).
    #[serde(default = "defaults::eval_every")]
    pub eval_every: usize,
    #[serde(default = "defaults::output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub ssl: SslHyper,
    #[serde(default)]
    pub augment: Augmenter,
    #[serde(default)]
    pub split: SplitFractions,
    #[serde(default)]
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub partition: PartitionSpec,
}

impl ExperimentConfig {
    /// Defaults for everything but the mode.
    pub fn new(mode: Mode) -> Self {
        toml::from_str(&format!("mode = \"{mode}\"")).expect("defaults are valid")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        // relative CSV paths are resolved against the config file
        if let DatasetSpec::Csv { path: csv } = &mut cfg.dataset {
            if csv.is_relative() {
                if let Some(dir) = path.parent() {
                    *csv = dir.join(&*csv);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn unlabeled_batch(&self) -> usize {
        self.unlabeled_batch_size.unwrap_or(self.batch_size)
    }

    /// Threshold used by this config's mode.
    pub fn tau(&self) -> f64 {
        if self.mode.is_federated() {
            self.ssl.tau
        } else {
            self.tau_local
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::config("rounds", "must be at least 1"));
        }
        if self.rounds < self.warmup_rounds {
            return Err(Error::config(
                "rounds",
                format!(
                    "{} rounds cannot contain {} warm-up rounds",
                    self.rounds, self.warmup_rounds
                ),
            ));
        }
        if !(self.participation_rate > 0.0 && self.participation_rate <= 1.0) {
            return Err(Error::config(
                "participation_rate",
                format!("must be in (0, 1], got {}", self.participation_rate),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if self.unlabeled_batch_size == Some(0) {
            return Err(Error::config("unlabeled_batch_size", "must be at least 1"));
        }
        if self.steps_per_round == 0 {
            return Err(Error::config("steps_per_round", "must be at least 1"));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::config(
                "learning_rate",
                format!("must be positive, got {}", self.learning_rate),
            ));
        }
        if self.hidden.contains(&0) {
            return Err(Error::config("hidden", "layer widths must be positive"));
        }
        if self.eval_every == 0 {
            return Err(Error::config("eval_every", "must be at least 1"));
        }
        validate_tau("tau_local", self.tau_local)?;
        self.ssl.validate()?;
        let a = &self.augment;
        for (key, v) in [
            ("augment.soft_sigma", a.soft_sigma),
            ("augment.hard_sigma", a.hard_sigma),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::config(key, format!("must be >= 0, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&a.mask_fraction) {
            return Err(Error::config(
                "augment.mask_fraction",
                format!("must be in [0, 1], got {}", a.mask_fraction),
            ));
        }
        self.split.validate()?;
        if let DatasetSpec::Synthetic {
            classes,
            dim,
            separation,
            ..
        } = &self.dataset
        {
            if *classes < 2 {
                return Err(Error::config("dataset.classes", "need at least 2"));
            }
            if *dim < 2 {
                return Err(Error::config("dataset.dim", "need at least 2"));
            }
            if !separation.is_finite() || *separation <= 0.0 {
                return Err(Error::config("dataset.separation", "must be positive"));
            }
            self.partition.plan(*classes, self.seed)?;
        }
        Ok(())
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        match &self.dataset {
            DatasetSpec::Synthetic {
                classes,
                dim,
                samples,
                separation,
            } => Ok(Dataset {
                samples: make_synthetic(*classes, *dim, *samples, *separation, self.seed)?,
                classes: *classes,
                dim: *dim,
            }),
            DatasetSpec::Csv { path } => {
                let ds = load_csv_path(path)?;
                if ds.classes < 2 {
                    return Err(Error::config(
                        "dataset.path",
                        "CSV needs labels from at least 2 classes",
                    ));
                }
                Ok(ds)
            }
        }
    }

    /// Community of each client when the partition is two-community.
    pub fn communities(&self, classes: usize) -> Option<Vec<Community>> {
        match self.partition.plan(classes, self.seed).ok()?.kind {
            PlanKind::TwoCommunity { membership } => Some(membership),
            _ => None,
        }
    }

    /// Identifies the data every client sees: same signature, same shards.
    pub fn dataset_signature(&self) -> String {
        #[derive(Serialize)]
        struct Signed<'a> {
            dataset: &'a DatasetSpec,
            partition: &'a PartitionSpec,
            split: &'a SplitFractions,
            seed: u64,
        }
        let json = serde_json::to_string(&Signed {
            dataset: &self.dataset,
            partition: &self.partition,
            split: &self.split,
            seed: self.seed,
        })
        .expect("signature serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_only_config_gets_defaults() {
        let cfg = ExperimentConfig::parse("mode = \"fedperl_pa\"").unwrap();
        assert_eq!(cfg.mode, Mode::FedperlPa);
        assert_eq!(cfg.ssl.tau, 0.6);
        assert_eq!(cfg.tau_local, 0.9);
        assert_eq!(cfg.ssl.beta, 0.5);
        assert_eq!(cfg.ssl.gamma, 0.01);
        assert_eq!(cfg.ssl.peers, 2);
        assert_eq!(cfg.learning_rate, 5e-5);
        assert_eq!(cfg.rounds, 500);
        assert_eq!(cfg.warmup_rounds, 10);
        assert_eq!(cfg.participation_rate, 0.3);
        assert_eq!(cfg.batch_size, 16);
        assert_eq!(cfg.steps_per_round, 20);
        assert_eq!(cfg.split.labeled, 0.12);
        assert_eq!(cfg.ensemble_norm, EnsembleNorm::Mean);
        assert_eq!(cfg.peers_from, PeersFrom::Local);
        assert_eq!(cfg, ExperimentConfig::new(Mode::FedperlPa));
    }

    #[test]
    fn range_errors_name_the_key() {
        let err = ExperimentConfig::parse("mode = \"ssfl\"\n[ssl]\ntau = 1.5\n").unwrap_err();
        assert!(matches!(&err, Error::Config { key, .. } if key == "ssl.tau"), "{err}");
        let err = ExperimentConfig::parse("mode = \"ssfl\"\nrounds = 5\nwarmup_rounds = 10\n").unwrap_err();
        assert!(matches!(&err, Error::Config { key, .. } if key == "rounds"), "{err}");
        let err = ExperimentConfig::parse("mode = \"ssfl\"\nparticipation_rate = 0.0\n").unwrap_err();
        assert!(err.to_string().contains("participation_rate"));
    }

    #[test]
    fn missing_mode_and_unknown_keys_are_rejected() {
        let err = ExperimentConfig::parse("seed = 3").unwrap_err();
        assert!(err.to_string().contains("mode"), "{err}");
        let err = ExperimentConfig::parse("mode = \"ssfl\"\nlearning_rat = 0.1\n").unwrap_err();
        assert!(err.to_string().contains("learning_rat"), "{err}");
        let err = ExperimentConfig::parse("mode = \"ssfl\"\n[ssl]\ntemperature = 1\n").unwrap_err();
        assert!(err.to_string().contains("temperature"), "{err}");
        assert!(ExperimentConfig::parse("mode = \"fixmatch\"").is_err());
    }

    #[test]
    fn partition_variants_parse() {
        let text = r#"
mode = "fed_lower"
[dataset]
kind = "synthetic"
classes = 3
dim = 4
samples = 300
[partition]
kind = "dirichlet"
alpha = 0.5
sizes = [50, 60, 40]
"#;
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert!(matches!(cfg.partition, PartitionSpec::Dirichlet { .. }));
        let bad = text.replace("classes = 3", "classes = 3\nseparation = -1.0");
        assert!(ExperimentConfig::parse(&bad).is_err());
    }

    #[test]
    fn toml_round_trip() {
        let cfg = ExperimentConfig::new(Mode::Ssfl);
        assert_eq!(ExperimentConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn signature_tracks_data_not_training() {
        let a = ExperimentConfig::new(Mode::Ssfl);
        let mut b = ExperimentConfig::new(Mode::FedperlPa);
        b.learning_rate = 0.01;
        assert_eq!(a.dataset_signature(), b.dataset_signature());
        b.seed = 1;
        assert_ne!(a.dataset_signature(), b.dataset_signature());
    }

    #[test]
    fn default_plan_is_feasible() {
        let cfg = ExperimentConfig::new(Mode::Ssfl);
        let ds = cfg.load_dataset().unwrap();
        let plan = cfg.partition.plan(ds.classes, cfg.seed).unwrap();
        crate::data::partition(&ds.samples, &plan, cfg.split, cfg.seed).unwrap();
        assert_eq!(cfg.communities(ds.classes).unwrap().len(), 10);
    }
}
