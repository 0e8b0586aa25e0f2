//! Datasets, client shards and input augmentation.

mod augment;
mod csv_loader;
mod partition;
mod synthetic;

pub use augment::{Augmenter, DEFAULT_HARD_SIGMA, DEFAULT_MASK_FRACTION, DEFAULT_SOFT_SIGMA};
pub use csv_loader::{load_csv, load_csv_path};
pub use partition::{partition, ClientShard, Community, PartitionPlan, PlanKind, SplitFractions};
pub use synthetic::make_synthetic;

use serde::{Deserialize, Serialize};

/// A raw input row. `y` is absent for unlabeled data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: Option<usize>,
}

/// A sample whose label is known to the client. `index` points back into the
/// source dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    pub index: usize,
    pub x: Vec<f64>,
    pub y: usize,
}

/// A sample with no label. There is deliberately no field to carry one.
#[derive(Clone, Debug, PartialEq)]
pub struct UnlabeledSample {
    pub index: usize,
    pub x: Vec<f64>,
}

/// Samples plus the class count and feature width they were validated against.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub classes: usize,
    pub dim: usize,
}

/// Per-class sample counts of `labels`.
pub fn class_histogram(labels: impl IntoIterator<Item = usize>, classes: usize) -> Vec<usize> {
    let mut hist = vec![0; classes];
    for y in labels {
        hist[y] += 1;
    }
    hist
}
