use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::rng::stream;

pub const DEFAULT_SOFT_SIGMA: f64 = 0.05;
pub const DEFAULT_HARD_SIGMA: f64 = 0.25;
pub const DEFAULT_MASK_FRACTION: f64 = 0.2;

/// Feature-space stand-ins for weak (soft) and strong (hard) augmentation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Augmenter {
    pub soft_sigma: f64,
    pub hard_sigma: f64,
    /// Probability that each coordinate is zeroed by the hard augmentation.
    pub mask_fraction: f64,
}

impl Default for Augmenter {
    fn default() -> Self {
        Self {
            soft_sigma: DEFAULT_SOFT_SIGMA,
            hard_sigma: DEFAULT_HARD_SIGMA,
            mask_fraction: DEFAULT_MASK_FRACTION,
        }
    }
}

impl Augmenter {
    /// Adds `N(0, soft_sigma^2)` noise to every coordinate.
    pub fn soft(&self, x: &[f64], seed: u64) -> Vec<f64> {
        if self.soft_sigma == 0.0 {
            return x.to_vec();
        }
        let mut rng = stream(seed, &[0x50F7]);
        x.iter()
            .map(|v| v + self.soft_sigma * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    /// Adds `N(0, hard_sigma^2)` noise, then zeroes each coordinate with
    /// probability `mask_fraction`.
    pub fn hard(&self, x: &[f64], seed: u64) -> Vec<f64> {
        let mut rng = stream(seed, &[0x4A2D]);
        x.iter()
            .map(|v| {
                let noisy = if self.hard_sigma == 0.0 {
                    *v
                } else {
                    v + self.hard_sigma * rng.sample::<f64, _>(StandardNormal)
                };
                if self.mask_fraction > 0.0 && rng.random::<f64>() < self.mask_fraction {
                    0.0
                } else {
                    noisy
                }
            })
            .collect()
    }
}
