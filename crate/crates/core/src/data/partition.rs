use rand::seq::SliceRandom;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::{LabeledSample, Sample, UnlabeledSample};
use crate::error::{Error, Result};
use crate::rng::{stream, tag};

/// Which class-distribution template a client was drawn from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Community {
    A,
    B,
    Outlier,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PlanKind {
    TwoCommunity { membership: Vec<Community> },
    Dirichlet { alpha: f64 },
    Explicit,
}

/// Per-client class distributions and sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub class_probs: Vec<Vec<f64>>,
    pub sizes: Vec<usize>,
    pub kind: PlanKind,
}

fn check_distribution(key: &str, probs: &[f64], classes: usize) -> Result<()> {
    if probs.len() != classes {
        return Err(Error::config(
            key,
            format!("expected {classes} class probabilities, got {}", probs.len()),
        ));
    }
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::config(
            key,
            "class probabilities must be finite and non-negative",
        ));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::config(key, format!("class probabilities sum to {sum}, not 1")));
    }
    Ok(())
}

fn support(probs: &[f64]) -> Vec<usize> {
    probs
        .iter()
        .enumerate()
        .filter(|(_, p)| **p > 0.0)
        .map(|(c, _)| c)
        .collect()
}

impl PartitionPlan {
    pub fn explicit(class_probs: Vec<Vec<f64>>, sizes: Vec<usize>) -> Result<Self> {
        let plan = Self {
            class_probs,
            sizes,
            kind: PlanKind::Explicit,
        };
        plan.validate()?;
        Ok(plan)
    }

    /// `n_a` clients follow `template_a`, then `n_b` follow `template_b`,
    /// then one client per entry of `outliers`.
    pub fn two_community(
        template_a: Vec<f64>,
        template_b: Vec<f64>,
        n_a: usize,
        n_b: usize,
        outliers: Vec<Vec<f64>>,
        sizes: Vec<usize>,
    ) -> Result<Self> {
        let classes = template_a.len();
        check_distribution("partition.template_a", &template_a, classes)?;
        check_distribution("partition.template_b", &template_b, classes)?;
        if template_a == template_b {
            return Err(Error::config("partition.template_b", "the two templates must differ"));
        }
        if n_a == 0 || n_b == 0 {
            return Err(Error::config("partition", "each community needs at least one client"));
        }
        let mut seen = vec![false; classes];
        for (i, o) in outliers.iter().enumerate() {
            check_distribution(&format!("partition.outliers[{i}]"), o, classes)?;
            for c in support(o) {
                if std::mem::replace(&mut seen[c], true) {
                    return Err(Error::config(
                        format!("partition.outliers[{i}]"),
                        format!("class {c} already used by another outlier; outlier supports must be disjoint"),
                    ));
                }
            }
        }
        let mut membership = vec![Community::A; n_a];
        membership.extend(std::iter::repeat(Community::B).take(n_b));
        membership.extend(std::iter::repeat(Community::Outlier).take(outliers.len()));
        let mut class_probs = vec![template_a; n_a];
        class_probs.extend(std::iter::repeat(template_b).take(n_b));
        class_probs.extend(outliers);
        let plan = Self {
            class_probs,
            sizes,
            kind: PlanKind::TwoCommunity { membership },
        };
        plan.validate()?;
        Ok(plan)
    }

    /// Class distributions drawn per client from `Dirichlet(alpha)`.
    pub fn dirichlet(classes: usize, alpha: f64, sizes: Vec<usize>, seed: u64) -> Result<Self> {
        if !alpha.is_finite() || alpha <= 0.0 {
            return Err(Error::config(
                "partition.alpha",
                format!("must be positive, got {alpha}"),
            ));
        }
        if classes < 2 {
            return Err(Error::config("classes", "need at least 2 classes"));
        }
        // Dirichlet draw as normalized independent Gamma(alpha, 1) variates
        let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::config("partition.alpha", e.to_string()))?;
        let mut rng = stream(seed, &[tag::PARTITION, 7]);
        let mut class_probs = Vec::with_capacity(sizes.len());
        for j in 0..sizes.len() {
            let g: Vec<f64> = (0..classes).map(|_| gamma.sample(&mut rng)).collect();
            let s: f64 = g.iter().sum();
            if s.is_nan() || s <= 0.0 {
                return Err(Error::config(
                    "partition.alpha",
                    format!("alpha {alpha} too small: client {j} drew an all-zero class distribution"),
                ));
            }
            class_probs.push(g.into_iter().map(|v| v / s).collect());
        }
        let plan = Self {
            class_probs,
            sizes,
            kind: PlanKind::Dirichlet { alpha },
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn num_clients(&self) -> usize {
        self.sizes.len()
    }

    pub fn num_classes(&self) -> usize {
        self.class_probs.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sizes.is_empty() {
            return Err(Error::config("partition.sizes", "need at least one client"));
        }
        if self.class_probs.len() != self.sizes.len() {
            return Err(Error::config(
                "partition.sizes",
                format!("{} sizes for {} clients", self.sizes.len(), self.class_probs.len()),
            ));
        }
        if let Some(j) = self.sizes.iter().position(|&n| n == 0) {
            return Err(Error::config("partition.sizes", format!("client {j} has size 0")));
        }
        let classes = self.num_classes();
        for (j, p) in self.class_probs.iter().enumerate() {
            check_distribution(&format!("partition.class_probs[{j}]"), p, classes)?;
        }
        Ok(())
    }

    /// Integer per-class counts for client `j` (largest-remainder rounding).
    pub fn class_counts(&self, j: usize) -> Vec<usize> {
        largest_remainder(&self.class_probs[j], self.sizes[j])
    }
}

fn largest_remainder(probs: &[f64], total: usize) -> Vec<usize> {
    let exact: Vec<f64> = probs.iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..probs.len()).collect();
    // largest fractional part first, lower class index on ties
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &c in order.iter().take(total.saturating_sub(assigned)) {
        counts[c] += 1;
    }
    counts
}

/// Fractions used to split each client's data.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitFractions {
    /// Share of the training portion (labeled + unlabeled) that keeps labels.
    pub labeled: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            labeled: 0.12,
            validation: 0.1,
            test: 0.2,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        if !(self.labeled > 0.0 && self.labeled <= 1.0) {
            return Err(Error::config(
                "split.labeled",
                format!("must be in (0, 1], got {}", self.labeled),
            ));
        }
        for (key, v) in [("split.validation", self.validation), ("split.test", self.test)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::config(key, format!("must be in [0, 1), got {v}")));
            }
        }
        if self.validation + self.test >= 1.0 {
            return Err(Error::config(
                "split",
                "validation + test must leave room for training data",
            ));
        }
        Ok(())
    }
}

/// One client's data.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ClientShard {
    pub labeled: Vec<LabeledSample>,
    pub unlabeled: Vec<UnlabeledSample>,
    pub validation: Vec<LabeledSample>,
    pub test: Vec<LabeledSample>,
}

impl ClientShard {
    /// Local training set size (labeled + unlabeled).
    pub fn train_size(&self) -> usize {
        self.labeled.len() + self.unlabeled.len()
    }

    /// Source indices of every sample in the shard, split by split.
    pub fn indices(&self) -> [Vec<usize>; 4] {
        [
            self.labeled.iter().map(|s| s.index).collect(),
            self.unlabeled.iter().map(|s| s.index).collect(),
            self.validation.iter().map(|s| s.index).collect(),
            self.test.iter().map(|s| s.index).collect(),
        ]
    }
}

/// Splits `samples` into one shard per client following `plan`.
///
/// Labeled source rows are dealt by class according to each client's class
/// counts; source rows without labels are dealt round-robin into the
/// clients' unlabeled pools.
pub fn partition(
    samples: &[Sample],
    plan: &PartitionPlan,
    split: SplitFractions,
    seed: u64,
) -> Result<Vec<ClientShard>> {
    plan.validate()?;
    split.validate()?;
    let classes = plan.num_classes();

    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); classes];
    let mut unlabeled_pool = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        match s.y {
            Some(y) if y < classes => pools[y].push(i),
            Some(y) => {
                return Err(Error::config(
                    "partition",
                    format!("sample {i} has class {y} but the plan covers {classes} classes"),
                ))
            }
            None => unlabeled_pool.push(i),
        }
    }
    for (c, pool) in pools.iter_mut().enumerate() {
        pool.shuffle(&mut stream(seed, &[tag::PARTITION, 1, c as u64]));
    }

    let counts: Vec<Vec<usize>> = (0..plan.num_clients()).map(|j| plan.class_counts(j)).collect();
    for c in 0..classes {
        let needed: usize = counts.iter().map(|row| row[c]).sum();
        if needed > pools[c].len() {
            return Err(Error::config(
                "partition",
                format!(
                    "class {c} needs {needed} samples but only {} are available",
                    pools[c].len()
                ),
            ));
        }
    }

    let mut cursor = vec![0usize; classes];
    let mut shards = Vec::with_capacity(plan.num_clients());
    for (j, row) in counts.iter().enumerate() {
        let mut mine: Vec<usize> = Vec::with_capacity(plan.sizes[j]);
        for (c, &k) in row.iter().enumerate() {
            mine.extend_from_slice(&pools[c][cursor[c]..cursor[c] + k]);
            cursor[c] += k;
        }
        mine.shuffle(&mut stream(seed, &[tag::PARTITION, 2, j as u64]));

        let n = mine.len();
        let n_test = (n as f64 * split.test).round() as usize;
        let n_val = ((n as f64 * split.validation).round() as usize).min(n - n_test);
        let train = &mine[n_test + n_val..];
        let mut n_lab = (train.len() as f64 * split.labeled).round() as usize;
        if n_lab == 0 && !train.is_empty() {
            n_lab = 1;
        }

        let labeled_of = |idx: &[usize]| -> Vec<LabeledSample> {
            idx.iter()
                .map(|&i| LabeledSample {
                    index: i,
                    x: samples[i].x.clone(),
                    y: samples[i].y.expect("pooled by label"),
                })
                .collect()
        };
        shards.push(ClientShard {
            test: labeled_of(&mine[..n_test]),
            validation: labeled_of(&mine[n_test..n_test + n_val]),
            labeled: labeled_of(&train[..n_lab]),
            unlabeled: train[n_lab..]
                .iter()
                .map(|&i| UnlabeledSample {
                    index: i,
                    x: samples[i].x.clone(),
                })
                .collect(),
        });
    }

    unlabeled_pool.shuffle(&mut stream(seed, &[tag::PARTITION, 3]));
    let m = shards.len();
    for (k, i) in unlabeled_pool.into_iter().enumerate() {
        shards[k % m].unlabeled.push(UnlabeledSample {
            index: i,
            x: samples[i].x.clone(),
        });
    }
    Ok(shards)
}
