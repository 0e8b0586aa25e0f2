//! Confusion matrices and macro-averaged classification scores.

use serde::{Deserialize, Serialize};

use crate::data::LabeledSample;
use crate::error::{Error, Result};
use crate::nn::{forward, ModelParams};

/// `counts[truth][prediction]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn from_pairs(classes: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut cm = Self::new(classes);
        for (t, p) in pairs {
            cm.counts[t][p] += 1;
        }
        cm
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn support(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let correct: u64 = (0..self.classes()).map(|c| self.counts[c][c]).sum();
        correct as f64 / total as f64
    }

    /// Per-class precision, recall and F1; zero denominators give 0.
    pub fn per_class(&self) -> Vec<ClassScores> {
        let k = self.classes();
        (0..k)
            .map(|c| {
                let tp = self.counts[c][c] as f64;
                let support = self.support(c);
                let predicted: u64 = (0..k).map(|t| self.counts[t][c]).sum();
                let ratio = |num: f64, den: u64| if den == 0 { 0.0 } else { num / den as f64 };
                let precision = ratio(tp, predicted);
                let recall = ratio(tp, support);
                let f1 = if precision + recall == 0.0 {
                    0.0
                } else {
                    2.0 * precision * recall / (precision + recall)
                };
                ClassScores {
                    precision,
                    recall,
                    f1,
                    support,
                }
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MacroScores {
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Tallies argmax predictions of `params` on `samples`.
pub fn evaluate(params: &ModelParams, samples: &[LabeledSample]) -> Result<ConfusionMatrix> {
    if samples.is_empty() {
        return Err(Error::config("samples", "cannot evaluate on an empty set"));
    }
    let classes = params.num_classes();
    let mut cm = ConfusionMatrix::new(classes);
    for s in samples {
        if s.y >= classes {
            return Err(Error::shape(format!("label {} outside {classes} classes", s.y)));
        }
        let pred = forward(params, &s.x)?.argmax();
        cm.counts[s.y][pred] += 1;
    }
    Ok(cm)
}

/// Unweighted mean over classes that have support in `cm`.
pub fn macro_scores(cm: &ConfusionMatrix) -> MacroScores {
    let supported: Vec<ClassScores> = cm.per_class().into_iter().filter(|s| s.support > 0).collect();
    if supported.is_empty() {
        return MacroScores::default();
    }
    let n = supported.len() as f64;
    MacroScores {
        f1: supported.iter().map(|s| s.f1).sum::<f64>() / n,
        precision: supported.iter().map(|s| s.precision).sum::<f64>() / n,
        recall: supported.iter().map(|s| s.recall).sum::<f64>() / n,
    }
}

/// `100 * (candidate - baseline) / baseline`.
pub fn relative_improvement(candidate: f64, baseline: f64) -> Result<f64> {
    if !baseline.is_finite() || baseline <= 0.0 {
        return Err(Error::config("baseline", format!("must be positive, got {baseline}")));
    }
    Ok(100.0 * (candidate - baseline) / baseline)
}

/// Mean, median and population standard deviation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
    pub std: f64,
}

pub fn summarize(values: &[f64]) -> Summary {
    if values.is_empty() {
        return Summary::default();
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 0 {
        0.5 * (sorted[mid - 1] + sorted[mid])
    } else {
        sorted[mid]
    };
    Summary { mean, median, std }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Layer;

    fn sample(x: f64, y: usize) -> LabeledSample {
        LabeledSample {
            index: 0,
            x: vec![x],
            y,
        }
    }

    /// 1-D, 3-class model: logits = [0, x, 2x - 2] so class 0 for x < 0,
    /// class 1 for 0 < x < 2, class 2 for x > 2.
    fn staircase() -> ModelParams {
        ModelParams::from_layers(
            vec![1, 3],
            vec![Layer {
                weights: vec![0.0, 1.0, 2.0],
                bias: vec![0.0, 0.0, -2.0],
            }],
        )
        .unwrap()
    }

    #[test]
    fn crafted_three_class_tally() {
        let samples = [
            sample(-1.0, 0), // pred 0
            sample(1.0, 0),  // pred 1
            sample(0.5, 1),  // pred 1
            sample(3.0, 1),  // pred 2
            sample(5.0, 2),  // pred 2
            sample(-4.0, 2), // pred 0
        ];
        let cm = evaluate(&staircase(), &samples).unwrap();
        assert_eq!(cm.counts, vec![vec![1, 1, 0], vec![0, 1, 1], vec![1, 0, 1]]);
        assert_eq!(cm.total(), 6);
    }

    #[test]
    fn perfect_and_constant_predictors() {
        let samples = [sample(-1.0, 0), sample(1.0, 1), sample(4.0, 2)];
        let cm = evaluate(&staircase(), &samples).unwrap();
        assert_eq!(cm.counts, vec![vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 1]]);
        let m = macro_scores(&cm);
        assert_eq!((m.f1, m.precision, m.recall), (1.0, 1.0, 1.0));

        let constant = ModelParams::from_layers(
            vec![1, 2],
            vec![Layer {
                weights: vec![0.0, 0.0],
                bias: vec![1.0, 0.0],
            }],
        )
        .unwrap();
        let cm = evaluate(
            &constant,
            &[sample(0.0, 0), sample(1.0, 1), sample(2.0, 0), sample(3.0, 1)],
        )
        .unwrap();
        assert_eq!(cm.counts, vec![vec![2, 0], vec![2, 0]]);
    }

    #[test]
    fn empty_evaluation_is_an_error() {
        assert!(evaluate(&staircase(), &[]).is_err());
    }

    #[test]
    fn two_thirds_case() {
        // class 0: TP 2, FP 1, FN 1
        let cm = ConfusionMatrix {
            counts: vec![vec![2, 1], vec![1, 0]],
        };
        let s = cm.per_class()[0];
        for v in [s.precision, s.recall, s.f1] {
            assert!((v - 2.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn crafted_macro_scores_match_hand_computation() {
        // rows truth, cols prediction
        // class 0: TP 3, FP 1 (from 2), FN 1 -> P 3/4, R 3/4, F1 3/4
        // class 1: TP 2, FP 1 (from 0), FN 2 -> P 2/3, R 1/2, F1 4/7
        // class 2: TP 1, FP 2 (from 1), FN 1 -> P 1/3, R 1/2, F1 2/5
        let cm = ConfusionMatrix {
            counts: vec![vec![3, 1, 0], vec![0, 2, 2], vec![1, 0, 1]],
        };
        let m = macro_scores(&cm);
        assert!((m.precision - (0.75 + 2.0 / 3.0 + 1.0 / 3.0) / 3.0).abs() < 1e-12);
        assert!((m.recall - (0.75 + 0.5 + 0.5) / 3.0).abs() < 1e-12);
        assert!((m.f1 - (0.75 + 4.0 / 7.0 + 0.4) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn zero_support_classes_are_excluded() {
        // class 2 has no support but is predicted once
        let cm = ConfusionMatrix {
            counts: vec![vec![2, 0, 1], vec![0, 3, 0], vec![0, 0, 0]],
        };
        let m = macro_scores(&cm);
        // class 0: P 1, R 2/3, F1 0.8; class 1: all 1
        assert!((m.f1 - 0.9).abs() < 1e-12);
        assert!((m.recall - (2.0 / 3.0 + 1.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn relative_improvement_reproduces_published_values() {
        assert!((relative_improvement(0.698, 0.647).unwrap() - 7.88).abs() < 0.05);
        assert!((relative_improvement(0.746, 0.647).unwrap() - 15.30).abs() < 0.05);
        assert_eq!(relative_improvement(0.5, 0.5).unwrap(), 0.0);
        assert!(relative_improvement(0.5, 0.0).is_err());
    }

    #[test]
    fn summary_stats() {
        let s = summarize(&[1.0, 3.0, 2.0, 6.0]);
        assert_eq!(s.mean, 3.0);
        assert_eq!(s.median, 2.5);
        assert!((s.std - (14.0f64 / 4.0).sqrt()).abs() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn matrix() -> impl Strategy<Value = ConfusionMatrix> {
            (2usize..6).prop_flat_map(|k| {
                proptest::collection::vec(proptest::collection::vec(0u64..20, k), k)
                    .prop_map(|counts| ConfusionMatrix { counts })
            })
        }

        proptest! {
            #[test]
            fn scores_are_bounded(cm in matrix()) {
                let per = cm.per_class();
                for s in &per {
                    prop_assert!((0.0..=1.0).contains(&s.f1));
                    prop_assert!(s.f1 <= s.precision.max(s.recall) + 1e-12);
                }
                let m = macro_scores(&cm);
                let supported: Vec<f64> = per.iter().filter(|s| s.support > 0).map(|s| s.f1).collect();
                if !supported.is_empty() {
                    let lo = supported.iter().copied().fold(f64::INFINITY, f64::min);
                    let hi = supported.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    prop_assert!(m.f1 >= lo - 1e-12 && m.f1 <= hi + 1e-12);
                }
                for v in [m.f1, m.precision, m.recall] {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
            }

            #[test]
            fn relabeling_permutes_the_matrix(
                pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..40),
                perm in Just(vec![0usize, 1, 2, 3]).prop_shuffle(),
            ) {
                let cm = ConfusionMatrix::from_pairs(4, pairs.iter().copied());
                let relabeled = ConfusionMatrix::from_pairs(4, pairs.iter().map(|&(t, p)| (perm[t], perm[p])));
                for t in 0..4 {
                    for p in 0..4 {
                        prop_assert_eq!(cm.counts[t][p], relabeled.counts[perm[t]][perm[p]]);
                    }
                }
                prop_assert!((macro_scores(&cm).f1 - macro_scores(&relabeled).f1).abs() < 1e-12);
            }
        }
    }
}
