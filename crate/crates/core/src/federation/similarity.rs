//! Client similarity from parameter statistics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ModelParams;

/// `(mean, population std)` of every parameter tensor, flattened in layer
/// order. Weight matrices and bias vectors each count as one tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

pub fn extract_features(params: &ModelParams) -> FeatureVector {
    let mut out = Vec::with_capacity(2 * params.layers().len() * 2);
    for t in params.tensors() {
        let n = t.len() as f64;
        let mean = t.iter().sum::<f64>() / n;
        let var = t.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        out.push(mean);
        out.push(var.sqrt());
    }
    FeatureVector(out)
}

/// Symmetric matrix of cosine similarities with a unit diagonal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    values: Vec<Vec<f64>>,
}

impl SimilarityMatrix {
    /// Everyone equally similar; the state before any features exist.
    pub fn ones(m: usize) -> Self {
        Self {
            values: vec![vec![1.0; m]; m],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.values[j][k]
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.values[j]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.values
    }

    /// Builds from raw rows, for tests and crafted scenarios. No
    /// normalization is applied.
    pub fn from_rows(values: Vec<Vec<f64>>) -> Result<Self> {
        let m = values.len();
        if values.iter().any(|r| r.len() != m) {
            return Err(Error::shape("similarity matrix must be square"));
        }
        Ok(Self { values })
    }
}

/// Cosine similarity between every pair of feature vectors.
///
/// A zero feature vector has no direction: its row and column are 0 except
/// for the diagonal.
pub fn similarity_matrix(features: &[FeatureVector]) -> Result<SimilarityMatrix> {
    let m = features.len();
    if let Some(first) = features.first() {
        if let Some(bad) = features.iter().position(|f| f.0.len() != first.0.len()) {
            return Err(Error::shape(format!(
                "feature vector {bad} has length {}, expected {}",
                features[bad].0.len(),
                first.0.len()
            )));
        }
    }
    let norms: Vec<f64> = features.iter().map(FeatureVector::norm).collect();
    for (j, n) in norms.iter().enumerate() {
        if *n == 0.0 {
            log::warn!("client {j} has an all-zero feature vector; similarity set to 0");
        }
    }
    let mut values = vec![vec![0.0; m]; m];
    for j in 0..m {
        values[j][j] = 1.0;
        for k in j + 1..m {
            let w = if norms[j] == 0.0 || norms[k] == 0.0 {
                0.0
            } else {
                let dot: f64 = features[j].0.iter().zip(&features[k].0).map(|(a, b)| a * b).sum();
                (dot / (norms[j] * norms[k])).clamp(-1.0, 1.0)
            };
            values[j][k] = w;
            values[k][j] = w;
        }
    }
    Ok(SimilarityMatrix { values })
}

/// The `t` eligible clients most similar to `j`, highest first, lower id on
/// ties. `j` itself is never returned.
pub fn select_peers(w: &SimilarityMatrix, j: usize, t: usize, eligible: &[usize]) -> Vec<usize> {
    let mut candidates: Vec<usize> = eligible.iter().copied().filter(|&k| k != j).collect();
    candidates.sort_by(|&a, &b| w.get(j, b).total_cmp(&w.get(j, a)).then(a.cmp(&b)));
    candidates.dedup();
    candidates.truncate(t);
    candidates
}
