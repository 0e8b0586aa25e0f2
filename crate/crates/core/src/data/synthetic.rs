use rand::Rng;
use rand_distr::StandardNormal;

use super::Sample;
use crate::error::{Error, Result};
use crate::rng::{stream, tag};

/// Gaussian class blobs with unit covariance.
///
/// Class means are `separation / sqrt(2)` times random unit directions, so
/// in high dimension pairs of means sit roughly `separation` apart. Labels
/// cycle `0, 1, .., C-1`, which keeps the classes balanced.
pub fn make_synthetic(classes: usize, dim: usize, n: usize, separation: f64, seed: u64) -> Result<Vec<Sample>> {
    if classes < 2 {
        return Err(Error::config("classes", format!("need at least 2, got {classes}")));
    }
    if dim < 2 {
        return Err(Error::config("dim", format!("need at least 2, got {dim}")));
    }
    if !separation.is_finite() || separation <= 0.0 {
        return Err(Error::config(
            "separation",
            format!("must be positive, got {separation}"),
        ));
    }

    let mut means_rng = stream(seed, &[tag::DATA, 0]);
    let radius = separation / std::f64::consts::SQRT_2;
    let means: Vec<Vec<f64>> = (0..classes)
        .map(|_| {
            let dir: Vec<f64> = (0..dim).map(|_| means_rng.sample(StandardNormal)).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            dir.into_iter().map(|v| radius * v / norm).collect()
        })
        .collect();

    let mut rng = stream(seed, &[tag::DATA, 1]);
    Ok((0..n)
        .map(|i| {
            let y = i % classes;
            let x = means[y]
                .iter()
                .map(|m| m + rng.sample::<f64, _>(StandardNormal))
                .collect();
            Sample { x, y: Some(y) }
        })
        .collect())
}
