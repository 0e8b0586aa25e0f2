use crate::error::{Error, Result};
use crate::nn::ModelParams;

/// FedAvg: `sum_j w_j * params_j` with `w_j = N_j / sum N`.
///
/// Accumulated as a weighted running mean in the given order, which makes a
/// single update and a set of identical updates exact fixed points.
pub fn fedavg_aggregate(updates: &[(&ModelParams, usize)]) -> Result<ModelParams> {
    if updates.is_empty() {
        return Err(Error::config("updates", "nothing to aggregate"));
    }
    if updates.iter().map(|(_, n)| *n).sum::<usize>() == 0 {
        return Err(Error::config("updates", "total sample weight is zero"));
    }
    if let Some((_, n)) = updates.iter().find(|(_, n)| *n == 0) {
        return Err(Error::config(
            "updates",
            format!("sample count must be positive, got {n}"),
        ));
    }
    ModelParams::weighted_mean(updates.iter().map(|(p, n)| (*p, *n as f64)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Layer;

    fn scalar(v: f64) -> ModelParams {
        ModelParams::from_layers(
            vec![1, 1],
            vec![Layer {
                weights: vec![v],
                bias: vec![0.0],
            }],
        )
        .unwrap()
    }

    #[test]
    fn weighted_by_sample_count() {
        let (a, b) = (scalar(2.0), scalar(4.0));
        let m = fedavg_aggregate(&[(&a, 1), (&b, 3)]).unwrap();
        assert_eq!(m.layers()[0].weights, vec![3.5]);
    }

    #[test]
    fn fixed_points() {
        let p = ModelParams::init(&[4, 6, 3], 3).unwrap();
        assert_eq!(fedavg_aggregate(&[(&p, 17)]).unwrap(), p);
        assert_eq!(fedavg_aggregate(&[(&p, 5), (&p, 9), (&p, 1)]).unwrap(), p);
    }

    #[test]
    fn errors() {
        let a = scalar(1.0);
        let b = ModelParams::zeros(&[1, 2]).unwrap();
        assert!(fedavg_aggregate(&[]).is_err());
        assert!(fedavg_aggregate(&[(&a, 0)]).is_err());
        assert!(matches!(fedavg_aggregate(&[(&a, 1), (&b, 1)]), Err(Error::Shape(_))));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn affine_equivariance(
                seeds in proptest::collection::vec(0u64..500, 1..6),
                counts in proptest::collection::vec(1usize..100, 6),
                a in -3.0f64..3.0,
                b in -2.0f64..2.0,
            ) {
                let models: Vec<ModelParams> = seeds.iter().map(|s| ModelParams::init(&[3, 4, 2], *s).unwrap()).collect();
                let shifted: Vec<ModelParams> = models
                    .iter()
                    .map(|m| {
                        let mut t = m.clone();
                        t.values_mut().for_each(|v| *v = a * *v + b);
                        t
                    })
                    .collect();
                let plain: Vec<(&ModelParams, usize)> = models.iter().zip(&counts).map(|(m, n)| (m, *n)).collect();
                let moved: Vec<(&ModelParams, usize)> = shifted.iter().zip(&counts).map(|(m, n)| (m, *n)).collect();
                let lhs = fedavg_aggregate(&moved).unwrap();
                let rhs = fedavg_aggregate(&plain).unwrap();
                for (l, r) in lhs.values().zip(rhs.values()) {
                    prop_assert!((l - (a * r + b)).abs() < 1e-12);
                }
            }
        }
    }
}
