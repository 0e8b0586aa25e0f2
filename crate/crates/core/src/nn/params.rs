use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One affine layer. `weights` is row-major with shape `(out, in)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Parameters of a fully connected classifier, the unit exchanged between
/// clients and the server.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams")]
pub struct ModelParams {
    arch: Vec<usize>,
    layers: Vec<Layer>,
}

#[derive(Deserialize)]
struct RawParams {
    arch: Vec<usize>,
    layers: Vec<Layer>,
}

impl TryFrom<RawParams> for ModelParams {
    type Error = Error;

    fn try_from(raw: RawParams) -> Result<Self> {
        ModelParams::from_layers(raw.arch, raw.layers)
    }
}

fn validate_arch(arch: &[usize]) -> Result<()> {
    if arch.len() < 2 {
        return Err(Error::config(
            "arch",
            format!("need at least input and output widths, got {arch:?}"),
        ));
    }
    if arch.contains(&0) {
        return Err(Error::config(
            "arch",
            format!("layer widths must be positive, got {arch:?}"),
        ));
    }
    Ok(())
}

impl ModelParams {
    /// All-zero parameters for `arch`.
    pub fn zeros(arch: &[usize]) -> Result<Self> {
        validate_arch(arch)?;
        let layers = arch
            .windows(2)
            .map(|w| Layer {
                weights: vec![0.0; w[0] * w[1]],
                bias: vec![0.0; w[1]],
            })
            .collect();
        Ok(Self {
            arch: arch.to_vec(),
            layers,
        })
    }

    /// Xavier-uniform weights (variance `2 / (fan_in + fan_out)`), zero biases.
    pub fn init(arch: &[usize], seed: u64) -> Result<Self> {
        let mut params = Self::zeros(arch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (layer, w) in params.layers.iter_mut().zip(arch.windows(2)) {
            let limit = (6.0 / (w[0] + w[1]) as f64).sqrt();
            for v in &mut layer.weights {
                *v = rng.random_range(-limit..limit);
            }
        }
        Ok(params)
    }

    pub fn from_layers(arch: Vec<usize>, layers: Vec<Layer>) -> Result<Self> {
        validate_arch(&arch)?;
        if layers.len() != arch.len() - 1 {
            return Err(Error::shape(format!(
                "arch {arch:?} implies {} layers, got {}",
                arch.len() - 1,
                layers.len()
            )));
        }
        for (i, (layer, w)) in layers.iter().zip(arch.windows(2)).enumerate() {
            if layer.weights.len() != w[0] * w[1] || layer.bias.len() != w[1] {
                return Err(Error::shape(format!(
                    "layer {i}: expected {}x{} weights and {} biases, got {} and {}",
                    w[1],
                    w[0],
                    w[1],
                    layer.weights.len(),
                    layer.bias.len()
                )));
            }
        }
        let params = Self { arch, layers };
        if !params.is_finite() {
            return Err(Error::Numeric("parameters contain NaN or infinity".into()));
        }
        Ok(params)
    }

    pub fn arch(&self) -> &[usize] {
        &self.arch
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_width(&self) -> usize {
        self.arch[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.arch.last().expect("arch validated non-empty")
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Parameter tensors in layer order: weights then bias for each layer.
    pub fn tensors(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut [f64]> + '_ {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.tensors().flat_map(|t| t.iter().copied())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.tensors_mut().flat_map(|t| t.iter_mut())
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(f64::is_finite)
    }

    pub fn check_same_arch(&self, other: &Self) -> Result<()> {
        if self.arch != other.arch {
            return Err(Error::shape(format!(
                "architecture {:?} does not match {:?}",
                self.arch, other.arch
            )));
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.arch).expect("arch already validated")
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, alpha: f64, other: &Self) -> Result<()> {
        self.check_same_arch(other)?;
        for (a, b) in self.values_mut().zip(other.values()) {
            *a += alpha * b;
        }
        Ok(())
    }

    /// Weighted running mean of `models`.
    ///
    /// Computed incrementally so that averaging identical models reproduces
    /// them bit for bit and a single model is returned unchanged.
    pub fn weighted_mean<'a, I>(models: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a ModelParams, f64)>,
    {
        let mut iter = models.into_iter();
        let (first, w0) = iter
            .next()
            .ok_or_else(|| Error::config("models", "cannot average an empty set of models"))?;
        if !w0.is_finite() || w0 <= 0.0 {
            return Err(Error::config("weight", format!("weights must be positive, got {w0}")));
        }
        let mut mean = first.clone();
        let mut total = w0;
        for (model, w) in iter {
            mean.check_same_arch(model)?;
            if !w.is_finite() || w <= 0.0 {
                return Err(Error::config("weight", format!("weights must be positive, got {w}")));
            }
            total += w;
            let frac = w / total;
            for (m, x) in mean.values_mut().zip(model.values()) {
                *m += frac * (x - *m);
            }
        }
        Ok(mean)
    }
}
