use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::arch::{ArchSpec, LayerId, Mode};
use crate::error::{Error, Result};
use crate::ops::ConvSpec;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T: Scalar> {
    pub id: LayerId,
    pub spec: ConvSpec,
    pub weights: Tensor<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Layer<T> {
    fn zeros(id: LayerId, spec: ConvSpec) -> Self {
        Layer {
            id,
            spec,
            weights: Tensor::zeros(spec.weight_shape()),
            bias: vec![T::zero(); spec.out_channels],
        }
    }
}

/// Weights and biases for every layer of an [`ArchSpec`], in [`ArchSpec::layers`] order.
///
/// The encoder-decoder layers are stored once and used by both branches.
/// `generation` changes on every mutable access so forward contexts taken
/// before an update are detected as stale.
#[derive(Debug, Clone)]
pub struct ModelParams<T: Scalar> {
    arch: ArchSpec,
    layers: Vec<Layer<T>>,
    generation: u64,
}

impl<T: Scalar> PartialEq for ModelParams<T> {
    fn eq(&self, other: &Self) -> bool {
        self.arch == other.arch && self.layers == other.layers
    }
}

impl<T: Scalar> ModelParams<T> {
    /// All-zero parameters for `arch`.
    pub fn zeros(arch: ArchSpec) -> Result<Self> {
        arch.validate()?;
        let layers = arch
            .layers()
            .into_iter()
            .map(|(id, spec)| Layer::zeros(id, spec))
            .collect();
        Ok(ModelParams {
            arch,
            layers,
            generation: 0,
        })
    }

    /// Assembles parameters from explicit layers; shapes must match `arch`.
    pub fn from_layers(arch: ArchSpec, layers: Vec<Layer<T>>) -> Result<Self> {
        arch.validate()?;
        let expected = arch.layers();
        if expected.len() != layers.len() {
            return Err(Error::State(format!(
                "expected {} layers, got {}",
                expected.len(),
                layers.len()
            )));
        }
        for ((id, spec), layer) in expected.iter().zip(&layers) {
            if layer.id != *id
                || layer.spec != *spec
                || layer.weights.shape() != spec.weight_shape()
                || layer.bias.len() != spec.out_channels
            {
                return Err(Error::State(format!("layer {id} does not match the architecture")));
            }
        }
        Ok(ModelParams {
            arch,
            layers,
            generation: 0,
        })
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn mode(&self) -> Mode {
        self.arch.mode
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        self.generation += 1;
        &mut self.layers
    }

    pub fn layer(&self, id: LayerId) -> Option<&Layer<T>> {
        self.arch.layer_index(id).map(|i| &self.layers[i])
    }

    pub fn layer_mut(&mut self, id: LayerId) -> Option<&mut Layer<T>> {
        let i = self.arch.layer_index(id)?;
        self.generation += 1;
        Some(&mut self.layers[i])
    }

    pub(crate) fn generation(&self) -> u64 {
        self.generation
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.data().len() + l.bias.len())
            .sum()
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            arch: self.arch.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    id: l.id,
                    spec: l.spec,
                    weights: l.weights.cast(),
                    bias: l.bias.iter().map(|b| U::lit(b.as_f64())).collect(),
                })
                .collect(),
            generation: 0,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.all_finite() && l.bias.iter().all(|b| b.is_finite()))
    }
}

/// He-initialised parameters: weights `N(0, 2 / (kh·kw·cin))`, zero biases. The
/// fusion layer starts as an exact average of the two branch images.
pub fn build_model<T: Scalar>(arch: ArchSpec, seed: u64) -> Result<ModelParams<T>> {
    let mut params = ModelParams::zeros(arch)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for layer in params.layers_mut() {
        if layer.id == LayerId::Fusion {
            layer.weights.data_mut().fill(T::lit(0.5));
            continue;
        }
        let s = layer.spec;
        let fan_in = (s.kernel_h * s.kernel_w * s.in_channels) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
        for w in layer.weights.data_mut() {
            *w = T::lit(normal.sample(&mut rng));
        }
    }
    params.generation = 0;
    Ok(params)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad<T: Scalar> {
    pub d_weights: Tensor<T>,
    pub d_bias: Vec<T>,
}

/// Gradients aligned with [`ModelParams::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T: Scalar> {
    pub layers: Vec<LayerGrad<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(params: &ModelParams<T>) -> Self {
        Gradients {
            layers: params
                .layers
                .iter()
                .map(|l| LayerGrad {
                    d_weights: Tensor::zeros(l.weights.shape()),
                    d_bias: vec![T::zero(); l.bias.len()],
                })
                .collect(),
        }
    }

    pub(crate) fn accumulate(&mut self, index: usize, d_weights: &Tensor<T>, d_bias: &[T]) -> Result<()> {
        let g = &mut self.layers[index];
        g.d_weights.add_assign(d_weights)?;
        for (a, &b) in g.d_bias.iter_mut().zip(d_bias) {
            *a = *a + b;
        }
        Ok(())
    }

    /// Elementwise sum; layer lists must agree.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::State("gradient layer counts differ".into()));
        }
        for i in 0..self.layers.len() {
            let o = &other.layers[i];
            self.accumulate(i, &o.d_weights, &o.d_bias)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, k: T) {
        for g in &mut self.layers {
            for v in g.d_weights.data_mut() {
                *v = *v * k;
            }
            for v in &mut g.d_bias {
                *v = *v * k;
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.layers.iter().all(|g| {
            g.d_weights.data().iter().all(|v| *v == T::zero())
                && g.d_bias.iter().all(|v| *v == T::zero())
        })
    }
}
