//! Dense feed-forward networks with exact reverse-mode gradients.
//!
//! Batched layout throughout: inputs are `batch x in`, weights `out x in`.
//! Gradients reuse [`MlpParams`] so the optimizer can walk both in lockstep.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    /// `x * sigmoid(x)`.
    Silu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Silu => z * crate::simulators::logistic(z),
            Activation::Tanh => z.tanh(),
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Silu => {
                let s = crate::simulators::logistic(z);
                s * (1.0 + z * (1.0 - s))
            }
            Activation::Tanh => {
                let th = z.tanh();
                1.0 - th * th
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Dense>,
}

/// Per-layer inputs and pre-activations from a batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<Array2<f64>>,
    preacts: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.inputs.first().map_or(0, |x| x.nrows())
    }
}

impl MlpParams {
    /// Uniform `+-1/sqrt(fan_in)` initialization. `sizes` lists every layer
    /// width including input and output; the output layer uses `output`.
    pub fn init<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        zero_output_layer: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Argument(format!("invalid layer sizes {sizes:?}")));
        }
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let (fan_in, fan_out) = (sizes[i], sizes[i + 1]);
                let last = i + 1 == n;
                let activation = if last { output } else { hidden };
                if last && zero_output_layer {
                    return Dense {
                        weight: Array2::zeros((fan_out, fan_in)),
                        bias: Array1::zeros(fan_out),
                        activation,
                    };
                }
                let bound = 1.0 / (fan_in as f64).sqrt();
                let weight =
                    Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-bound..bound));
                let bias = Array1::from_shape_fn(fan_out, |_| rng.random_range(-bound..bound));
                Dense {
                    weight,
                    bias,
                    activation,
                }
            })
            .collect();
        Ok(Self { layers })
    }

    /// Same shapes and activations, all entries zero.
    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Dense {
                    weight: Array2::zeros(l.weight.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                    activation: l.activation,
                })
                .collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty network").out_dim()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.weight.dim() == b.weight.dim() && a.bias.len() == b.bias.len())
    }

    /// Parameter blocks in a fixed order: layer 0 weight, layer 0 bias, layer 1 weight, ...
    pub fn slices(&self) -> impl Iterator<Item = &[f64]> {
        self.layers.iter().flat_map(|l| {
            [
                l.weight.as_slice().expect("standard layout"),
                l.bias.as_slice().expect("standard layout"),
            ]
        })
    }

    pub fn slices_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers.iter_mut().flat_map(|l| {
            [
                l.weight.as_slice_mut().expect("standard layout"),
                l.bias.as_slice_mut().expect("standard layout"),
            ]
        })
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.slices().flat_map(|s| s.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Argument(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let mut offset = 0;
        for s in self.slices_mut() {
            s.copy_from_slice(&flat[offset..offset + s.len()]);
            offset += s.len();
        }
        Ok(())
    }

    pub fn squared_norm(&self) -> f64 {
        self.slices().flat_map(|s| s.iter()).map(|v| v * v).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.slices().all(|s| s.iter().all(|v| v.is_finite()))
    }

    pub fn forward_batch(&self, input: ArrayView2<f64>) -> Result<(Array2<f64>, ForwardCache)> {
        if input.ncols() != self.input_dim() {
            return Err(Error::Argument(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                input.ncols()
            )));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut preacts = Vec::with_capacity(self.layers.len());
        let mut h = input.to_owned();
        for layer in &self.layers {
            let mut z = h.dot(&layer.weight.t());
            z += &layer.bias;
            let a = if layer.activation == Activation::Identity {
                z.clone()
            } else {
                z.mapv(|v| layer.activation.apply(v))
            };
            inputs.push(h);
            preacts.push(z);
            h = a;
        }
        Ok((h, ForwardCache { inputs, preacts }))
    }

    /// Forward pass without retaining activations.
    pub fn predict_batch(&self, input: ArrayView2<f64>) -> Result<Array2<f64>> {
        if input.ncols() != self.input_dim() {
            return Err(Error::Argument(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                input.ncols()
            )));
        }
        let mut h = input.to_owned();
        for layer in &self.layers {
            let mut z = h.dot(&layer.weight.t());
            z += &layer.bias;
            if layer.activation != Activation::Identity {
                z.mapv_inplace(|v| layer.activation.apply(v));
            }
            h = z;
        }
        Ok(h)
    }

    /// Gradients of `sum(upstream * output)` with respect to every parameter
    /// and to the input.
    pub fn backward_batch(
        &self,
        cache: &ForwardCache,
        upstream: ArrayView2<f64>,
    ) -> Result<(MlpParams, Array2<f64>)> {
        if cache.inputs.len() != self.layers.len() {
            return Err(Error::Argument("cache does not match network depth".into()));
        }
        if upstream.dim() != (cache.batch_size(), self.output_dim()) {
            return Err(Error::Argument(format!(
                "upstream has shape {:?}, expected ({}, {})",
                upstream.dim(),
                cache.batch_size(),
                self.output_dim()
            )));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = upstream.to_owned();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let z = &cache.preacts[i];
            if z.dim() != delta.dim() || cache.inputs[i].ncols() != layer.in_dim() {
                return Err(Error::Argument("cache does not match network shapes".into()));
            }
            if layer.activation != Activation::Identity {
                delta.zip_mut_with(z, |d, &zv| *d *= layer.activation.derivative(zv));
            }
            let weight = delta.t().dot(&cache.inputs[i]);
            let bias = delta.sum_axis(Axis(0));
            let next = delta.dot(&layer.weight);
            grads.push(Dense {
                weight,
                bias,
                activation: layer.activation,
            });
            delta = next;
        }
        grads.reverse();
        Ok((MlpParams { layers: grads }, delta))
    }
}

/// Single-input forward pass.
pub fn mlp_forward(params: &MlpParams, input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
    let view = ArrayView2::from_shape((1, input.len()), input)
        .map_err(|e| Error::Argument(e.to_string()))?;
    let (out, cache) = params.forward_batch(view)?;
    Ok((out.row(0).to_vec(), cache))
}

/// Single-input backward pass: parameter gradients and input gradient.
pub fn mlp_backward(
    params: &MlpParams,
    cache: &ForwardCache,
    upstream: &[f64],
) -> Result<(MlpParams, Vec<f64>)> {
    let up = ArrayView1::from(upstream);
    let up = up
        .into_shape_with_order((1, upstream.len()))
        .map_err(|e| Error::Argument(e.to_string()))?;
    let (g, dx) = params.backward_batch(cache, up)?;
    Ok((g, dx.row(0).to_vec()))
}
