use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{Activation, ForwardCache, MlpParams};
use super::score_net::{time_features, DEFAULT_FOURIER_FREQUENCIES};
use crate::error::Result;
use crate::sde::DiffusionTime;
use crate::simulators::logistic;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightArch {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for WeightArch {
    fn default() -> Self {
        Self {
            hidden: vec![32, 32],
            activation: Activation::Silu,
        }
    }
}

/// Learned mixture weight `w(t) = sigmoid(MLP(time features of t))`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSchedule {
    pub mlp: MlpParams,
    pub fourier_frequencies: usize,
}

impl WeightSchedule {
    /// Random hidden layers, zero output layer, so `w(t) = 0.5` at initialization.
    pub fn new<R: Rng + ?Sized>(arch: &WeightArch, rng: &mut R) -> Result<Self> {
        let freqs = DEFAULT_FOURIER_FREQUENCIES;
        let mut sizes = vec![2 * freqs + 1];
        sizes.extend(&arch.hidden);
        sizes.push(1);
        Ok(Self {
            mlp: MlpParams::init(&sizes, arch.activation, Activation::Identity, true, rng)?,
            fourier_frequencies: freqs,
        })
    }

    fn features(&self, ts: &[f64]) -> Array2<f64> {
        let width = 2 * self.fourier_frequencies + 1;
        let mut x = Array2::zeros((ts.len(), width));
        for (row, &t) in x.rows_mut().into_iter().zip(ts) {
            time_features(t, self.fourier_frequencies, row.into_slice().expect("standard layout"));
        }
        x
    }

    pub fn eval(&self, t: DiffusionTime) -> f64 {
        self.eval_many(&[t.get()])[0]
    }

    pub fn eval_many(&self, ts: &[f64]) -> Vec<f64> {
        let logits = self
            .mlp
            .predict_batch(self.features(ts).view())
            .expect("feature width matches network");
        logits.column(0).iter().map(|&u| logistic(u)).collect()
    }

    /// Weights for a batch of times plus the cache needed by [`Self::backward`].
    pub fn forward(&self, ts: &[f64]) -> (Vec<f64>, ForwardCache) {
        let (logits, cache) = self
            .mlp
            .forward_batch(self.features(ts).view())
            .expect("feature width matches network");
        (logits.column(0).iter().map(|&u| logistic(u)).collect(), cache)
    }

    /// Parameter gradients given `dL/dw` per batch row and the forward weights.
    pub fn backward(&self, cache: &ForwardCache, w: &[f64], dw: &[f64]) -> Result<MlpParams> {
        let up = Array2::from_shape_fn((w.len(), 1), |(i, _)| dw[i] * w[i] * (1.0 - w[i]));
        Ok(self.mlp.backward_batch(cache, up.view())?.0)
    }
}

pub fn weight_schedule_eval(ws: &WeightSchedule, t: DiffusionTime) -> f64 {
    ws.eval(t)
}
