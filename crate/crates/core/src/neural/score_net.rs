use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use super::mlp::{Activation, ForwardCache, MlpParams};
use crate::error::{Error, Result};
use crate::sde::DiffusionTime;
use crate::simulators::{Observation, SimulatorSpec, TaskKind};

pub const DEFAULT_FOURIER_FREQUENCIES: usize = 4;

/// `[sin(2 pi k t), cos(2 pi k t)]` for `k = 1..=freqs`, then raw `t`.
pub fn time_features(t: f64, freqs: usize, out: &mut [f64]) {
    debug_assert_eq!(out.len(), 2 * freqs + 1);
    for k in 1..=freqs {
        let (s, c) = (TAU * k as f64 * t).sin_cos();
        out[2 * (k - 1)] = s;
        out[2 * (k - 1) + 1] = c;
    }
    out[2 * freqs] = t;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ObservationEncoding {
    Raw,
    OneHot { classes: usize },
}

impl ObservationEncoding {
    pub fn width(&self) -> usize {
        match self {
            ObservationEncoding::Raw => 1,
            ObservationEncoding::OneHot { classes } => *classes,
        }
    }
}

/// Layout of the score network input: `[theta_t, time features, encoded x]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputEncoding {
    pub theta_dim: usize,
    pub fourier_frequencies: usize,
    pub observation: ObservationEncoding,
}

impl InputEncoding {
    pub fn for_spec(spec: &SimulatorSpec) -> Self {
        let observation = match spec.num_classes() {
            None => ObservationEncoding::Raw,
            Some(classes) => ObservationEncoding::OneHot { classes },
        };
        Self {
            theta_dim: spec.theta_dim(),
            fourier_frequencies: DEFAULT_FOURIER_FREQUENCIES,
            observation,
        }
    }

    pub fn time_width(&self) -> usize {
        2 * self.fourier_frequencies + 1
    }

    pub fn width(&self) -> usize {
        self.theta_dim + self.time_width() + self.observation.width()
    }

    fn encode_observation(&self, x: &Observation, out: &mut [f64]) -> Result<()> {
        match (self.observation, x) {
            (ObservationEncoding::Raw, Observation::Real(v)) if v.is_finite() => {
                out[0] = *v;
                Ok(())
            }
            (ObservationEncoding::OneHot { classes }, Observation::Class(k) | Observation::Bin(k))
                if *k < classes =>
            {
                out.fill(0.0);
                out[*k] = 1.0;
                Ok(())
            }
            _ => Err(Error::Argument(format!(
                "observation {x} cannot be encoded as {:?}",
                self.observation
            ))),
        }
    }

    pub fn encode_row(
        &self,
        theta_t: &[f64],
        t: f64,
        x: &Observation,
        out: &mut [f64],
    ) -> Result<()> {
        if theta_t.len() != self.theta_dim || out.len() != self.width() {
            return Err(Error::Argument(format!(
                "theta_t has dimension {}, expected {}",
                theta_t.len(),
                self.theta_dim
            )));
        }
        let (th, rest) = out.split_at_mut(self.theta_dim);
        th.copy_from_slice(theta_t);
        let (tf, obs) = rest.split_at_mut(self.time_width());
        time_features(t, self.fourier_frequencies, tf);
        self.encode_observation(x, obs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreArch {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for ScoreArch {
    fn default() -> Self {
        Self {
            hidden: vec![128, 128, 128],
            activation: Activation::Silu,
        }
    }
}

/// Conditional score network `s(theta_t, t, x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreNetwork {
    pub mlp: MlpParams,
    pub encoding: InputEncoding,
    pub task: TaskKind,
}

impl ScoreNetwork {
    /// Hidden layers randomly initialized, output layer zero.
    pub fn new<R: Rng + ?Sized>(spec: &SimulatorSpec, arch: &ScoreArch, rng: &mut R) -> Result<Self> {
        let encoding = InputEncoding::for_spec(spec);
        let mut sizes = vec![encoding.width()];
        sizes.extend(&arch.hidden);
        sizes.push(encoding.theta_dim);
        let mlp = MlpParams::init(&sizes, arch.activation, Activation::Identity, true, rng)?;
        Ok(Self {
            mlp,
            encoding,
            task: spec.kind(),
        })
    }

    pub fn theta_dim(&self) -> usize {
        self.encoding.theta_dim
    }

    /// Encode `n` rows; `xs` holds either one observation shared by all rows or `n`.
    pub fn encode_batch(
        &self,
        theta_t: ArrayView2<f64>,
        ts: &[f64],
        xs: &[Observation],
    ) -> Result<Array2<f64>> {
        let n = theta_t.nrows();
        if ts.len() != n || !(xs.len() == n || xs.len() == 1) {
            return Err(Error::Argument(format!(
                "batch of {n} rows with {} times and {} observations",
                ts.len(),
                xs.len()
            )));
        }
        let mut input = Array2::zeros((n, self.encoding.width()));
        for (i, mut row) in input.rows_mut().into_iter().enumerate() {
            let x = if xs.len() == 1 { &xs[0] } else { &xs[i] };
            let th = theta_t.row(i);
            self.encoding.encode_row(
                th.as_slice().ok_or_else(|| Error::Argument("non-contiguous theta".into()))?,
                ts[i],
                x,
                row.as_slice_mut().expect("standard layout"),
            )?;
        }
        Ok(input)
    }

    pub fn forward_batch(
        &self,
        theta_t: ArrayView2<f64>,
        ts: &[f64],
        xs: &[Observation],
    ) -> Result<(Array2<f64>, ForwardCache)> {
        let input = self.encode_batch(theta_t, ts, xs)?;
        self.mlp.forward_batch(input.view())
    }

    pub fn predict_batch(
        &self,
        theta_t: ArrayView2<f64>,
        ts: &[f64],
        xs: &[Observation],
    ) -> Result<Array2<f64>> {
        let input = self.encode_batch(theta_t, ts, xs)?;
        self.mlp.predict_batch(input.view())
    }

    /// `s(theta_t, t, x)` for a single point.
    pub fn eval(&self, theta_t: &[f64], t: DiffusionTime, x: &Observation) -> Result<Vec<f64>> {
        let mut row = vec![0.0; self.encoding.width()];
        self.encoding.encode_row(theta_t, t.get(), x, &mut row)?;
        let view = ArrayView2::from_shape((1, row.len()), &row)
            .map_err(|e| Error::Argument(e.to_string()))?;
        Ok(self.mlp.predict_batch(view)?.row(0).to_vec())
    }
}

/// Free-function form of [`ScoreNetwork::eval`].
pub fn score_net_eval(
    net: &ScoreNetwork,
    theta_t: &[f64],
    t: DiffusionTime,
    x: &Observation,
) -> Result<Vec<f64>> {
    net.eval(theta_t, t, x)
}
