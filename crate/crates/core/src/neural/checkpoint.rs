//! JSON checkpoints.
//!
//! Parameters are stored per layer as flat row-major arrays; every float is
//! written in scientific notation with 17 significant digits.

use ndarray::{Array1, Array2};
use serde::de::Deserializer;
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use std::path::Path;

use super::mlp::{Activation, Dense, MlpParams};
use super::score_net::{InputEncoding, ScoreNetwork};
use super::weight_schedule::WeightSchedule;
use crate::error::{Error, Result};
use crate::sde::NoiseSchedule;
use crate::simulators::{SimulatorSpec, TaskKind};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

/// `f64` serialized as a JSON number with 17 significant digits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sig17(pub f64);

impl Serialize for Sig17 {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if !self.0.is_finite() {
            return Err(serde::ser::Error::custom("non-finite parameter"));
        }
        let raw = RawValue::from_string(crate::io::fmt_sig17(self.0))
            .map_err(serde::ser::Error::custom)?;
        raw.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Sig17 {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        f64::deserialize(d).map(Sig17)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    pub weight: Vec<Sig17>,
    pub bias: Vec<Sig17>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkRecord {
    pub layers: Vec<LayerRecord>,
}

impl From<&MlpParams> for NetworkRecord {
    fn from(p: &MlpParams) -> Self {
        Self {
            layers: p
                .layers
                .iter()
                .map(|l| LayerRecord {
                    in_dim: l.in_dim(),
                    out_dim: l.out_dim(),
                    activation: l.activation,
                    weight: l.weight.iter().map(|&v| Sig17(v)).collect(),
                    bias: l.bias.iter().map(|&v| Sig17(v)).collect(),
                })
                .collect(),
        }
    }
}

impl NetworkRecord {
    pub fn to_params(&self) -> Result<MlpParams> {
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            let w: Vec<f64> = l.weight.iter().map(|v| v.0).collect();
            let weight = Array2::from_shape_vec((l.out_dim, l.in_dim), w).map_err(|_| {
                Error::Format(format!("layer {i}: weight length does not match shape"))
            })?;
            if l.bias.len() != l.out_dim {
                return Err(Error::Format(format!("layer {i}: bias length mismatch")));
            }
            if i > 0 && self.layers[i - 1].out_dim != l.in_dim {
                return Err(Error::Format(format!("layer {i}: dimensions do not chain")));
            }
            layers.push(Dense {
                weight,
                bias: Array1::from_iter(l.bias.iter().map(|v| v.0)),
                activation: l.activation,
            });
        }
        if layers.is_empty() {
            return Err(Error::Format("network has no layers".into()));
        }
        let p = MlpParams { layers };
        if !p.all_finite() {
            return Err(Error::Format("non-finite parameter".into()));
        }
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub task: TaskKind,
    pub simulator: SimulatorSpec,
    pub schedule: NoiseSchedule,
    pub encoding: InputEncoding,
    pub objective: String,
    pub seed: u64,
    pub step: usize,
    pub score_net: NetworkRecord,
    pub weight_schedule: Option<NetworkRecord>,
}

impl Checkpoint {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        simulator: &SimulatorSpec,
        schedule: &NoiseSchedule,
        objective: &str,
        seed: u64,
        step: usize,
        net: &ScoreNetwork,
        ws: Option<&WeightSchedule>,
    ) -> Self {
        Self {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            task: simulator.kind(),
            simulator: simulator.clone(),
            schedule: *schedule,
            encoding: net.encoding,
            objective: objective.to_string(),
            seed,
            step,
            score_net: NetworkRecord::from(&net.mlp),
            weight_schedule: ws.map(|w| NetworkRecord::from(&w.mlp)),
        }
    }

    pub fn score_network(&self) -> Result<ScoreNetwork> {
        let mlp = self.score_net.to_params()?;
        if mlp.input_dim() != self.encoding.width() || mlp.output_dim() != self.encoding.theta_dim {
            return Err(Error::Format(
                "score network shape does not match its input encoding".into(),
            ));
        }
        Ok(ScoreNetwork {
            mlp,
            encoding: self.encoding,
            task: self.task,
        })
    }

    pub fn weight_schedule(&self) -> Result<Option<WeightSchedule>> {
        self.weight_schedule
            .as_ref()
            .map(|r| {
                let mlp = r.to_params()?;
                let freqs = (mlp.input_dim().saturating_sub(1)) / 2;
                Ok(WeightSchedule {
                    mlp,
                    fourier_frequencies: freqs,
                })
            })
            .transpose()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(s)?;
        if c.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint schema version {}",
                c.schema_version
            )));
        }
        c.simulator.validate()?;
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
