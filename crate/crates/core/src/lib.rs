//! Diffusion-based posterior estimation for simulators with tractable latent
//! joint scores.
//!
//! The library covers the VP noise schedule, three simulator tasks, the
//! regression targets used for score matching, small MLP score and weight
//! networks, training, reverse-SDE sampling and the evaluation metrics.

pub mod error;
pub mod experiment;
pub mod io;
pub mod metrics;
pub mod neural;
pub mod rng;
pub mod sampler;
pub mod sde;
pub mod simulators;
pub mod targets;
pub mod training;

pub use error::{Error, Result};
pub use sde::{DiffusionTime, NoiseSchedule, T_MIN};
pub use simulators::{Observation, SimulatorSpec, TaskKind};
