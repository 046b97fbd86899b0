//! Sectioned TOML configuration. Every key is optional; command-line flags
//! override file values, which override built-in defaults.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use ltsm::simulators::{SimulatorSpec, DEFAULT_GALTON_NAILS, DEFAULT_GALTON_ROWS, DEFAULT_NUM_CLASSES, DEFAULT_PHI_SEED};
use ltsm::{NoiseSchedule, TaskKind};

use crate::CliError;

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub task: TaskSection,
    #[serde(default)]
    pub schedule: ScheduleSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub sampler: SamplerSection,
    #[serde(default)]
    pub metrics: MetricsSection,
    #[serde(default)]
    pub experiment: ExperimentSection,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSection {
    pub name: Option<String>,
    pub num_classes: Option<usize>,
    pub phi_seed: Option<u64>,
    pub rows: Option<usize>,
    pub num_nails: Option<usize>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    pub beta_min: Option<f64>,
    pub beta_max: Option<f64>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub objective: Option<String>,
    pub steps: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub seed: Option<u64>,
    pub t_min: Option<f64>,
    pub t_max: Option<f64>,
    pub hidden: Option<Vec<usize>>,
    pub weight_hidden: Option<Vec<usize>>,
    pub checkpoint_every: Option<usize>,
    /// "unit" or "noise-variance".
    pub weighting: Option<String>,
    pub dataset_size: Option<usize>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    pub n_samples: Option<usize>,
    pub n_steps: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsSection {
    pub n_reference: Option<usize>,
    pub n_model: Option<usize>,
    pub n_mc: Option<usize>,
    pub t_grid: Option<Vec<f64>>,
    pub grid_t: Option<usize>,
    pub grid_theta: Option<usize>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub observations: Option<Vec<String>>,
    pub seeds: Option<Vec<u64>>,
    pub budgets: Option<Vec<usize>>,
    pub objectives: Option<Vec<String>>,
    pub out_dir: Option<PathBuf>,
    pub jobs: Option<usize>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::runtime(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| CliError::runtime(format!("invalid config {}: {e}", path.display())))
    }

    pub fn schedule(&self) -> Result<NoiseSchedule, CliError> {
        let d = NoiseSchedule::default();
        Ok(NoiseSchedule::new(
            self.schedule.beta_min.unwrap_or(d.beta_min),
            self.schedule.beta_max.unwrap_or(d.beta_max),
        )?)
    }

    /// Simulator for `task` (flag) or the config's task name.
    pub fn simulator(&self, task: Option<&str>) -> Result<SimulatorSpec, CliError> {
        let name = task
            .map(str::to_string)
            .or_else(|| self.task.name.clone())
            .ok_or_else(|| CliError::runtime("no task given (use --task or [task] name)"))?;
        let spec = match TaskKind::parse(&name)? {
            TaskKind::Gaussian => SimulatorSpec::gaussian(),
            TaskKind::MixtureCategorical => SimulatorSpec::mixture_categorical(
                self.task.num_classes.unwrap_or(DEFAULT_NUM_CLASSES),
                self.task.phi_seed.unwrap_or(DEFAULT_PHI_SEED),
            )?,
            TaskKind::Galton => SimulatorSpec::galton(
                self.task.rows.unwrap_or(DEFAULT_GALTON_ROWS),
                self.task.num_nails.unwrap_or(DEFAULT_GALTON_NAILS),
            )?,
        };
        Ok(spec)
    }

    /// Output root: flag, then config, then `LTSM_OUT_DIR`, then `ltsm-out`.
    pub fn out_dir(&self, flag: Option<&Path>) -> PathBuf {
        flag.map(Path::to_path_buf)
            .or_else(|| self.experiment.out_dir.clone())
            .or_else(|| std::env::var_os("LTSM_OUT_DIR").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("ltsm-out"))
    }
}
