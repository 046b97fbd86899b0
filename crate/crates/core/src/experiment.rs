//! Evaluation pipelines shared by the command line and the acceptance suite.
//!
//! A cell is one (task, budget, objective, seed) training run followed by its
//! evaluation. Cells are independent and may run concurrently; results are
//! always returned in input order.

use std::collections::BTreeMap;
use std::sync::Mutex;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io::{fmt_sig17, CsvTable};
use crate::metrics::{
    linspace, mean_score_l1_error, median_heuristic, mmd_u, MmdConfig, ScoreErrorGrid,
    DEFAULT_MMD_SAMPLES, DEFAULT_PILOT_SAMPLES,
};
use crate::neural::WeightSchedule;
use crate::sampler::{sample_posterior, ScoreModel};
use crate::sde::{DiffusionTime, NoiseSchedule, DEFAULT_REVERSE_STEPS, T_MIN};
use crate::simulators::{
    generate_dataset, pilot_posterior, reference_posterior, Observation, SimulatorSpec, TaskKind,
};
use crate::targets::optimal_weight_mc;
use crate::training::{train, Objective, TrainConfig, TrainedModel};

/// Five evaluation observations per task.
pub fn default_observations(kind: TaskKind) -> Vec<Observation> {
    match kind {
        TaskKind::Gaussian => [-2.0, -1.0, 0.0, 1.0, 2.0].map(Observation::Real).to_vec(),
        TaskKind::MixtureCategorical => [0, 2, 4, 6, 8].map(Observation::Class).to_vec(),
        TaskKind::Galton => [6, 8, 10, 12, 14].map(Observation::Bin).to_vec(),
    }
}

/// Real-valued Gaussian observations, for the score-error map.
pub fn default_gaussian_points() -> Vec<f64> {
    default_observations(TaskKind::Gaussian)
        .into_iter()
        .filter_map(|o| match o {
            Observation::Real(v) => Some(v),
            _ => None,
        })
        .collect()
}

/// Budgets (simulator calls) for the MMD-vs-budget pipeline.
pub const DEFAULT_BUDGETS: [usize; 4] = [1_000, 3_000, 10_000, 30_000];

/// Seed offsets keep the dataset, pilot and reference streams of a cell apart
/// from the training seed even when callers reuse small integers.
const REFERENCE_SEED: u64 = 0x5EED_0001;
const PILOT_SEED: u64 = 0x5EED_0002;

/// MMD bandwidths recorded once per (task, observation) and reused across
/// every method and budget.
#[derive(Debug, Default)]
pub struct BandwidthRegistry {
    inner: Mutex<BTreeMap<(String, String), f64>>,
}

impl BandwidthRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get_or_compute(&self, spec: &SimulatorSpec, x: &Observation) -> Result<f64> {
        let key = (spec.kind().id().to_string(), x.to_string());
        let mut map = self.inner.lock().expect("registry lock poisoned");
        if let Some(&s) = map.get(&key) {
            return Ok(s);
        }
        let pilot = pilot_posterior(spec, x, DEFAULT_PILOT_SAMPLES, PILOT_SEED)?;
        let s = median_heuristic(&pilot)?;
        map.insert(key, s);
        Ok(s)
    }

    pub fn entries(&self) -> Vec<(String, String, f64)> {
        self.inner
            .lock()
            .expect("registry lock poisoned")
            .iter()
            .map(|((t, x), &s)| (t.clone(), x.clone(), s))
            .collect()
    }
}

/// One cell of a factorial experiment.
#[derive(Debug, Clone)]
pub struct Cell {
    pub spec: SimulatorSpec,
    pub budget: usize,
    pub objective: Objective,
    pub seed: u64,
}

impl Cell {
    pub fn train_config(&self, base: &TrainConfig) -> TrainConfig {
        TrainConfig {
            objective: self.objective.clone(),
            seed: self.seed,
            ..base.clone()
        }
    }

    /// Simulate the cell's dataset and train on it.
    pub fn fit(&self, base: &TrainConfig) -> Result<TrainedModel> {
        let data = generate_dataset(&self.spec, self.budget, self.seed)?;
        train(&self.train_config(base), &data)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MmdRow {
    pub task: TaskKind,
    pub x_star: String,
    pub budget: usize,
    pub objective: String,
    pub seed: u64,
    pub mmd: f64,
}

pub fn mmd_rows_to_csv(rows: &[MmdRow]) -> String {
    let mut t = CsvTable::new(&["task", "x_star", "budget", "objective", "seed", "mmd"]);
    for r in rows {
        t.push(&[
            r.task.id().to_string(),
            r.x_star.clone(),
            r.budget.to_string(),
            r.objective.clone(),
            r.seed.to_string(),
            fmt_sig17(r.mmd),
        ]);
    }
    t.as_str().to_string()
}

/// Sampler and metric sizes for posterior evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub n_reference: usize,
    pub n_model: usize,
    pub reverse_steps: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_reference: DEFAULT_MMD_SAMPLES,
            n_model: DEFAULT_MMD_SAMPLES,
            reverse_steps: DEFAULT_REVERSE_STEPS,
        }
    }
}

/// MMD between model samples and reference posterior samples at each observation.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_mmd<M: ScoreModel + ?Sized>(
    model: &M,
    spec: &SimulatorSpec,
    observations: &[Observation],
    sched: &NoiseSchedule,
    eval: &EvalConfig,
    registry: &BandwidthRegistry,
    seed: u64,
) -> Result<Vec<(Observation, f64)>> {
    observations
        .iter()
        .map(|x| {
            let bw = registry.get_or_compute(spec, x)?;
            let cfg = MmdConfig::new(bw)?;
            let reference = reference_posterior(spec, x, eval.n_reference, REFERENCE_SEED)?;
            let samples = sample_posterior(model, x, eval.n_model, eval.reverse_steps, sched, seed)?;
            Ok((*x, mmd_u(&reference, &samples, &cfg)?))
        })
        .collect()
}

/// Run cells on `jobs` worker threads, preserving input order.
pub fn run_cells<T, F>(cells: &[Cell], jobs: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&Cell) -> Result<T> + Sync,
{
    if jobs <= 1 {
        return cells.iter().map(&f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Argument(format!("could not start {jobs} workers: {e}")))?;
    pool.install(|| cells.par_iter().map(&f).collect())
}

/// Train every cell and report MMD at each observation.
pub fn mmd_budget_experiment(
    cells: &[Cell],
    base: &TrainConfig,
    eval: &EvalConfig,
    observations: impl Fn(&SimulatorSpec) -> Vec<Observation> + Sync,
    registry: &BandwidthRegistry,
    jobs: usize,
) -> Result<Vec<MmdRow>> {
    let per_cell = run_cells(cells, jobs, |c| {
        let model = c.fit(base)?;
        let xs = observations(&c.spec);
        let res = evaluate_mmd(&model.net, &c.spec, &xs, &base.schedule, eval, registry, c.seed)?;
        Ok(res
            .into_iter()
            .map(|(x, mmd)| MmdRow {
                task: c.spec.kind(),
                x_star: x.to_string(),
                budget: c.budget,
                objective: c.objective.id().to_string(),
                seed: c.seed,
                mmd,
            })
            .collect::<Vec<_>>())
    })?;
    Ok(per_cell.into_iter().flatten().collect())
}

/// Mean MMD per objective among rows with the given task and budget.
pub fn mean_mmd_by_objective(rows: &[MmdRow], task: TaskKind, budget: usize) -> BTreeMap<String, f64> {
    let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.task == task && r.budget == budget) {
        let e = acc.entry(r.objective.clone()).or_insert((0.0, 0));
        e.0 += r.mmd;
        e.1 += 1;
    }
    acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreErrorRow {
    pub objective: String,
    pub seed: u64,
    pub l1_error: f64,
}

pub fn score_error_rows_to_csv(rows: &[ScoreErrorRow]) -> String {
    let mut t = CsvTable::new(&["objective", "seed", "l1_error"]);
    for r in rows {
        t.push(&[r.objective.clone(), r.seed.to_string(), fmt_sig17(r.l1_error)]);
    }
    t.as_str().to_string()
}

/// Train Gaussian-task cells and report the score error averaged over `xs`.
pub fn score_error_experiment(
    cells: &[Cell],
    base: &TrainConfig,
    xs: &[f64],
    grid: &ScoreErrorGrid,
    jobs: usize,
) -> Result<Vec<(ScoreErrorRow, TrainedModel)>> {
    run_cells(cells, jobs, |c| {
        let model = c.fit(base)?;
        let e = mean_score_l1_error(&model.net, xs, &base.schedule, grid)?;
        Ok((
            ScoreErrorRow {
                objective: c.objective.id().to_string(),
                seed: c.seed,
                l1_error: e,
            },
            model,
        ))
    })
}

/// Learned weight and MC-optimal weight on a common time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightComparison {
    pub t: Vec<f64>,
    pub learned: Vec<f64>,
    pub optimal: Vec<f64>,
}

impl WeightComparison {
    pub fn to_csv(&self) -> String {
        let mut t = CsvTable::new(&["t", "w_learned", "w_star"]);
        for i in 0..self.t.len() {
            t.push(&[fmt_sig17(self.t[i]), fmt_sig17(self.learned[i]), fmt_sig17(self.optimal[i])]);
        }
        t.as_str().to_string()
    }

    pub fn mean_abs_gap(&self) -> f64 {
        let n = self.t.len() as f64;
        self.learned
            .iter()
            .zip(&self.optimal)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / n
    }

    /// Mean learned weight over grid points in `[lo, hi]`.
    pub fn mean_learned_in(&self, lo: f64, hi: f64) -> f64 {
        let v: Vec<f64> = self
            .t
            .iter()
            .zip(&self.learned)
            .filter(|(t, _)| **t >= lo && **t <= hi)
            .map(|(_, w)| *w)
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Compare a learned weight schedule against `w*(t)` on `n_grid` uniform times.
pub fn compare_weights(
    ws: &WeightSchedule,
    spec: &SimulatorSpec,
    n_grid: usize,
    n_mc: usize,
    sched: &NoiseSchedule,
    seed: u64,
) -> Result<WeightComparison> {
    let t = linspace(T_MIN, 1.0, n_grid);
    let learned = ws.eval_many(&t);
    let optimal = t
        .iter()
        .map(|&ti| optimal_weight_mc(spec, None, DiffusionTime::new(ti)?, n_mc, sched, seed))
        .collect::<Result<Vec<_>>>()?;
    Ok(WeightComparison { t, learned, optimal })
}
