//! Posterior sampling by integrating the reverse-time SDE from `t = 1` to `T_MIN`.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::neural::ScoreNetwork;
use crate::rng::{self, tag};
use crate::sde::{DiffusionTime, NoiseSchedule, T_MIN};
use crate::simulators::{gaussian_true_score, Observation, TaskKind};

/// Trajectories integrated together in one network call.
const CHUNK: usize = 1024;

/// Anything that can supply `grad log p_t(theta_t | x)` for a batch of states at a common time.
pub trait ScoreModel: Sync {
    fn theta_dim(&self) -> usize;
    /// Task the model was built for, when known.
    fn task(&self) -> Option<TaskKind> {
        None
    }
    fn score_batch(&self, theta_t: ArrayView2<f64>, t: f64, x: &Observation) -> Result<Array2<f64>>;
}

impl ScoreModel for ScoreNetwork {
    fn theta_dim(&self) -> usize {
        self.encoding.theta_dim
    }

    fn task(&self) -> Option<TaskKind> {
        Some(self.task)
    }

    fn score_batch(&self, theta_t: ArrayView2<f64>, t: f64, x: &Observation) -> Result<Array2<f64>> {
        let ts = vec![t; theta_t.nrows()];
        self.predict_batch(theta_t, &ts, std::slice::from_ref(x))
    }
}

/// Closed-form diffused posterior score of the Gaussian task.
#[derive(Debug, Clone, Copy)]
pub struct AnalyticGaussianScore {
    pub schedule: NoiseSchedule,
}

impl ScoreModel for AnalyticGaussianScore {
    fn theta_dim(&self) -> usize {
        1
    }

    fn task(&self) -> Option<TaskKind> {
        Some(TaskKind::Gaussian)
    }

    fn score_batch(&self, theta_t: ArrayView2<f64>, t: f64, x: &Observation) -> Result<Array2<f64>> {
        let Observation::Real(x) = *x else {
            return Err(Error::UnsupportedTask {
                task: "gaussian".into(),
                what: format!("analytic score needs a real observation, got {x}"),
            });
        };
        let t = DiffusionTime::new(t)?;
        Ok(theta_t.mapv(|th| gaussian_true_score(th, t, x, &self.schedule)))
    }
}

/// Reverse-time grid `1 = t_0 > t_1 > ... > t_n = T_MIN`.
pub fn reverse_time_grid(n_steps: usize) -> Vec<f64> {
    let dt = (1.0 - T_MIN) / n_steps as f64;
    (0..=n_steps)
        .map(|k| if k == n_steps { T_MIN } else { 1.0 - k as f64 * dt })
        .collect()
}

fn integrate_chunk<M: ScoreModel + ?Sized>(
    model: &M,
    x: &Observation,
    first: usize,
    count: usize,
    grid: &[f64],
    sched: &NoiseSchedule,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let d = model.theta_dim();
    let mut streams: Vec<rng::Stream> = (0..count)
        .map(|i| rng::stream(seed, tag::TRAJECTORY_BASE + (first + i) as u64))
        .collect();
    let mut state = Array2::zeros((count, d));
    for (mut row, r) in state.rows_mut().into_iter().zip(streams.iter_mut()) {
        row.iter_mut().for_each(|v| *v = r.sample(StandardNormal));
    }
    for (k, pair) in grid.windows(2).enumerate() {
        let (t, t_next) = (pair[0], pair[1]);
        let h = t - t_next;
        let beta = sched.beta(t);
        let diffusion = (beta * h).sqrt();
        let score = model.score_batch(state.view(), t, x)?;
        for ((mut row, srow), r) in state
            .rows_mut()
            .into_iter()
            .zip(score.rows())
            .zip(streams.iter_mut())
        {
            for (v, &s) in row.iter_mut().zip(srow) {
                let e: f64 = r.sample(StandardNormal);
                *v += (0.5 * beta * *v + beta * s) * h + diffusion * e;
            }
        }
        if state.iter().any(|v| !v.is_finite()) {
            return Err(Error::SamplingDiverged { step: k + 1 });
        }
    }
    Ok(state.rows().into_iter().map(|r| r.to_vec()).collect())
}

/// `n_samples` approximate posterior draws given `x`, starting from `N(0, I)` at `t = 1`.
///
/// Trajectory `i` uses its own random stream, so output does not depend on chunking.
pub fn sample_posterior<M: ScoreModel + ?Sized>(
    model: &M,
    x: &Observation,
    n_samples: usize,
    n_steps: usize,
    sched: &NoiseSchedule,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if n_steps == 0 {
        return Err(Error::Argument("need at least one reverse step".into()));
    }
    let grid = reverse_time_grid(n_steps);
    let starts: Vec<usize> = (0..n_samples).step_by(CHUNK).collect();
    let chunks: Vec<Vec<Vec<f64>>> = starts
        .par_iter()
        .map(|&first| {
            let count = CHUNK.min(n_samples - first);
            integrate_chunk(model, x, first, count, &grid, sched, seed)
        })
        .collect::<Result<_>>()?;
    Ok(chunks.into_iter().flatten().collect())
}
