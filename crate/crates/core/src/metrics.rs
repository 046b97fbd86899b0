//! Diagnostics: kernel MMD, regression-target variance profiles, and the
//! Gaussian-task score error.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io::{fmt_sig17, CsvTable};
use crate::rng::{self, tag};
use crate::sampler::ScoreModel;
use crate::sde::{DiffusionTime, NoiseSchedule, T_MIN};
use crate::simulators::{gaussian_true_score, Observation, SimulatorSpec, TaskKind};
use crate::targets::sample_paired_targets;

pub const DEFAULT_MMD_SAMPLES: usize = 2000;
pub const DEFAULT_PILOT_SAMPLES: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MmdConfig {
    pub bandwidth: f64,
}

impl MmdConfig {
    pub fn new(bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::Argument(format!("bandwidth must be positive, got {bandwidth}")));
        }
        Ok(Self { bandwidth })
    }
}

fn sq_dist(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum()
}

fn check_points(points: &[Vec<f64>], what: &str) -> Result<usize> {
    let d = points.first().map_or(0, |p| p.len());
    if d == 0 || points.iter().any(|p| p.len() != d) {
        return Err(Error::Argument(format!("{what}: points must share a positive dimension")));
    }
    Ok(d)
}

/// Median of all pairwise Euclidean distances.
pub fn median_heuristic(pilot: &[Vec<f64>]) -> Result<f64> {
    if pilot.len() < 2 {
        return Err(Error::Argument("median heuristic needs at least two points".into()));
    }
    check_points(pilot, "pilot set")?;
    let mut d: Vec<f64> = Vec::with_capacity(pilot.len() * (pilot.len() - 1) / 2);
    for i in 0..pilot.len() {
        for j in i + 1..pilot.len() {
            d.push(sq_dist(&pilot[i], &pilot[j]).sqrt());
        }
    }
    let n = d.len();
    let mid = n / 2;
    let (_, &mut upper, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    let median = if n % 2 == 1 {
        upper
    } else {
        let lower = d[..mid].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    };
    if median <= 0.0 {
        return Err(Error::DegenerateBandwidth);
    }
    Ok(median)
}

fn kernel_sum_within(points: &[Vec<f64>], inv_two_s2: f64) -> f64 {
    // sum over ordered pairs i != j
    let rows: Vec<f64> = (0..points.len())
        .into_par_iter()
        .map(|i| {
            let mut acc = 0.0;
            for j in i + 1..points.len() {
                acc += (-sq_dist(&points[i], &points[j]) * inv_two_s2).exp();
            }
            acc
        })
        .collect();
    2.0 * rows.iter().sum::<f64>()
}

fn kernel_sum_cross(a: &[Vec<f64>], b: &[Vec<f64>], inv_two_s2: f64) -> f64 {
    let rows: Vec<f64> = a
        .par_iter()
        .map(|u| b.iter().map(|v| (-sq_dist(u, v) * inv_two_s2).exp()).sum::<f64>())
        .collect();
    rows.iter().sum()
}

/// Total order on sample sets so the cross term is summed identically for
/// `(A, B)` and `(B, A)`.
fn canonical_first(a: &[Vec<f64>], b: &[Vec<f64>]) -> bool {
    if a.len() != b.len() {
        return a.len() < b.len();
    }
    for (u, v) in a.iter().zip(b) {
        for (x, y) in u.iter().zip(v) {
            match x.total_cmp(y) {
                std::cmp::Ordering::Less => return true,
                std::cmp::Ordering::Greater => return false,
                std::cmp::Ordering::Equal => {}
            }
        }
    }
    true
}

/// Unbiased U-statistic estimate of squared MMD with a Gaussian kernel.
pub fn mmd_u_squared(reference: &[Vec<f64>], model: &[Vec<f64>], cfg: &MmdConfig) -> Result<f64> {
    let (m, n) = (reference.len(), model.len());
    if m < 2 || n < 2 {
        return Err(Error::Argument(format!(
            "MMD needs at least two points per set, got {m} and {n}"
        )));
    }
    let d1 = check_points(reference, "reference")?;
    let d2 = check_points(model, "model")?;
    if d1 != d2 {
        return Err(Error::Argument("reference and model dimensions differ".into()));
    }
    let g = 1.0 / (2.0 * cfg.bandwidth * cfg.bandwidth);
    let (mf, nf) = (m as f64, n as f64);
    let xx = kernel_sum_within(reference, g) / (mf * (mf - 1.0));
    let yy = kernel_sum_within(model, g) / (nf * (nf - 1.0));
    let cross = if canonical_first(reference, model) {
        kernel_sum_cross(reference, model, g)
    } else {
        kernel_sum_cross(model, reference, g)
    };
    Ok(xx + yy - 2.0 * cross / (mf * nf))
}

/// `sqrt(max(MMD^2_u, 0))`.
pub fn mmd_u(reference: &[Vec<f64>], model: &[Vec<f64>], cfg: &MmdConfig) -> Result<f64> {
    Ok(mmd_u_squared(reference, model, cfg)?.max(0.0).sqrt())
}

/// Squared-MMD statistics under random relabelings of the pooled sample.
pub fn mmd_permutation_null(
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    cfg: &MmdConfig,
    permutations: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut pooled: Vec<Vec<f64>> = a.iter().chain(b).cloned().collect();
    let mut r = rng::stream(seed, tag::TARGET_MC);
    (0..permutations)
        .map(|_| {
            pooled.shuffle(&mut r);
            let (x, y) = pooled.split_at(a.len());
            mmd_u_squared(x, y, cfg)
        })
        .collect()
}

/// Trace-of-covariance estimate of row-major `n x dim` vectors, with its MC standard error.
pub fn trace_variance(rows: &[f64], dim: usize) -> (f64, f64) {
    let n = rows.len() / dim;
    let nf = n as f64;
    let mut mean = vec![0.0; dim];
    for r in rows.chunks_exact(dim) {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= nf);
    let q: Vec<f64> = rows
        .chunks_exact(dim)
        .map(|r| r.iter().zip(&mean).map(|(v, m)| (v - m) * (v - m)).sum())
        .collect();
    let q_mean = q.iter().sum::<f64>() / nf;
    let q_var = q.iter().map(|v| (v - q_mean).powi(2)).sum::<f64>() / (nf - 1.0);
    (q_mean * nf / (nf - 1.0), (q_var / nf).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceProfile {
    pub t_grid: Vec<f64>,
    pub var_dsm: Vec<f64>,
    pub var_ltsm: Vec<f64>,
    pub var_mix: Vec<f64>,
    pub se_dsm: Vec<f64>,
    pub se_ltsm: Vec<f64>,
    pub se_mix: Vec<f64>,
    /// Optimal weight used for the mixture column at each `t`.
    pub w_star: Vec<f64>,
    pub n: usize,
}

impl VarianceProfile {
    pub fn to_csv(&self) -> String {
        let mut t = CsvTable::new(&["t", "var_dsm", "var_ltsm", "var_mix", "se_dsm", "se_ltsm", "se_mix"]);
        for i in 0..self.t_grid.len() {
            t.push(&[
                fmt_sig17(self.t_grid[i]),
                fmt_sig17(self.var_dsm[i]),
                fmt_sig17(self.var_ltsm[i]),
                fmt_sig17(self.var_mix[i]),
                fmt_sig17(self.se_dsm[i]),
                fmt_sig17(self.se_ltsm[i]),
                fmt_sig17(self.se_mix[i]),
            ]);
        }
        t.as_str().to_string()
    }
}

/// Default grid for variance and weight diagnostics.
pub fn default_t_grid() -> Vec<f64> {
    vec![0.01, 0.02, 0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 0.9, 0.99]
}

/// MC variance of the DSM, LTSM and optimally mixed targets at each grid time.
///
/// The same seed is used at every grid point, so the underlying
/// `(theta_0, z, eps)` draws are shared across times.
pub fn variance_profile(
    spec: &SimulatorSpec,
    x: Option<&Observation>,
    t_grid: &[f64],
    n: usize,
    sched: &NoiseSchedule,
    seed: u64,
) -> Result<VarianceProfile> {
    if n < 1000 {
        return Err(Error::Argument(format!("variance profile needs N >= 1000, got {n}")));
    }
    if t_grid.is_empty() || t_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Argument("time grid must be non-empty and strictly increasing".into()));
    }
    let mut p = VarianceProfile {
        t_grid: t_grid.to_vec(),
        var_dsm: vec![],
        var_ltsm: vec![],
        var_mix: vec![],
        se_dsm: vec![],
        se_ltsm: vec![],
        se_mix: vec![],
        w_star: vec![],
        n,
    };
    for &t in t_grid {
        let t = DiffusionTime::new(t)?;
        let pt = sample_paired_targets(spec, x, t, n, sched, seed)?;
        let w = pt.moments().optimal_weight();
        let (vd, sd) = trace_variance(&pt.dsm, pt.dim);
        let (vl, sl) = trace_variance(&pt.ltsm, pt.dim);
        let (vm, sm) = trace_variance(&pt.mix(w), pt.dim);
        p.var_dsm.push(vd);
        p.se_dsm.push(sd);
        p.var_ltsm.push(vl);
        p.se_ltsm.push(sl);
        p.var_mix.push(vm);
        p.se_mix.push(sm);
        p.w_star.push(w);
    }
    Ok(p)
}

/// Product grid for the score error: `n_t` times uniform on `[T_MIN, 1]`,
/// `n_theta` points across `+-width` marginal standard deviations at each time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreErrorGrid {
    pub n_t: usize,
    pub n_theta: usize,
    pub width: f64,
}

impl Default for ScoreErrorGrid {
    fn default() -> Self {
        Self {
            n_t: 64,
            n_theta: 64,
            width: 4.0,
        }
    }
}

impl ScoreErrorGrid {
    pub fn times(&self) -> Vec<f64> {
        linspace(T_MIN, 1.0, self.n_t)
    }

    /// Standardized offsets `u_j` in `[-width, width]`.
    pub fn offsets(&self) -> Vec<f64> {
        linspace(-self.width, self.width, self.n_theta)
    }
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n)
        .map(|i| {
            if i + 1 == n {
                hi
            } else {
                lo + (hi - lo) * i as f64 / (n - 1) as f64
            }
        })
        .collect()
}

/// Mean `|s(theta_t, t, x) - true score|` over the grid, Gaussian task only.
///
/// The `theta_t` grid at time `t` is centred on the diffused posterior mean
/// `alpha x / 3` with spread `sqrt(1 - alpha^2 / 3)`.
pub fn score_l1_error<M: ScoreModel + ?Sized>(
    model: &M,
    x: f64,
    sched: &NoiseSchedule,
    grid: &ScoreErrorGrid,
) -> Result<f64> {
    if let Some(task) = model.task() {
        if task != TaskKind::Gaussian {
            return Err(Error::UnsupportedTask {
                task: task.to_string(),
                what: "score error needs the closed-form Gaussian score".into(),
            });
        }
    }
    if grid.n_t == 0 || grid.n_theta == 0 {
        return Err(Error::Argument("empty score-error grid".into()));
    }
    let offsets = grid.offsets();
    let obs = Observation::Real(x);
    let mut total = 0.0;
    for t in grid.times() {
        let dt = DiffusionTime::new(t)?;
        let a = sched.alpha_at(dt);
        let mean = a * x / 3.0;
        let sd = (1.0 - a * a / 3.0).sqrt();
        let thetas = Array2::from_shape_fn((offsets.len(), 1), |(j, _)| mean + sd * offsets[j]);
        let s = model.score_batch(thetas.view(), t, &obs)?;
        for (j, row) in s.rows().into_iter().enumerate() {
            total += (row[0] - gaussian_true_score(thetas[[j, 0]], dt, x, sched)).abs();
        }
    }
    Ok(total / (grid.n_t * grid.n_theta) as f64)
}

/// Score error averaged over several observations.
pub fn mean_score_l1_error<M: ScoreModel + ?Sized>(
    model: &M,
    xs: &[f64],
    sched: &NoiseSchedule,
    grid: &ScoreErrorGrid,
) -> Result<f64> {
    let mut acc = 0.0;
    for &x in xs {
        acc += score_l1_error(model, x, sched, grid)?;
    }
    Ok(acc / xs.len() as f64)
}
