//! Minibatch score-matching losses and the training loop.
//!
//! All objectives regress `s(theta_t, t, x)` onto a per-draw target. The
//! diffusion times, forward noise and batch order come from streams that do
//! not depend on the objective, so runs that differ only in objective see
//! identical randomness.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::io::{fmt_sig17, CsvTable};
use crate::neural::{
    AdamConfig, AdamState, Checkpoint, MlpParams, ScoreArch, ScoreNetwork, WeightArch,
    WeightSchedule,
};
use crate::rng::{self, tag};
use crate::sde::{DiffusionTime, NoiseSchedule, T_MIN};
use crate::simulators::{
    gaussian_clean_posterior_score, joint_score, Dataset, JointDraw, Observation, SimulatorSpec,
};

/// Piecewise-linear mixture weight over `t`, constant beyond its end points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightTable {
    points: Vec<(f64, f64)>,
}

impl WeightTable {
    pub fn new(mut points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Argument("weight table needs at least one point".into()));
        }
        if points.iter().any(|(t, w)| !t.is_finite() || !w.is_finite()) {
            return Err(Error::Argument("weight table entries must be finite".into()));
        }
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(Self { points })
    }

    pub fn constant(w: f64) -> Self {
        Self {
            points: vec![(0.0, w)],
        }
    }

    pub fn weight(&self, t: f64) -> f64 {
        let p = &self.points;
        if t <= p[0].0 {
            return p[0].1;
        }
        for pair in p.windows(2) {
            let ((t0, w0), (t1, w1)) = (pair[0], pair[1]);
            if t <= t1 {
                return w0 + (w1 - w0) * (t - t0) / (t1 - t0);
            }
        }
        p[p.len() - 1].1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Objective {
    Dsm,
    /// Gaussian task only.
    Tsm,
    Ltsm,
    /// Mixture with a schedule learned jointly with the score network.
    MixLearned,
    MixFixed(WeightTable),
}

impl Objective {
    pub fn id(&self) -> &'static str {
        match self {
            Objective::Dsm => "dsm",
            Objective::Tsm => "tsm",
            Objective::Ltsm => "ltsm",
            Objective::MixLearned => "mix-learned",
            Objective::MixFixed(_) => "mix-fixed",
        }
    }

    /// Parse `dsm`, `tsm`, `ltsm`, `mix-learned` or `mix-fixed:<w>`.
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "dsm" => Ok(Objective::Dsm),
            "tsm" => Ok(Objective::Tsm),
            "ltsm" => Ok(Objective::Ltsm),
            "mix-learned" | "mix" => Ok(Objective::MixLearned),
            other => {
                if let Some(w) = other.strip_prefix("mix-fixed:") {
                    let w: f64 = w
                        .parse()
                        .map_err(|_| Error::Argument(format!("bad fixed weight `{w}`")))?;
                    Ok(Objective::MixFixed(WeightTable::constant(w)))
                } else {
                    Err(Error::Argument(format!("unknown objective `{other}`")))
                }
            }
        }
    }
}

/// Per-time loss weighting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossWeighting {
    Unit,
    /// `1 - alpha(t)^2`.
    NoiseVariance,
}

impl LossWeighting {
    fn at(self, t: DiffusionTime, sched: &NoiseSchedule) -> f64 {
        match self {
            LossWeighting::Unit => 1.0,
            LossWeighting::NoiseVariance => sched.variance_at(t),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub objective: Objective,
    /// Weighting of the DSM and TSM losses.
    pub lambda: LossWeighting,
    /// Weighting of the LTSM and mixture losses.
    pub eta: LossWeighting,
    pub batch_size: usize,
    pub steps: usize,
    pub t_range: (f64, f64),
    pub seed: u64,
    pub schedule: NoiseSchedule,
    pub score_arch: ScoreArch,
    pub weight_arch: WeightArch,
    pub adam: AdamConfig,
    /// Write `ckpt_<step>.json` every this many steps (and at the end).
    pub checkpoint_every: Option<usize>,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            objective: Objective::Dsm,
            lambda: LossWeighting::Unit,
            eta: LossWeighting::Unit,
            batch_size: 256,
            steps: 20_000,
            t_range: (T_MIN, 1.0),
            seed: 0,
            schedule: NoiseSchedule::default(),
            score_arch: ScoreArch::default(),
            weight_arch: WeightArch::default(),
            adam: AdamConfig::default(),
            checkpoint_every: None,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, data: &Dataset) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Argument("step count must be at least 1".into()));
        }
        if self.batch_size == 0 || self.batch_size > data.len() {
            return Err(Error::Argument(format!(
                "batch size {} must be in 1..={}",
                self.batch_size,
                data.len()
            )));
        }
        let (lo, hi) = self.t_range;
        if !(lo >= T_MIN && lo < hi && hi <= 1.0) {
            return Err(Error::Argument(format!(
                "t-range ({lo}, {hi}) must satisfy {T_MIN} <= lo < hi <= 1"
            )));
        }
        if matches!(self.objective, Objective::Tsm) && !matches!(data.spec, SimulatorSpec::Gaussian)
        {
            return Err(Error::UnsupportedTask {
                task: data.spec.kind().to_string(),
                what: "TSM objective".into(),
            });
        }
        if self.checkpoint_every == Some(0) {
            return Err(Error::Argument("checkpoint cadence must be positive".into()));
        }
        Ok(())
    }
}

/// Diffusion times and forward noise for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNoise {
    pub ts: Vec<f64>,
    /// `batch x theta_dim` standard normals.
    pub eps: Array2<f64>,
}

impl BatchNoise {
    pub fn draw<R: Rng + ?Sized>(n: usize, dim: usize, t_range: (f64, f64), rng: &mut R) -> Self {
        let ts = (0..n).map(|_| rng.random_range(t_range.0..=t_range.1)).collect();
        let eps = Array2::from_shape_simple_fn((n, dim), || rng.sample(StandardNormal));
        Self { ts, eps }
    }
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: f64,
    pub score_grads: MlpParams,
    pub weight_grads: Option<MlpParams>,
}

impl LossOutput {
    pub fn grad_norm(&self) -> f64 {
        let w = self.weight_grads.as_ref().map_or(0.0, |g| g.squared_norm());
        (self.score_grads.squared_norm() + w).sqrt()
    }
}

/// Loss and gradients for a batch, drawing `t` and noise from `rng`.
pub fn batch_loss<R: Rng + ?Sized>(
    cfg: &TrainConfig,
    spec: &SimulatorSpec,
    net: &ScoreNetwork,
    ws: Option<&WeightSchedule>,
    batch: &[&JointDraw],
    rng: &mut R,
) -> Result<LossOutput> {
    let noise = BatchNoise::draw(batch.len(), net.theta_dim(), cfg.t_range, rng);
    batch_loss_with_noise(cfg, spec, net, ws, batch, &noise)
}

/// Loss and gradients for a batch with explicit times and noise.
///
/// `ws` must be present exactly when the objective is [`Objective::MixLearned`].
pub fn batch_loss_with_noise(
    cfg: &TrainConfig,
    spec: &SimulatorSpec,
    net: &ScoreNetwork,
    ws: Option<&WeightSchedule>,
    batch: &[&JointDraw],
    noise: &BatchNoise,
) -> Result<LossOutput> {
    let learned = matches!(cfg.objective, Objective::MixLearned);
    if learned != ws.is_some() {
        return Err(Error::Argument(
            "a weight schedule is required for, and only for, the learned mixture".into(),
        ));
    }
    let n = batch.len();
    let d = net.theta_dim();
    if n == 0 || noise.ts.len() != n || noise.eps.dim() != (n, d) {
        return Err(Error::Argument(format!(
            "batch of {n} draws with {} times and noise {:?}",
            noise.ts.len(),
            noise.eps.dim()
        )));
    }
    let sched = &cfg.schedule;
    let mut theta_t = Array2::zeros((n, d));
    let mut target = Array2::zeros((n, d));
    // y_DSM - y_LTSM, needed for the learned weight's gradient
    let mut contrast = if learned {
        Some(Array2::zeros((n, d)))
    } else {
        None
    };
    let mut sample_weight = vec![0.0; n];
    let mut xs: Vec<Observation> = Vec::with_capacity(n);
    for (i, draw) in batch.iter().enumerate() {
        let t = DiffusionTime::new(noise.ts[i])?;
        let a = sched.alpha_at(t);
        let sigma = sched.sigma_at(t);
        let var = sched.variance_at(t);
        for k in 0..d {
            theta_t[[i, k]] = a * draw.theta[k] + sigma * noise.eps[[i, k]];
        }
        let dsm = |k: usize| (a * draw.theta[k] - theta_t[[i, k]]) / var;
        let (mix_weight, needs_ltsm) = match &cfg.objective {
            Objective::Dsm | Objective::Tsm => (None, false),
            Objective::Ltsm => (Some(0.0), true),
            Objective::MixFixed(table) => (Some(table.weight(t.get())), true),
            Objective::MixLearned => (None, true),
        };
        let ltsm = if needs_ltsm {
            joint_score(spec, &draw.theta, &draw.z, &draw.x)?
                .into_iter()
                .map(|g| g / a)
                .collect()
        } else {
            Vec::new()
        };
        match &cfg.objective {
            Objective::Dsm => {
                for k in 0..d {
                    target[[i, k]] = dsm(k);
                }
                sample_weight[i] = cfg.lambda.at(t, sched);
            }
            Objective::Tsm => {
                let Observation::Real(x) = draw.x else {
                    return Err(Error::UnsupportedTask {
                        task: spec.kind().to_string(),
                        what: "TSM objective".into(),
                    });
                };
                for k in 0..d {
                    target[[i, k]] = gaussian_clean_posterior_score(draw.theta[k], x) / a;
                }
                sample_weight[i] = cfg.lambda.at(t, sched);
            }
            Objective::Ltsm | Objective::MixFixed(_) => {
                let w = mix_weight.expect("fixed weight");
                for k in 0..d {
                    target[[i, k]] = w * dsm(k) + (1.0 - w) * ltsm[k];
                }
                sample_weight[i] = cfg.eta.at(t, sched);
            }
            Objective::MixLearned => {
                let c = contrast.as_mut().expect("contrast buffer");
                for k in 0..d {
                    // weight applied after the schedule forward pass
                    target[[i, k]] = ltsm[k];
                    c[[i, k]] = dsm(k) - ltsm[k];
                }
                sample_weight[i] = cfg.eta.at(t, sched);
            }
        }
        xs.push(draw.x);
    }

    let learned_w = ws.map(|ws| ws.forward(&noise.ts));
    if let (Some((w, _)), Some(c)) = (&learned_w, &contrast) {
        for i in 0..n {
            for k in 0..d {
                target[[i, k]] += w[i] * c[[i, k]];
            }
        }
    }

    let (pred, cache) = net.forward_batch(theta_t.view(), &noise.ts, &xs)?;
    let resid = &pred - &target;
    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    for (i, row) in resid.rows().into_iter().enumerate() {
        let sq: f64 = row.iter().map(|r| r * r).sum();
        let term = sample_weight[i] * sq;
        if !term.is_finite() {
            return Err(Error::NonFinite {
                context: format!(
                    "loss term for batch row {i} (theta_0={:?}, x={}) at t={}",
                    batch[i].theta, batch[i].x, noise.ts[i]
                ),
            });
        }
        loss += term;
    }
    loss *= inv_n;

    let mut upstream = resid.clone();
    for (i, mut row) in upstream.rows_mut().into_iter().enumerate() {
        row *= 2.0 * inv_n * sample_weight[i];
    }
    let (score_grads, _) = net.mlp.backward_batch(&cache, upstream.view())?;

    let weight_grads = match (ws, learned_w, contrast) {
        (Some(ws), Some((w, wcache)), Some(c)) => {
            // d loss / d w_i = -(2/n) eta_i r_i . (y_D - y_L)
            let dw: Vec<f64> = (0..n)
                .map(|i| {
                    let dot: f64 = (0..d).map(|k| resid[[i, k]] * c[[i, k]]).sum();
                    -2.0 * inv_n * sample_weight[i] * dot
                })
                .collect();
            Some(ws.backward(&wcache, &w, &dw)?)
        }
        _ => None,
    };
    Ok(LossOutput {
        loss,
        score_grads,
        weight_grads,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub t_mean: f64,
    pub loss: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<StepRecord>,
    /// Wall-clock seconds per completed pass over the dataset.
    pub epoch_seconds: Vec<f64>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut t = CsvTable::new(&["step", "t_mean", "loss", "grad_norm"]);
        for r in &self.records {
            t.push(&[
                r.step.to_string(),
                fmt_sig17(r.t_mean),
                fmt_sig17(r.loss),
                fmt_sig17(r.grad_norm),
            ]);
        }
        t.as_str().to_string()
    }

    /// Trailing moving average of the loss ending at `step_index` (0-based).
    pub fn smoothed_loss(&self, step_index: usize, window: usize) -> f64 {
        let end = step_index + 1;
        let start = end.saturating_sub(window);
        let slice = &self.records[start..end];
        slice.iter().map(|r| r.loss).sum::<f64>() / slice.len() as f64
    }
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub net: ScoreNetwork,
    pub weights: Option<WeightSchedule>,
    pub log: TrainLog,
}

impl TrainedModel {
    pub fn checkpoint(&self, cfg: &TrainConfig, spec: &SimulatorSpec) -> Checkpoint {
        Checkpoint::new(
            spec,
            &cfg.schedule,
            cfg.objective.id(),
            cfg.seed,
            self.log.records.len(),
            &self.net,
            self.weights.as_ref(),
        )
    }
}

/// Initial networks for a run. Depends only on the seed and architecture.
pub fn init_networks(
    cfg: &TrainConfig,
    spec: &SimulatorSpec,
) -> Result<(ScoreNetwork, Option<WeightSchedule>)> {
    let net = ScoreNetwork::new(spec, &cfg.score_arch, &mut rng::stream(cfg.seed, tag::SCORE_INIT))?;
    let ws = match cfg.objective {
        Objective::MixLearned => Some(WeightSchedule::new(
            &cfg.weight_arch,
            &mut rng::stream(cfg.seed, tag::WEIGHT_INIT),
        )?),
        _ => None,
    };
    Ok((net, ws))
}

/// Endless reshuffled pass over dataset indices.
struct EpochSampler {
    order: Vec<usize>,
    pos: usize,
    rng: rng::Stream,
    started: Instant,
    epoch_seconds: Vec<f64>,
}

impl EpochSampler {
    fn new(n: usize, seed: u64) -> Self {
        let mut rng = rng::stream(seed, tag::SHUFFLE);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        Self {
            order,
            pos: 0,
            rng,
            started: Instant::now(),
            epoch_seconds: Vec::new(),
        }
    }

    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
                self.epoch_seconds.push(self.started.elapsed().as_secs_f64());
                self.started = Instant::now();
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

fn write_checkpoint(
    cfg: &TrainConfig,
    spec: &SimulatorSpec,
    step: usize,
    net: &ScoreNetwork,
    ws: Option<&WeightSchedule>,
) -> Result<()> {
    if let Some(dir) = &cfg.checkpoint_dir {
        let ck = Checkpoint::new(spec, &cfg.schedule, cfg.objective.id(), cfg.seed, step, net, ws);
        ck.save(&dir.join(format!("ckpt_{step}.json")))?;
    }
    Ok(())
}

/// Run the optimization loop. On divergence the error is returned and the
/// last checkpoint written to disk (if any) is left in place.
pub fn train(cfg: &TrainConfig, data: &Dataset) -> Result<TrainedModel> {
    cfg.validate(data)?;
    let spec = &data.spec;
    let (mut net, mut ws) = init_networks(cfg, spec)?;
    let mut opt_net = AdamState::new(&net.mlp, cfg.adam);
    let mut opt_ws = ws.as_ref().map(|w| AdamState::new(&w.mlp, cfg.adam));
    let mut noise_rng = rng::stream(cfg.seed, tag::TRAIN_NOISE);
    let mut sampler = EpochSampler::new(data.len(), cfg.seed);
    let mut log = TrainLog::default();

    for step in 1..=cfg.steps {
        let idx = sampler.next_batch(cfg.batch_size);
        let batch: Vec<&JointDraw> = idx.iter().map(|&i| &data.draws[i]).collect();
        let noise = BatchNoise::draw(batch.len(), net.theta_dim(), cfg.t_range, &mut noise_rng);
        let out = batch_loss_with_noise(cfg, spec, &net, ws.as_ref(), &batch, &noise).map_err(
            |e| match e {
                Error::NonFinite { context } => Error::TrainingDiverged {
                    step,
                    detail: context,
                },
                other => other,
            },
        )?;
        let grad_norm = out.grad_norm();
        let diverged = |detail: String| Error::TrainingDiverged { step, detail };
        opt_net
            .step(&mut net.mlp, &out.score_grads)
            .map_err(|_| diverged("non-finite score-network gradient".into()))?;
        if let (Some(w), Some(opt), Some(g)) = (ws.as_mut(), opt_ws.as_mut(), &out.weight_grads) {
            opt.step(&mut w.mlp, g)
                .map_err(|_| diverged("non-finite weight-schedule gradient".into()))?;
        }
        log.records.push(StepRecord {
            step,
            t_mean: noise.ts.iter().sum::<f64>() / noise.ts.len() as f64,
            loss: out.loss,
            grad_norm,
        });
        let due = cfg.checkpoint_every.is_some_and(|c| step % c == 0) || step == cfg.steps;
        if due && cfg.checkpoint_every.is_some() {
            write_checkpoint(cfg, spec, step, &net, ws.as_ref())?;
        }
    }
    log.epoch_seconds = sampler.epoch_seconds;
    Ok(TrainedModel {
        net,
        weights: ws,
        log,
    })
}
