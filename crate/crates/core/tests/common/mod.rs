//! Independent oracles shared by the integration tests and the acceptance suite.
#![allow(dead_code)]

use std::f64::consts::PI;

use ltsm::sde::{DiffusionTime, NoiseSchedule};
use ltsm::simulators::{Latent, Observation, SimulatorSpec};

pub fn log_normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (2.0 * PI * var).ln() - (x - mean).powi(2) / (2.0 * var)
}

fn log_sigmoid(u: f64) -> f64 {
    -(-u).exp().ln_1p()
}

/// `log p(theta, z, x)` written out from the generative process.
pub fn log_joint(spec: &SimulatorSpec, theta: f64, z: &Latent, x: &Observation) -> f64 {
    let prior = log_normal_pdf(theta, 0.0, 1.0);
    match (spec, z, x) {
        (SimulatorSpec::Gaussian, Latent::Real(z), Observation::Real(x)) => {
            prior + log_normal_pdf(*z, theta, 1.0) + log_normal_pdf(*x, *z, 1.0)
        }
        (SimulatorSpec::MixtureCategorical { phi0, phi1 }, Latent::Bit(b), Observation::Class(k)) => {
            let (lz, phi) = if *b == 1 {
                (log_sigmoid(theta), phi1)
            } else {
                (log_sigmoid(-theta), phi0)
            };
            prior + lz + phi[*k].ln()
        }
        (SimulatorSpec::Galton { .. }, Latent::Bits(bits), Observation::Bin(_)) => {
            prior
                + bits
                    .iter()
                    .map(|&b| if b == 1 { log_sigmoid(theta) } else { log_sigmoid(-theta) })
                    .sum::<f64>()
        }
        _ => panic!("mismatched draw"),
    }
}

pub fn central_difference(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Composite Simpson rule with `n` (even) intervals.
pub fn simpson(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (hi - lo) / n as f64;
    let mut s = f(lo) + f(hi);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(lo + i as f64 * h);
    }
    s * h / 3.0
}

/// `log p_t(theta_t | x)` on the Gaussian task by quadrature over `theta_0`
/// of forward kernel times the clean posterior `N(x/3, 2/3)`.
pub fn diffused_posterior_log_density(theta_t: f64, t: f64, x: f64, sched: &NoiseSchedule) -> f64 {
    let a = sched.alpha(t).unwrap();
    let s2 = 1.0 - a * a;
    let (m, v) = (x / 3.0, 2.0 / 3.0);
    // integration window from the product of the two Gaussian factors in theta_0
    let prec = a * a / s2 + 1.0 / v;
    let centre = (a * theta_t / s2 + m / v) / prec;
    let w = prec.recip().sqrt();
    let peak = log_normal_pdf(theta_t, a * centre, s2) + log_normal_pdf(centre, m, v);
    let integrand =
        |th0: f64| (log_normal_pdf(theta_t, a * th0, s2) + log_normal_pdf(th0, m, v) - peak).exp();
    peak + simpson(integrand, centre - 14.0 * w, centre + 14.0 * w, 4000).ln()
}

/// Unnormalized `log p(theta | x)` on the Gaussian task with `z` integrated out.
pub fn gaussian_log_posterior_unnorm(theta: f64, x: f64) -> f64 {
    log_normal_pdf(theta, 0.0, 1.0) + log_normal_pdf(x, theta, 2.0)
}

pub fn time(t: f64) -> DiffusionTime {
    DiffusionTime::new(t).unwrap()
}

pub fn mean_and_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
}

/// Naive double-loop squared U-statistic MMD.
pub fn naive_mmd2(a: &[Vec<f64>], b: &[Vec<f64>], sigma: f64) -> f64 {
    let k = |u: &[f64], v: &[f64]| {
        let d2: f64 = u.iter().zip(v).map(|(p, q)| (p - q).powi(2)).sum();
        (-d2 / (2.0 * sigma * sigma)).exp()
    };
    let (m, n) = (a.len() as f64, b.len() as f64);
    let mut xx = 0.0;
    for i in 0..a.len() {
        for j in 0..a.len() {
            if i != j {
                xx += k(&a[i], &a[j]);
            }
        }
    }
    let mut yy = 0.0;
    for i in 0..b.len() {
        for j in 0..b.len() {
            if i != j {
                yy += k(&b[i], &b[j]);
            }
        }
    }
    let mut xy = 0.0;
    for u in a {
        for v in b {
            xy += k(u, v);
        }
    }
    xx / (m * (m - 1.0)) + yy / (n * (n - 1.0)) - 2.0 * xy / (m * n)
}

/// Largest `|mean| / se` of `(y - s(theta_t | x)) g(theta_t)` over
/// `g in {1, theta_t, theta_t^2}`, for the Gaussian task at time `t`.
///
/// `which` selects the target: "dsm", "tsm", "ltsm" or "mix" (weight 0.5).
pub fn gaussian_unbiasedness_zscore(which: &str, t: f64, n: usize, seed: u64) -> f64 {
    use ltsm::simulators::simulate;
    use ltsm::targets::{dsm_target, ltsm_target, mix_target, tsm_target};
    use rand_distr::StandardNormal;

    let sched = NoiseSchedule::default();
    let spec = SimulatorSpec::gaussian();
    let tt = time(t);
    let a = sched.alpha(t).unwrap();
    let sigma = (1.0 - a * a).sqrt();
    let mut r = ltsm::rng::stream(seed, 0);
    let mut sums = [0.0f64; 3];
    let mut sq = [0.0f64; 3];
    for _ in 0..n {
        let d = simulate(&spec, &mut r);
        let eps: f64 = rand::Rng::sample(&mut r, StandardNormal);
        let th_t = a * d.theta[0] + sigma * eps;
        let Observation::Real(x) = d.x else { unreachable!() };
        let dsm = || dsm_target(&d.theta, &[th_t], tt, &sched).unwrap();
        let ltsm = || ltsm_target(&d.theta, &d.z, &d.x, tt, &spec, &sched).unwrap();
        let y = match which {
            "dsm" => dsm().value[0],
            "tsm" => tsm_target(&spec, &d.theta, &d.x, tt, &sched).unwrap().value[0],
            "ltsm" => ltsm().value[0],
            "mix" => mix_target(&dsm(), &ltsm(), 0.5).unwrap().value[0],
            other => panic!("unknown target {other}"),
        };
        let resid = y - ltsm::simulators::gaussian_true_score(th_t, tt, x, &sched);
        for (k, g) in [1.0, th_t, th_t * th_t].into_iter().enumerate() {
            let v = resid * g;
            sums[k] += v;
            sq[k] += v * v;
        }
    }
    let nf = n as f64;
    (0..3)
        .map(|k| {
            let m = sums[k] / nf;
            let var = (sq[k] / nf - m * m) * nf / (nf - 1.0);
            m.abs() / (var / nf).sqrt()
        })
        .fold(0.0, f64::max)
}

/// Training-loss gradient check configurations: (task, objective, loss weighting, seed).
pub fn gradient_check_configs() -> Vec<(ltsm::TaskKind, &'static str, ltsm::training::LossWeighting, u64)> {
    use ltsm::training::LossWeighting::*;
    use ltsm::TaskKind::*;
    vec![
        (Gaussian, "mix-learned", Unit, 1),
        (Galton, "mix-learned", NoiseVariance, 2),
        (MixtureCategorical, "ltsm", Unit, 3),
        (Gaussian, "tsm", NoiseVariance, 4),
        (Galton, "dsm", Unit, 5),
    ]
}

/// Largest relative error between analytic and central-difference gradients
/// of the full batch loss, over every score and weight-schedule parameter.
pub fn max_loss_gradient_rel_error(
    task: ltsm::TaskKind,
    objective: &str,
    weighting: ltsm::training::LossWeighting,
    seed: u64,
) -> f64 {
    use ltsm::neural::{Activation, ScoreArch, WeightArch};
    use ltsm::simulators::{generate_dataset, JointDraw};
    use ltsm::training::{batch_loss_with_noise, init_networks, BatchNoise, Objective, TrainConfig};
    use rand::Rng;

    let spec = SimulatorSpec::default_for(task);
    let cfg = TrainConfig {
        objective: Objective::parse(objective).unwrap(),
        lambda: weighting,
        eta: weighting,
        seed,
        score_arch: ScoreArch { hidden: vec![12, 12], activation: Activation::Silu },
        weight_arch: WeightArch { hidden: vec![6], activation: Activation::Tanh },
        ..TrainConfig::default()
    };
    let data = generate_dataset(&spec, 8, seed).unwrap();
    let batch: Vec<&JointDraw> = data.draws.iter().collect();
    let (mut net, mut ws) = init_networks(&cfg, &spec).unwrap();
    // replace the zero output layers so every gradient is non-trivial
    let mut r = ltsm::rng::stream(seed, 99);
    let p: Vec<f64> = (0..net.mlp.num_params()).map(|_| r.random_range(-0.5..0.5)).collect();
    net.mlp.set_flat(&p).unwrap();
    if let Some(w) = ws.as_mut() {
        let p: Vec<f64> = (0..w.mlp.num_params()).map(|_| r.random_range(-1.0..1.0)).collect();
        w.mlp.set_flat(&p).unwrap();
    }
    let noise = BatchNoise::draw(batch.len(), 1, (0.02, 1.0), &mut r);
    let out = batch_loss_with_noise(&cfg, &spec, &net, ws.as_ref(), &batch, &noise).unwrap();
    let loss_with = |net: &ltsm::neural::ScoreNetwork, ws: Option<&ltsm::neural::WeightSchedule>| {
        batch_loss_with_noise(&cfg, &spec, net, ws, &batch, &noise).unwrap().loss
    };
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let base = net.mlp.to_flat();
    let analytic = out.score_grads.to_flat();
    for i in 0..base.len() {
        let mut probe = net.clone();
        let mut v = base.clone();
        v[i] = base[i] + h;
        probe.mlp.set_flat(&v).unwrap();
        let up = loss_with(&probe, ws.as_ref());
        v[i] = base[i] - h;
        probe.mlp.set_flat(&v).unwrap();
        let down = loss_with(&probe, ws.as_ref());
        worst = worst.max(rel_err(analytic[i], (up - down) / (2.0 * h), 1e-6));
    }
    if let (Some(w), Some(g)) = (&ws, &out.weight_grads) {
        let base = w.mlp.to_flat();
        let analytic = g.to_flat();
        for i in 0..base.len() {
            let mut probe = w.clone();
            let mut v = base.clone();
            v[i] = base[i] + h;
            probe.mlp.set_flat(&v).unwrap();
            let up = loss_with(&net, Some(&probe));
            v[i] = base[i] - h;
            probe.mlp.set_flat(&v).unwrap();
            let down = loss_with(&net, Some(&probe));
            worst = worst.max(rel_err(analytic[i], (up - down) / (2.0 * h), 1e-6));
        }
    }
    worst
}
