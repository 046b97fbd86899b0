//! End-to-end acceptance run: one PASS/FAIL line per criterion, nonzero exit
//! if any fails. `LTSM_ACCEPTANCE_ONLY=1,7` restricts the run during development.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::*;
use ltsm::experiment::{
    compare_weights, default_gaussian_points, default_observations, mean_mmd_by_objective, mmd_budget_experiment,
    score_error_experiment, BandwidthRegistry, Cell, EvalConfig,
};
use ltsm::metrics::{default_t_grid, mmd_u, mmd_u_squared, trace_variance, variance_profile, MmdConfig, ScoreErrorGrid};
use ltsm::rng;
use ltsm::sampler::{sample_posterior, AnalyticGaussianScore};
use ltsm::sde::{NoiseSchedule, T_MIN};
use ltsm::simulators::{
    gaussian_clean_posterior_score, gaussian_true_score, joint_score, simulate, Observation, SimulatorSpec, TaskKind,
};
use ltsm::targets::{optimal_weight_mc, sample_paired_targets};
use ltsm::training::{Objective, TrainConfig, TrainedModel};
use rand::Rng;
use rand_distr::StandardNormal;

const TASKS: [TaskKind; 3] = [TaskKind::Gaussian, TaskKind::MixtureCategorical, TaskKind::Galton];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn c1_closed_form_scores() -> Outcome {
    let sched = NoiseSchedule::default();
    let mut r = rng::stream(101, 0);
    let mut worst = [0.0f64; 3];
    for _ in 0..100 {
        let t: f64 = r.random_range(0.001..1.0);
        let x: f64 = r.random_range(-3.0..3.0);
        let a = sched.alpha(t).unwrap();
        let sd = (1.0 - a * a / 3.0).sqrt();
        let th = a * x / 3.0 + sd * r.random_range(-3.0..3.0);
        let s = gaussian_true_score(th, time(t), x, &sched);
        let fd = central_difference(|v| diffused_posterior_log_density(v, t, x, &sched), th, 1e-4 * sd);
        worst[0] = worst[0].max(rel_err(s, fd, 1e-3));

        let th0: f64 = r.random_range(-4.0..4.0);
        let s = gaussian_clean_posterior_score(th0, x);
        let fd = central_difference(|v| gaussian_log_posterior_unnorm(v, x), th0, 1e-5);
        worst[1] = worst[1].max(rel_err(s, fd, 1e-3));
    }
    for kind in TASKS {
        let spec = SimulatorSpec::default_for(kind);
        for _ in 0..100 {
            let d = simulate(&spec, &mut r);
            let g = joint_score(&spec, &d.theta, &d.z, &d.x).unwrap()[0];
            let fd = central_difference(|th| log_joint(&spec, th, &d.z, &d.x), d.theta[0], 1e-5);
            worst[2] = worst[2].max(rel_err(g, fd, 1e-3));
        }
    }
    let m = worst.iter().cloned().fold(0.0, f64::max);
    outcome(
        m < 1e-5,
        format!("max rel err: diffused {:.1e}, clean {:.1e}, joint {:.1e}", worst[0], worst[1], worst[2]),
    )
}

fn c2_unbiasedness() -> Outcome {
    let mut worst = (0.0f64, "", 0.0);
    for (i, which) in ["dsm", "tsm", "ltsm", "mix"].into_iter().enumerate() {
        for (j, t) in [0.05, 0.3, 0.7].into_iter().enumerate() {
            let z = gaussian_unbiasedness_zscore(which, t, 1_000_000, 200 + 10 * i as u64 + j as u64);
            if z > worst.0 {
                worst = (z, which, t);
            }
        }
    }
    outcome(
        worst.0 < 4.0,
        format!("max |z| = {:.2} ({} at t={})", worst.0, worst.1, worst.2),
    )
}

fn c3_variance_trends() -> Outcome {
    let sched = NoiseSchedule::default();
    let grid = default_t_grid();
    let i01 = grid.iter().position(|&t| t == 0.01).unwrap();
    let i05 = grid.iter().position(|&t| t == 0.5).unwrap();
    let mut pass = true;
    let mut parts = vec![];
    for kind in TASKS {
        let p = variance_profile(&SimulatorSpec::default_for(kind), None, &grid, 100_000, &sched, 300).unwrap();
        let rise = p.var_dsm[i01] / p.var_dsm[i05];
        let ratio = p.var_ltsm[i01] / p.var_dsm[i01];
        pass &= rise >= 50.0 && ratio <= 0.1;
        parts.push(format!("{kind}: rise {rise:.0}x, ltsm/dsm {ratio:.1e}"));
        if kind == TaskKind::Gaussian {
            let mut z_max = 0.0f64;
            for (k, &t) in grid.iter().enumerate() {
                let exact = 1.0 / (1.0 - sched.alpha(t).unwrap().powi(2));
                z_max = z_max.max((p.var_dsm[k] - exact).abs() / p.se_dsm[k]);
            }
            pass &= z_max < 4.0;
            parts.push(format!("closed form max z {z_max:.2}"));
        }
    }
    outcome(pass, parts.join("; "))
}

fn c4_optimal_weight() -> Outcome {
    let sched = NoiseSchedule::default();
    let grid = default_t_grid();
    let ws: Vec<f64> = (0..=20).map(|k| k as f64 * 0.05).collect();
    let n = 100_000;
    let mut worst = 0.0f64;
    for kind in TASKS {
        let spec = SimulatorSpec::default_for(kind);
        for &t in &grid {
            let seed = 400;
            let w_star = optimal_weight_mc(&spec, None, time(t), n, &sched, seed).unwrap();
            let p = sample_paired_targets(&spec, None, time(t), n, &sched, seed).unwrap();
            let best = ws
                .iter()
                .map(|&w| (w, trace_variance(&p.mix(w), p.dim).0))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap()
                .0;
            worst = worst.max((w_star - best).abs());
        }
    }
    let g = SimulatorSpec::gaussian();
    let lo = optimal_weight_mc(&g, None, time(0.01), n, &sched, 401).unwrap();
    let hi = optimal_weight_mc(&g, None, time(0.99), n, &sched, 402).unwrap();
    outcome(
        worst <= 0.05 && lo < 0.2 && hi > 0.8,
        format!("max |w* - grid argmin| {worst:.3}; gaussian w*(0.01) {lo:.3}, w*(0.99) {hi:.3}"),
    )
}

fn c5_mixture_dominance() -> Outcome {
    let sched = NoiseSchedule::default();
    let grid = default_t_grid();
    let mut pass = true;
    let mut worst = f64::NEG_INFINITY;
    for kind in TASKS {
        let p = variance_profile(&SimulatorSpec::default_for(kind), None, &grid, 100_000, &sched, 500).unwrap();
        for k in 0..grid.len() {
            let (best, se) = if p.var_dsm[k] <= p.var_ltsm[k] {
                (p.var_dsm[k], p.se_dsm[k])
            } else {
                (p.var_ltsm[k], p.se_ltsm[k])
            };
            // excess over the best single target, in units of its SE
            let z = (p.var_mix[k] - best) / se;
            worst = worst.max(z);
            pass &= p.var_mix[k] <= best + 4.0 * se;
        }
    }
    outcome(pass, format!("max (Var mix - min) / SE = {worst:.2}"))
}

fn c6_gradients() -> Outcome {
    let mut worst = 0.0f64;
    for (task, obj, weighting, seed) in gradient_check_configs() {
        worst = worst.max(max_loss_gradient_rel_error(task, obj, weighting, seed));
    }
    outcome(worst < 1e-4, format!("max rel err {worst:.1e} over 5 configurations"))
}

fn c7_sampler() -> Outcome {
    let sched = NoiseSchedule::default();
    let model = AnalyticGaussianScore { schedule: sched };
    let s = sample_posterior(&model, &Observation::Real(3.0), 100_000, 500, &sched, 700).unwrap();
    let v: Vec<f64> = s.iter().map(|r| r[0]).collect();
    let (m, var) = mean_and_var(&v);
    outcome(
        (m - 1.0).abs() < 0.02 && (var - 2.0 / 3.0).abs() < 0.03,
        format!("mean {m:.4}, variance {var:.4}"),
    )
}

fn c8_mmd() -> Outcome {
    let normal = |n: usize, mean: f64, seed: u64| -> Vec<Vec<f64>> {
        let mut r = rng::stream(seed, 0);
        (0..n).map(|_| vec![mean + r.sample::<f64, _>(StandardNormal)]).collect()
    };
    let a = normal(100, 0.0, 801);
    let b = normal(100, 0.7, 802);
    let cfg = MmdConfig::new(1.0).unwrap();
    let oracle_gap = (mmd_u_squared(&a, &b, &cfg).unwrap() - naive_mmd2(&a, &b, 1.0)).abs();

    let exact = (2.0 / 3f64.sqrt() * (1.0 - (-25.0f64 / 6.0).exp())).sqrt();
    let a = normal(10_000, 0.0, 803);
    let b = normal(10_000, 5.0, 804);
    let est = mmd_u(&a, &b, &cfg).unwrap();
    let blocks: Vec<f64> = (0..10)
        .map(|k| {
            let r = k * 1000..(k + 1) * 1000;
            mmd_u_squared(&a[r.clone()], &b[r], &cfg).unwrap()
        })
        .collect();
    let (_, v) = mean_and_var(&blocks);
    // block spread at 10^3 scaled to 10^4, then through the square root
    let se = (v / 10.0).sqrt() / (2.0 * est);
    outcome(
        oracle_gap < 1e-12 && (est - exact).abs() < 3.0 * se,
        format!("naive gap {oracle_gap:.1e}; mmd {est:.5} vs {exact:.5} (se {se:.1e})"),
    )
}

struct ScoreRun {
    outcome: Outcome,
    mix_model: Option<TrainedModel>,
}

fn c9_score_error() -> ScoreRun {
    let base = TrainConfig::default();
    let spec = SimulatorSpec::gaussian();
    let mut cells = vec![];
    for seed in 0..5 {
        for obj in ["dsm", "mix-learned"] {
            cells.push(Cell {
                spec: spec.clone(),
                budget: 10_000,
                objective: Objective::parse(obj).unwrap(),
                seed,
            });
        }
    }
    let rows = score_error_experiment(&cells, &base, &default_gaussian_points(), &ScoreErrorGrid::default(), 1).unwrap();
    let mut wins = 0;
    let mut parts = vec![];
    for pair in rows.chunks(2) {
        let (d, m) = (&pair[0].0, &pair[1].0);
        if m.l1_error <= d.l1_error {
            wins += 1;
        }
        parts.push(format!("s{} {:.3}/{:.3}", d.seed, d.l1_error, m.l1_error));
    }
    let mix_model = rows.into_iter().nth(1).map(|(_, m)| m);
    ScoreRun {
        outcome: outcome(wins >= 4, format!("mix <= dsm in {wins}/5 seeds (dsm/mix: {})", parts.join(", "))),
        mix_model,
    }
}

fn c10_mmd_budget() -> Outcome {
    let base = TrainConfig::default();
    let registry = BandwidthRegistry::new();
    let mut tasks_won = 0;
    let mut parts = vec![];
    for kind in TASKS {
        let spec = SimulatorSpec::default_for(kind);
        let mut cells = vec![];
        for seed in 0..3 {
            for obj in ["dsm", "mix-learned"] {
                cells.push(Cell {
                    spec: spec.clone(),
                    budget: 1000,
                    objective: Objective::parse(obj).unwrap(),
                    seed,
                });
            }
        }
        let rows = mmd_budget_experiment(
            &cells,
            &base,
            &EvalConfig::default(),
            |s| default_observations(s.kind()),
            &registry,
            1,
        )
        .unwrap();
        let means = mean_mmd_by_objective(&rows, kind, 1000);
        let (d, m) = (means["dsm"], means["mix-learned"]);
        if m <= d {
            tasks_won += 1;
        }
        parts.push(format!("{kind} {d:.4}/{m:.4}"));
    }
    outcome(
        tasks_won >= 2,
        format!("mix <= dsm on {tasks_won}/3 tasks (dsm/mix: {})", parts.join(", ")),
    )
}

fn c11_learned_weight(model: Option<&TrainedModel>) -> Outcome {
    let model = match model {
        Some(m) => m.clone(),
        None => {
            // criterion 9 was filtered out; train the same seed-0 cell here
            let cell = Cell {
                spec: SimulatorSpec::gaussian(),
                budget: 10_000,
                objective: Objective::MixLearned,
                seed: 0,
            };
            cell.fit(&TrainConfig::default()).unwrap()
        }
    };
    let Some(ws) = &model.weights else {
        return outcome(false, "model has no weight schedule");
    };
    let sched = NoiseSchedule::default();
    let cmp = compare_weights(ws, &SimulatorSpec::gaussian(), 20, 100_000, &sched, 1100).unwrap();
    let hi = cmp.mean_learned_in(0.8, 1.0);
    let lo = cmp.mean_learned_in(T_MIN, 0.2);
    let gap = cmp.mean_abs_gap();
    outcome(
        hi > lo && gap < 0.25,
        format!("mean w on [0.8,1] {hi:.3}, on [t_min,0.2] {lo:.3}; mean |w - w*| {gap:.4}"),
    )
}

fn main() -> ExitCode {
    let only: Option<Vec<u32>> = std::env::var("LTSM_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|v| v.trim().parse().ok()).collect());
    let enabled = |k: u32| only.as_ref().is_none_or(|v| v.contains(&k));
    let mut failed = 0;
    let mut report = |k: u32, name: &str, limit: Option<Duration>, f: &mut dyn FnMut() -> Outcome| {
        if !enabled(k) {
            return;
        }
        let start = Instant::now();
        let o = f();
        let took = start.elapsed();
        let in_time = limit.is_none_or(|l| took <= l);
        let pass = o.pass && in_time;
        if !pass {
            failed += 1;
        }
        let limit_note = match limit {
            Some(l) if !in_time => format!(", over the {}s limit", l.as_secs()),
            _ => String::new(),
        };
        println!(
            "{} criterion {k:>2} {name}: {} [{:.1}s{limit_note}]",
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            took.as_secs_f64()
        );
    };
    let secs = |s: u64| Some(Duration::from_secs(s));
    report(1, "closed-form scores", secs(10), &mut c1_closed_form_scores);
    report(2, "target unbiasedness", secs(120), &mut c2_unbiasedness);
    report(3, "variance trends", secs(300), &mut c3_variance_trends);
    report(4, "optimal weight", secs(120), &mut c4_optimal_weight);
    report(5, "mixture dominance", None, &mut c5_mixture_dominance);
    report(6, "loss gradients", secs(60), &mut c6_gradients);
    report(7, "sampler oracle", secs(120), &mut c7_sampler);
    report(8, "mmd estimator", None, &mut c8_mmd);
    let mut mix_model = None;
    report(9, "score-error trend", secs(1800), &mut || {
        let r = c9_score_error();
        mix_model = r.mix_model;
        r.outcome
    });
    report(10, "mmd-vs-budget trend", secs(7200), &mut c10_mmd_budget);
    report(11, "learned-weight trend", None, &mut || c11_learned_weight(mix_model.as_ref()));
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    }
}
