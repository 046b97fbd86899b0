use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde_json::json;

use ltsm::experiment::{
    compare_weights, default_gaussian_points, default_observations, evaluate_mmd, mean_mmd_by_objective,
    mmd_budget_experiment, mmd_rows_to_csv, score_error_experiment, score_error_rows_to_csv,
    BandwidthRegistry, Cell, EvalConfig, MmdRow, DEFAULT_BUDGETS,
};
use ltsm::io::{fmt_sig17, read_dataset, samples_to_csv, write_atomic, write_dataset, CsvTable};
use ltsm::metrics::{default_t_grid, mean_score_l1_error, variance_profile, ScoreErrorGrid};
use ltsm::neural::Checkpoint;
use ltsm::sampler::sample_posterior;
use ltsm::sde::DEFAULT_REVERSE_STEPS;
use ltsm::simulators::{generate_dataset, Observation, SimulatorSpec};
use ltsm::training::{train, LossWeighting, Objective, TrainConfig};
use ltsm::{NoiseSchedule, TaskKind};

use crate::config::FileConfig;
use crate::manifest::Recorder;
use crate::plot::{write_svg_plot, PlotSpec};
use crate::{Cli, Command, CliError, Figure, TrainFlags};

const DEFAULT_DATASET_SIZE: usize = 10_000;
const DEFAULT_VARIANCE_N: usize = 100_000;
const DEFAULT_WEIGHT_GRID: usize = 20;

struct Ctx {
    file: FileConfig,
    out: PathBuf,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let file = FileConfig::load(cli.config.as_deref())?;
    let out = file.out_dir(cli.out_dir.as_deref());
    let ctx = Ctx { file, out };
    match cli.command {
        Command::Simulate(a) => simulate(&ctx, a),
        Command::Train(a) => train_cmd(&ctx, a),
        Command::Sample(a) => sample(&ctx, a),
        Command::EvalMmd(a) => eval_mmd(&ctx, a),
        Command::DiagVariance(a) => diag_variance(&ctx, a),
        Command::DiagWeights(a) => diag_weights(&ctx, a),
        Command::DiagScoreError(a) => diag_score_error(&ctx, a),
        Command::Plot(a) => plot(&ctx, a),
        Command::Repro(a) => repro(&ctx, a),
    }
}

fn save(path: &Path, text: &str) -> Result<(), CliError> {
    write_atomic(path, text.as_bytes())?;
    println!("{}", path.display());
    Ok(())
}

fn parse_weighting(s: &str) -> Result<LossWeighting, CliError> {
    match s {
        "unit" => Ok(LossWeighting::Unit),
        "noise-variance" => Ok(LossWeighting::NoiseVariance),
        other => Err(CliError::runtime(format!("unknown loss weighting `{other}`"))),
    }
}

/// Flags, then `[train]`, then defaults.
fn train_config(ctx: &Ctx, f: &TrainFlags) -> Result<TrainConfig, CliError> {
    let t = &ctx.file.train;
    let d = TrainConfig::default();
    let objective = match f.objective.as_ref().or(t.objective.as_ref()) {
        Some(s) => Objective::parse(s)?,
        None => d.objective.clone(),
    };
    let weighting = match f.weighting.as_ref().or(t.weighting.as_ref()) {
        Some(s) => parse_weighting(s)?,
        None => d.lambda,
    };
    let mut cfg = TrainConfig {
        objective,
        lambda: weighting,
        eta: weighting,
        batch_size: f.batch_size.or(t.batch_size).unwrap_or(d.batch_size),
        steps: f.steps.or(t.steps).unwrap_or(d.steps),
        t_range: (
            f.t_min.or(t.t_min).unwrap_or(d.t_range.0),
            f.t_max.or(t.t_max).unwrap_or(d.t_range.1),
        ),
        seed: f.seed.or(t.seed).unwrap_or(d.seed),
        schedule: ctx.file.schedule()?,
        ..d
    };
    if let Some(h) = f.hidden.clone().or_else(|| t.hidden.clone()) {
        cfg.score_arch.hidden = h;
    }
    if let Some(h) = f.weight_hidden.clone().or_else(|| t.weight_hidden.clone()) {
        cfg.weight_arch.hidden = h;
    }
    if let Some(lr) = f.learning_rate.or(t.learning_rate) {
        cfg.adam.learning_rate = lr;
    }
    Ok(cfg)
}

fn to_value<T: serde::Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("config serializes")
}

fn simulate(ctx: &Ctx, a: crate::SimulateArgs) -> Result<(), CliError> {
    let spec = ctx.file.simulator(a.task.as_deref())?;
    let m = a.m.or(ctx.file.train.dataset_size).unwrap_or(DEFAULT_DATASET_SIZE);
    let seed = a.seed.or(ctx.file.train.seed).unwrap_or(0);
    let data = generate_dataset(&spec, m, seed)?;
    let path = a
        .out
        .unwrap_or_else(|| ctx.out.join(format!("dataset_{}_m{m}_s{seed}.csv", spec.kind())));
    write_dataset(&path, &data)?;
    println!("{}", path.display());
    let mut rec = Recorder::new(&ctx.out, "simulate", json!({"simulator": spec, "m": m, "seed": seed}), vec![seed]);
    rec.add(&path)?;
    rec.finish()?;
    Ok(())
}

fn objective_slug(o: &Objective) -> String {
    match o {
        Objective::MixFixed(t) => format!("mix-fixed-{}", t.weight(0.5)),
        other => other.id().to_string(),
    }
}

fn train_cmd(ctx: &Ctx, a: crate::TrainArgs) -> Result<(), CliError> {
    let data = read_dataset(&a.data)?;
    let mut cfg = train_config(ctx, &a.flags)?;
    let run_dir = a.run_dir.unwrap_or_else(|| {
        ctx.out.join("runs").join(format!(
            "{}_{}_m{}_s{}",
            data.spec.kind(),
            objective_slug(&cfg.objective),
            data.len(),
            cfg.seed
        ))
    });
    cfg.checkpoint_every = Some(
        a.checkpoint_every
            .or(ctx.file.train.checkpoint_every)
            .unwrap_or(cfg.steps),
    );
    cfg.checkpoint_dir = Some(run_dir.clone());
    let model = train(&cfg, &data)?;
    let log_path = run_dir.join("train_log.csv");
    save(&log_path, &model.log.to_csv())?;
    let mut resolved = to_value(&cfg);
    // the run directory is an output location, not part of the experiment identity
    resolved["checkpoint_dir"] = serde_json::Value::Null;
    resolved["dataset"] = json!({"simulator": data.spec, "m": data.len(), "seed": data.seed});
    let mut rec = Recorder::new(&ctx.out, "train", resolved, vec![data.seed, cfg.seed]);
    let every = cfg.checkpoint_every.unwrap_or(cfg.steps);
    let steps: std::collections::BTreeSet<usize> = (every..=cfg.steps)
        .step_by(every)
        .chain(std::iter::once(cfg.steps))
        .collect();
    for step in steps {
        rec.add(&run_dir.join(format!("ckpt_{step}.json")))?;
    }
    println!("{}", run_dir.join(format!("ckpt_{}.json", cfg.steps)).display());
    rec.add(&log_path)?;
    rec.finish()?;
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    Checkpoint::load(path).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

fn sample(ctx: &Ctx, a: crate::SampleArgs) -> Result<(), CliError> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let net = ck.score_network()?;
    let x = ck.simulator.parse_observation(&a.x)?;
    let s = &ctx.file.sampler;
    let n = a.n.or(s.n_samples).unwrap_or(ltsm::metrics::DEFAULT_MMD_SAMPLES);
    let steps = a.steps.or(s.n_steps).unwrap_or(DEFAULT_REVERSE_STEPS);
    let seed = a.seed.or(s.seed).unwrap_or(0);
    let samples = sample_posterior(&net, &x, n, steps, &ck.schedule, seed)?;
    let path = a.out.unwrap_or_else(|| {
        ctx.out
            .join(format!("samples_{}_x{}_s{seed}.csv", ck.task, x))
    });
    let csv = samples_to_csv(
        &samples,
        &[
            ("x", x.to_string()),
            ("seed", seed.to_string()),
            ("n_steps", steps.to_string()),
            ("checkpoint", a.checkpoint.display().to_string()),
        ],
    );
    save(&path, &csv)?;
    let mut rec = Recorder::new(
        &ctx.out,
        "sample",
        json!({"checkpoint": crate::manifest::hex_digest(ck.to_json()?.as_bytes()), "x": x.to_string(), "n": n, "n_steps": steps, "seed": seed}),
        vec![seed],
    );
    rec.add(&path)?;
    rec.finish()?;
    Ok(())
}

fn observations(spec: &SimulatorSpec, given: Option<&Vec<String>>) -> Result<Vec<Observation>, CliError> {
    match given {
        Some(v) => v
            .iter()
            .map(|s| spec.parse_observation(s).map_err(CliError::from))
            .collect(),
        None => Ok(default_observations(spec.kind())),
    }
}

fn eval_config(ctx: &Ctx, n_ref: Option<usize>, n_model: Option<usize>, steps: Option<usize>) -> EvalConfig {
    let d = EvalConfig::default();
    EvalConfig {
        n_reference: n_ref.or(ctx.file.metrics.n_reference).unwrap_or(d.n_reference),
        n_model: n_model
            .or(ctx.file.metrics.n_model)
            .or(ctx.file.sampler.n_samples)
            .unwrap_or(d.n_model),
        reverse_steps: steps.or(ctx.file.sampler.n_steps).unwrap_or(d.reverse_steps),
    }
}

fn eval_mmd(ctx: &Ctx, a: crate::EvalMmdArgs) -> Result<(), CliError> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let net = ck.score_network()?;
    let xs = observations(&ck.simulator, a.x.as_ref().or(ctx.file.experiment.observations.as_ref()))?;
    let eval = eval_config(ctx, a.n_reference, a.n_model, a.steps);
    let seed = a.seed.or(ctx.file.sampler.seed).unwrap_or(ck.seed);
    let registry = BandwidthRegistry::new();
    let res = evaluate_mmd(&net, &ck.simulator, &xs, &ck.schedule, &eval, &registry, seed)?;
    let budget = a.budget.unwrap_or(0);
    let rows: Vec<MmdRow> = res
        .into_iter()
        .map(|(x, mmd)| MmdRow {
            task: ck.task,
            x_star: x.to_string(),
            budget,
            objective: ck.objective.clone(),
            seed: ck.seed,
            mmd,
        })
        .collect();
    let path = a
        .out
        .unwrap_or_else(|| ctx.out.join(format!("mmd_{}_{}_s{}.csv", ck.task, ck.objective.replace(':', "-"), ck.seed)));
    save(&path, &mmd_rows_to_csv(&rows))?;
    let mut rec = Recorder::new(
        &ctx.out,
        "eval-mmd",
        json!({
            "checkpoint": crate::manifest::hex_digest(ck.to_json()?.as_bytes()),
            "observations": xs.iter().map(|x| x.to_string()).collect::<Vec<_>>(),
            "n_reference": eval.n_reference, "n_model": eval.n_model,
            "reverse_steps": eval.reverse_steps, "seed": seed, "budget": budget,
            "bandwidths": registry.entries(),
        }),
        vec![seed],
    );
    rec.add(&path)?;
    rec.finish()?;
    Ok(())
}

fn write_variance(
    ctx: &Ctx,
    spec: &SimulatorSpec,
    x: Option<&Observation>,
    grid: &[f64],
    n: usize,
    seed: u64,
    csv_path: &Path,
    rec: &mut Recorder,
) -> Result<(), CliError> {
    let sched = ctx.file.schedule()?;
    let p = variance_profile(spec, x, grid, n, &sched, seed)?;
    save(csv_path, &p.to_csv())?;
    rec.add(csv_path)?;
    Ok(())
}

fn diag_variance(ctx: &Ctx, a: crate::DiagVarianceArgs) -> Result<(), CliError> {
    let spec = ctx.file.simulator(a.task.as_deref())?;
    let x = a.x.as_deref().map(|s| spec.parse_observation(s)).transpose()?;
    let grid = a
        .t_grid
        .or_else(|| ctx.file.metrics.t_grid.clone())
        .unwrap_or_else(default_t_grid);
    let n = a.n.or(ctx.file.metrics.n_mc).unwrap_or(DEFAULT_VARIANCE_N);
    let seed = a.seed.unwrap_or(0);
    let suffix = x.map(|x| format!("_x{x}")).unwrap_or_default();
    let path = a
        .out
        .unwrap_or_else(|| ctx.out.join(format!("variance_{}{suffix}.csv", spec.kind())));
    let mut rec = Recorder::new(
        &ctx.out,
        "diag-variance",
        json!({"simulator": spec, "x": x.map(|x| x.to_string()), "t_grid": grid, "n": n, "seed": seed, "schedule": ctx.file.schedule()?}),
        vec![seed],
    );
    write_variance(ctx, &spec, x.as_ref(), &grid, n, seed, &path, &mut rec)?;
    rec.finish()?;
    Ok(())
}

fn weight_table(
    spec: &SimulatorSpec,
    ws: Option<&ltsm::neural::WeightSchedule>,
    n_grid: usize,
    n: usize,
    sched: &NoiseSchedule,
    seed: u64,
) -> Result<String, CliError> {
    match ws {
        Some(ws) => Ok(compare_weights(ws, spec, n_grid, n, sched, seed)?.to_csv()),
        None => {
            let ts = ltsm::metrics::linspace(ltsm::T_MIN, 1.0, n_grid);
            let mut t = CsvTable::new(&["t", "w_star"]);
            for ti in ts {
                let w = ltsm::targets::optimal_weight_mc(spec, None, ltsm::DiffusionTime::new(ti)?, n, sched, seed)?;
                t.push(&[fmt_sig17(ti), fmt_sig17(w)]);
            }
            Ok(t.as_str().to_string())
        }
    }
}

fn diag_weights(ctx: &Ctx, a: crate::DiagWeightsArgs) -> Result<(), CliError> {
    let ck = a.checkpoint.as_deref().map(load_checkpoint).transpose()?;
    let (spec, sched) = match &ck {
        Some(c) => (c.simulator.clone(), c.schedule),
        None => (ctx.file.simulator(a.task.as_deref())?, ctx.file.schedule()?),
    };
    let ws = match &ck {
        Some(c) => Some(
            c.weight_schedule()?
                .ok_or_else(|| CliError::runtime("checkpoint has no learned weight schedule"))?,
        ),
        None => None,
    };
    let n_grid = a.grid_points.unwrap_or(DEFAULT_WEIGHT_GRID);
    let n = a.n.or(ctx.file.metrics.n_mc).unwrap_or(DEFAULT_VARIANCE_N);
    let seed = a.seed.unwrap_or(0);
    let csv = weight_table(&spec, ws.as_ref(), n_grid, n, &sched, seed)?;
    let path = a
        .out
        .unwrap_or_else(|| ctx.out.join(format!("weights_{}.csv", spec.kind())));
    save(&path, &csv)?;
    let mut rec = Recorder::new(
        &ctx.out,
        "diag-weights",
        json!({
            "simulator": spec, "schedule": sched, "grid_points": n_grid, "n": n, "seed": seed,
            "checkpoint": ck.as_ref().map(|c| c.to_json().map(|j| crate::manifest::hex_digest(j.as_bytes()))).transpose()?,
        }),
        vec![seed],
    );
    rec.add(&path)?;
    rec.finish()?;
    Ok(())
}

fn score_grid(ctx: &Ctx, t: Option<usize>, theta: Option<usize>) -> ScoreErrorGrid {
    let d = ScoreErrorGrid::default();
    ScoreErrorGrid {
        n_t: t.or(ctx.file.metrics.grid_t).unwrap_or(d.n_t),
        n_theta: theta.or(ctx.file.metrics.grid_theta).unwrap_or(d.n_theta),
        width: d.width,
    }
}

fn diag_score_error(ctx: &Ctx, a: crate::DiagScoreErrorArgs) -> Result<(), CliError> {
    let xs = a.x.unwrap_or_else(default_gaussian_points);
    let grid = score_grid(ctx, a.grid_t, a.grid_theta);
    let mut rows = vec![];
    let mut digests = vec![];
    for p in &a.checkpoint {
        let ck = load_checkpoint(p)?;
        let net = ck.score_network()?;
        let e = mean_score_l1_error(&net, &xs, &ck.schedule, &grid)?;
        digests.push(crate::manifest::hex_digest(ck.to_json()?.as_bytes()));
        rows.push(ltsm::experiment::ScoreErrorRow {
            objective: ck.objective.clone(),
            seed: ck.seed,
            l1_error: e,
        });
    }
    let path = a.out.unwrap_or_else(|| ctx.out.join("score_error.csv"));
    save(&path, &score_error_rows_to_csv(&rows))?;
    let seeds = rows.iter().map(|r| r.seed).collect();
    let mut rec = Recorder::new(
        &ctx.out,
        "diag-score-error",
        json!({"checkpoints": digests, "x": xs, "grid_t": grid.n_t, "grid_theta": grid.n_theta}),
        seeds,
    );
    rec.add(&path)?;
    rec.finish()?;
    Ok(())
}

fn plot(ctx: &Ctx, a: crate::PlotArgs) -> Result<(), CliError> {
    let spec = PlotSpec {
        x: a.x,
        ys: a.y,
        log_x: a.log_x,
        log_y: a.log_y,
        title: a.title.unwrap_or_default(),
        x_label: None,
        y_label: None,
    };
    let out = a.out.unwrap_or_else(|| a.csv.with_extension("svg"));
    write_svg_plot(&a.csv, &spec, &out)?;
    println!("{}", out.display());
    let mut rec = Recorder::new(
        &ctx.out,
        "plot",
        json!({"csv": a.csv.display().to_string(), "x": spec.x, "y": spec.ys, "log_x": spec.log_x, "log_y": spec.log_y, "title": spec.title}),
        vec![],
    );
    rec.add(&out)?;
    rec.finish()?;
    Ok(())
}

fn svg(csv: &Path, x: &str, ys: &[&str], log_x: bool, log_y: bool, title: &str, rec: &mut Recorder) -> Result<(), CliError> {
    let spec = PlotSpec {
        x: x.into(),
        ys: ys.iter().map(|s| s.to_string()).collect(),
        log_x,
        log_y,
        title: title.into(),
        x_label: None,
        y_label: None,
    };
    let out = csv.with_extension("svg");
    write_svg_plot(csv, &spec, &out)?;
    println!("{}", out.display());
    rec.add(&out)
}

fn figure_tasks(ctx: &Ctx, task: Option<&str>, default: &[TaskKind]) -> Result<Vec<SimulatorSpec>, CliError> {
    match task.or(ctx.file.task.name.as_deref()) {
        Some(t) => Ok(vec![ctx.file.simulator(Some(t))?]),
        None => default
            .iter()
            .map(|k| ctx.file.simulator(Some(k.id())))
            .collect(),
    }
}

const ALL_TASKS: [TaskKind; 3] = [TaskKind::Gaussian, TaskKind::MixtureCategorical, TaskKind::Galton];

fn repro(ctx: &Ctx, a: crate::ReproArgs) -> Result<(), CliError> {
    let exp = &ctx.file.experiment;
    let jobs = a.jobs.or(exp.jobs).unwrap_or(1);
    let flags = TrainFlags {
        steps: a.steps,
        ..TrainFlags::default()
    };
    let base = train_config(ctx, &flags)?;
    let sched = base.schedule;
    let seeds = a.seeds.clone().or_else(|| exp.seeds.clone());
    let objectives = a.objectives.clone().or_else(|| exp.objectives.clone());
    let figure_dir = |name: &str| ctx.out.join("repro").join(name);
    match a.figure {
        Figure::Variance => {
            let specs = figure_tasks(ctx, a.task.as_deref(), &ALL_TASKS)?;
            let n = a.n.or(ctx.file.metrics.n_mc).unwrap_or(DEFAULT_VARIANCE_N);
            let grid = ctx.file.metrics.t_grid.clone().unwrap_or_else(default_t_grid);
            let seed = seeds.as_ref().and_then(|s| s.first().copied()).unwrap_or(0);
            let mut rec = Recorder::new(
                &ctx.out,
                "repro variance",
                json!({"simulators": specs, "n": n, "t_grid": grid, "seed": seed, "schedule": sched}),
                vec![seed],
            );
            for spec in &specs {
                let path = figure_dir("variance").join(format!("variance_{}.csv", spec.kind()));
                write_variance(ctx, spec, None, &grid, n, seed, &path, &mut rec)?;
                let title = format!("Regression target variance ({})", spec.kind());
                svg(&path, "t", &["var_dsm", "var_ltsm", "var_mix"], true, true, &title, &mut rec)?;
            }
            rec.finish()?;
        }
        Figure::ScoreError => {
            let seeds = seeds.unwrap_or_else(|| (0..5).collect());
            let objectives = objectives.unwrap_or_else(|| vec!["dsm".into(), "ltsm".into(), "mix-learned".into()]);
            let budget = ctx.file.train.dataset_size.unwrap_or(DEFAULT_DATASET_SIZE);
            let mut cells = vec![];
            for &seed in &seeds {
                for o in &objectives {
                    cells.push(Cell {
                        spec: SimulatorSpec::gaussian(),
                        budget,
                        objective: Objective::parse(o)?,
                        seed,
                    });
                }
            }
            let xs = default_gaussian_points();
            let grid = score_grid(ctx, None, None);
            let res = score_error_experiment(&cells, &base, &xs, &grid, jobs)?;
            let rows: Vec<_> = res.into_iter().map(|(r, _)| r).collect();
            let dir = figure_dir("score-error");
            let path = dir.join("score_error.csv");
            let mut rec = Recorder::new(
                &ctx.out,
                "repro score-error",
                json!({"train": base, "budget": budget, "objectives": objectives, "x": xs, "grid_t": grid.n_t, "grid_theta": grid.n_theta}),
                seeds.clone(),
            );
            save(&path, &score_error_rows_to_csv(&rows))?;
            rec.add(&path)?;
            let mut cols: Vec<&str> = vec!["seed"];
            cols.extend(objectives.iter().map(String::as_str));
            let mut wide = CsvTable::new(&cols);
            for &seed in &seeds {
                let mut f = vec![seed.to_string()];
                for o in &objectives {
                    let id = Objective::parse(o)?.id().to_string();
                    let r = rows.iter().find(|r| r.seed == seed && r.objective == id).expect("cell");
                    f.push(fmt_sig17(r.l1_error));
                }
                wide.push(&f);
            }
            let wpath = dir.join("score_error_by_seed.csv");
            save(&wpath, wide.as_str())?;
            rec.add(&wpath)?;
            let ys: Vec<&str> = objectives.iter().map(String::as_str).collect();
            svg(&wpath, "seed", &ys, false, true, "Gaussian l1 score error", &mut rec)?;
            rec.finish()?;
        }
        Figure::MmdBudget => {
            let specs = figure_tasks(ctx, a.task.as_deref(), &ALL_TASKS)?;
            let seeds = seeds.unwrap_or_else(|| (0..3).collect());
            let objectives = objectives.unwrap_or_else(|| vec!["dsm".into(), "mix-learned".into()]);
            let budgets = a
                .budgets
                .clone()
                .or_else(|| exp.budgets.clone())
                .unwrap_or_else(|| DEFAULT_BUDGETS.to_vec());
            let mut cells = vec![];
            for spec in &specs {
                for &budget in &budgets {
                    for o in &objectives {
                        for &seed in &seeds {
                            cells.push(Cell {
                                spec: spec.clone(),
                                budget,
                                objective: Objective::parse(o)?,
                                seed,
                            });
                        }
                    }
                }
            }
            let eval = eval_config(ctx, None, None, None);
            let registry = BandwidthRegistry::new();
            let given = exp.observations.clone();
            // bandwidths are fixed before any cell runs, so concurrent cells share them
            let mut obs: BTreeMap<String, Vec<Observation>> = BTreeMap::new();
            for spec in &specs {
                let xs = observations(spec, given.as_ref())?;
                for x in &xs {
                    registry.get_or_compute(spec, x)?;
                }
                obs.insert(spec.kind().id().to_string(), xs);
            }
            let rows = mmd_budget_experiment(
                &cells,
                &base,
                &eval,
                |s| obs[s.kind().id()].clone(),
                &registry,
                jobs,
            )?;
            let dir = figure_dir("mmd-budget");
            let mut rec = Recorder::new(
                &ctx.out,
                "repro mmd-budget",
                json!({
                    "simulators": specs, "train": base, "budgets": budgets, "objectives": objectives,
                    "observations": obs.iter().map(|(k, v)| (k.clone(), v.iter().map(|x| x.to_string()).collect::<Vec<_>>())).collect::<BTreeMap<_, _>>(),
                    "n_reference": eval.n_reference, "n_model": eval.n_model, "reverse_steps": eval.reverse_steps,
                }),
                seeds.clone(),
            );
            let path = dir.join("mmd_budget.csv");
            save(&path, &mmd_rows_to_csv(&rows))?;
            rec.add(&path)?;
            let mut bw = CsvTable::new(&["task", "x_star", "bandwidth"]);
            for (t, x, s) in registry.entries() {
                bw.push(&[t, x, fmt_sig17(s)]);
            }
            let bpath = dir.join("bandwidths.csv");
            save(&bpath, bw.as_str())?;
            rec.add(&bpath)?;
            let ids: Vec<String> = objectives
                .iter()
                .map(|o| Objective::parse(o).map(|o| o.id().to_string()))
                .collect::<Result<_, _>>()?;
            for spec in &specs {
                let mut cols = vec!["budget"];
                cols.extend(ids.iter().map(String::as_str));
                let mut t = CsvTable::new(&cols);
                for &b in &budgets {
                    let means = mean_mmd_by_objective(&rows, spec.kind(), b);
                    let mut f = vec![b.to_string()];
                    f.extend(ids.iter().map(|o| fmt_sig17(means[o])));
                    t.push(&f);
                }
                let p = dir.join(format!("mmd_budget_{}.csv", spec.kind()));
                save(&p, t.as_str())?;
                rec.add(&p)?;
                let ys: Vec<&str> = ids.iter().map(String::as_str).collect();
                svg(&p, "budget", &ys, true, false, &format!("MMD vs simulation budget ({})", spec.kind()), &mut rec)?;
            }
            rec.finish()?;
        }
        Figure::Weights => {
            let specs = figure_tasks(ctx, a.task.as_deref(), &[TaskKind::Gaussian])?;
            let seeds = seeds.unwrap_or_else(|| vec![0]);
            let n = a.n.or(ctx.file.metrics.n_mc).unwrap_or(DEFAULT_VARIANCE_N);
            let budget = ctx.file.train.dataset_size.unwrap_or(DEFAULT_DATASET_SIZE);
            let mut cells = vec![];
            for spec in &specs {
                for &seed in &seeds {
                    cells.push(Cell {
                        spec: spec.clone(),
                        budget,
                        objective: Objective::MixLearned,
                        seed,
                    });
                }
            }
            let tables = ltsm::experiment::run_cells(&cells, jobs, |c| {
                let m = c.fit(&base)?;
                let ws = m.weights.as_ref().expect("learned mixture has a weight schedule");
                compare_weights(ws, &c.spec, DEFAULT_WEIGHT_GRID, n, &sched, c.seed)
            })?;
            let dir = figure_dir("weights");
            let mut rec = Recorder::new(
                &ctx.out,
                "repro weights",
                json!({"simulators": specs, "train": base, "budget": budget, "n": n, "grid_points": DEFAULT_WEIGHT_GRID}),
                seeds.clone(),
            );
            for (c, table) in cells.iter().zip(&tables) {
                let p = dir.join(format!("weights_{}_s{}.csv", c.spec.kind(), c.seed));
                save(&p, &table.to_csv())?;
                rec.add(&p)?;
                let title = format!("Learned vs optimal weight ({}, seed {})", c.spec.kind(), c.seed);
                svg(&p, "t", &["w_learned", "w_star"], false, false, &title, &mut rec)?;
            }
            rec.finish()?;
        }
    }
    Ok(())
}
