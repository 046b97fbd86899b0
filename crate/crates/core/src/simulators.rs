//! Gray-box simulators `p(theta) p(z | theta) p(x | theta, z)` with analytic joint scores.
//!
//! All three tasks share a standard normal prior on a scalar `theta`, carried
//! as a length-one vector so downstream code stays dimension-generic.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, tag};
use crate::sde::{DiffusionTime, NoiseSchedule};

/// Seed used to draw the default categorical emission tables.
pub const DEFAULT_PHI_SEED: u64 = 0;
pub const DEFAULT_NUM_CLASSES: usize = 10;
pub const DEFAULT_GALTON_ROWS: usize = 10;
pub const DEFAULT_GALTON_NAILS: usize = 21;

/// Simulator calls allowed before an observation is declared unreachable.
pub const REJECTION_DRAW_BUDGET: u64 = 100_000_000;
/// Minimum acceptance rate, checked every `REJECTION_PROBE_DRAWS` draws.
pub const REJECTION_RATE_FLOOR: f64 = 1e-6;
const REJECTION_PROBE_DRAWS: u64 = 10_000_000;

pub fn logistic(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Gaussian,
    MixtureCategorical,
    Galton,
}

impl TaskKind {
    pub fn id(self) -> &'static str {
        match self {
            TaskKind::Gaussian => "gaussian",
            TaskKind::MixtureCategorical => "mixture-categorical",
            TaskKind::Galton => "galton",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(TaskKind::Gaussian),
            "mixture-categorical" | "mixture" => Ok(TaskKind::MixtureCategorical),
            "galton" => Ok(TaskKind::Galton),
            other => Err(Error::Argument(format!("unknown task `{other}`"))),
        }
    }
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.id())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "sim", rename_all = "kebab-case")]
pub enum SimulatorSpec {
    /// `theta ~ N(0,1)`, `z | theta ~ N(theta,1)`, `x | z ~ N(z,1)`.
    Gaussian,
    /// `z | theta ~ Bernoulli(sigmoid(theta))`, `x | z ~ Categorical(phi_z)`.
    MixtureCategorical { phi0: Vec<f64>, phi1: Vec<f64> },
    /// `rows` Bernoulli(sigmoid(theta)) bounces; `x = init_pos + sum(2 z_i - 1)`.
    Galton { rows: usize, num_nails: usize },
}

impl SimulatorSpec {
    pub fn gaussian() -> Self {
        SimulatorSpec::Gaussian
    }

    /// Categorical tables from softmaxed standard normal logits.
    pub fn mixture_categorical(num_classes: usize, phi_seed: u64) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Argument("need at least two classes".into()));
        }
        let mut r = rng::stream(phi_seed, 0);
        let mut table = || -> Vec<f64> {
            let logits: Vec<f64> = (0..num_classes)
                .map(|_| r.sample::<f64, _>(StandardNormal))
                .collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let s: f64 = e.iter().sum();
            e.into_iter().map(|v| v / s).collect()
        };
        let phi0 = table();
        let phi1 = table();
        Ok(SimulatorSpec::MixtureCategorical { phi0, phi1 })
    }

    pub fn galton(rows: usize, num_nails: usize) -> Result<Self> {
        let spec = SimulatorSpec::Galton { rows, num_nails };
        spec.validate()?;
        Ok(spec)
    }

    /// The default instance of a task.
    pub fn default_for(kind: TaskKind) -> Self {
        match kind {
            TaskKind::Gaussian => SimulatorSpec::Gaussian,
            TaskKind::MixtureCategorical => {
                Self::mixture_categorical(DEFAULT_NUM_CLASSES, DEFAULT_PHI_SEED)
                    .expect("default class count is valid")
            }
            TaskKind::Galton => SimulatorSpec::Galton {
                rows: DEFAULT_GALTON_ROWS,
                num_nails: DEFAULT_GALTON_NAILS,
            },
        }
    }

    pub fn kind(&self) -> TaskKind {
        match self {
            SimulatorSpec::Gaussian => TaskKind::Gaussian,
            SimulatorSpec::MixtureCategorical { .. } => TaskKind::MixtureCategorical,
            SimulatorSpec::Galton { .. } => TaskKind::Galton,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SimulatorSpec::Gaussian => Ok(()),
            SimulatorSpec::MixtureCategorical { phi0, phi1 } => {
                if phi0.len() != phi1.len() || phi0.len() < 2 {
                    return Err(Error::Argument(format!(
                        "categorical tables must share a length >= 2, got {} and {}",
                        phi0.len(),
                        phi1.len()
                    )));
                }
                for phi in [phi0, phi1] {
                    let sum: f64 = phi.iter().sum();
                    if phi.iter().any(|p| !(p.is_finite() && *p >= 0.0)) || (sum - 1.0).abs() > 1e-12
                    {
                        return Err(Error::Argument(
                            "categorical table is not on the simplex".into(),
                        ));
                    }
                }
                Ok(())
            }
            SimulatorSpec::Galton { rows, num_nails } => {
                if *rows == 0 || *rows > num_nails / 2 {
                    return Err(Error::Argument(format!(
                        "galton board needs 1 <= rows <= floor(num_nails/2), got rows={rows} num_nails={num_nails}"
                    )));
                }
                Ok(())
            }
        }
    }

    pub fn theta_dim(&self) -> usize {
        1
    }

    /// Number of scalar latent coordinates.
    pub fn latent_dim(&self) -> usize {
        match self {
            SimulatorSpec::Galton { rows, .. } => *rows,
            _ => 1,
        }
    }

    pub fn num_classes(&self) -> Option<usize> {
        match self {
            SimulatorSpec::Gaussian => None,
            SimulatorSpec::MixtureCategorical { phi0, .. } => Some(phi0.len()),
            SimulatorSpec::Galton { num_nails, .. } => Some(*num_nails),
        }
    }

    pub fn init_pos(&self) -> Option<usize> {
        match self {
            SimulatorSpec::Galton { num_nails, .. } => Some(num_nails / 2),
            _ => None,
        }
    }

    /// Canonical parameter JSON (sorted keys) used in file headers.
    pub fn params_json(&self) -> String {
        let v = match self {
            SimulatorSpec::Gaussian => serde_json::json!({}),
            SimulatorSpec::MixtureCategorical { phi0, phi1 } => {
                serde_json::json!({ "phi0": phi0, "phi1": phi1 })
            }
            SimulatorSpec::Galton { rows, num_nails } => {
                serde_json::json!({ "num_nails": num_nails, "rows": rows })
            }
        };
        v.to_string()
    }

    pub fn from_params_json(kind: TaskKind, params: &str) -> Result<Self> {
        let v: serde_json::Value = serde_json::from_str(params)?;
        let floats = |key: &str| -> Result<Vec<f64>> {
            v.get(key)
                .and_then(|a| a.as_array())
                .ok_or_else(|| Error::Format(format!("missing `{key}` in simulator params")))?
                .iter()
                .map(|x| {
                    x.as_f64()
                        .ok_or_else(|| Error::Format(format!("non-numeric entry in `{key}`")))
                })
                .collect()
        };
        let count = |key: &str| -> Result<usize> {
            v.get(key)
                .and_then(|a| a.as_u64())
                .map(|n| n as usize)
                .ok_or_else(|| Error::Format(format!("missing `{key}` in simulator params")))
        };
        let spec = match kind {
            TaskKind::Gaussian => SimulatorSpec::Gaussian,
            TaskKind::MixtureCategorical => SimulatorSpec::MixtureCategorical {
                phi0: floats("phi0")?,
                phi1: floats("phi1")?,
            },
            TaskKind::Galton => SimulatorSpec::Galton {
                rows: count("rows")?,
                num_nails: count("num_nails")?,
            },
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Whether `x` has positive probability under this simulator.
    pub fn check_observation(&self, x: &Observation) -> Result<()> {
        match (self, x) {
            (SimulatorSpec::Gaussian, Observation::Real(v)) if v.is_finite() => Ok(()),
            (SimulatorSpec::MixtureCategorical { phi0, phi1 }, Observation::Class(k)) => {
                if *k < phi0.len() && (phi0[*k] > 0.0 || phi1[*k] > 0.0) {
                    Ok(())
                } else {
                    Err(Error::Domain(format!("class {k} has zero probability")))
                }
            }
            (SimulatorSpec::Galton { rows, num_nails }, Observation::Bin(b)) => {
                let init = (num_nails / 2) as i64;
                let offset = *b as i64 - init + *rows as i64;
                if offset < 0 || offset > 2 * *rows as i64 || offset % 2 != 0 {
                    Err(Error::Domain(format!(
                        "bin {b} unreachable with {rows} rows from position {init}"
                    )))
                } else {
                    Ok(())
                }
            }
            (spec, x) => Err(Error::Domain(format!(
                "observation {x} does not match task {}",
                spec.kind()
            ))),
        }
    }

    /// Parse an observation from text in the task's native type.
    pub fn parse_observation(&self, s: &str) -> Result<Observation> {
        let s = s.trim();
        let x = match self {
            SimulatorSpec::Gaussian => Observation::Real(
                s.parse()
                    .map_err(|_| Error::Argument(format!("bad real observation `{s}`")))?,
            ),
            SimulatorSpec::MixtureCategorical { .. } => Observation::Class(
                s.parse()
                    .map_err(|_| Error::Argument(format!("bad class observation `{s}`")))?,
            ),
            SimulatorSpec::Galton { .. } => Observation::Bin(
                s.parse()
                    .map_err(|_| Error::Argument(format!("bad bin observation `{s}`")))?,
            ),
        };
        self.check_observation(&x)?;
        Ok(x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Latent {
    Real(f64),
    Bit(u8),
    Bits(Vec<u8>),
}

impl Latent {
    /// Latent coordinates as floats, in CSV column order.
    pub fn to_f64s(&self) -> Vec<f64> {
        match self {
            Latent::Real(v) => vec![*v],
            Latent::Bit(b) => vec![*b as f64],
            Latent::Bits(bs) => bs.iter().map(|b| *b as f64).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Observation {
    Real(f64),
    Class(usize),
    Bin(usize),
}

impl std::fmt::Display for Observation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Observation::Real(v) => write!(f, "{v}"),
            Observation::Class(k) | Observation::Bin(k) => write!(f, "{k}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointDraw {
    pub theta: Vec<f64>,
    pub z: Latent,
    pub x: Observation,
    pub sim: TaskKind,
}

fn bernoulli<R: Rng + ?Sized>(p: f64, rng: &mut R) -> u8 {
    (rng.random::<f64>() < p) as u8
}

/// One ancestral draw.
pub fn simulate<R: Rng + ?Sized>(spec: &SimulatorSpec, rng: &mut R) -> JointDraw {
    let theta: f64 = rng.sample(StandardNormal);
    match spec {
        SimulatorSpec::Gaussian => {
            let z = theta + rng.sample::<f64, _>(StandardNormal);
            let x = z + rng.sample::<f64, _>(StandardNormal);
            JointDraw {
                theta: vec![theta],
                z: Latent::Real(z),
                x: Observation::Real(x),
                sim: TaskKind::Gaussian,
            }
        }
        SimulatorSpec::MixtureCategorical { phi0, phi1 } => {
            let z = bernoulli(logistic(theta), rng);
            let phi = if z == 1 { phi1 } else { phi0 };
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut class = phi.len() - 1;
            for (k, p) in phi.iter().enumerate() {
                acc += p;
                if u < acc {
                    class = k;
                    break;
                }
            }
            // never land on a zero-probability class through rounding at the top
            while phi[class] == 0.0 && class > 0 {
                class -= 1;
            }
            JointDraw {
                theta: vec![theta],
                z: Latent::Bit(z),
                x: Observation::Class(class),
                sim: TaskKind::MixtureCategorical,
            }
        }
        SimulatorSpec::Galton { rows, .. } => {
            let p = logistic(theta);
            let z: Vec<u8> = (0..*rows).map(|_| bernoulli(p, rng)).collect();
            let x = galton_readout(spec, &z);
            JointDraw {
                theta: vec![theta],
                z: Latent::Bits(z),
                x: Observation::Bin(x),
                sim: TaskKind::Galton,
            }
        }
    }
}

/// `init_pos + sum_i (2 z_i - 1)`.
pub fn galton_readout(spec: &SimulatorSpec, z: &[u8]) -> usize {
    let init = spec.init_pos().expect("galton spec") as i64;
    let steps: i64 = z.iter().map(|&b| 2 * b as i64 - 1).sum();
    (init + steps) as usize
}

fn support_violation(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

/// `grad_theta log p(theta, z, x)`.
pub fn joint_score(
    spec: &SimulatorSpec,
    theta: &[f64],
    z: &Latent,
    x: &Observation,
) -> Result<Vec<f64>> {
    if theta.len() != spec.theta_dim() {
        return Err(Error::Argument(format!(
            "theta has dimension {}, expected {}",
            theta.len(),
            spec.theta_dim()
        )));
    }
    let th = theta[0];
    let g = match (spec, z, x) {
        (SimulatorSpec::Gaussian, Latent::Real(z), Observation::Real(_)) => -th + (z - th),
        (SimulatorSpec::MixtureCategorical { phi0, phi1 }, Latent::Bit(b), Observation::Class(k)) => {
            if *b > 1 || *k >= phi0.len() {
                return Err(support_violation(format!("(z={b}, x={k}) outside support")));
            }
            let phi = if *b == 1 { phi1 } else { phi0 };
            if phi[*k] == 0.0 {
                return Err(support_violation(format!(
                    "class {k} has zero probability under z={b}"
                )));
            }
            -th + (*b as f64 - logistic(th))
        }
        (SimulatorSpec::Galton { rows, .. }, Latent::Bits(bits), Observation::Bin(bin)) => {
            if bits.len() != *rows || bits.iter().any(|&b| b > 1) {
                return Err(support_violation(format!(
                    "latent path must be {rows} bits"
                )));
            }
            if galton_readout(spec, bits) != *bin {
                return Err(support_violation(format!(
                    "path does not end in bin {bin}"
                )));
            }
            let s = logistic(th);
            -th + bits.iter().map(|&b| b as f64 - s).sum::<f64>()
        }
        _ => {
            return Err(support_violation(format!(
                "latent/observation types do not match task {}",
                spec.kind()
            )))
        }
    };
    Ok(vec![g])
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub draws: Vec<JointDraw>,
    pub spec: SimulatorSpec,
    pub seed: u64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }
}

pub fn generate_dataset(spec: &SimulatorSpec, m: usize, seed: u64) -> Result<Dataset> {
    if m == 0 {
        return Err(Error::Argument("dataset size must be at least 1".into()));
    }
    spec.validate()?;
    let mut r = rng::stream(seed, tag::DATASET);
    let draws = (0..m).map(|_| simulate(spec, &mut r)).collect();
    Ok(Dataset {
        draws,
        spec: spec.clone(),
        seed,
    })
}

/// Draws from `p(theta, z | x_star)`.
///
/// Gaussian: exact conjugate draws. Discrete tasks: rejection over simulator
/// draws, keeping those whose observation equals `x_star`.
pub fn posterior_joint_draws(
    spec: &SimulatorSpec,
    x_star: &Observation,
    n: usize,
    seed: u64,
) -> Result<Vec<JointDraw>> {
    posterior_joint_draws_tagged(spec, x_star, n, seed, tag::REFERENCE)
}

fn posterior_joint_draws_tagged(
    spec: &SimulatorSpec,
    x_star: &Observation,
    n: usize,
    seed: u64,
    stream_tag: u64,
) -> Result<Vec<JointDraw>> {
    spec.validate()?;
    spec.check_observation(x_star)?;
    let mut r = rng::stream(seed, stream_tag);
    if let (SimulatorSpec::Gaussian, Observation::Real(x)) = (spec, x_star) {
        let sd = (2.0f64 / 3.0).sqrt();
        return Ok((0..n)
            .map(|_| {
                let theta = x / 3.0 + sd * r.sample::<f64, _>(StandardNormal);
                // z | theta, x ~ N((theta + x)/2, 1/2)
                let z = 0.5 * (theta + x) + 0.5f64.sqrt() * r.sample::<f64, _>(StandardNormal);
                JointDraw {
                    theta: vec![theta],
                    z: Latent::Real(z),
                    x: *x_star,
                    sim: TaskKind::Gaussian,
                }
            })
            .collect());
    }
    let mut kept = Vec::with_capacity(n);
    let mut draws: u64 = 0;
    while kept.len() < n {
        if draws >= REJECTION_DRAW_BUDGET
            || (draws > 0
                && draws.is_multiple_of(REJECTION_PROBE_DRAWS)
                && (kept.len() as f64) < REJECTION_RATE_FLOOR * draws as f64)
        {
            return Err(Error::UnreachableObservation {
                x: x_star.to_string(),
                accepted: kept.len(),
                draws,
            });
        }
        let d = simulate(spec, &mut r);
        draws += 1;
        if d.x == *x_star {
            kept.push(d);
        }
    }
    Ok(kept)
}

/// Reference posterior samples of `theta | x_star`.
pub fn reference_posterior(
    spec: &SimulatorSpec,
    x_star: &Observation,
    n: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    Ok(posterior_joint_draws(spec, x_star, n, seed)?
        .into_iter()
        .map(|d| d.theta)
        .collect())
}

/// Posterior draws on the pilot stream, independent of [`reference_posterior`]
/// for the same seed. Used once per observation to fix the MMD bandwidth.
pub fn pilot_posterior(
    spec: &SimulatorSpec,
    x_star: &Observation,
    n: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    Ok(posterior_joint_draws_tagged(spec, x_star, n, seed, tag::PILOT)?
        .into_iter()
        .map(|d| d.theta)
        .collect())
}

/// `grad log p_t(theta_t | x)` for the Gaussian task.
pub fn gaussian_true_score(theta_t: f64, t: DiffusionTime, x: f64, sched: &NoiseSchedule) -> f64 {
    let a = sched.alpha_at(t);
    (a * x / 3.0 - theta_t) / (1.0 - a * a / 3.0)
}

/// `grad log N(theta_0; x/3, 2/3)`.
pub fn gaussian_clean_posterior_score(theta0: f64, x: f64) -> f64 {
    (x / 3.0 - theta0) / (2.0 / 3.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_simulate_variances() {
        let spec = SimulatorSpec::gaussian();
        let mut r = rng::stream(3, 0);
        let n = 100_000usize;
        let (mut st, mut st2, mut sx, mut sx2) = (0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            let d = simulate(&spec, &mut r);
            let Observation::Real(x) = d.x else { panic!() };
            st += d.theta[0];
            st2 += d.theta[0].powi(2);
            sx += x;
            sx2 += x * x;
        }
        let nf = n as f64;
        let vt = st2 / nf - (st / nf).powi(2);
        let vx = sx2 / nf - (sx / nf).powi(2);
        // se of a normal sample variance: sigma^2 sqrt(2/n)
        assert!((vt - 1.0).abs() < 4.0 * (2.0 / nf).sqrt(), "var theta {vt}");
        assert!((vx - 3.0).abs() < 4.0 * 3.0 * (2.0 / nf).sqrt(), "var x {vx}");
    }

    #[test]
    fn mixture_support() {
        let spec = SimulatorSpec::default_for(TaskKind::MixtureCategorical);
        spec.validate().unwrap();
        let mut r = rng::stream(4, 0);
        for _ in 0..10_000 {
            let d = simulate(&spec, &mut r);
            let Observation::Class(k) = d.x else { panic!() };
            assert!(k < DEFAULT_NUM_CLASSES);
            assert!(matches!(d.z, Latent::Bit(0 | 1)));
        }
    }

    #[test]
    fn galton_readout_hand_example() {
        let spec = SimulatorSpec::galton(4, 21).unwrap();
        assert_eq!(galton_readout(&spec, &[1, 1, 0, 0]), 10);
        assert_eq!(galton_readout(&spec, &[1, 1, 1, 1]), 14);
    }

    #[test]
    fn galton_parity_and_range() {
        let spec = SimulatorSpec::default_for(TaskKind::Galton);
        let init = spec.init_pos().unwrap() as i64;
        let mut r = rng::stream(5, 0);
        for _ in 0..10_000 {
            let d = simulate(&spec, &mut r);
            let Observation::Bin(x) = d.x else { panic!() };
            let off = x as i64 - init + DEFAULT_GALTON_ROWS as i64;
            assert_eq!(off % 2, 0);
            assert!((0..=2 * DEFAULT_GALTON_ROWS as i64).contains(&off));
            spec.check_observation(&d.x).unwrap();
        }
    }

    #[test]
    fn galton_rejects_too_many_rows() {
        assert!(SimulatorSpec::galton(11, 21).is_err());
        assert!(SimulatorSpec::galton(10, 21).is_ok());
    }

    #[test]
    fn joint_score_hand_examples() {
        let g = SimulatorSpec::gaussian();
        let x = Observation::Real(0.3);
        assert_eq!(joint_score(&g, &[0.0], &Latent::Real(0.0), &x).unwrap(), vec![0.0]);
        assert_eq!(joint_score(&g, &[1.0], &Latent::Real(0.0), &x).unwrap(), vec![-2.0]);
        let gal = SimulatorSpec::galton(4, 21).unwrap();
        let s = joint_score(&gal, &[0.0], &Latent::Bits(vec![1, 1, 1, 1]), &Observation::Bin(14))
            .unwrap();
        assert_eq!(s, vec![2.0]);
    }

    #[test]
    fn joint_score_support_violations() {
        let gal = SimulatorSpec::galton(4, 21).unwrap();
        let e = joint_score(&gal, &[0.0], &Latent::Bits(vec![1, 1, 1, 1]), &Observation::Bin(10));
        assert!(matches!(e, Err(Error::Domain(_))));
        let e = joint_score(&gal, &[0.0], &Latent::Bits(vec![1, 1]), &Observation::Bin(10));
        assert!(matches!(e, Err(Error::Domain(_))));
        let mix = SimulatorSpec::MixtureCategorical {
            phi0: vec![1.0, 0.0],
            phi1: vec![0.0, 1.0],
        };
        let e = joint_score(&mix, &[0.0], &Latent::Bit(0), &Observation::Class(1));
        assert!(matches!(e, Err(Error::Domain(_))));
        let e = joint_score(&mix, &[0.0], &Latent::Real(0.0), &Observation::Class(1));
        assert!(matches!(e, Err(Error::Domain(_))));
    }

    #[test]
    fn dataset_determinism_and_errors() {
        let spec = SimulatorSpec::default_for(TaskKind::Galton);
        let a = generate_dataset(&spec, 1000, 9).unwrap();
        let b = generate_dataset(&spec, 1000, 9).unwrap();
        assert_eq!(a.len(), 1000);
        assert_eq!(a, b);
        assert!(matches!(generate_dataset(&spec, 0, 9), Err(Error::Argument(_))));
    }

    #[test]
    fn dataset_seeds_differ() {
        let spec = SimulatorSpec::gaussian();
        for s in 0..100u64 {
            let a = generate_dataset(&spec, 1, 2 * s).unwrap();
            let b = generate_dataset(&spec, 1, 2 * s + 1).unwrap();
            assert_ne!(a.draws[0].theta, b.draws[0].theta);
        }
    }

    #[test]
    fn gaussian_reference_posterior_moments() {
        let spec = SimulatorSpec::gaussian();
        let xs = reference_posterior(&spec, &Observation::Real(3.0), 100_000, 1).unwrap();
        let n = xs.len() as f64;
        let m = xs.iter().map(|v| v[0]).sum::<f64>() / n;
        let v = xs.iter().map(|v| (v[0] - m).powi(2)).sum::<f64>() / (n - 1.0);
        let var = 2.0 / 3.0;
        assert!((m - 1.0).abs() < 4.0 * (var / n).sqrt());
        assert!((v - var).abs() < 4.0 * var * (2.0 / n).sqrt());
    }

    #[test]
    fn galton_reference_hits_target() {
        let spec = SimulatorSpec::default_for(TaskKind::Galton);
        let x = Observation::Bin(12);
        let draws = posterior_joint_draws(&spec, &x, 2000, 3).unwrap();
        assert_eq!(draws.len(), 2000);
        for d in &draws {
            let Latent::Bits(z) = &d.z else { panic!() };
            assert_eq!(galton_readout(&spec, z), 12);
        }
    }

    #[test]
    fn unreachable_observations_fail_fast() {
        let spec = SimulatorSpec::default_for(TaskKind::Galton);
        assert!(reference_posterior(&spec, &Observation::Bin(11), 10, 0).is_err());
        assert!(reference_posterior(&spec, &Observation::Bin(40), 10, 0).is_err());
        let mix = SimulatorSpec::MixtureCategorical {
            phi0: vec![1.0, 0.0, 0.0],
            phi1: vec![0.0, 1.0, 0.0],
        };
        assert!(reference_posterior(&mix, &Observation::Class(2), 10, 0).is_err());
    }

    #[test]
    fn gaussian_score_examples() {
        let s = NoiseSchedule::default();
        let t = DiffusionTime::new(0.3).unwrap();
        let a = s.alpha_at(t);
        assert_eq!(gaussian_true_score(a * 2.0 / 3.0, t, 2.0, &s), 0.0);
        // alpha = 1 when beta vanishes
        let flat = NoiseSchedule::new(0.0, 0.0).unwrap();
        assert!((gaussian_true_score(0.0, t, 3.0, &flat) - 1.5).abs() < 1e-15);
        assert_eq!(gaussian_clean_posterior_score(1.0, 3.0), 0.0);
        assert!((gaussian_clean_posterior_score(0.0, 3.0) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn params_json_roundtrip() {
        for kind in [TaskKind::Gaussian, TaskKind::MixtureCategorical, TaskKind::Galton] {
            let spec = SimulatorSpec::default_for(kind);
            let back = SimulatorSpec::from_params_json(kind, &spec.params_json()).unwrap();
            assert_eq!(spec, back);
        }
    }
}
