//! Regression targets for score matching and the variance-optimal mixture weight.
//!
//! Every target here is an unbiased estimator of the diffused conditional score
//! `grad log p_t(theta_t | x)`; they differ only in variance.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, tag};
use crate::sde::{DiffusionTime, NoiseSchedule};
use crate::simulators::{
    gaussian_clean_posterior_score, joint_score, posterior_joint_draws, simulate, JointDraw,
    Latent, Observation, SimulatorSpec,
};

/// Below this magnitude the optimal-weight denominator is treated as zero.
pub const DEGENERATE_DENOMINATOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TargetKind {
    Dsm,
    Tsm,
    Ltsm,
    Mix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTarget {
    pub value: Vec<f64>,
    pub kind: TargetKind,
    pub t: DiffusionTime,
}

/// `grad log p_t(theta_t | theta_0) = (alpha theta_0 - theta_t) / (1 - alpha^2)`.
pub fn dsm_target(
    theta0: &[f64],
    theta_t: &[f64],
    t: DiffusionTime,
    sched: &NoiseSchedule,
) -> Result<RegressionTarget> {
    if theta0.len() != theta_t.len() {
        return Err(Error::Argument(format!(
            "theta_0 has dimension {}, theta_t {}",
            theta0.len(),
            theta_t.len()
        )));
    }
    let a = sched.alpha_at(t);
    let var = sched.variance_at(t);
    let value = theta0
        .iter()
        .zip(theta_t)
        .map(|(&x0, &xt)| (a * x0 - xt) / var)
        .collect();
    Ok(RegressionTarget {
        value,
        kind: TargetKind::Dsm,
        t,
    })
}

/// `(1/alpha) grad_theta log p(theta_0, z, x)`.
pub fn ltsm_target(
    theta0: &[f64],
    z: &Latent,
    x: &Observation,
    t: DiffusionTime,
    spec: &SimulatorSpec,
    sched: &NoiseSchedule,
) -> Result<RegressionTarget> {
    let a = sched.alpha_at(t);
    let value = joint_score(spec, theta0, z, x)?
        .into_iter()
        .map(|g| g / a)
        .collect();
    Ok(RegressionTarget {
        value,
        kind: TargetKind::Ltsm,
        t,
    })
}

/// `(1/alpha) grad log p(theta_0 | x)`; only the Gaussian task has a clean score.
pub fn tsm_target(
    spec: &SimulatorSpec,
    theta0: &[f64],
    x: &Observation,
    t: DiffusionTime,
    sched: &NoiseSchedule,
) -> Result<RegressionTarget> {
    let x = match (spec, x) {
        (SimulatorSpec::Gaussian, Observation::Real(x)) => *x,
        _ => {
            return Err(Error::UnsupportedTask {
                task: spec.kind().to_string(),
                what: "target score matching needs a tractable clean posterior score".into(),
            })
        }
    };
    let a = sched.alpha_at(t);
    let value = theta0
        .iter()
        .map(|&th| gaussian_clean_posterior_score(th, x) / a)
        .collect();
    Ok(RegressionTarget {
        value,
        kind: TargetKind::Tsm,
        t,
    })
}

/// `w y_dsm + (1 - w) y_ltsm`.
pub fn mix_target(
    y_dsm: &RegressionTarget,
    y_ltsm: &RegressionTarget,
    w: f64,
) -> Result<RegressionTarget> {
    if y_dsm.t != y_ltsm.t {
        return Err(Error::Argument(format!(
            "mixing targets at different times {} and {}",
            y_dsm.t.get(),
            y_ltsm.t.get()
        )));
    }
    if y_dsm.value.len() != y_ltsm.value.len() {
        return Err(Error::Argument("mixing targets of different dimension".into()));
    }
    let value = y_dsm
        .value
        .iter()
        .zip(&y_ltsm.value)
        .map(|(&d, &l)| w * d + (1.0 - w) * l)
        .collect();
    Ok(RegressionTarget {
        value,
        kind: TargetKind::Mix,
        t: y_dsm.t,
    })
}

/// DSM and LTSM targets evaluated on the same `(theta_0, z, x, theta_t)` draws.
/// Row-major, `n x dim`.
#[derive(Debug, Clone)]
pub struct PairedTargets {
    pub t: DiffusionTime,
    pub dim: usize,
    pub dsm: Vec<f64>,
    pub ltsm: Vec<f64>,
}

impl PairedTargets {
    pub fn len(&self) -> usize {
        self.dsm.len() / self.dim.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.dsm.is_empty()
    }

    pub fn moments(&self) -> TargetMoments {
        let n = self.len() as f64;
        let (mut dd, mut ll, mut dl) = (0.0, 0.0, 0.0);
        for (d, l) in self.dsm.iter().zip(&self.ltsm) {
            dd += d * d;
            ll += l * l;
            dl += d * l;
        }
        TargetMoments {
            dd: dd / n,
            ll: ll / n,
            dl: dl / n,
        }
    }

    /// Mixture target rows for a fixed weight.
    pub fn mix(&self, w: f64) -> Vec<f64> {
        self.dsm
            .iter()
            .zip(&self.ltsm)
            .map(|(d, l)| w * d + (1.0 - w) * l)
            .collect()
    }
}

/// Raw second moments `E|y_D|^2`, `E|y_L|^2`, `E[y_D . y_L]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetMoments {
    pub dd: f64,
    pub ll: f64,
    pub dl: f64,
}

impl TargetMoments {
    /// Minimizer of `E|w y_D + (1-w) y_L|^2`, clipped to `[0, 1]`.
    pub fn optimal_weight(&self) -> f64 {
        let denom = self.dd + self.ll - 2.0 * self.dl;
        if denom.abs() < DEGENERATE_DENOMINATOR {
            return 0.5;
        }
        ((self.ll - self.dl) / denom).clamp(0.0, 1.0)
    }
}

/// Draw `(theta_0, z, x)` either from the joint (`x = None`) or from the
/// posterior given `x`, diffuse `theta_0` to time `t`, and evaluate both targets.
///
/// Stream consumption per sample does not depend on `t`, so the same seed
/// yields the same `(theta_0, z, eps)` at every time.
pub fn sample_paired_targets(
    spec: &SimulatorSpec,
    x: Option<&Observation>,
    t: DiffusionTime,
    n: usize,
    sched: &NoiseSchedule,
    seed: u64,
) -> Result<PairedTargets> {
    if n == 0 {
        return Err(Error::Argument("need at least one draw".into()));
    }
    let dim = spec.theta_dim();
    let mut r = rng::stream(seed, tag::TARGET_MC);
    let conditioned: Option<Vec<JointDraw>> = match x {
        Some(x) => Some(posterior_joint_draws(spec, x, n, seed)?),
        None => None,
    };
    let a = sched.alpha_at(t);
    let sigma = sched.sigma_at(t);
    let mut dsm = Vec::with_capacity(n * dim);
    let mut ltsm = Vec::with_capacity(n * dim);
    for i in 0..n {
        let draw = match &conditioned {
            Some(d) => d[i].clone(),
            None => simulate(spec, &mut r),
        };
        let g = joint_score(spec, &draw.theta, &draw.z, &draw.x)?;
        for (k, &th) in draw.theta.iter().enumerate() {
            let eps: f64 = r.sample(StandardNormal);
            // y_DSM = -eps / sigma for theta_t = a theta_0 + sigma eps
            let theta_t = a * th + sigma * eps;
            dsm.push((a * th - theta_t) / (sigma * sigma));
            ltsm.push(g[k] / a);
        }
    }
    Ok(PairedTargets { t, dim, dsm, ltsm })
}

/// Monte-Carlo estimate of the variance-optimal mixture weight at time `t`.
pub fn optimal_weight_mc(
    spec: &SimulatorSpec,
    x: Option<&Observation>,
    t: DiffusionTime,
    n: usize,
    sched: &NoiseSchedule,
    seed: u64,
) -> Result<f64> {
    if n < 1000 {
        return Err(Error::Argument(format!(
            "optimal weight estimation needs at least 1000 draws, got {n}"
        )));
    }
    Ok(sample_paired_targets(spec, x, t, n, sched, seed)?
        .moments()
        .optimal_weight())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulators::TaskKind;
    use proptest::prelude::*;

    fn time(t: f64) -> DiffusionTime {
        DiffusionTime::new(t).unwrap()
    }

    /// Constant schedule whose alpha(1) equals `a`.
    fn schedule_with_alpha(a: f64) -> NoiseSchedule {
        let b = -2.0 * a.ln();
        NoiseSchedule::new(b, b).unwrap()
    }

    #[test]
    fn dsm_examples() {
        let s = NoiseSchedule::default();
        let t = time(0.2);
        let a = s.alpha_at(t);
        let y = dsm_target(&[1.3], &[a * 1.3], t, &s).unwrap();
        assert_eq!(y.value, vec![0.0]);
        let s = schedule_with_alpha(0.5);
        let y = dsm_target(&[1.0], &[0.0], DiffusionTime::one(), &s).unwrap();
        assert!((y.value[0] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn dsm_equals_scaled_noise() {
        let s = NoiseSchedule::default();
        let t = time(0.05);
        let mut r = rng::stream(1, 1);
        for _ in 0..100 {
            let th: f64 = r.sample(StandardNormal);
            let eps: f64 = r.sample(StandardNormal);
            let st = crate::sde::forward_sample_with_noise(&[th], t, &s, &[eps]);
            let y = dsm_target(&[th], &st.theta_t, t, &s).unwrap();
            let expect = -eps / s.sigma_at(t);
            assert!((y.value[0] - expect).abs() < 1e-9 * expect.abs().max(1.0));
        }
    }

    #[test]
    fn ltsm_examples() {
        let g = SimulatorSpec::gaussian();
        let x = Observation::Real(0.0);
        let flat = NoiseSchedule::new(0.0, 0.0).unwrap();
        let y = ltsm_target(&[1.0], &Latent::Real(0.0), &x, time(0.5), &g, &flat).unwrap();
        assert_eq!(y.value, joint_score(&g, &[1.0], &Latent::Real(0.0), &x).unwrap());
        let s = schedule_with_alpha(0.5);
        let y = ltsm_target(&[1.0], &Latent::Real(0.0), &x, DiffusionTime::one(), &g, &s).unwrap();
        assert!((y.value[0] + 4.0).abs() < 1e-12);
    }

    #[test]
    fn ltsm_propagates_support_errors() {
        let gal = SimulatorSpec::default_for(TaskKind::Galton);
        let e = ltsm_target(
            &[0.0],
            &Latent::Bits(vec![1; 10]),
            &Observation::Bin(10),
            time(0.5),
            &gal,
            &NoiseSchedule::default(),
        );
        assert!(matches!(e, Err(Error::Domain(_))));
    }

    #[test]
    fn tsm_examples() {
        let g = SimulatorSpec::gaussian();
        let flat = NoiseSchedule::new(0.0, 0.0).unwrap();
        let y = tsm_target(&g, &[1.0], &Observation::Real(3.0), time(0.5), &flat).unwrap();
        assert_eq!(y.value, vec![0.0]);
        let y = tsm_target(&g, &[0.0], &Observation::Real(3.0), time(0.5), &flat).unwrap();
        assert!((y.value[0] - 1.5).abs() < 1e-12);
        let gal = SimulatorSpec::default_for(TaskKind::Galton);
        let e = tsm_target(&gal, &[0.0], &Observation::Bin(10), time(0.5), &flat);
        assert!(matches!(e, Err(Error::UnsupportedTask { .. })));
    }

    #[test]
    fn mix_examples() {
        let t = time(0.4);
        let d = RegressionTarget {
            value: vec![2.0 / 3.0],
            kind: TargetKind::Dsm,
            t,
        };
        let l = RegressionTarget {
            value: vec![-4.0],
            kind: TargetKind::Ltsm,
            t,
        };
        assert_eq!(mix_target(&d, &l, 1.0).unwrap().value, d.value);
        assert_eq!(mix_target(&d, &l, 0.0).unwrap().value, l.value);
        assert!((mix_target(&d, &l, 0.5).unwrap().value[0] + 5.0 / 3.0).abs() < 1e-12);
        let l2 = RegressionTarget { t: time(0.5), ..l };
        assert!(matches!(mix_target(&d, &l2, 0.5), Err(Error::Argument(_))));
    }

    #[test]
    fn symmetric_moments_give_half() {
        let m = TargetMoments {
            dd: 3.0,
            ll: 3.0,
            dl: 0.7,
        };
        assert_eq!(m.optimal_weight(), 0.5);
        let degenerate = TargetMoments {
            dd: 1.0,
            ll: 1.0,
            dl: 1.0,
        };
        assert_eq!(degenerate.optimal_weight(), 0.5);
    }

    #[test]
    fn optimal_weight_requires_enough_draws() {
        let e = optimal_weight_mc(
            &SimulatorSpec::gaussian(),
            None,
            time(0.5),
            10,
            &NoiseSchedule::default(),
            0,
        );
        assert!(e.is_err());
    }

    #[test]
    fn gaussian_optimal_weight_trend() {
        let s = NoiseSchedule::default();
        let g = SimulatorSpec::gaussian();
        let lo = optimal_weight_mc(&g, None, time(0.01), 100_000, &s, 1).unwrap();
        let hi = optimal_weight_mc(&g, None, time(0.99), 100_000, &s, 1).unwrap();
        assert!(lo < 0.2, "w*(0.01) = {lo}");
        assert!(hi > 0.8, "w*(0.99) = {hi}");
    }

    #[test]
    fn same_seed_shares_draws_across_time() {
        let s = NoiseSchedule::default();
        let g = SimulatorSpec::default_for(TaskKind::Galton);
        let a = sample_paired_targets(&g, None, time(0.1), 500, &s, 4).unwrap();
        let b = sample_paired_targets(&g, None, time(0.6), 500, &s, 4).unwrap();
        let ratio = s.alpha_at(time(0.1)) / s.alpha_at(time(0.6));
        for (la, lb) in a.ltsm.iter().zip(&b.ltsm) {
            assert!((lb - la * ratio).abs() < 1e-9 * lb.abs().max(1.0));
        }
    }

    proptest! {
        #[test]
        fn mix_is_affine(d in -50.0f64..50.0, l in -50.0f64..50.0, w in -1.0f64..2.0) {
            let t = time(0.3);
            let yd = RegressionTarget { value: vec![d], kind: TargetKind::Dsm, t };
            let yl = RegressionTarget { value: vec![l], kind: TargetKind::Ltsm, t };
            let m = mix_target(&yd, &yl, w).unwrap();
            prop_assert!((m.value[0] - (l + w * (d - l))).abs() <= 1e-12 * (1.0 + d.abs() + l.abs()));
            prop_assert_eq!(m.kind, TargetKind::Mix);
        }
    }
}
