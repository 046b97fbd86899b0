//! Variance-preserving SDE with a linear beta schedule.
//!
//! Forward kernel: `theta_t = alpha(t) theta_0 + sqrt(1 - alpha(t)^2) eps`.
//! Reverse-time sampling uses fixed-step Euler-Maruyama.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// Smallest diffusion time used anywhere. Targets are singular at `t = 0`.
pub const T_MIN: f64 = 1e-3;

/// Default number of reverse integration steps.
pub const DEFAULT_REVERSE_STEPS: usize = 500;

/// Linear schedule `beta(t) = beta_min + (beta_max - beta_min) t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self {
            beta_min: 0.1,
            beta_max: 20.0,
        }
    }
}

impl NoiseSchedule {
    pub fn new(beta_min: f64, beta_max: f64) -> Result<Self> {
        if !(beta_min.is_finite() && beta_max.is_finite()) || beta_min < 0.0 || beta_max < beta_min
        {
            return Err(Error::Argument(format!(
                "schedule requires 0 <= beta_min <= beta_max, got ({beta_min}, {beta_max})"
            )));
        }
        Ok(Self { beta_min, beta_max })
    }

    pub fn beta(&self, t: f64) -> f64 {
        self.beta_min + (self.beta_max - self.beta_min) * t
    }

    /// `int_0^t beta(s) ds`.
    fn integrated_beta(&self, t: f64) -> f64 {
        self.beta_min * t + 0.5 * (self.beta_max - self.beta_min) * t * t
    }

    /// Signal coefficient `alpha(t) = exp(-1/2 int_0^t beta)`, defined on `[0, 1]`.
    pub fn alpha(&self, t: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Domain(format!("diffusion time {t} outside [0, 1]")));
        }
        Ok((-0.5 * self.integrated_beta(t)).exp())
    }

    /// `alpha(t)` for an already validated time.
    pub fn alpha_at(&self, t: DiffusionTime) -> f64 {
        (-0.5 * self.integrated_beta(t.get())).exp()
    }

    /// Marginal noise standard deviation `sqrt(1 - alpha^2)`.
    pub fn sigma_at(&self, t: DiffusionTime) -> f64 {
        // -expm1 keeps precision when alpha^2 is close to one
        (-(-self.integrated_beta(t.get())).exp_m1()).sqrt()
    }

    /// `1 - alpha(t)^2`, computed without cancellation.
    pub fn variance_at(&self, t: DiffusionTime) -> f64 {
        -(-self.integrated_beta(t.get())).exp_m1()
    }
}

/// A diffusion time in `[T_MIN, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct DiffusionTime(f64);

impl DiffusionTime {
    pub fn new(t: f64) -> Result<Self> {
        // tolerate accumulated rounding at the terminal step
        if t.is_finite() && (T_MIN * (1.0 - 1e-12)..=1.0).contains(&t) {
            Ok(Self(t.max(T_MIN)))
        } else {
            Err(Error::Domain(format!(
                "diffusion time {t} outside [{T_MIN}, 1]"
            )))
        }
    }

    pub fn one() -> Self {
        Self(1.0)
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusedState {
    pub theta_t: Vec<f64>,
    pub t: DiffusionTime,
}

/// Exact draw from `N(alpha theta_0, (1 - alpha^2) I)`.
pub fn forward_sample<R: Rng + ?Sized>(
    theta0: &[f64],
    t: DiffusionTime,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> DiffusedState {
    let eps: Vec<f64> = theta0.iter().map(|_| rng.sample(StandardNormal)).collect();
    forward_sample_with_noise(theta0, t, sched, &eps)
}

/// Forward kernel with caller-supplied standard normal noise.
pub fn forward_sample_with_noise(
    theta0: &[f64],
    t: DiffusionTime,
    sched: &NoiseSchedule,
    eps: &[f64],
) -> DiffusedState {
    assert_eq!(theta0.len(), eps.len(), "noise dimension mismatch");
    let alpha = sched.alpha_at(t);
    let sigma = sched.sigma_at(t);
    let theta_t = theta0
        .iter()
        .zip(eps)
        .map(|(&x, &e)| alpha * x + sigma * e)
        .collect();
    DiffusedState { theta_t, t }
}

/// One Euler-Maruyama step of the reverse SDE from `t` to `max(t - dt, T_MIN)`.
pub fn reverse_step<R: Rng + ?Sized>(
    state: &DiffusedState,
    dt: f64,
    score: &[f64],
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<DiffusedState> {
    let eps: Vec<f64> = score.iter().map(|_| rng.sample(StandardNormal)).collect();
    reverse_step_with_noise(state, dt, score, sched, &eps)
}

pub fn reverse_step_with_noise(
    state: &DiffusedState,
    dt: f64,
    score: &[f64],
    sched: &NoiseSchedule,
    eps: &[f64],
) -> Result<DiffusedState> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Argument(format!("step size must be positive, got {dt}")));
    }
    if score.len() != state.theta_t.len() || eps.len() != state.theta_t.len() {
        return Err(Error::Argument(format!(
            "state has dimension {}, score {}, noise {}",
            state.theta_t.len(),
            score.len(),
            eps.len()
        )));
    }
    let t = state.t.get();
    ensure_finite(score, || format!("score at reverse time t={t}"))?;
    // snap to the floor when accumulated rounding lands just above it
    let raw = t - dt;
    let t_next = DiffusionTime(if raw - T_MIN <= 1e-12 { T_MIN } else { raw });
    let dt = t - t_next.get();
    let beta = sched.beta(t);
    let diffusion = (beta * dt).sqrt();
    let theta_t = state
        .theta_t
        .iter()
        .zip(score)
        .zip(eps)
        .map(|((&x, &s), &e)| x + (0.5 * beta * x + beta * s) * dt + diffusion * e)
        .collect();
    Ok(DiffusedState {
        theta_t,
        t: t_next,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    #[test]
    fn alpha_at_zero_is_one() {
        let s = NoiseSchedule::default();
        assert_eq!(s.alpha(0.0).unwrap(), 1.0);
    }

    #[test]
    fn alpha_constant_schedule() {
        // int_0^1 2 ds = 2, alpha = exp(-1)
        let s = NoiseSchedule::new(2.0, 2.0).unwrap();
        assert!((s.alpha(1.0).unwrap() - (-1.0f64).exp()).abs() < 1e-15);
        assert!((s.alpha(1.0).unwrap() - 0.367879).abs() < 1e-6);
    }

    #[test]
    fn alpha_decreasing_default() {
        let s = NoiseSchedule::default();
        assert!(s.alpha(0.5).unwrap() > s.alpha(0.9).unwrap());
    }

    #[test]
    fn alpha_rejects_out_of_range() {
        let s = NoiseSchedule::default();
        assert!(matches!(s.alpha(-0.1), Err(Error::Domain(_))));
        assert!(matches!(s.alpha(1.5), Err(Error::Domain(_))));
        assert!(DiffusionTime::new(0.0).is_err());
        assert!(DiffusionTime::new(T_MIN).is_ok());
    }

    #[test]
    fn sigma_consistent_with_alpha() {
        let s = NoiseSchedule::default();
        for &t in &[T_MIN, 0.01, 0.3, 1.0] {
            let dt = DiffusionTime::new(t).unwrap();
            let a = s.alpha_at(dt);
            assert!((s.sigma_at(dt).powi(2) - (1.0 - a * a)).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_zero_noise_is_scaled_mean() {
        let s = NoiseSchedule::default();
        let t = DiffusionTime::new(0.4).unwrap();
        let st = forward_sample_with_noise(&[1.5, -2.0], t, &s, &[0.0, 0.0]);
        let a = s.alpha_at(t);
        assert_eq!(st.theta_t, vec![a * 1.5, a * -2.0]);
    }

    #[test]
    fn forward_moments() {
        // choose t with alpha = 0.5 under a constant schedule: beta t = 2 ln 2
        let s = NoiseSchedule::new(2.0 * 2f64.ln(), 2.0 * 2f64.ln()).unwrap();
        let t = DiffusionTime::one();
        assert!((s.alpha_at(t) - 0.5).abs() < 1e-14);
        let mut r = rng::stream(11, 0);
        let n = 100_000;
        let xs: Vec<f64> = (0..n)
            .map(|_| forward_sample(&[2.0], t, &s, &mut r).theta_t[0])
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se_mean = (0.75f64 / n as f64).sqrt();
        // var of sample variance for a normal: 2 sigma^4 / (n - 1)
        let se_var = (2.0 * 0.75f64 * 0.75 / (n - 1) as f64).sqrt();
        assert!((mean - 1.0).abs() < 3.0 * se_mean, "mean {mean}");
        assert!((var - 0.75).abs() < 3.0 * se_var, "var {var}");
    }

    #[test]
    fn forward_deterministic_for_seed() {
        let s = NoiseSchedule::default();
        let t = DiffusionTime::new(0.2).unwrap();
        let a = forward_sample(&[0.3], t, &s, &mut rng::stream(5, 1));
        let b = forward_sample(&[0.3], t, &s, &mut rng::stream(5, 1));
        assert_eq!(a, b);
    }

    #[test]
    fn reverse_step_frozen_dynamics() {
        let s = NoiseSchedule::new(0.0, 0.0).unwrap();
        let st = DiffusedState {
            theta_t: vec![0.7],
            t: DiffusionTime::new(0.5).unwrap(),
        };
        let next = reverse_step(&st, 0.01, &[3.0], &s, &mut rng::stream(1, 1)).unwrap();
        assert_eq!(next.theta_t, vec![0.7]);
        assert!((next.t.get() - 0.49).abs() < 1e-15);
    }

    #[test]
    fn reverse_step_hand_drift() {
        let s = NoiseSchedule::new(2.0, 2.0).unwrap();
        let st = DiffusedState {
            theta_t: vec![1.0],
            t: DiffusionTime::new(0.5).unwrap(),
        };
        let next = reverse_step_with_noise(&st, 0.01, &[0.0], &s, &[0.0]).unwrap();
        assert!((next.theta_t[0] - 1.01).abs() < 1e-15);
    }

    #[test]
    fn reverse_step_clamps_to_t_min() {
        let s = NoiseSchedule::default();
        let st = DiffusedState {
            theta_t: vec![0.0],
            t: DiffusionTime::new(0.002).unwrap(),
        };
        let next = reverse_step_with_noise(&st, 0.01, &[0.0], &s, &[0.0]).unwrap();
        assert_eq!(next.t.get(), T_MIN);
    }

    #[test]
    fn reverse_step_rejects_non_finite_score() {
        let s = NoiseSchedule::default();
        let st = DiffusedState {
            theta_t: vec![0.0],
            t: DiffusionTime::one(),
        };
        let err = reverse_step_with_noise(&st, 0.01, &[f64::NAN], &s, &[0.0]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
        assert!(err.to_string().contains("t=1"));
    }

    proptest! {
        #[test]
        fn alpha_monotone(a in 0.0f64..1.0, b in 0.0f64..1.0, bmin in 0.0f64..1.0, span in 0.0f64..30.0) {
            let s = NoiseSchedule::new(bmin, bmin + span).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let (alo, ahi) = (s.alpha(lo).unwrap(), s.alpha(hi).unwrap());
            prop_assert!(alo >= ahi);
            prop_assert!(ahi > 0.0 && alo <= 1.0);
        }

        #[test]
        fn zero_noise_reverse_is_euler_drift(x in -5.0f64..5.0, sc in -5.0f64..5.0, t in 0.01f64..1.0, dt in 1e-4f64..0.005) {
            let s = NoiseSchedule::default();
            let st = DiffusedState { theta_t: vec![x], t: DiffusionTime::new(t).unwrap() };
            let next = reverse_step_with_noise(&st, dt, &[sc], &s, &[0.0]).unwrap();
            let b = s.beta(t);
            let h = t - next.t.get();
            prop_assert!((next.theta_t[0] - (x - (-0.5 * b * x - b * sc) * h)).abs() < 1e-12);
        }
    }
}
