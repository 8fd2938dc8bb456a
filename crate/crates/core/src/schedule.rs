//! Noise schedules and the elementary forward/reverse diffusion transitions.
//!
//! Timesteps run over `0..=T`; index 0 is the clean sample, with
//! `alpha_bar[0] = 1`.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_same_len, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Linear,
    Cosine,
}

/// Default terminal threshold on `alpha_bar[T]`.
pub const DEFAULT_TERMINAL_THRESHOLD: f64 = 1e-5;

/// `beta_1..beta_T` with the derived cumulative products and posterior variances.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    beta: Vec<f64>,
    alpha_bar: Vec<f64>,
    posterior_var: Vec<f64>,
    terminal_warning: bool,
}

impl NoiseSchedule {
    /// Builds a schedule. Linear interpolates `beta` evenly from `beta_min` to
    /// `beta_max`; cosine follows the squared-cosine `alpha_bar` curve with its
    /// betas clipped into `[beta_min, beta_max]`.
    pub fn new(kind: ScheduleKind, steps: usize, beta_min: f64, beta_max: f64) -> Result<Self> {
        Self::with_threshold(kind, steps, beta_min, beta_max, DEFAULT_TERMINAL_THRESHOLD)
    }

    pub fn with_threshold(
        kind: ScheduleKind,
        steps: usize,
        beta_min: f64,
        beta_max: f64,
        terminal_threshold: f64,
    ) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Invalid("schedule needs at least one step".into()));
        }
        if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
            return Err(Error::Invalid(format!(
                "need 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]"
            )));
        }
        let beta: Vec<f64> = match kind {
            ScheduleKind::Linear => (0..steps)
                .map(|i| {
                    if steps == 1 {
                        beta_min
                    } else {
                        beta_min + (beta_max - beta_min) * i as f64 / (steps - 1) as f64
                    }
                })
                .collect(),
            ScheduleKind::Cosine => {
                let s = 0.008;
                let f = |t: f64| {
                    ((t / steps as f64 + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2)
                        .cos()
                        .powi(2)
                };
                (1..=steps)
                    .map(|t| {
                        let b = 1.0 - f(t as f64) / f(t as f64 - 1.0);
                        b.clamp(beta_min, beta_max)
                    })
                    .collect()
            }
        };
        Self::from_betas_with_threshold(kind, beta, terminal_threshold)
    }

    /// Builds a schedule from explicit betas.
    pub fn from_betas(beta: Vec<f64>) -> Result<Self> {
        Self::from_betas_with_threshold(ScheduleKind::Linear, beta, DEFAULT_TERMINAL_THRESHOLD)
    }

    fn from_betas_with_threshold(
        kind: ScheduleKind,
        beta: Vec<f64>,
        threshold: f64,
    ) -> Result<Self> {
        if beta.is_empty() {
            return Err(Error::Invalid("schedule needs at least one step".into()));
        }
        if let Some(b) = beta.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::Invalid(format!("beta {b} outside (0, 1)")));
        }
        let mut alpha_bar = Vec::with_capacity(beta.len() + 1);
        alpha_bar.push(1.0);
        for b in &beta {
            let prev = *alpha_bar.last().unwrap();
            alpha_bar.push(prev * (1.0 - b));
        }
        let mut posterior_var = vec![0.0; beta.len() + 1];
        for t in 1..=beta.len() {
            posterior_var[t] = beta[t - 1] * (1.0 - alpha_bar[t - 1]) / (1.0 - alpha_bar[t]);
        }
        let terminal_warning = *alpha_bar.last().unwrap() > threshold;
        Ok(NoiseSchedule {
            kind,
            beta,
            alpha_bar,
            posterior_var,
            terminal_warning,
        })
    }

    /// The desk-scale default: linear, `T = 200`, `beta` in `[1e-4, 0.05]`.
    pub fn default_linear() -> Self {
        Self::new(ScheduleKind::Linear, 200, 1e-4, 0.05).expect("valid defaults")
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    /// Number of diffusion steps `T`.
    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    /// `beta_t` for `1 <= t <= T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    /// `beta_t (1 - alpha_bar[t-1]) / (1 - alpha_bar[t])`; zero at `t = 0, 1`.
    pub fn posterior_var(&self, t: usize) -> f64 {
        self.posterior_var[t]
    }

    /// Set when `alpha_bar[T]` stays above the terminal threshold, i.e. `x_T`
    /// is not close to a standard normal.
    pub fn terminal_warning(&self) -> bool {
        self.terminal_warning
    }

    pub(crate) fn check_t(&self, t: usize) -> Result<()> {
        if t > self.steps() {
            Err(Error::Invalid(format!(
                "timestep {t} outside 0..={}",
                self.steps()
            )))
        } else {
            Ok(())
        }
    }
}

/// A noisy sample together with its noise level.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionState {
    pub x: Vec<f64>,
    pub t: usize,
}

/// `sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps`.
pub fn forward_diffuse(
    x0: &[f64],
    t: usize,
    eps: &[f64],
    sched: &NoiseSchedule,
) -> Result<Vec<f64>> {
    ensure_same_len("forward_diffuse x0/eps", x0.len(), eps.len())?;
    sched.check_t(t)?;
    let ab = sched.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0.iter().zip(eps).map(|(x, e)| a * x + b * e).collect())
}

/// Posterior-mean estimate of the clean sample:
/// `(x_t - sqrt(1 - alpha_bar_t) eps) / sqrt(alpha_bar_t)`.
pub fn estimate_x0(
    x_t: &[f64],
    t: usize,
    eps_pred: &[f64],
    sched: &NoiseSchedule,
) -> Result<Vec<f64>> {
    ensure_same_len("estimate_x0 x_t/eps", x_t.len(), eps_pred.len())?;
    sched.check_t(t)?;
    let ab = sched.alpha_bar(t);
    if ab <= 0.0 {
        return Err(Error::Invalid(format!(
            "alpha_bar[{t}] = 0; x0 is not identifiable"
        )));
    }
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x_t
        .iter()
        .zip(eps_pred)
        .map(|(x, e)| (x - b * e) / a)
        .collect())
}

/// Mean of the learned reverse transition out of `t`:
/// `(x - beta_t / sqrt(1 - alpha_bar_t) eps) / sqrt(1 - beta_t)`.
pub fn reverse_mean(
    x: &[f64],
    t: usize,
    eps_pred: &[f64],
    sched: &NoiseSchedule,
) -> Result<Vec<f64>> {
    ensure_same_len("reverse_mean x/eps", x.len(), eps_pred.len())?;
    if t == 0 || t > sched.steps() {
        return Err(Error::Invalid(format!("reverse step from t = {t}")));
    }
    let beta = sched.beta(t);
    let c = beta / (1.0 - sched.alpha_bar(t)).sqrt();
    let s = (1.0 - beta).sqrt();
    Ok(x.iter()
        .zip(eps_pred)
        .map(|(x, e)| (x - c * e) / s)
        .collect())
}

/// One ancestral DDPM step from `t_next` to `t_next - 1`. The step into
/// `t = 0` adds no noise.
pub fn ddpm_reverse_step(
    x_next: &[f64],
    t_next: usize,
    eps_pred: &[f64],
    sched: &NoiseSchedule,
    noise: &[f64],
) -> Result<Vec<f64>> {
    ensure_same_len("ddpm_reverse_step x/noise", x_next.len(), noise.len())?;
    let mut mean = reverse_mean(x_next, t_next, eps_pred, sched)?;
    if t_next > 1 {
        let sd = sched.posterior_var(t_next).sqrt();
        mean.iter_mut().zip(noise).for_each(|(m, z)| *m += sd * z);
    }
    Ok(mean)
}

/// Deterministic (eta = 0) DDIM transition from `t_next` down to `t_target`.
pub fn ddim_step(
    x_next: &[f64],
    t_next: usize,
    t_target: usize,
    eps_pred: &[f64],
    sched: &NoiseSchedule,
) -> Result<Vec<f64>> {
    if t_target >= t_next {
        return Err(Error::Invalid(format!(
            "DDIM target {t_target} must be below the current step {t_next}"
        )));
    }
    sched.check_t(t_next)?;
    let x0 = estimate_x0(x_next, t_next, eps_pred, sched)?;
    let ab = sched.alpha_bar(t_target);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0
        .iter()
        .zip(eps_pred)
        .map(|(x, e)| a * x + b * e)
        .collect())
}

/// Descending DDIM timesteps `T = t_0 > t_1 > ... > t_S = 0`, evenly spaced
/// in `t` (rounded). Returns every step when `steps >= T`.
pub fn ddim_timesteps(total: usize, steps: usize) -> Result<Vec<usize>> {
    if steps == 0 {
        return Err(Error::Invalid("DDIM needs at least one step".into()));
    }
    let steps = steps.min(total);
    let mut ts: Vec<usize> = (0..=steps)
        .rev()
        .map(|i| ((i as f64) * total as f64 / steps as f64).round() as usize)
        .collect();
    ts.dedup();
    Ok(ts)
}
