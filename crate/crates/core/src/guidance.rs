//! Similarity-guided reverse diffusion.
//!
//! The target of an edit is `q(x_0) r_sim(x_0, x_input)`. Sampling it needs
//! the gradient of `log E[r_sim(x_0, x_input) | x_t]` at every noise level;
//! the strategies here are different tractable stand-ins for that quantity,
//! plus the exact value for mixture priors.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, ensure_same_len, Error, Result};
use crate::schedule::{ddim_step, ddim_timesteps, ddpm_reverse_step, NoiseSchedule};
use crate::score::{gmm_ideal_guidance, EpsModel, GmmDistribution, ScoreModel};
use crate::tensor::{dot, norm};

/// Gaussian similarity kernel `exp(-lambda ||x - y||^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityKernel {
    lambda: f64,
}

impl SimilarityKernel {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Invalid(format!(
                "kernel sharpness must be finite and > 0, got {lambda}"
            )));
        }
        Ok(SimilarityKernel { lambda })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    None,
    Naive,
    ForwardMatch,
    ReverseMatch,
    IdealOracle,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::None,
        Strategy::Naive,
        Strategy::ForwardMatch,
        Strategy::ReverseMatch,
        Strategy::IdealOracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::None => "none",
            Strategy::Naive => "naive",
            Strategy::ForwardMatch => "forward_match",
            Strategy::ReverseMatch => "reverse_match",
            Strategy::IdealOracle => "ideal_oracle",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown guidance strategy '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidanceConfig {
    pub strategy: Strategy,
    pub kernel: SimilarityKernel,
    /// Strength `alpha >= 0`.
    pub strength: f64,
    /// Rescale any gradient whose norm exceeds this value.
    pub clip_norm: Option<f64>,
}

impl GuidanceConfig {
    pub fn new(strategy: Strategy, lambda: f64, strength: f64) -> Result<Self> {
        let cfg = GuidanceConfig {
            strategy,
            kernel: SimilarityKernel::new(lambda)?,
            strength,
            clip_norm: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn none() -> Self {
        GuidanceConfig {
            strategy: Strategy::None,
            kernel: SimilarityKernel { lambda: 1.0 },
            strength: 0.0,
            clip_norm: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        SimilarityKernel::new(self.kernel.lambda)?;
        if !(self.strength >= 0.0 && self.strength.is_finite()) {
            return Err(Error::Invalid(format!(
                "guidance strength must be >= 0, got {}",
                self.strength
            )));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::Invalid(format!("clip norm must be > 0, got {c}")));
            }
        }
        Ok(())
    }

    fn is_active(&self) -> bool {
        self.strategy != Strategy::None && self.strength != 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Sampler {
    Ddpm,
    Ddim { steps: usize },
}

/// Outcome of one guided edit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditResult {
    pub input: Vec<f64>,
    pub edit: Vec<f64>,
    pub seed: u64,
    pub steps_used: usize,
    /// `||g_t||` at each reverse step, after clipping.
    pub guidance_norms: Vec<f64>,
}

pub fn rsim(x: &[f64], y: &[f64], k: SimilarityKernel) -> Result<f64> {
    ensure_same_len("rsim", x.len(), y.len())?;
    let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((-k.lambda * d2).exp())
}

/// `grad_x log r_sim(x, y) = -2 lambda (x - y)`.
pub fn grad_log_rsim(x: &[f64], y: &[f64], k: SimilarityKernel) -> Result<Vec<f64>> {
    ensure_same_len("grad_log_rsim", x.len(), y.len())?;
    Ok(x.iter()
        .zip(y)
        .map(|(a, b)| -2.0 * k.lambda * (a - b))
        .collect())
}

/// Compares the noisy state directly with the clean input.
pub fn guidance_naive(x_t: &[f64], x_input: &[f64], k: SimilarityKernel) -> Result<Vec<f64>> {
    grad_log_rsim(x_t, x_input, k)
}

/// Compares the noisy state with the input scaled to level `t`.
pub fn guidance_forward_match(
    x_t: &[f64],
    x_input: &[f64],
    t: usize,
    sched: &NoiseSchedule,
    k: SimilarityKernel,
) -> Result<Vec<f64>> {
    sched.check_t(t)?;
    let a = sched.alpha_bar(t).sqrt();
    let moved: Vec<f64> = x_input.iter().map(|v| a * v).collect();
    grad_log_rsim(x_t, &moved, k)
}

/// Gradient of `log r_sim(mu_0(x_t), x_input)` through the clean-sample
/// estimate, including the predictor's input Jacobian.
pub fn guidance_reverse_match<M: EpsModel + ?Sized>(
    x_t: &[f64],
    x_input: &[f64],
    t: usize,
    model: &M,
    sched: &NoiseSchedule,
    k: SimilarityKernel,
) -> Result<Vec<f64>> {
    ensure_same_len("reverse_match", x_t.len(), x_input.len())?;
    sched.check_t(t)?;
    let ab = sched.alpha_bar(t);
    if t == 0 || ab <= 0.0 {
        return Err(Error::Invalid(format!(
            "reverse_match needs 0 < alpha_bar_t < 1 (t = {t})"
        )));
    }
    let (_, g) = model.x0_vjp(x_t, t, sched, &mut |mu0: &[f64]| {
        mu0.iter()
            .zip(x_input)
            .map(|(m, y)| -2.0 * k.lambda * (m - y))
            .collect()
    })?;
    ensure_finite("reverse_match gradient", &g)?;
    Ok(g)
}

/// Exact guidance gradient for a mixture prior.
pub fn ideal_guidance_gmm(
    x_t: &[f64],
    x_input: &[f64],
    t: usize,
    gmm: &GmmDistribution,
    sched: &NoiseSchedule,
    k: SimilarityKernel,
) -> Result<Vec<f64>> {
    gmm_ideal_guidance(gmm, x_t, x_input, t, sched, k.lambda)
}

/// Dispatches on `strategy`; `None` yields zeros.
pub fn guidance_gradient(
    strategy: Strategy,
    k: SimilarityKernel,
    model: &ScoreModel,
    x_t: &[f64],
    x_input: &[f64],
    t: usize,
    sched: &NoiseSchedule,
) -> Result<Vec<f64>> {
    match strategy {
        Strategy::None => Ok(vec![0.0; x_t.len()]),
        Strategy::Naive => guidance_naive(x_t, x_input, k),
        Strategy::ForwardMatch => guidance_forward_match(x_t, x_input, t, sched, k),
        Strategy::ReverseMatch => guidance_reverse_match(x_t, x_input, t, model, sched, k),
        Strategy::IdealOracle => match model.as_gmm() {
            Some(g) => ideal_guidance_gmm(x_t, x_input, t, g, sched, k),
            None => Err(Error::Invalid(
                "the ideal oracle needs an analytic mixture model".into(),
            )),
        },
    }
}

/// Angle in radians between two vectors; zero vectors are at angle 0 to
/// each other and `pi / 2` to anything else.
pub fn angular_error(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    match (na == 0.0, nb == 0.0) {
        (true, true) => 0.0,
        (true, false) | (false, true) => std::f64::consts::FRAC_PI_2,
        _ => (dot(a, b) / (na * nb)).clamp(-1.0, 1.0).acos(),
    }
}

/// Per-item seed derived from a run seed, so batches are order-independent.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng.next_u64()
}

/// Runs guided reverse diffusion from `x_T ~ N(0, I)`.
///
/// Guidance enters through the noise prediction: with `b = sqrt(1 - ab_t)`
/// the sampler uses `eps - b alpha g_t(x_t)`, which is the score of the
/// guided marginal. For an ancestral step this shifts the reverse mean by
/// `alpha beta_t / sqrt(1 - beta_t) g_t`; a DDIM step uses the same
/// corrected noise for both its clean estimate and its re-noising.
/// The random stream is consumed identically for every strategy.
pub fn guided_sample(
    model: &ScoreModel,
    sched: &NoiseSchedule,
    g: &GuidanceConfig,
    x_input: &[f64],
    seed: u64,
    sampler: Sampler,
) -> Result<EditResult> {
    g.validate()?;
    ensure_same_len("edit input vs model", x_input.len(), model.dim())?;
    ensure_finite("edit input", x_input)?;
    if g.strategy == Strategy::IdealOracle && model.as_gmm().is_none() {
        return Err(Error::Invalid(
            "the ideal oracle needs an analytic mixture model".into(),
        ));
    }
    let dim = x_input.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normals =
        |n: usize| -> Vec<f64> { (0..n).map(|_| StandardNormal.sample(&mut rng)).collect() };
    let mut x = normals(dim);

    let levels: Vec<usize> = match sampler {
        Sampler::Ddpm => (0..=sched.steps()).rev().collect(),
        Sampler::Ddim { steps } => ddim_timesteps(sched.steps(), steps)?,
    };
    let mut trace = Vec::with_capacity(levels.len() - 1);
    for pair in levels.windows(2) {
        let (t, t_to) = (pair[0], pair[1]);
        let mut eps = model.eps(&x, t, sched)?;
        let mut gnorm = 0.0;
        if g.is_active() {
            let mut grad = guidance_gradient(g.strategy, g.kernel, model, &x, x_input, t, sched)?;
            gnorm = norm(&grad);
            if let Some(c) = g.clip_norm {
                if gnorm > c {
                    grad.iter_mut().for_each(|v| *v *= c / gnorm);
                    gnorm = c;
                }
            }
            let shift = g.strength * (1.0 - sched.alpha_bar(t)).sqrt();
            eps.iter_mut()
                .zip(&grad)
                .for_each(|(e, gi)| *e -= shift * gi);
        }
        x = match sampler {
            Sampler::Ddpm => {
                let z = normals(dim);
                ddpm_reverse_step(&x, t, &eps, sched, &z)?
            }
            Sampler::Ddim { .. } => ddim_step(&x, t, t_to, &eps, sched)?,
        };
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState { t });
        }
        trace.push(gnorm);
    }
    Ok(EditResult {
        input: x_input.to_vec(),
        edit: x,
        seed,
        steps_used: trace.len(),
        guidance_norms: trace,
    })
}
