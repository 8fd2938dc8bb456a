//! Noise predictors `eps_theta(x_t, t)`.

mod gmm;
mod mlp;
mod train;

pub use gmm::{gmm_eps_vjp, gmm_exact_eps, gmm_ideal_guidance, gmm_posterior, GmmDistribution};
pub use mlp::{Activation, MlpConfig, MlpEpsModel};
pub use train::{train_mlp, LossRecord, TrainConfig, TrainReport};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;

/// A noise-prediction network over flat vectors.
pub trait EpsModel: Sync {
    fn dim(&self) -> usize;

    fn eps(&self, x_t: &[f64], t: usize, sched: &NoiseSchedule) -> Result<Vec<f64>>;

    /// Evaluates `eps`, builds a cotangent from it, and returns
    /// `(eps, (d eps / d x_t)^T cotangent)`.
    fn eps_vjp(
        &self,
        _x_t: &[f64],
        _t: usize,
        _sched: &NoiseSchedule,
        _cotangent: &mut dyn FnMut(&[f64]) -> Vec<f64>,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        Err(Error::VjpUnavailable(
            "this predictor has no input Jacobian",
        ))
    }

    /// Like [`EpsModel::eps_vjp`] but for the clean-sample estimate
    /// `mu_0(x_t) = (x_t - sqrt(1 - ab) eps) / sqrt(ab)`: the cotangent is
    /// built from `mu_0` and the result is `(mu_0, (d mu_0 / d x_t)^T u)`.
    /// Needs `t >= 1`.
    fn x0_vjp(
        &self,
        x_t: &[f64],
        t: usize,
        sched: &NoiseSchedule,
        cotangent: &mut dyn FnMut(&[f64]) -> Vec<f64>,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let ab = sched.alpha_bar(t);
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        let mut mu0 = Vec::new();
        let mut cot = Vec::new();
        let (_, vjp) = self.eps_vjp(x_t, t, sched, &mut |eps: &[f64]| {
            mu0 = x_t.iter().zip(eps).map(|(x, e)| (x - b * e) / a).collect();
            cot = cotangent(&mu0);
            cot.iter().map(|c| c / a).collect()
        })?;
        // d mu_0 / dx = (I - b J_eps) / a, and vjp already carries the 1/a
        let out = cot.iter().zip(&vjp).map(|(c, v)| c / a - b * v).collect();
        Ok((mu0, out))
    }
}

/// The predictors shipped with the crate.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScoreModel {
    Gmm(GmmDistribution),
    Mlp(MlpEpsModel),
}

impl ScoreModel {
    pub fn as_gmm(&self) -> Option<&GmmDistribution> {
        match self {
            ScoreModel::Gmm(g) => Some(g),
            ScoreModel::Mlp(_) => None,
        }
    }
}

impl EpsModel for GmmDistribution {
    fn dim(&self) -> usize {
        GmmDistribution::dim(self)
    }

    fn eps(&self, x_t: &[f64], t: usize, sched: &NoiseSchedule) -> Result<Vec<f64>> {
        gmm_exact_eps(self, x_t, t, sched)
    }

    fn eps_vjp(
        &self,
        x_t: &[f64],
        t: usize,
        sched: &NoiseSchedule,
        cotangent: &mut dyn FnMut(&[f64]) -> Vec<f64>,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        gmm_eps_vjp(self, x_t, t, sched, cotangent)
    }

    /// Uses the posterior mean and its closed-form Jacobian directly, which
    /// avoids dividing by `sqrt(ab)` when the signal is nearly gone.
    fn x0_vjp(
        &self,
        x_t: &[f64],
        t: usize,
        sched: &NoiseSchedule,
        cotangent: &mut dyn FnMut(&[f64]) -> Vec<f64>,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let mu0 = self.posterior_mean(x_t, t, sched)?;
        let u = cotangent(&mu0);
        let vjp = self.posterior_mean_vjp(x_t, t, sched, &u)?;
        Ok((mu0, vjp))
    }
}

impl EpsModel for ScoreModel {
    fn dim(&self) -> usize {
        match self {
            ScoreModel::Gmm(g) => EpsModel::dim(g),
            ScoreModel::Mlp(m) => m.dim(),
        }
    }

    fn eps(&self, x_t: &[f64], t: usize, sched: &NoiseSchedule) -> Result<Vec<f64>> {
        match self {
            ScoreModel::Gmm(g) => g.eps(x_t, t, sched),
            ScoreModel::Mlp(m) => m.eps(x_t, t, sched),
        }
    }

    fn eps_vjp(
        &self,
        x_t: &[f64],
        t: usize,
        sched: &NoiseSchedule,
        cotangent: &mut dyn FnMut(&[f64]) -> Vec<f64>,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        match self {
            ScoreModel::Gmm(g) => g.eps_vjp(x_t, t, sched, cotangent),
            ScoreModel::Mlp(m) => m.eps_vjp(x_t, t, sched, cotangent),
        }
    }

    fn x0_vjp(
        &self,
        x_t: &[f64],
        t: usize,
        sched: &NoiseSchedule,
        cotangent: &mut dyn FnMut(&[f64]) -> Vec<f64>,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        match self {
            ScoreModel::Gmm(g) => g.x0_vjp(x_t, t, sched, cotangent),
            ScoreModel::Mlp(m) => m.x0_vjp(x_t, t, sched, cotangent),
        }
    }
}
