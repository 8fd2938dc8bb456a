//! Denoising-objective training with Adam.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;
use crate::tensor::Tensor;

use super::mlp::{time_embedding, MlpEpsModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Anneal the learning rate to `lr * final_lr_fraction` on a cosine.
    pub final_lr_fraction: f64,
    pub seed: u64,
    pub val_fraction: f64,
    /// Noise draws per validation sample, fixed for the whole run.
    pub val_draws: usize,
    /// Steps per logged epoch.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 5000,
            batch_size: 128,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            final_lr_fraction: 1.0,
            seed: 0,
            val_fraction: 0.1,
            val_draws: 4,
            eval_every: 500,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.lr, self.adam_eps]
            .iter()
            .all(|v| *v > 0.0 && v.is_finite());
        if !positive || self.batch_size == 0 || self.eval_every == 0 || self.val_draws == 0 {
            return Err(Error::Invalid(
                "training sizes and rates must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Invalid(
                "moment coefficients must lie in [0, 1)".into(),
            ));
        }
        if !(0.0..=0.5).contains(&self.val_fraction) {
            return Err(Error::Invalid(format!(
                "validation fraction {} outside [0, 0.5]",
                self.val_fraction
            )));
        }
        if !(self.final_lr_fraction > 0.0 && self.final_lr_fraction <= 1.0) {
            return Err(Error::Invalid(
                "final_lr_fraction must lie in (0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Losses averaged over one logging epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub step: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<LossRecord>,
    pub final_val_loss: Option<f64>,
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: i32,
}

impl Adam {
    fn new(params: &[Tensor]) -> Self {
        Adam {
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64, cfg: &TrainConfig) {
        self.step += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.step);
        let c2 = 1.0 - cfg.beta2.powi(self.step);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, (w, gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
                v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
                *w -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + cfg.adam_eps);
            }
        }
    }
}

struct Batch {
    x_t: Vec<f64>,
    eps: Vec<f64>,
    ts: Vec<usize>,
}

fn noised_batch(
    data: &[f64],
    dim: usize,
    rows: &[usize],
    sched: &NoiseSchedule,
    rng: &mut ChaCha8Rng,
) -> Batch {
    let mut x_t = Vec::with_capacity(rows.len() * dim);
    let mut eps = Vec::with_capacity(rows.len() * dim);
    let mut ts = Vec::with_capacity(rows.len());
    for &r in rows {
        let t = rng.random_range(1..=sched.steps());
        let ab = sched.alpha_bar(t);
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        for x0 in &data[r * dim..(r + 1) * dim] {
            let e: f64 = rng.sample(StandardNormal);
            x_t.push(a * x0 + b * e);
            eps.push(e);
        }
        ts.push(t);
    }
    Batch { x_t, eps, ts }
}

/// Mean squared error per coordinate and, optionally, parameter gradients.
fn batch_loss(
    model: &MlpEpsModel,
    batch: &Batch,
    sched: &NoiseSchedule,
    grads: bool,
) -> Result<(f64, Vec<Tensor>)> {
    let n = batch.ts.len();
    let dim = model.dim();
    let net = model.build(n)?;
    let x = Tensor::from_raw(vec![n, dim], batch.x_t.clone());
    let temb = time_embedding(&batch.ts, sched)?;
    let bindings = model.bind(&net, &x, &temb);
    let fwd = net.graph.forward_eval(&bindings)?;
    let scale = 1.0 / (n * dim) as f64;
    let mut loss = 0.0;
    let mut cot = Vec::with_capacity(n * dim);
    for (o, e) in fwd.output().data().iter().zip(&batch.eps) {
        let r = o - e;
        loss += r * r;
        cot.push(2.0 * r * scale);
    }
    loss *= scale;
    if !grads || !loss.is_finite() {
        return Ok((loss, Vec::new()));
    }
    let mut g = fwd.backward(&Tensor::from_raw(vec![n, dim], cot), &net.params)?;
    let grads = net
        .params
        .iter()
        .map(|id| g.take(*id).expect("requested leaf"))
        .collect();
    Ok((loss, grads))
}

/// Trains a copy of `model` on the rows of `data` (`n x dim`, row-major).
///
/// Each step draws a batch with replacement, a uniform `t` per row and fresh
/// Gaussian noise. Validation uses a held-out split with noise fixed at the
/// start, so its loss is comparable across epochs.
pub fn train_mlp(
    model: &MlpEpsModel,
    data: &[f64],
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
) -> Result<(MlpEpsModel, TrainReport)> {
    cfg.validate()?;
    let dim = model.dim();
    if data.is_empty() || !data.len().is_multiple_of(dim) {
        return Err(Error::Shape(format!(
            "training data length {} is not a multiple of {dim}",
            data.len()
        )));
    }
    crate::error::ensure_finite("training data", data)?;
    let n = data.len() / dim;

    let mut split_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    split_rng.set_stream(1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut split_rng);
    let n_val = ((n as f64) * cfg.val_fraction).floor() as usize;
    let (val_rows, train_rows) = order.split_at(n_val);
    if train_rows.is_empty() {
        return Err(Error::Invalid(
            "no training rows after the validation split".into(),
        ));
    }

    let val_batches: Vec<Batch> = if val_rows.is_empty() {
        Vec::new()
    } else {
        let mut val_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        val_rng.set_stream(2);
        let rows: Vec<usize> = (0..cfg.val_draws)
            .flat_map(|_| val_rows.iter().copied())
            .collect();
        rows.chunks(512)
            .map(|c| noised_batch(data, dim, c, sched, &mut val_rng))
            .collect()
    };
    let validate = |m: &MlpEpsModel| -> Result<Option<f64>> {
        if val_batches.is_empty() {
            return Ok(None);
        }
        let mut total = 0.0;
        let mut count = 0usize;
        for b in &val_batches {
            total += batch_loss(m, b, sched, false)?.0 * b.ts.len() as f64;
            count += b.ts.len();
        }
        Ok(Some(total / count as f64))
    };

    let mut trained = model.clone();
    let mut adam = Adam::new(trained.params());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = Vec::new();
    let mut running = 0.0;
    let mut in_epoch = 0usize;
    let mut rows = vec![0usize; cfg.batch_size];
    for step in 0..cfg.steps {
        for r in rows.iter_mut() {
            *r = train_rows[rng.random_range(0..train_rows.len())];
        }
        let batch = noised_batch(data, dim, &rows, sched, &mut rng);
        let (loss, grads) = batch_loss(&trained, &batch, sched, true)?;
        if !loss.is_finite()
            || grads
                .iter()
                .any(|g| g.data().iter().any(|v| !v.is_finite()))
        {
            return Err(Error::Diverged { step, loss });
        }
        let progress = step as f64 / cfg.steps.max(1) as f64;
        let anneal = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        let lr = cfg.lr * (cfg.final_lr_fraction + (1.0 - cfg.final_lr_fraction) * anneal);
        adam.update(trained.params_mut(), &grads, lr, cfg);
        running += loss;
        in_epoch += 1;
        if in_epoch == cfg.eval_every || step + 1 == cfg.steps {
            history.push(LossRecord {
                epoch: history.len(),
                step: step + 1,
                train_loss: running / in_epoch as f64,
                val_loss: validate(&trained)?,
            });
            running = 0.0;
            in_epoch = 0;
        }
    }
    let final_val_loss = match history.last() {
        Some(r) => r.val_loss,
        None => validate(&trained)?,
    };
    Ok((
        trained,
        TrainReport {
            history,
            final_val_loss,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::{EpsModel, MlpConfig};

    fn gaussian_data(n: usize, dim: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n * dim).map(|_| rng.sample(StandardNormal)).collect()
    }

    #[test]
    fn zero_steps_leave_parameters_untouched() {
        let s = NoiseSchedule::default_linear();
        let m = MlpEpsModel::new(
            2,
            &MlpConfig {
                hidden: vec![16],
                ..Default::default()
            },
        )
        .unwrap();
        let cfg = TrainConfig {
            steps: 0,
            ..Default::default()
        };
        let (out, report) = train_mlp(&m, &gaussian_data(100, 2, 0), &s, &cfg).unwrap();
        assert_eq!(out, m);
        assert!(report.history.is_empty());
        assert!(report.final_val_loss.is_some());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig {
            val_fraction: 0.6,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            batch_size: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            beta2: 1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let s = NoiseSchedule::default_linear();
        let m = MlpEpsModel::new(
            1,
            &MlpConfig {
                hidden: vec![32, 32],
                ..Default::default()
            },
        )
        .unwrap();
        let data = gaussian_data(512, 1, 1);
        let cfg = TrainConfig {
            steps: 300,
            batch_size: 64,
            eval_every: 100,
            ..Default::default()
        };
        let (a, ra) = train_mlp(&m, &data, &s, &cfg).unwrap();
        let (b, rb) = train_mlp(&m, &data, &s, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        assert_eq!(ra.history.len(), 3);
        assert!(ra.history[2].val_loss.unwrap() < ra.history[0].val_loss.unwrap() * 1.05);
        assert!(a.eps(&[0.5], 100, &s).unwrap()[0].is_finite());
    }

    #[test]
    fn divergence_is_reported() {
        let s = NoiseSchedule::default_linear();
        let m = MlpEpsModel::new(
            1,
            &MlpConfig {
                hidden: vec![4],
                ..Default::default()
            },
        )
        .unwrap();
        let data = gaussian_data(16, 1, 2);
        let cfg = TrainConfig {
            steps: 5,
            batch_size: 4,
            lr: 1e200,
            val_fraction: 0.0,
            ..Default::default()
        };
        assert!(matches!(
            train_mlp(&m, &data, &s, &cfg),
            Err(Error::Diverged { .. })
        ));
    }
}
