use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Bindings, Graph, GraphBuilder, NodeId};
use crate::error::{ensure_finite, ensure_same_len, Error, Result};
use crate::schedule::NoiseSchedule;
use crate::tensor::Tensor;

use super::EpsModel;

/// Width of the time embedding `(t/T, ab_t, sqrt(1 - ab_t))`.
pub const TIME_EMBED_WIDTH: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden: vec![128; 3],
            activation: Activation::Tanh,
            seed: 0,
        }
    }
}

/// A fully connected noise predictor. Parameters are stored as
/// `[w_0, b_0, w_1, b_1, ...]` with `w_i` shaped `[fan_in, fan_out]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpEpsModel {
    dim: usize,
    hidden: Vec<usize>,
    activation: Activation,
    params: Vec<Tensor>,
}

pub(crate) struct Net {
    pub graph: Graph,
    pub x: NodeId,
    pub temb: NodeId,
    pub params: Vec<NodeId>,
}

impl MlpEpsModel {
    /// Glorot-uniform weights and zero biases from `cfg.seed`.
    pub fn new(dim: usize, cfg: &MlpConfig) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Invalid("data dimension must be positive".into()));
        }
        if cfg.hidden.contains(&0) {
            return Err(Error::Invalid("hidden widths must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let widths = layer_widths(dim, &cfg.hidden);
        let mut params = Vec::with_capacity(2 * (widths.len() - 1));
        for pair in widths.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-limit..limit))
                .collect();
            params.push(Tensor::from_raw(vec![fan_in, fan_out], w));
            params.push(Tensor::zeros(vec![fan_out]));
        }
        Ok(MlpEpsModel {
            dim,
            hidden: cfg.hidden.clone(),
            activation: cfg.activation,
            params,
        })
    }

    /// Rebuilds a model from stored parameters, checking every shape.
    pub fn from_params(
        dim: usize,
        hidden: Vec<usize>,
        activation: Activation,
        params: Vec<Tensor>,
    ) -> Result<Self> {
        let widths = layer_widths(dim, &hidden);
        if params.len() != 2 * (widths.len() - 1) {
            return Err(Error::Shape(format!(
                "expected {} parameter tensors, got {}",
                2 * (widths.len() - 1),
                params.len()
            )));
        }
        for (i, pair) in widths.windows(2).enumerate() {
            if params[2 * i].shape() != [pair[0], pair[1]] || params[2 * i + 1].shape() != [pair[1]]
            {
                return Err(Error::Shape(format!(
                    "layer {i} parameters have the wrong shape"
                )));
            }
        }
        for p in &params {
            p.validate()?;
        }
        Ok(MlpEpsModel {
            dim,
            hidden,
            activation,
            params,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub(crate) fn build(&self, batch: usize) -> Result<Net> {
        let mut gb = GraphBuilder::new();
        let x = gb.leaf("x", &[batch, self.dim]);
        let temb = gb.leaf("time_embedding", &[batch, TIME_EMBED_WIDTH]);
        let mut h = gb.concat(x, temb)?;
        let mut params = Vec::with_capacity(self.params.len());
        let layers = self.params.len() / 2;
        for l in 0..layers {
            let w = gb.leaf(&format!("w{l}"), self.params[2 * l].shape());
            let b = gb.leaf(&format!("b{l}"), self.params[2 * l + 1].shape());
            params.push(w);
            params.push(b);
            h = gb.matmul(h, w)?;
            h = gb.add_row(h, b)?;
            if l + 1 < layers {
                h = match self.activation {
                    Activation::Tanh => gb.tanh(h),
                    Activation::Relu => gb.relu(h),
                };
            }
        }
        Ok(Net {
            graph: gb.finish(h),
            x,
            temb,
            params,
        })
    }

    pub(crate) fn bind<'a>(&'a self, net: &Net, x: &'a Tensor, temb: &'a Tensor) -> Bindings<'a> {
        let mut b = net.graph.bindings();
        b.bind(net.x, x).bind(net.temb, temb);
        for (id, p) in net.params.iter().zip(&self.params) {
            b.bind(*id, p);
        }
        b
    }

    /// Evaluates a batch of `ts.len()` rows stored row-major in `xs`.
    pub fn eps_batch(&self, xs: &[f64], ts: &[usize], sched: &NoiseSchedule) -> Result<Vec<f64>> {
        ensure_same_len("batch input", xs.len(), ts.len() * self.dim)?;
        ensure_finite("batch input", xs)?;
        let net = self.build(ts.len())?;
        let x = Tensor::from_raw(vec![ts.len(), self.dim], xs.to_vec());
        let temb = time_embedding(ts, sched)?;
        let out = net
            .graph
            .forward_eval(&self.bind(&net, &x, &temb))?
            .output()
            .clone();
        ensure_finite("network output", out.data())?;
        Ok(out.into_data())
    }
}

fn layer_widths(dim: usize, hidden: &[usize]) -> Vec<usize> {
    let mut w = Vec::with_capacity(hidden.len() + 2);
    w.push(dim + TIME_EMBED_WIDTH);
    w.extend_from_slice(hidden);
    w.push(dim);
    w
}

pub(crate) fn time_embedding(ts: &[usize], sched: &NoiseSchedule) -> Result<Tensor> {
    let big_t = sched.steps() as f64;
    let mut data = Vec::with_capacity(ts.len() * TIME_EMBED_WIDTH);
    for &t in ts {
        sched.check_t(t)?;
        let ab = sched.alpha_bar(t);
        data.extend_from_slice(&[t as f64 / big_t, ab, (1.0 - ab).sqrt()]);
    }
    Ok(Tensor::from_raw(vec![ts.len(), TIME_EMBED_WIDTH], data))
}

impl EpsModel for MlpEpsModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eps(&self, x_t: &[f64], t: usize, sched: &NoiseSchedule) -> Result<Vec<f64>> {
        self.eps_batch(x_t, &[t], sched)
    }

    fn eps_vjp(
        &self,
        x_t: &[f64],
        t: usize,
        sched: &NoiseSchedule,
        cotangent: &mut dyn FnMut(&[f64]) -> Vec<f64>,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        ensure_same_len("network input", x_t.len(), self.dim)?;
        ensure_finite("network input", x_t)?;
        let net = self.build(1)?;
        let x = Tensor::from_raw(vec![1, self.dim], x_t.to_vec());
        let temb = time_embedding(&[t], sched)?;
        let bindings = self.bind(&net, &x, &temb);
        let fwd = net.graph.forward_eval(&bindings)?;
        let eps = fwd.output().data().to_vec();
        ensure_finite("network output", &eps)?;
        let u = cotangent(&eps);
        ensure_same_len("eps cotangent", u.len(), self.dim)?;
        let mut grads = fwd.backward(&Tensor::from_raw(vec![1, self.dim], u), &[net.x])?;
        let g = grads.take(net.x).expect("requested leaf").into_data();
        Ok((eps, g))
    }
}
