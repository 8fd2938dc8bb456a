//! Exact noise prediction for diagonal Gaussian-mixture data.
//!
//! Under `x_t = sqrt(ab) x_0 + sqrt(1 - ab) eps` the marginal of a mixture
//! prior is again a mixture, with component means `sqrt(ab) mu_k` and
//! variances `ab sigma_k^2 + (1 - ab)`. Everything here is evaluated in log
//! space so responsibilities far below `exp(-700)` stay representable.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, ensure_same_len, Error, Result};
use crate::schedule::NoiseSchedule;
use crate::tensor::dot;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// A mixture of axis-aligned Gaussians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmDistribution {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    vars: Vec<Vec<f64>>,
}

impl GmmDistribution {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, vars: Vec<Vec<f64>>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Invalid(
                "mixture needs at least one component".into(),
            ));
        }
        if means.len() != weights.len() || vars.len() != weights.len() {
            return Err(Error::Shape(format!(
                "{} weights, {} means, {} variance vectors",
                weights.len(),
                means.len(),
                vars.len()
            )));
        }
        if weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::Invalid("mixture weights must be positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Invalid(format!(
                "mixture weights sum to {total}, not 1"
            )));
        }
        let d = means[0].len();
        if d == 0 {
            return Err(Error::Invalid("zero-dimensional mixture".into()));
        }
        for (m, v) in means.iter().zip(&vars) {
            ensure_same_len("component mean", m.len(), d)?;
            ensure_same_len("component variance", v.len(), d)?;
            ensure_finite("component mean", m)?;
            if v.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
                return Err(Error::Invalid(
                    "component variances must be positive".into(),
                ));
            }
        }
        Ok(GmmDistribution {
            weights,
            means,
            vars,
        })
    }

    /// Standard normal `N(0, I)` in `dim` dimensions.
    pub fn standard_normal(dim: usize) -> Self {
        GmmDistribution {
            weights: vec![1.0],
            means: vec![vec![0.0; dim]],
            vars: vec![vec![1.0; dim]],
        }
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn vars(&self) -> &[Vec<f64>] {
        &self.vars
    }

    /// Mixture mean `sum_k w_k mu_k`.
    pub fn mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for (w, m) in self.weights.iter().zip(&self.means) {
            out.iter_mut().zip(m).for_each(|(o, v)| *o += w * v);
        }
        out
    }

    /// `log q(x)` of the clean distribution.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        ensure_same_len("log_density", x.len(), self.dim())?;
        let logs: Vec<f64> = (0..self.components())
            .map(|k| {
                self.weights[k].ln() + log_normal_diag(x, &self.means[k], &self.vars[k], 1.0, 0.0)
            })
            .collect();
        Ok(log_sum_exp(&logs))
    }

    fn check(&self, x: &[f64], t: usize, sched: &NoiseSchedule) -> Result<()> {
        ensure_same_len("mixture input", x.len(), self.dim())?;
        ensure_finite("mixture input", x)?;
        sched.check_t(t)
    }

    pub(crate) fn marginal(&self, x: &[f64], t: usize, sched: &NoiseSchedule) -> Result<Marginal> {
        self.check(x, t, sched)?;
        let ab = sched.alpha_bar(t);
        let a = ab.sqrt();
        let kk = self.components();
        let mut log_comp = Vec::with_capacity(kk);
        let mut grads = Vec::with_capacity(kk);
        let mut inv_var = Vec::with_capacity(kk);
        for k in 0..kk {
            let v: Vec<f64> = self.vars[k].iter().map(|s| ab * s + (1.0 - ab)).collect();
            let mut lp = self.weights[k].ln();
            let mut g = Vec::with_capacity(x.len());
            for ((xi, mi), vi) in x.iter().zip(&self.means[k]).zip(&v) {
                let dev = xi - a * mi;
                lp -= 0.5 * (LN_2PI + vi.ln() + dev * dev / vi);
                g.push(-dev / vi);
            }
            log_comp.push(lp);
            grads.push(g);
            inv_var.push(v.iter().map(|v| 1.0 / v).collect());
        }
        let log_q = log_sum_exp(&log_comp);
        let resp: Vec<f64> = log_comp.iter().map(|l| (l - log_q).exp()).collect();
        let mut score = vec![0.0; x.len()];
        for (r, g) in resp.iter().zip(&grads) {
            score.iter_mut().zip(g).for_each(|(s, gi)| *s += r * gi);
        }
        ensure_finite("mixture score", &score)?;
        Ok(Marginal {
            log_comp,
            log_q,
            resp,
            grads,
            inv_var,
            score,
        })
    }

    /// `log q_t(x_t)`, the log density of the noised marginal.
    pub fn log_marginal(&self, x: &[f64], t: usize, sched: &NoiseSchedule) -> Result<f64> {
        Ok(self.marginal(x, t, sched)?.log_q)
    }

    /// `grad log q_t(x_t)`.
    pub fn score(&self, x: &[f64], t: usize, sched: &NoiseSchedule) -> Result<Vec<f64>> {
        Ok(self.marginal(x, t, sched)?.score)
    }

    /// Per-component posterior precisions/means at `(x_t, t)`; `t >= 1`.
    fn posterior_parts(
        &self,
        x: &[f64],
        t: usize,
        sched: &NoiseSchedule,
    ) -> Result<PosteriorParts> {
        if t == 0 {
            return Err(Error::Invalid("posterior at t = 0 is a point mass".into()));
        }
        let ab = sched.alpha_bar(t);
        let a = ab.sqrt();
        let lik_prec = ab / (1.0 - ab);
        let mut means = Vec::with_capacity(self.components());
        let mut vars = Vec::with_capacity(self.components());
        let mut gains = Vec::with_capacity(self.components());
        for k in 0..self.components() {
            let mut m = Vec::with_capacity(x.len());
            let mut v = Vec::with_capacity(x.len());
            let mut c = Vec::with_capacity(x.len());
            for ((xi, mu), s2) in x.iter().zip(&self.means[k]).zip(&self.vars[k]) {
                let prec = lik_prec + 1.0 / s2;
                let var = 1.0 / prec;
                m.push(var * (a * xi / (1.0 - ab) + mu / s2));
                v.push(var);
                c.push(var * a / (1.0 - ab));
            }
            means.push(m);
            vars.push(v);
            gains.push(c);
        }
        Ok(PosteriorParts { means, vars, gains })
    }

    /// Posterior mean `E[x_0 | x_t]` from the component posteriors.
    pub fn posterior_mean(&self, x: &[f64], t: usize, sched: &NoiseSchedule) -> Result<Vec<f64>> {
        let marg = self.marginal(x, t, sched)?;
        let parts = self.posterior_parts(x, t, sched)?;
        let mut out = vec![0.0; x.len()];
        for (r, m) in marg.resp.iter().zip(&parts.means) {
            out.iter_mut().zip(m).for_each(|(o, mi)| *o += r * mi);
        }
        Ok(out)
    }

    /// `(d E[x_0 | x_t] / d x_t)^T u` from the closed-form Jacobian of the
    /// posterior mean (responsibility and component-mean terms).
    pub fn posterior_mean_vjp(
        &self,
        x: &[f64],
        t: usize,
        sched: &NoiseSchedule,
        u: &[f64],
    ) -> Result<Vec<f64>> {
        ensure_same_len("posterior_mean_vjp cotangent", u.len(), self.dim())?;
        let marg = self.marginal(x, t, sched)?;
        let parts = self.posterior_parts(x, t, sched)?;
        let mut out = vec![0.0; x.len()];
        for k in 0..self.components() {
            let r = marg.resp[k];
            let mu = dot(&parts.means[k], u);
            for i in 0..x.len() {
                out[i] += r * (parts.gains[k][i] * u[i] + mu * (marg.grads[k][i] - marg.score[i]));
            }
        }
        Ok(out)
    }
}

pub(crate) struct Marginal {
    /// `log w_k + log N(x; a mu_k, v_k)`.
    pub log_comp: Vec<f64>,
    pub log_q: f64,
    pub resp: Vec<f64>,
    /// `grad` of each `log_comp` entry: `-(x - a mu_k) / v_k`.
    pub grads: Vec<Vec<f64>>,
    pub inv_var: Vec<Vec<f64>>,
    pub score: Vec<f64>,
}

struct PosteriorParts {
    means: Vec<Vec<f64>>,
    vars: Vec<Vec<f64>>,
    /// Diagonal of `d m_k / d x_t`.
    gains: Vec<Vec<f64>>,
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `log N(x; scale * mu, scale^2 var + extra)` for diagonal covariances.
fn log_normal_diag(x: &[f64], mu: &[f64], var: &[f64], scale: f64, extra: f64) -> f64 {
    x.iter()
        .zip(mu)
        .zip(var)
        .map(|((xi, mi), vi)| {
            let v = scale * scale * vi + extra;
            let d = xi - scale * mi;
            -0.5 * (LN_2PI + v.ln() + d * d / v)
        })
        .sum()
}

/// Exact expected noise `-sqrt(1 - ab) grad log q_t(x_t)`.
pub fn gmm_exact_eps(
    gmm: &GmmDistribution,
    x_t: &[f64],
    t: usize,
    sched: &NoiseSchedule,
) -> Result<Vec<f64>> {
    let score = gmm.score(x_t, t, sched)?;
    let b = (1.0 - sched.alpha_bar(t)).sqrt();
    Ok(score.iter().map(|s| -b * s).collect())
}

/// `(d eps / d x_t)^T u = -sqrt(1 - ab) H u`, with `H` the Hessian of
/// `log q_t`. Returns `(eps, vjp)`.
pub fn gmm_eps_vjp(
    gmm: &GmmDistribution,
    x_t: &[f64],
    t: usize,
    sched: &NoiseSchedule,
    cotangent: impl FnOnce(&[f64]) -> Vec<f64>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let marg = gmm.marginal(x_t, t, sched)?;
    let b = (1.0 - sched.alpha_bar(t)).sqrt();
    let eps: Vec<f64> = marg.score.iter().map(|s| -b * s).collect();
    let u = cotangent(&eps);
    ensure_same_len("eps cotangent", u.len(), x_t.len())?;
    let mut hu = vec![0.0; x_t.len()];
    for k in 0..gmm.components() {
        let r = marg.resp[k];
        let proj: f64 = marg.grads[k]
            .iter()
            .zip(&marg.score)
            .zip(&u)
            .map(|((g, s), ui)| (g - s) * ui)
            .sum();
        for i in 0..x_t.len() {
            hu[i] += r * (-u[i] * marg.inv_var[k][i] + marg.grads[k][i] * proj);
        }
    }
    Ok((eps, hu.iter().map(|h| -b * h).collect()))
}

/// The posterior `q(x_0 | x_t)` as a mixture; requires `t >= 1`.
pub fn gmm_posterior(
    gmm: &GmmDistribution,
    x_t: &[f64],
    t: usize,
    sched: &NoiseSchedule,
) -> Result<GmmDistribution> {
    let marg = gmm.marginal(x_t, t, sched)?;
    let parts = gmm.posterior_parts(x_t, t, sched)?;
    Ok(GmmDistribution {
        weights: marg.resp,
        means: parts.means,
        vars: parts.vars,
    })
}

/// Exact `grad_{x_t} log E_{q(x_0|x_t)}[exp(-lambda ||x_0 - y||^2)]`.
///
/// Each posterior component integrates the kernel in closed form to
/// `N(y; m_k(x_t), s_k + 1/(2 lambda))` up to a constant, so the expectation
/// is a mixture evaluated at `y` whose weights and means both move with `x_t`.
pub fn gmm_ideal_guidance(
    gmm: &GmmDistribution,
    x_t: &[f64],
    x_input: &[f64],
    t: usize,
    sched: &NoiseSchedule,
    lambda: f64,
) -> Result<Vec<f64>> {
    ensure_same_len("ideal guidance input", x_input.len(), gmm.dim())?;
    let marg = gmm.marginal(x_t, t, sched)?;
    let parts = gmm.posterior_parts(x_t, t, sched)?;
    let spread = 0.5 / lambda;
    let kk = gmm.components();
    let mut logs = Vec::with_capacity(kk);
    let mut grads = Vec::with_capacity(kk);
    for k in 0..kk {
        let mut lk = marg.log_comp[k];
        let mut g = marg.grads[k].clone();
        for i in 0..x_t.len() {
            let d = parts.vars[k][i] + spread;
            let dev = x_input[i] - parts.means[k][i];
            lk -= 0.5 * (LN_2PI + d.ln() + dev * dev / d);
            g[i] += parts.gains[k][i] * dev / d;
        }
        logs.push(lk);
        grads.push(g);
    }
    let total = log_sum_exp(&logs);
    let mut out: Vec<f64> = marg.score.iter().map(|s| -s).collect();
    for (l, g) in logs.iter().zip(&grads) {
        let w = (l - total).exp();
        out.iter_mut().zip(g).for_each(|(o, gi)| *o += w * gi);
    }
    ensure_finite("ideal guidance", &out)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::estimate_x0;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_component() -> GmmDistribution {
        GmmDistribution::new(
            vec![0.3, 0.7],
            vec![vec![-1.5, 0.5], vec![1.0, -0.8]],
            vec![vec![0.2, 0.5], vec![0.4, 0.1]],
        )
        .unwrap()
    }

    fn fd_grad(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                let mut p = x.to_vec();
                let mut m = x.to_vec();
                p[i] += h;
                m[i] -= h;
                (f(&p) - f(&m)) / (2.0 * h)
            })
            .collect()
    }

    fn rel(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt().max(1e-12);
        num / den
    }

    #[test]
    fn validation() {
        assert!(
            GmmDistribution::new(vec![0.5, 0.4], vec![vec![0.0]; 2], vec![vec![1.0]; 2]).is_err()
        );
        assert!(GmmDistribution::new(vec![1.0], vec![vec![0.0]], vec![vec![0.0]]).is_err());
        assert!(GmmDistribution::new(
            vec![0.5, 0.5],
            vec![vec![0.0], vec![0.0, 1.0]],
            vec![vec![1.0]; 2]
        )
        .is_err());
        assert!(GmmDistribution::new(vec![1.0], vec![vec![0.0]], vec![vec![1.0]]).is_ok());
    }

    #[test]
    fn standard_normal_eps_is_scaled_input() {
        let s = NoiseSchedule::default_linear();
        let g = GmmDistribution::standard_normal(3);
        let x = [0.4, -1.2, 2.0];
        for t in [1, 50, 200] {
            let eps = gmm_exact_eps(&g, &x, t, &s).unwrap();
            let b = (1.0 - s.alpha_bar(t)).sqrt();
            for (e, xi) in eps.iter().zip(&x) {
                assert!((e - b * xi).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn symmetric_mixture_has_zero_eps_at_origin() {
        let s = NoiseSchedule::default_linear();
        let g = GmmDistribution::new(
            vec![0.5, 0.5],
            vec![vec![2.0, 0.0], vec![-2.0, 0.0]],
            vec![vec![0.3, 0.3]; 2],
        )
        .unwrap();
        let eps = gmm_exact_eps(&g, &[0.0, 0.0], 80, &s).unwrap();
        assert!(eps.iter().all(|e| e.abs() < 1e-15));
        // at a component mean the noise points along the inter-mean axis
        let a = s.alpha_bar(80).sqrt();
        let eps = gmm_exact_eps(&g, &[2.0 * a, 0.0], 80, &s).unwrap();
        assert!(eps[1].abs() < 1e-15 && eps[0].abs() > 0.0);
    }

    #[test]
    fn eps_matches_finite_differences_of_log_marginal() {
        let s = NoiseSchedule::default_linear();
        let g = two_component();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..30 {
            let t = rng.random_range(1..=200);
            let x: Vec<f64> = (0..2).map(|_| rng.random_range(-2.5..2.5)).collect();
            let eps = gmm_exact_eps(&g, &x, t, &s).unwrap();
            let b = (1.0 - s.alpha_bar(t)).sqrt();
            let fd: Vec<f64> = fd_grad(|p| g.log_marginal(p, t, &s).unwrap(), &x, 1e-5)
                .iter()
                .map(|v| -b * v)
                .collect();
            assert!(rel(&eps, &fd) < 1e-6, "t={t} {eps:?} vs {fd:?}");
        }
    }

    #[test]
    fn log_marginal_survives_tiny_responsibilities() {
        let s = NoiseSchedule::default_linear();
        let g = GmmDistribution::new(
            vec![0.5, 0.5],
            vec![vec![0.0], vec![60.0]],
            vec![vec![0.01], vec![0.01]],
        )
        .unwrap();
        // the far component's log weight is about -1.8e5
        let lq = g.log_marginal(&[0.0], 1, &s).unwrap();
        assert!(lq.is_finite());
        let m = g.marginal(&[0.0], 1, &s).unwrap();
        assert!(m.log_comp[1] < -700.0 && m.log_comp[1].is_finite());
        assert!(gmm_exact_eps(&g, &[30.0], 1, &s).unwrap()[0].is_finite());
    }

    #[test]
    fn standard_normal_posterior() {
        let s = NoiseSchedule::default_linear();
        let g = GmmDistribution::standard_normal(2);
        let x = [0.7, -0.3];
        let t = 90;
        let p = gmm_posterior(&g, &x, t, &s).unwrap();
        let ab = s.alpha_bar(t);
        for i in 0..2 {
            assert!((p.means()[0][i] - ab.sqrt() * x[i]).abs() < 1e-14);
            assert!((p.vars()[0][i] - (1.0 - ab)).abs() < 1e-14);
        }
    }

    #[test]
    fn standard_normal_posterior_monte_carlo() {
        // Rejection sampling: propose x0 ~ N(0,1), accept with the likelihood
        // N(x_t; a x0, 1 - ab) normalised by its maximum.
        let s = NoiseSchedule::default_linear();
        let t = 120;
        let ab = s.alpha_bar(t);
        let a = ab.sqrt();
        let xt = 0.9;
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut acc = Vec::new();
        while acc.len() < 20_000 {
            let x0: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
            let d = xt - a * x0;
            if rng.random::<f64>() < (-0.5 * d * d / (1.0 - ab)).exp() {
                acc.push(x0);
            }
        }
        let n = acc.len() as f64;
        let mean = acc.iter().sum::<f64>() / n;
        let var = acc.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let p = gmm_posterior(&GmmDistribution::standard_normal(1), &[xt], t, &s).unwrap();
        assert!((mean - p.means()[0][0]).abs() < 4.0 * (var / n).sqrt());
        assert!((var - p.vars()[0][0]).abs() < 0.03);
    }

    #[test]
    fn posterior_collapses_near_t0() {
        let s = NoiseSchedule::from_betas(vec![1e-9, 0.1, 0.2]).unwrap();
        let g = two_component();
        let x = [0.3, -0.2];
        let p = gmm_posterior(&g, &x, 1, &s).unwrap();
        for k in 0..2 {
            for i in 0..2 {
                assert!(p.vars()[k][i] < 2e-9);
                assert!((p.means()[k][i] - x[i]).abs() < 1e-6);
            }
        }
        assert!(gmm_posterior(&g, &x, 0, &s).is_err());
    }

    #[test]
    fn tweedie_consistency() {
        let s = NoiseSchedule::default_linear();
        let g = two_component();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let t = rng.random_range(1..=200);
            let x: Vec<f64> = (0..2).map(|_| rng.random_range(-3.0..3.0)).collect();
            let post = gmm_posterior(&g, &x, t, &s).unwrap();
            let eps = gmm_exact_eps(&g, &x, t, &s).unwrap();
            let tweedie = estimate_x0(&x, t, &eps, &s).unwrap();
            let pm = post.mean();
            for (a, b) in pm.iter().zip(&tweedie) {
                assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()), "t={t}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn jacobian_routes_agree() {
        // (1/a)(u - b J_eps^T u) must equal the posterior-mean Jacobian VJP.
        let s = NoiseSchedule::default_linear();
        let g = two_component();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let t = rng.random_range(1..=200);
            let x: Vec<f64> = (0..2).map(|_| rng.random_range(-3.0..3.0)).collect();
            let u: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
            let ab = s.alpha_bar(t);
            let (_, je) = gmm_eps_vjp(&g, &x, t, &s, |_| u.clone()).unwrap();
            let via_eps: Vec<f64> = u
                .iter()
                .zip(&je)
                .map(|(ui, ji)| (ui - (1.0 - ab).sqrt() * ji) / ab.sqrt())
                .collect();
            let direct = g.posterior_mean_vjp(&x, t, &s, &u).unwrap();
            assert!(rel(&via_eps, &direct) < 1e-9, "t={t}");
            // and both match finite differences of the posterior mean
            let fd = fd_grad(|p| dot(&g.posterior_mean(p, t, &s).unwrap(), &u), &x, 1e-5);
            assert!(rel(&direct, &fd) < 1e-6, "t={t} {direct:?} vs {fd:?}");
        }
    }
}
