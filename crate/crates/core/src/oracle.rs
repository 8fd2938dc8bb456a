//! Approximate guidance gradients against the exact one on mixture priors.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::gen_gmm_dataset;
use crate::error::{Error, Result};
use crate::experiment::ScheduleSpec;
use crate::guidance::{
    angular_error, guidance_forward_match, guidance_naive, guidance_reverse_match,
    ideal_guidance_gmm, SimilarityKernel, Strategy,
};
use crate::schedule::{forward_diffuse, NoiseSchedule, ScheduleKind};
use crate::score::GmmDistribution;
use crate::tensor::norm;

pub const COMPARED: [Strategy; 3] = [
    Strategy::Naive,
    Strategy::ForwardMatch,
    Strategy::ReverseMatch,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    pub gmm: GmmDistribution,
    pub schedule: ScheduleSpec,
    pub lambda: f64,
    /// Number of noise levels, spread evenly up to `T`.
    pub levels: usize,
    /// Random `x_t` per level.
    pub probes: usize,
    /// Schedule for the terminal check; must reach `ab_T <= 1e-8`.
    pub terminal_schedule: ScheduleSpec,
    pub terminal_probes: usize,
    pub collinearity_tol: f64,
    pub bound_factor: f64,
    /// Fraction of terminal probes on which naive guidance must break the bound.
    pub naive_violation_min: f64,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            gmm: GmmDistribution::new(
                vec![0.5, 0.5],
                vec![vec![-1.0, 0.5], vec![1.2, -0.3]],
                vec![vec![0.2, 0.4], vec![0.3, 0.1]],
            )
            .expect("valid default mixture"),
            schedule: ScheduleSpec::default(),
            lambda: 1.0,
            levels: 5,
            probes: 20,
            terminal_schedule: ScheduleSpec {
                kind: ScheduleKind::Linear,
                steps: 200,
                beta_min: 1e-4,
                beta_max: 0.2,
            },
            terminal_probes: 200,
            collinearity_tol: 1e-8,
            bound_factor: 10.0,
            naive_violation_min: 0.95,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub t: usize,
    pub probe: usize,
    pub strategy: Strategy,
    pub angular_error: f64,
    pub approx_norm: f64,
    pub ideal_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: Strategy,
    pub mean_angular_error: f64,
    /// Mean of `||g|| / ||g*||`.
    pub mean_norm_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminalCheck {
    pub alpha_bar_t: f64,
    /// Largest `||g_T|| / bound` seen for each strategy.
    pub reverse_max_ratio: f64,
    pub ideal_max_ratio: f64,
    pub naive_violation_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub rows: Vec<OracleRow>,
    pub summary: Vec<StrategySummary>,
    pub collinearity_max_residual: f64,
    pub terminal: TerminalCheck,
    pub failures: Vec<String>,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn mean_angular_error(&self, s: Strategy) -> Option<f64> {
        self.summary
            .iter()
            .find(|r| r.strategy == s)
            .map(|r| r.mean_angular_error)
    }
}

/// Noise levels `round(k T / n)` for `k = 1..=n`.
pub fn grid_levels(steps: usize, n: usize) -> Vec<usize> {
    (1..=n)
        .map(|k| ((k * steps) as f64 / n as f64).round().max(1.0) as usize)
        .collect()
}

fn approx(
    s: Strategy,
    x: &[f64],
    y: &[f64],
    t: usize,
    gmm: &GmmDistribution,
    sched: &NoiseSchedule,
    k: SimilarityKernel,
) -> Result<Vec<f64>> {
    match s {
        Strategy::Naive => guidance_naive(x, y, k),
        Strategy::ForwardMatch => guidance_forward_match(x, y, t, sched, k),
        Strategy::ReverseMatch => guidance_reverse_match(x, y, t, gmm, sched, k),
        _ => Err(Error::Invalid(format!(
            "{} is not an approximation",
            s.name()
        ))),
    }
}

/// Evaluates every approximation on a `(t, x_t)` grid and runs the
/// single-Gaussian collinearity and terminal-level checks. Failed checks
/// are listed in `failures` rather than returned as errors.
pub fn run_oracle_check(cfg: &OracleConfig) -> Result<OracleReport> {
    if cfg.levels == 0 || cfg.probes == 0 || cfg.terminal_probes == 0 {
        return Err(Error::Invalid("oracle grid must be non-empty".into()));
    }
    let sched = cfg.schedule.build()?;
    let k = SimilarityKernel::new(cfg.lambda)?;
    let gmm = &cfg.gmm;
    let dim = gmm.dim();
    let levels = grid_levels(sched.steps(), cfg.levels);
    let n = cfg.levels * cfg.probes;
    let clean = gen_gmm_dataset(gmm, n, cfg.seed)?;
    let inputs = gen_gmm_dataset(gmm, n, cfg.seed.wrapping_add(1))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));
    let mut normals =
        |n: usize| -> Vec<f64> { (0..n).map(|_| StandardNormal.sample(&mut rng)).collect() };

    let mut failures = Vec::new();
    let mut rows = Vec::new();
    let unit = GmmDistribution::standard_normal(dim);
    let mut colin_max = 0.0f64;
    for (li, &t) in levels.iter().enumerate() {
        for p in 0..cfg.probes {
            let i = li * cfg.probes + p;
            let x = forward_diffuse(clean.row(i), t, &normals(dim), &sched)?;
            let y = inputs.row(i);
            let ideal = ideal_guidance_gmm(&x, y, t, gmm, &sched, k)?;
            for s in COMPARED {
                let g = approx(s, &x, y, t, gmm, &sched, k)?;
                rows.push(OracleRow {
                    t,
                    probe: p,
                    strategy: s,
                    angular_error: angular_error(&g, &ideal),
                    approx_norm: norm(&g),
                    ideal_norm: norm(&ideal),
                });
            }

            let rev = guidance_reverse_match(&x, y, t, &unit, &sched, k)?;
            let ideal1 = ideal_guidance_gmm(&x, y, t, &unit, &sched, k)?;
            let c = 1.0 + 2.0 * cfg.lambda * (1.0 - sched.alpha_bar(t));
            let diff: Vec<f64> = rev.iter().zip(&ideal1).map(|(r, g)| r - c * g).collect();
            let res = norm(&diff) / norm(&rev).max(f64::MIN_POSITIVE);
            colin_max = colin_max.max(res);
            if res > cfg.collinearity_tol {
                failures.push(format!(
                    "collinearity residual {res:.3e} at t = {t}, probe {p}, x_t = {x:?}"
                ));
            }
        }
    }

    let summary: Vec<StrategySummary> = COMPARED
        .iter()
        .map(|&s| {
            let sel: Vec<&OracleRow> = rows.iter().filter(|r| r.strategy == s).collect();
            let m = sel.len() as f64;
            StrategySummary {
                strategy: s,
                mean_angular_error: sel.iter().map(|r| r.angular_error).sum::<f64>() / m,
                mean_norm_ratio: sel
                    .iter()
                    .map(|r| r.approx_norm / r.ideal_norm.max(f64::MIN_POSITIVE))
                    .sum::<f64>()
                    / m,
            }
        })
        .collect();
    let mean = |s: Strategy| {
        summary
            .iter()
            .find(|r| r.strategy == s)
            .map_or(f64::NAN, |r| r.mean_angular_error)
    };
    for other in [Strategy::ForwardMatch, Strategy::Naive] {
        if !(mean(Strategy::ReverseMatch) < mean(other)) {
            failures.push(format!(
                "mean angular error of reverse_match ({:.4}) is not below {} ({:.4})",
                mean(Strategy::ReverseMatch),
                other.name(),
                mean(other)
            ));
        }
    }

    let terminal = terminal_check(cfg, &mut failures)?;
    Ok(OracleReport {
        rows,
        summary,
        collinearity_max_residual: colin_max,
        terminal,
        failures,
    })
}

fn terminal_check(cfg: &OracleConfig, failures: &mut Vec<String>) -> Result<TerminalCheck> {
    let sched = cfg.terminal_schedule.build()?;
    let t = sched.steps();
    let ab = sched.alpha_bar(t);
    if ab > 1e-8 {
        return Err(Error::Invalid(format!(
            "terminal schedule keeps alpha_bar_T = {ab:.3e} > 1e-8"
        )));
    }
    let k = SimilarityKernel::new(cfg.lambda)?;
    let gmm = &cfg.gmm;
    let dim = gmm.dim();
    let inputs = gen_gmm_dataset(gmm, cfg.terminal_probes, cfg.seed.wrapping_add(3))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(4));
    let (mut rev_max, mut ideal_max, mut naive_over) = (0.0f64, 0.0f64, 0usize);
    for p in 0..cfg.terminal_probes {
        let x: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let y = inputs.row(p);
        let bound = cfg.bound_factor * ab.sqrt() * cfg.lambda * (norm(&x) + norm(y));
        let rev = norm(&guidance_reverse_match(&x, y, t, gmm, &sched, k)?) / bound;
        let ideal = norm(&ideal_guidance_gmm(&x, y, t, gmm, &sched, k)?) / bound;
        rev_max = rev_max.max(rev);
        ideal_max = ideal_max.max(ideal);
        if rev > 1.0 {
            failures.push(format!(
                "reverse_match breaks the terminal bound ({rev:.3}x) at x_T = {x:?}"
            ));
        }
        if ideal > 1.0 {
            failures.push(format!(
                "ideal gradient breaks the terminal bound ({ideal:.3}x) at x_T = {x:?}"
            ));
        }
        if norm(&guidance_naive(&x, y, k)?) > bound {
            naive_over += 1;
        }
    }
    let frac = naive_over as f64 / cfg.terminal_probes as f64;
    if frac < cfg.naive_violation_min {
        failures.push(format!(
            "naive guidance exceeds the terminal bound on only {:.1}% of probes",
            100.0 * frac
        ));
    }
    Ok(TerminalCheck {
        alpha_bar_t: ab,
        reverse_max_ratio: rev_max,
        ideal_max_ratio: ideal_max,
        naive_violation_fraction: frac,
    })
}
