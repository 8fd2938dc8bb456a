//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use abds_core::experiment::{prepare_bench, run_bench, BenchConfig, PreparedBench};
use abds_core::guidance::{
    derive_seed, guidance_reverse_match, guided_sample, ideal_guidance_gmm, rsim,
};
use abds_core::io::ArtifactFile;
use abds_core::metrics::{auc_pr, f1_star};
use abds_core::oracle::{run_oracle_check, OracleConfig, OracleReport};
use abds_core::schedule::{estimate_x0, forward_diffuse};
use abds_core::{
    EpsModel, GmmDistribution, GuidanceConfig, LabeledScores, NoiseSchedule, Sampler, ScheduleKind,
    SimilarityKernel, Strategy, Tensor,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

type Check = Result<(bool, String), String>;

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

// ---------------------------------------------------------------- criterion 1

/// Composite Simpson weights for `n` (odd) equally spaced nodes.
fn simpson(lo: f64, hi: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let h = (hi - lo) / (n - 1) as f64;
    let nodes = (0..n).map(|i| lo + i as f64 * h).collect();
    let weights = (0..n)
        .map(|i| {
            let c = if i == 0 || i == n - 1 {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            c * h / 3.0
        })
        .collect();
    (nodes, weights)
}

fn normal_pdf(x: f64, m: f64, v: f64) -> f64 {
    (-(x - m) * (x - m) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt()
}

/// Integration window for axis `d`: where the prior and the likelihood of
/// `x_t` both carry mass.
fn window(gmm: &GmmDistribution, d: usize, xt: f64, ab: f64) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (m, v) in gmm.means().iter().zip(gmm.vars()) {
        lo = lo.min(m[d] - 12.0 * v[d].sqrt());
        hi = hi.max(m[d] + 12.0 * v[d].sqrt());
    }
    let (c, w) = (xt / ab.sqrt(), 12.0 * ((1.0 - ab) / ab).sqrt());
    (lo.max(c - w), hi.min(c + w))
}

/// `log E[r_sim(x_0, y) | x_t]` by quadrature over a fixed grid.
/// `prior` holds the mixture density at every grid node (row-major over
/// axes), `axes` the per-axis nodes and weights.
fn log_expected_kernel(
    prior: &[f64],
    axes: &[(Vec<f64>, Vec<f64>)],
    xt: &[f64],
    y: &[f64],
    ab: f64,
    lambda: f64,
) -> f64 {
    let a = ab.sqrt();
    let lik: Vec<Vec<f64>> = axes
        .iter()
        .zip(xt)
        .map(|((nodes, _), &x)| {
            nodes
                .iter()
                .map(|&u| normal_pdf(x, a * u, 1.0 - ab))
                .collect()
        })
        .collect();
    let ker: Vec<Vec<f64>> = axes
        .iter()
        .zip(y)
        .map(|((nodes, _), &yy)| {
            nodes
                .iter()
                .map(|&u| (-lambda * (u - yy) * (u - yy)).exp())
                .collect()
        })
        .collect();
    let (mut num, mut den) = (0.0, 0.0);
    match axes.len() {
        1 => {
            for i in 0..axes[0].0.len() {
                let base = axes[0].1[i] * prior[i] * lik[0][i];
                den += base;
                num += base * ker[0][i];
            }
        }
        2 => {
            let n1 = axes[1].0.len();
            for i in 0..axes[0].0.len() {
                for j in 0..n1 {
                    let base =
                        axes[0].1[i] * axes[1].1[j] * prior[i * n1 + j] * lik[0][i] * lik[1][j];
                    den += base;
                    num += base * ker[0][i] * ker[1][j];
                }
            }
        }
        _ => unreachable!(),
    }
    num.ln() - den.ln()
}

fn quadrature_gradient(
    gmm: &GmmDistribution,
    xt: &[f64],
    y: &[f64],
    ab: f64,
    lambda: f64,
    nodes: usize,
) -> Vec<f64> {
    let dim = gmm.dim();
    let h = 1e-4;
    let axes: Vec<(Vec<f64>, Vec<f64>)> = (0..dim)
        .map(|d| {
            let (lo, hi) = window(gmm, d, xt[d], ab);
            let pad = 0.05 * (hi - lo);
            simpson(lo - pad, hi + pad, nodes)
        })
        .collect();
    let points: Vec<Vec<f64>> = match dim {
        1 => axes[0].0.iter().map(|&u| vec![u]).collect(),
        _ => axes[0]
            .0
            .iter()
            .flat_map(|&u| axes[1].0.iter().map(move |&v| vec![u, v]))
            .collect(),
    };
    let prior: Vec<f64> = points
        .iter()
        .map(|p| gmm.log_density(p).unwrap().exp())
        .collect();
    (0..dim)
        .map(|d| {
            let mut p = xt.to_vec();
            let mut m = xt.to_vec();
            p[d] += h;
            m[d] -= h;
            (log_expected_kernel(&prior, &axes, &p, y, ab, lambda)
                - log_expected_kernel(&prior, &axes, &m, y, ab, lambda))
                / (2.0 * h)
        })
        .collect()
}

fn criterion_1() -> Check {
    let start = Instant::now();
    let sched = NoiseSchedule::default_linear();
    let levels = [1, 50, 100, 150, 200];
    let lambda = 0.7;
    let g1 = GmmDistribution::new(
        vec![0.3, 0.7],
        vec![vec![-1.5], vec![1.0]],
        vec![vec![0.2], vec![0.5]],
    )
    .map_err(e)?;
    let g2 = OracleConfig::default().gmm;
    let mut worst = 0.0f64;
    let mut at = String::new();
    for (gmm, y, nodes) in [(&g1, vec![0.4], 4001), (&g2, vec![0.3, -0.6], 401)] {
        for &t in &levels {
            let ab = sched.alpha_bar(t);
            for j in 0..20 {
                let xt: Vec<f64> = if gmm.dim() == 1 {
                    vec![-2.5 + 5.0 * j as f64 / 19.0]
                } else {
                    let (r, th) = (0.2 + 2.3 * j as f64 / 19.0, 2.399_963 * j as f64);
                    vec![r * th.cos(), r * th.sin()]
                };
                let exact = ideal_guidance_gmm(
                    &xt,
                    &y,
                    t,
                    gmm,
                    &sched,
                    SimilarityKernel::new(lambda).map_err(e)?,
                )
                .map_err(e)?;
                let fd = quadrature_gradient(gmm, &xt, &y, ab, lambda, nodes);
                let diff: Vec<f64> = exact.iter().zip(&fd).map(|(a, b)| a - b).collect();
                let rel = norm(&diff) / norm(&fd).max(1e-12);
                if rel > worst {
                    worst = rel;
                    at = format!("dim {} t {t} x_t {xt:?}", gmm.dim());
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Ok((
        worst <= 1e-3 && secs < 10.0,
        format!("max rel err {worst:.2e} at {at}; 200 points in {secs:.2}s"),
    ))
}

// -------------------------------------------------------------- criteria 2, 3

fn criterion_2(report: &OracleReport, secs: f64) -> Check {
    let r = report.collinearity_max_residual;
    Ok((
        r <= 1e-8 && secs < 1.0,
        format!("max residual {r:.2e} over 5x20 grid; oracle run {secs:.3}s"),
    ))
}

fn criterion_3(report: &OracleReport) -> Check {
    let t = &report.terminal;
    let ok = t.alpha_bar_t <= 1e-8
        && t.reverse_max_ratio <= 1.0
        && t.ideal_max_ratio <= 1.0
        && t.naive_violation_fraction >= 0.95;
    Ok((
        ok,
        format!(
            "ab_T {:.2e}; max |g|/bound reverse {:.3}, ideal {:.3}; naive over bound on {:.1}%",
            t.alpha_bar_t,
            t.reverse_max_ratio,
            t.ideal_max_ratio,
            100.0 * t.naive_violation_fraction
        ),
    ))
}

// ---------------------------------------------------------------- criterion 4

fn criterion_4() -> Check {
    let start = Instant::now();
    let model = abds_core::ScoreModel::Gmm(GmmDistribution::standard_normal(1));
    let sched = terminal_linear_schedule()?;
    let g = GuidanceConfig::new(Strategy::IdealOracle, 0.5, 1.0).map_err(e)?;
    let n = 10_000;
    let xs = (0..n)
        .map(|i| {
            Ok(
                guided_sample(&model, &sched, &g, &[2.0], derive_seed(0, i), Sampler::Ddpm)
                    .map_err(e)?
                    .edit[0],
            )
        })
        .collect::<Result<Vec<f64>, String>>()?;
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    let secs = start.elapsed().as_secs_f64();
    let ok = (mean - 1.0).abs() <= 3.0 * se && ((var - 0.5) / 0.5).abs() <= 0.10 && secs < 60.0;
    Ok((
        ok,
        format!(
            "beta_max {:.4}, mean {mean:.4} (3 SE = {:.4}), variance {var:.4} ({:+.1}%), {secs:.1}s",
            sched.beta(sched.steps()),
            3.0 * se,
            100.0 * (var - 0.5) / 0.5
        ),
    ))
}

/// The default linear schedule with `beta_max` raised in steps of 1e-4 until
/// `ab_T` clears the terminal threshold, so that `x_T ~ N(0, I)` holds.
fn terminal_linear_schedule() -> Result<NoiseSchedule, String> {
    let mut beta_max = 0.05;
    loop {
        let s = NoiseSchedule::new(ScheduleKind::Linear, 200, 1e-4, beta_max).map_err(e)?;
        if !s.terminal_warning() {
            return Ok(s);
        }
        beta_max += 1e-4;
    }
}

// -------------------------------------------------------------- criteria 5, 8

struct Bench {
    prepared: PreparedBench,
    cfg: BenchConfig,
    ap: BTreeMap<(&'static str, &'static str), f64>,
    seconds: f64,
}

fn bench() -> Result<Bench, String> {
    let start = Instant::now();
    let cfg = BenchConfig::default();
    let prepared = prepare_bench(&cfg).map_err(e)?;
    let mut ap = BTreeMap::new();
    for s in [
        Strategy::Naive,
        Strategy::ForwardMatch,
        Strategy::ReverseMatch,
    ] {
        for (name, sampler) in [
            ("ddpm", Sampler::Ddpm),
            ("ddim20", Sampler::Ddim { steps: 20 }),
        ] {
            let (row, _) = run_bench(&prepared, &cfg, s, sampler).map_err(e)?;
            println!(
                "  bench {:>13} {:>6}: AUC-PR {:.4}  F1* {:.4}",
                s.name(),
                name,
                row.auc_pr,
                row.f1_star
            );
            ap.insert((s.name(), name), row.auc_pr);
        }
    }
    Ok(Bench {
        prepared,
        cfg,
        ap,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn criterion_5(b: &Bench, oracle: &OracleReport) -> Check {
    let mut ok = b.seconds < 15.0 * 60.0;
    let mut parts = Vec::new();
    for s in ["ddpm", "ddim20"] {
        let (n, f, r) = (
            b.ap[&("naive", s)],
            b.ap[&("forward_match", s)],
            b.ap[&("reverse_match", s)],
        );
        ok &= r > n && r >= f;
        parts.push(format!(
            "{s}: reverse {r:.3} / forward {f:.3} / naive {n:.3}"
        ));
    }
    let ang = |s| oracle.mean_angular_error(s).unwrap_or(f64::NAN);
    let (an, af, ar) = (
        ang(Strategy::Naive),
        ang(Strategy::ForwardMatch),
        ang(Strategy::ReverseMatch),
    );
    ok &= ar < af && ar < an;
    parts.push(format!(
        "angular error reverse {ar:.3} / forward {af:.3} / naive {an:.3}"
    ));
    parts.push(format!("{:.0}s end to end", b.seconds));
    Ok((ok, parts.join("; ")))
}

fn criterion_8(b: &Bench) -> Check {
    let p = &b.prepared;
    let g = b
        .cfg
        .detect_config(p.extractor.clone(), Strategy::ReverseMatch, Sampler::Ddpm)
        .map_err(e)?
        .guidance;
    let inputs: Vec<Vec<f64>> = p
        .test
        .images
        .iter()
        .take(10)
        .map(|im| im.to_model_space())
        .collect();
    let time = |sampler: Sampler| -> Result<f64, String> {
        let mut best = f64::INFINITY;
        for _ in 0..3 {
            let start = Instant::now();
            for (i, x) in inputs.iter().enumerate() {
                guided_sample(&p.model, &p.sched, &g, x, derive_seed(1, i as u64), sampler)
                    .map_err(e)?;
            }
            best = best.min(start.elapsed().as_secs_f64() / inputs.len() as f64);
        }
        Ok(best)
    };
    let (ddpm, ddim) = (time(Sampler::Ddpm)?, time(Sampler::Ddim { steps: 20 })?);
    let drop = b.ap[&("reverse_match", "ddpm")] - b.ap[&("reverse_match", "ddim20")];
    let ratio = ddim / ddpm;
    Ok((
        ratio <= 0.2 && drop <= 0.05,
        format!(
            "per edit {:.1} ms vs {:.1} ms (ratio {ratio:.3}); AUC-PR drop {drop:+.4}",
            1e3 * ddim,
            1e3 * ddpm
        ),
    ))
}

// ---------------------------------------------------------------- criterion 6

fn criterion_6(b: &Bench) -> Check {
    let p = &b.prepared;
    let k = SimilarityKernel::new(0.3).map_err(e)?;
    let dim = p.model.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for i in 0..50 {
        let t = 1 + (i * 37) % p.sched.steps();
        let x0 = p.test.images[i % p.test.len()].to_model_space();
        let noise: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let xt = forward_diffuse(&x0, t, &noise, &p.sched).map_err(e)?;
        let y = p.test.images[(i + 1) % p.test.len()].to_model_space();
        let g = guidance_reverse_match(&xt, &y, t, &p.model, &p.sched, k).map_err(e)?;
        let obj = |x: &[f64]| -> f64 {
            let mu = estimate_x0(x, t, &p.model.eps(x, t, &p.sched).unwrap(), &p.sched).unwrap();
            rsim(&mu, &y, k).unwrap().ln()
        };
        let h = 1e-5;
        let fd: Vec<f64> = (0..dim)
            .map(|j| {
                let mut a = xt.clone();
                let mut c = xt.clone();
                a[j] += h;
                c[j] -= h;
                (obj(&a) - obj(&c)) / (2.0 * h)
            })
            .collect();
        let diff: Vec<f64> = g.iter().zip(&fd).map(|(a, b)| a - b).collect();
        worst = worst.max(norm(&diff) / norm(&fd).max(1e-12));
    }
    Ok((
        worst <= 1e-5,
        format!("max rel err {worst:.2e} over 50 probes of the trained {dim}-dim MLP"),
    ))
}

// ---------------------------------------------------------------- criterion 7

fn criterion_7() -> Check {
    let row = |s: &[f64], c: &[u32]| {
        LabeledScores::from_components(s.to_vec(), c.to_vec(), 1, s.len()).map_err(e)
    };
    let perfect = auc_pr(&row(&[0.9, 0.8, 0.3, 0.2, 0.1], &[1, 1, 0, 0, 0])?).map_err(e)?;
    let constant = auc_pr(&row(&[0.5; 10], &[1, 1, 1, 0, 0, 0, 0, 0, 0, 0])?).map_err(e)?;
    let f1_perfect = f1_star(&row(&[1.0, 1.0, 0.0, 0.0, 1.0], &[1, 1, 0, 0, 2])?, 9).map_err(e)?;
    // one 1-pixel and one 99-pixel component; only the large one is found
    let mut comps = vec![2u32; 100];
    comps[0] = 1;
    let mut scores: Vec<f64> = comps
        .iter()
        .map(|&c| if c == 2 { 1.0 } else { 0.0 })
        .collect();
    comps.extend([0u32; 100]);
    scores.extend([0.0; 100]);
    let sized = f1_star(
        &LabeledScores::from_components(scores, comps, 10, 10).map_err(e)?,
        9,
    )
    .map_err(e)?;
    let ok = perfect == 1.0
        && (constant - 0.3).abs() < 1e-15
        && f1_perfect == 1.0
        && (sized - 2.0 / 3.0).abs() < 1e-15;
    Ok((ok, format!("AP perfect {perfect}, AP constant {constant} (prevalence 0.3), F1* perfect {f1_perfect}, size-normalized {sized:.15}")))
}

// ---------------------------------------------------------------- criterion 9

fn files(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().is_some_and(|n| n != "timing.csv") {
                out.insert(
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                );
            }
        }
    }
    out
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let code = abds_cli::main_with_args(std::iter::once("abds").chain(args.iter().copied()));
    if code == 0 {
        Ok(())
    } else {
        Err(format!("`abds {}` exited with {code}", args.join(" ")))
    }
}

fn criterion_9() -> Check {
    let tmp = tempfile::tempdir().map_err(e)?;
    let root = tmp.path();
    let cfg = |name: &str, body: String| -> Result<String, String> {
        let p = root.join(format!("{name}.toml"));
        fs::write(&p, body).map_err(e)?;
        Ok(p.display().to_string())
    };
    let data = root.join("data");
    let d = data.display();
    let model = root.join("train").join("model.abds");
    let m = model.display();
    let commands: Vec<(&str, String)> = vec![
        ("gen-data", cfg("gen", "[texture]\nn_train = 120\nn_test = 4\n".into())?),
        ("gen-data", cfg("gengmm", "kind = \"gmm\"\nn = 500\n".into())?),
        (
            "train",
            cfg("train", format!("dataset = \"{d}/train.abds\"\n[mlp]\nhidden = [16, 16]\n[train]\nsteps = 40\neval_every = 20\n"))?,
        ),
        ("sample", cfg("sample", format!("model = \"{m}\"\nn = 2\nsampler = {{ kind = \"ddim\", steps = 10 }}\n"))?),
        (
            "edit",
            cfg("edit", format!("model = \"{m}\"\ninput = \"{d}/test.abds\"\ncount = 2\nsampler = {{ kind = \"ddim\", steps = 10 }}\n"))?,
        ),
        ("detect", cfg("detect", format!("model = \"{m}\"\ndataset = \"{d}/test.abds\"\nsampler = {{ kind = \"ddim\", steps = 10 }}\n"))?),
        ("eval", cfg("eval", format!("detect_dir = \"{}\"\ndataset = \"{d}/test.abds\"\n", root.join("detect").display()))?),
        (
            "sweep",
            cfg(
                "sweep",
                format!(
                    "param = \"alpha\"\nvalues = [0.0, 1.0]\nstrategies = [\"naive\", \"reverse_match\"]\nsamplers = [{{ kind = \"ddim\", steps = 10 }}]\nmodel = \"{m}\"\ntest_dataset = \"{d}/test.abds\"\n"
                ),
            )?,
        ),
        ("oracle-check", cfg("oracle", "probes = 5\nterminal_probes = 20\n".into())?),
    ];
    let mut checked = 0;
    for (i, (cmd, config)) in commands.iter().enumerate() {
        let name = match (*cmd, i) {
            ("gen-data", 0) => "data".to_string(),
            _ => format!("{cmd}{i}"),
        };
        let canonical = match *cmd {
            "train" => root.join("train"),
            "detect" => root.join("detect"),
            _ => root.join(&name),
        };
        let again = root.join(format!("{name}-again"));
        let replay = root.join(format!("{name}-replay"));
        run_cli(&[
            cmd,
            "--config",
            config,
            "--seed",
            "7",
            "--out",
            canonical.to_str().unwrap(),
        ])?;
        run_cli(&[
            cmd,
            "--config",
            config,
            "--seed",
            "7",
            "--out",
            again.to_str().unwrap(),
        ])?;
        let resolved = canonical.join("config.toml");
        run_cli(&[
            cmd,
            "--config",
            resolved.to_str().unwrap(),
            "--out",
            replay.to_str().unwrap(),
        ])?;
        let (a, b, c) = (files(&canonical), files(&again), files(&replay));
        if a.is_empty() || a != b || a != c {
            return Ok((
                false,
                format!("`{cmd}` outputs differ between identical runs"),
            ));
        }
        checked += a.len();
    }

    let mut art = ArtifactFile::new("probe");
    let vals = vec![
        0.1,
        -0.0,
        f64::MIN_POSITIVE,
        1e300,
        -7.25,
        std::f64::consts::PI,
    ];
    art.push("v", Tensor::new(vec![2, 3], vals.clone()).map_err(e)?);
    let path = root.join("probe.abds");
    art.save(&path).map_err(e)?;
    let back = ArtifactFile::load(&path).map_err(e)?;
    let same_bits = back
        .get("v")
        .map_err(e)?
        .data()
        .iter()
        .map(|v| v.to_bits())
        .eq(vals.iter().map(|v| v.to_bits()));
    let bytes = fs::read(&path).map_err(e)?;
    let rejects = ArtifactFile::from_bytes(&bytes[..bytes.len() - 3]).is_err()
        && ArtifactFile::from_bytes(&[b"XBDS1", &bytes[5..]].concat()).is_err();
    Ok((
        same_bits && back.to_bytes().map_err(e)? == bytes && rejects,
        format!("9 command runs reproduced bit-exactly ({checked} files, twice plus replay from config.toml); artifact round trip bit-identical"),
    ))
}

// ---------------------------------------------------------------------- main

fn outcome(f: impl FnOnce() -> Check) -> (bool, String) {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(r)) => r,
        Ok(Err(msg)) => (false, format!("error: {msg}")),
        Err(_) => (false, "panicked".into()),
    }
}

fn main() {
    let start = Instant::now();
    let mut results: Vec<(u8, &str, (bool, String))> = Vec::new();
    results.push((1, "ideal gradient matches quadrature", outcome(criterion_1)));

    let t0 = Instant::now();
    let oracle = run_oracle_check(&OracleConfig::default());
    let oracle_secs = t0.elapsed().as_secs_f64();
    match &oracle {
        Ok(r) => {
            results.push((
                2,
                "single-Gaussian collinearity",
                outcome(|| criterion_2(r, oracle_secs)),
            ));
            results.push((3, "terminal guidance bound", outcome(|| criterion_3(r))));
        }
        Err(err) => {
            results.push((
                2,
                "single-Gaussian collinearity",
                (false, format!("oracle failed: {err}")),
            ));
            results.push((
                3,
                "terminal guidance bound",
                (false, format!("oracle failed: {err}")),
            ));
        }
    }
    results.push((4, "exact conditional sampling", outcome(criterion_4)));

    let bench = catch_unwind(bench).unwrap_or_else(|_| Err("benchmark panicked".into()));
    match (&bench, &oracle) {
        (Ok(b), Ok(o)) => {
            results.push((
                5,
                "approximation-quality ordering",
                outcome(|| criterion_5(b, o)),
            ));
            results.push((
                6,
                "reverse-match gradient through the MLP",
                outcome(|| criterion_6(b)),
            ));
        }
        _ => {
            let why = bench
                .as_ref()
                .err()
                .cloned()
                .unwrap_or_else(|| "oracle failed".into());
            results.push((5, "approximation-quality ordering", (false, why.clone())));
            results.push((6, "reverse-match gradient through the MLP", (false, why)));
        }
    }
    results.push((7, "metric unit suite", outcome(criterion_7)));
    match &bench {
        Ok(b) => results.push((8, "DDIM acceleration", outcome(|| criterion_8(b)))),
        Err(why) => results.push((8, "DDIM acceleration", (false, why.clone()))),
    }
    results.push((9, "determinism and formats", outcome(criterion_9)));

    results.sort_by_key(|r| r.0);
    println!();
    for (id, name, (ok, detail)) in &results {
        println!(
            "criterion {id} [{}] {name}: {detail}",
            if *ok { "PASS" } else { "FAIL" }
        );
    }
    let failed = results.iter().filter(|r| !r.2 .0).count();
    println!(
        "acceptance: {} passed, {failed} failed in {:.0}s",
        results.len() - failed,
        start.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
