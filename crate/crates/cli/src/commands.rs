//! Command implementations. Each takes a resolved config and an output
//! directory and writes every artifact atomically.

use std::fs;
use std::path::{Path, PathBuf};

use abds_core::data::{gen_gmm_dataset, gen_texture_dataset, ImageDataset};
use abds_core::experiment::{
    prepare_bench, run_bench, BenchConfig, BenchRow, ExtractorSpec, PreparedBench, ScheduleSpec,
};
use abds_core::guidance::{derive_seed, guided_sample, GuidanceConfig, Sampler, Strategy};
use abds_core::io::{
    encode_pgm, images_from_artifact, images_to_artifact, line_chart, map_from_artifact,
    map_to_artifact, model_from_artifact, model_to_artifact, points_from_artifact,
    points_to_artifact, write_atomic, ArtifactFile, Series,
};
use abds_core::metrics::{auc_pr, f1_star};
use abds_core::oracle::{run_oracle_check, OracleConfig, OracleReport};
use abds_core::pipeline::{detect_batch, AnomalyMap, DetectConfig};
use abds_core::score::{train_mlp, TrainReport};
use abds_core::{EpsModel, LabeledScores, MlpEpsModel, NoiseSchedule, ScoreModel, Tensor};
use anyhow::{bail, Context, Result};
use serde::Serialize;

use crate::config::{
    DataKind, DetectCmdConfig, EditConfig, EvalConfig, GenDataConfig, SampleConfig, SweepConfig,
    SweepParam, TrainCmdConfig,
};
use crate::CheckFailed;

pub const CONFIG_FILE: &str = "config.toml";

pub fn write_config<T: Serialize>(out: &Path, cfg: &T) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let text = toml::to_string(cfg).context("serializing config")?;
    write_atomic(&out.join(CONFIG_FILE), text.as_bytes())?;
    Ok(())
}

fn write_csv<R: Serialize>(path: &Path, rows: &[R]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| anyhow::anyhow!("csv buffer: {e}"))?;
    write_atomic(path, &bytes)?;
    Ok(())
}

fn load(path: &Path) -> Result<ArtifactFile> {
    ArtifactFile::load(path).with_context(|| format!("reading {}", path.display()))
}

pub fn sampler_name(s: Sampler) -> String {
    match s {
        Sampler::Ddpm => "ddpm".into(),
        Sampler::Ddim { steps } => format!("ddim{steps}"),
    }
}

/// A model checkpoint and the schedule it was trained with, if recorded.
fn load_model(path: &Path) -> Result<(ScoreModel, Option<ScheduleSpec>)> {
    let a = load(path)?;
    let model =
        model_from_artifact(&a).with_context(|| format!("decoding model {}", path.display()))?;
    let sched = match a.attrs.get("schedule") {
        Some(v) => Some(serde_json::from_value(v.clone()).context("model schedule attribute")?),
        None => None,
    };
    Ok((model, sched))
}

fn resolve_schedule(
    explicit: &Option<ScheduleSpec>,
    stored: Option<ScheduleSpec>,
) -> Result<NoiseSchedule> {
    Ok(explicit.clone().or(stored).unwrap_or_default().build()?)
}

fn save_model(path: &Path, model: &ScoreModel, sched: &ScheduleSpec) -> Result<()> {
    let mut a = model_to_artifact(model)?;
    if let Some(m) = a.attrs.as_object_mut() {
        m.insert("schedule".into(), serde_json::to_value(sched)?);
    }
    a.save(path)?;
    Ok(())
}

fn load_images(path: &Path) -> Result<ImageDataset> {
    images_from_artifact(&load(path)?)
        .with_context(|| format!("decoding image dataset {}", path.display()))
}

/// Flat rows from a point dataset, an image dataset (in model space) or a
/// `samples` / `edits` artifact.
fn load_rows(path: &Path) -> Result<Vec<Vec<f64>>> {
    let a = load(path)?;
    let rows = |t: &Tensor| -> Result<Vec<Vec<f64>>> {
        let (_, d) = t.dims2()?;
        Ok(t.data().chunks(d.max(1)).map(<[f64]>::to_vec).collect())
    };
    match a.kind.as_str() {
        "point_dataset" => {
            let p = points_from_artifact(&a)?;
            Ok((0..p.len()).map(|i| p.row(i).to_vec()).collect())
        }
        "image_dataset" => Ok(images_from_artifact(&a)?
            .images
            .iter()
            .map(|im| im.to_model_space())
            .collect()),
        "samples" => rows(a.get("x")?),
        "edits" => rows(a.get("edit")?),
        other => bail!(
            "{}: cannot take input rows from a '{other}' artifact",
            path.display()
        ),
    }
}

fn rows_tensor(rows: &[Vec<f64>]) -> Result<Tensor> {
    let d = rows.first().map_or(0, Vec::len);
    Ok(Tensor::new(vec![rows.len(), d], rows.concat())?)
}

pub fn gen_data(cfg: &GenDataConfig, out: &Path) -> Result<()> {
    match cfg.kind {
        DataKind::Gmm => {
            let d = gen_gmm_dataset(&cfg.gmm, cfg.n, cfg.seed)?;
            points_to_artifact(&d)?.save(&out.join("train.abds"))?;
            save_model(
                &out.join("true_model.abds"),
                &ScoreModel::Gmm(cfg.gmm.clone()),
                &ScheduleSpec::default(),
            )?;
        }
        DataKind::Texture => {
            let (train, test) = gen_texture_dataset(&cfg.texture, cfg.seed)?;
            images_to_artifact(&train)?.save(&out.join("train.abds"))?;
            images_to_artifact(&test)?.save(&out.join("test.abds"))?;
            let p = &cfg.texture;
            for (i, (im, mask)) in test
                .images
                .iter()
                .zip(&test.masks)
                .take(cfg.previews)
                .enumerate()
            {
                let gray: Vec<f64> = im
                    .data
                    .chunks(p.channels)
                    .map(|c| c.iter().sum::<f64>() / c.len() as f64)
                    .collect();
                write_atomic(
                    &out.join(format!("test_{i:03}.pgm")),
                    &encode_pgm(p.width, p.height, &gray, 0.0, 1.0)?,
                )?;
                let m: Vec<f64> = mask
                    .iter()
                    .map(|&c| if c > 0 { 1.0 } else { 0.0 })
                    .collect();
                write_atomic(
                    &out.join(format!("mask_{i:03}.pgm")),
                    &encode_pgm(p.width, p.height, &m, 0.0, 1.0)?,
                )?;
            }
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct LossRow {
    epoch: usize,
    step: usize,
    train_loss: f64,
    val_loss: Option<f64>,
}

fn write_losses(path: &Path, report: &TrainReport) -> Result<()> {
    let rows: Vec<LossRow> = report
        .history
        .iter()
        .map(|r| LossRow {
            epoch: r.epoch,
            step: r.step,
            train_loss: r.train_loss,
            val_loss: r.val_loss,
        })
        .collect();
    write_csv(path, &rows)
}

pub fn train(cfg: &TrainCmdConfig, out: &Path) -> Result<TrainReport> {
    let a = load(&cfg.dataset)?;
    let (dim, rows) = match a.kind.as_str() {
        "point_dataset" => {
            let p = points_from_artifact(&a)?;
            (p.dim, p.samples)
        }
        "image_dataset" => {
            let d = images_from_artifact(&a)?;
            let p = &d.params;
            (p.height * p.width * p.channels, d.model_rows())
        }
        other => bail!("{}: '{other}' is not a dataset", cfg.dataset.display()),
    };
    let sched = cfg.schedule.build()?;
    let init = MlpEpsModel::new(dim, &cfg.mlp)?;
    let (model, report) = train_mlp(&init, &rows, &sched, &cfg.train)?;
    save_model(
        &out.join("model.abds"),
        &ScoreModel::Mlp(model),
        &cfg.schedule,
    )?;
    write_losses(&out.join("losses.csv"), &report)?;
    Ok(report)
}

pub fn sample(cfg: &SampleConfig, out: &Path) -> Result<()> {
    let (model, stored) = load_model(&cfg.model)?;
    let sched = resolve_schedule(&cfg.schedule, stored)?;
    let zeros = vec![0.0; model.dim()];
    let rows = (0..cfg.n)
        .map(|i| {
            Ok(guided_sample(
                &model,
                &sched,
                &GuidanceConfig::none(),
                &zeros,
                derive_seed(cfg.seed, i as u64),
                cfg.sampler,
            )?
            .edit)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut a = ArtifactFile::new("samples");
    a.push("x", rows_tensor(&rows)?);
    a.save(&out.join("samples.abds"))?;
    Ok(())
}

#[derive(Serialize)]
struct TraceRow {
    item: usize,
    step: usize,
    guidance_norm: f64,
}

pub fn edit(cfg: &EditConfig, out: &Path) -> Result<()> {
    let (model, stored) = load_model(&cfg.model)?;
    let sched = resolve_schedule(&cfg.schedule, stored)?;
    let g = cfg.guidance.build()?;
    let mut inputs = load_rows(&cfg.input)?;
    if let Some(n) = cfg.count {
        inputs.truncate(n);
    }
    if inputs.is_empty() {
        bail!("{}: no input rows", cfg.input.display());
    }
    let mut edits = Vec::with_capacity(inputs.len());
    let mut trace = Vec::new();
    for (i, x) in inputs.iter().enumerate() {
        let r = guided_sample(
            &model,
            &sched,
            &g,
            x,
            derive_seed(cfg.seed, i as u64),
            cfg.sampler,
        )
        .with_context(|| format!("editing row {i}"))?;
        trace.extend(
            r.guidance_norms
                .iter()
                .enumerate()
                .map(|(step, &n)| TraceRow {
                    item: i,
                    step,
                    guidance_norm: n,
                }),
        );
        edits.push(r.edit);
    }
    let mut a = ArtifactFile::new("edits");
    a.push("input", rows_tensor(&inputs)?);
    a.push("edit", rows_tensor(&edits)?);
    a.save(&out.join("edits.abds"))?;
    write_csv(&out.join("guidance_trace.csv"), &trace)
}

#[derive(Serialize)]
pub struct ImageMetrics {
    pub image: usize,
    pub anomalous_pixels: usize,
    pub auc_pr: Option<f64>,
    pub f1_star: Option<f64>,
    pub mean_refined: f64,
}

#[derive(Serialize)]
pub struct PooledMetrics {
    pub images: usize,
    pub auc_pr: Option<f64>,
    pub f1_star: Option<f64>,
    pub mean_refined: f64,
}

/// Per-image and pooled metrics of refined maps; metrics that need both
/// classes are left empty when a mask lacks one.
pub fn score(
    maps: &[AnomalyMap],
    masks: &[Vec<u32>],
    f1_thresholds: usize,
) -> Result<(Vec<ImageMetrics>, PooledMetrics)> {
    let mut rows = Vec::with_capacity(maps.len());
    let mut parts = Vec::with_capacity(maps.len());
    for (i, (m, mask)) in maps.iter().zip(masks).enumerate() {
        let ls =
            LabeledScores::from_components(m.refined.clone(), mask.clone(), m.height, m.width)?;
        let pos = ls.positives();
        let both = pos > 0 && pos < mask.len();
        rows.push(ImageMetrics {
            image: i,
            anomalous_pixels: pos,
            auc_pr: if both { Some(auc_pr(&ls)?) } else { None },
            f1_star: if pos > 0 {
                Some(f1_star(&ls, f1_thresholds)?)
            } else {
                None
            },
            mean_refined: m.refined.iter().sum::<f64>() / m.refined.len() as f64,
        });
        parts.push(ls);
    }
    let all = LabeledScores::concat(&parts)?;
    let pos = all.positives();
    let pooled = PooledMetrics {
        images: maps.len(),
        auc_pr: if pos > 0 && pos < all.scores().len() {
            Some(auc_pr(&all)?)
        } else {
            None
        },
        f1_star: if pos > 0 {
            Some(f1_star(&all, f1_thresholds)?)
        } else {
            None
        },
        mean_refined: all.scores().iter().sum::<f64>() / all.scores().len() as f64,
    };
    Ok((rows, pooled))
}

fn map_path(dir: &Path, i: usize) -> PathBuf {
    dir.join("maps").join(format!("map_{i:03}.abds"))
}

pub fn detect(cfg: &DetectCmdConfig, out: &Path) -> Result<PooledMetrics> {
    let (model, stored) = load_model(&cfg.model)?;
    let sched = resolve_schedule(&cfg.schedule, stored)?;
    let mut test = load_images(&cfg.dataset)?;
    if let Some(n) = cfg.count {
        test.images.truncate(n);
        test.masks.truncate(n);
    }
    if test.is_empty() {
        bail!("{}: no test images", cfg.dataset.display());
    }
    let extractor = match (&cfg.extractor, &cfg.train_dataset) {
        (ExtractorSpec::PatchPca { .. }, None) => bail!("patch_pca needs train_dataset to fit on"),
        (spec, Some(p)) => spec.fit(&load_images(p)?, cfg.seed)?,
        (spec, None) => spec.fit(&test, cfg.seed)?,
    };
    let dc = DetectConfig {
        guidance: cfg.guidance.build()?,
        sampler: cfg.sampler,
        extractor,
        metric: cfg.metric,
        segment: cfg.segment,
    };
    let results = detect_batch(&test.images, &model, &sched, &dc, cfg.seed)?;
    fs::create_dir_all(out.join("maps"))?;
    let hi = results
        .iter()
        .flat_map(|(_, m)| m.raw.iter().chain(&m.refined))
        .fold(0.0f64, |a, &b| a.max(b))
        .max(f64::MIN_POSITIVE);
    let p = &test.params;
    for (i, (e, m)) in results.iter().enumerate() {
        map_to_artifact(m)?.save(&map_path(out, i))?;
        let dir = out.join("maps");
        write_atomic(
            &dir.join(format!("raw_{i:03}.pgm")),
            &encode_pgm(m.width, m.height, &m.raw, 0.0, hi)?,
        )?;
        write_atomic(
            &dir.join(format!("refined_{i:03}.pgm")),
            &encode_pgm(m.width, m.height, &m.refined, 0.0, hi)?,
        )?;
        let gray: Vec<f64> = e
            .edit
            .chunks(p.channels)
            .map(|c| (c.iter().sum::<f64>() / c.len() as f64 + 1.0) / 2.0)
            .collect();
        write_atomic(
            &dir.join(format!("edit_{i:03}.pgm")),
            &encode_pgm(m.width, m.height, &gray, 0.0, 1.0)?,
        )?;
    }
    let maps: Vec<AnomalyMap> = results.into_iter().map(|(_, m)| m).collect();
    let (rows, pooled) = score(&maps, &test.masks, cfg.f1_thresholds)?;
    write_csv(&out.join("metrics.csv"), &rows)?;
    write_csv(&out.join("summary.csv"), &[&pooled])?;
    write_csv(
        &out.join("preview_scale.csv"),
        &[PreviewScale { lo: 0.0, hi }],
    )?;
    Ok(pooled)
}

#[derive(Serialize)]
struct PreviewScale {
    lo: f64,
    hi: f64,
}

pub fn eval(cfg: &EvalConfig, out: &Path) -> Result<PooledMetrics> {
    let test = load_images(&cfg.dataset)?;
    let mut maps = Vec::new();
    while map_path(&cfg.detect_dir, maps.len()).exists() {
        let p = map_path(&cfg.detect_dir, maps.len());
        maps.push(map_from_artifact(&load(&p)?)?);
    }
    if maps.is_empty() {
        bail!("{}: no maps found", cfg.detect_dir.join("maps").display());
    }
    if maps.len() > test.len() {
        bail!("{} maps but only {} test images", maps.len(), test.len());
    }
    let (rows, pooled) = score(&maps, &test.masks[..maps.len()], cfg.f1_thresholds)?;
    write_csv(&out.join("metrics.csv"), &rows)?;
    write_csv(&out.join("summary.csv"), &[&pooled])?;
    Ok(pooled)
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub param: String,
    pub value: f64,
    pub strategy: String,
    pub sampler: String,
    pub auc_pr: f64,
    pub f1_star: f64,
    pub mean_edit_distance: f64,
}

#[derive(Serialize)]
struct TimingRow {
    param: String,
    value: f64,
    strategy: String,
    sampler: String,
    seconds_per_image: f64,
}

fn prepared_from_files(cfg: &SweepConfig, model: &Path) -> Result<PreparedBench> {
    let (model, stored) = load_model(model)?;
    let sched = resolve_schedule(&Some(cfg.bench.schedule.clone()), stored)?;
    let test_path = cfg
        .test_dataset
        .as_ref()
        .context("test_dataset is required when model is given")?;
    let test = load_images(test_path)?;
    let extractor = match (&cfg.bench.extractor, &cfg.train_dataset) {
        (ExtractorSpec::PatchPca { .. }, None) => bail!("patch_pca needs train_dataset to fit on"),
        (spec, Some(p)) => spec.fit(&load_images(p)?, cfg.bench.seed)?,
        (spec, None) => spec.fit(&test, cfg.bench.seed)?,
    };
    Ok(PreparedBench {
        test,
        sched,
        model,
        extractor,
        report: None,
        train_seconds: 0.0,
    })
}

/// Runs the grid and returns its rows; also writes the CSV and SVG.
pub fn sweep(cfg: &SweepConfig, out: &Path) -> Result<Vec<SweepRow>> {
    let points: Vec<(f64, Strategy)> = match cfg.param {
        SweepParam::Strategy => cfg
            .strategies
            .iter()
            .enumerate()
            .map(|(i, &s)| (i as f64, s))
            .collect(),
        _ => cfg
            .values
            .iter()
            .flat_map(|&v| cfg.strategies.iter().map(move |&s| (v, s)))
            .collect(),
    };
    if points.is_empty() || cfg.samplers.is_empty() {
        bail!("sweep grid is empty");
    }
    let bench = match &cfg.model {
        Some(m) => prepared_from_files(cfg, m)?,
        None => {
            let b = prepare_bench(&cfg.bench)?;
            save_model(&out.join("model.abds"), &b.model, &cfg.bench.schedule)?;
            if let Some(r) = &b.report {
                write_losses(&out.join("losses.csv"), r)?;
            }
            b
        }
    };
    let param = match cfg.param {
        SweepParam::Alpha => "alpha",
        SweepParam::Lambda => "lambda",
        SweepParam::Strategy => "strategy",
    };
    let mut rows = Vec::new();
    let mut timing = Vec::new();
    for &(value, strategy) in &points {
        let mut bc: BenchConfig = cfg.bench.clone();
        match cfg.param {
            SweepParam::Alpha => bc.strength = value,
            SweepParam::Lambda => bc.lambda = value,
            SweepParam::Strategy => {}
        }
        for &sampler in &cfg.samplers {
            let (r, _): (BenchRow, _) = run_bench(&bench, &bc, strategy, sampler)?;
            rows.push(SweepRow {
                param: param.into(),
                value,
                strategy: strategy.name().into(),
                sampler: sampler_name(sampler),
                auc_pr: r.auc_pr,
                f1_star: r.f1_star,
                mean_edit_distance: r.mean_edit_distance,
            });
            timing.push(TimingRow {
                param: param.into(),
                value,
                strategy: strategy.name().into(),
                sampler: sampler_name(sampler),
                seconds_per_image: r.seconds_per_image,
            });
        }
    }
    write_csv(&out.join("sweep.csv"), &rows)?;
    write_csv(&out.join("timing.csv"), &timing)?;

    let mut series: Vec<Series> = Vec::new();
    for r in &rows {
        let name = match cfg.param {
            SweepParam::Strategy => r.sampler.clone(),
            _ => format!("{} / {}", r.strategy, r.sampler),
        };
        match series.iter_mut().find(|s| s.name == name) {
            Some(s) => s.points.push((r.value, r.auc_pr)),
            None => series.push(Series {
                name,
                points: vec![(r.value, r.auc_pr)],
            }),
        }
    }
    let x_label = match cfg.param {
        SweepParam::Strategy => {
            let names: Vec<&str> = cfg.strategies.iter().map(|s| s.name()).collect();
            format!("strategy index ({})", names.join(", "))
        }
        _ => param.to_string(),
    };
    let svg = line_chart(&format!("AUC-PR vs {param}"), &x_label, "AUC-PR", &series);
    write_atomic(&out.join("sweep.svg"), svg.as_bytes())?;
    Ok(rows)
}

#[derive(Serialize)]
struct CheckRow {
    check: String,
    value: f64,
    limit: f64,
    passed: bool,
}

pub fn oracle_check(cfg: &OracleConfig, out: &Path) -> Result<OracleReport> {
    let report = run_oracle_check(cfg)?;
    write_csv(&out.join("oracle.csv"), &report.rows)?;
    write_csv(&out.join("summary.csv"), &report.summary)?;
    let t = &report.terminal;
    let mean = |s| report.mean_angular_error(s).unwrap_or(f64::NAN);
    let rev = mean(Strategy::ReverseMatch);
    let checks = [
        (
            "collinearity_residual",
            report.collinearity_max_residual,
            cfg.collinearity_tol,
        ),
        ("terminal_reverse_match_ratio", t.reverse_max_ratio, 1.0),
        ("terminal_ideal_ratio", t.ideal_max_ratio, 1.0),
        (
            "angular_reverse_minus_forward",
            rev - mean(Strategy::ForwardMatch),
            0.0,
        ),
        (
            "angular_reverse_minus_naive",
            rev - mean(Strategy::Naive),
            0.0,
        ),
    ];
    let mut rows: Vec<CheckRow> = checks
        .iter()
        .map(|&(name, value, limit)| CheckRow {
            check: name.into(),
            value,
            limit,
            passed: if limit == 0.0 {
                value < 0.0
            } else {
                value <= limit
            },
        })
        .collect();
    rows.push(CheckRow {
        check: "terminal_naive_violation_fraction".into(),
        value: t.naive_violation_fraction,
        limit: cfg.naive_violation_min,
        passed: t.naive_violation_fraction >= cfg.naive_violation_min,
    });
    write_csv(&out.join("checks.csv"), &rows)?;
    if !report.passed() {
        return Err(CheckFailed(report.failures.clone()).into());
    }
    Ok(report)
}
