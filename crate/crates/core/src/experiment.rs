//! The texture benchmark: train a noise predictor on clean textures, edit
//! anomalous test images, and score the resulting anomaly maps.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{gen_texture_dataset, ImageDataset, TextureParams};
use crate::error::{Error, Result};
use crate::guidance::{GuidanceConfig, Sampler, SimilarityKernel, Strategy};
use crate::metrics::{auc_pr, f1_star, LabeledScores};
use crate::pipeline::{
    detect_batch, fit_patch_pca, AnomalyMap, DetectConfig, DistanceMetric, FeatureExtractor,
    SegmentParams,
};
use crate::schedule::{NoiseSchedule, ScheduleKind};
use crate::score::{train_mlp, MlpConfig, MlpEpsModel, ScoreModel, TrainConfig, TrainReport};
use crate::tensor::norm;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        ScheduleSpec {
            kind: ScheduleKind::Linear,
            steps: 200,
            beta_min: 1e-4,
            beta_max: 0.05,
        }
    }
}

impl ScheduleSpec {
    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::new(self.kind, self.steps, self.beta_min, self.beta_max)
    }
}

/// How to obtain the feature extractor; `patch_pca` is fitted on the
/// training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExtractorSpec {
    Identity,
    PatchStats {
        radius: usize,
    },
    PatchPca {
        radius: usize,
        dims: usize,
        max_patches: usize,
    },
}

impl ExtractorSpec {
    pub fn fit(&self, train: &ImageDataset, seed: u64) -> Result<FeatureExtractor> {
        match *self {
            ExtractorSpec::Identity => Ok(FeatureExtractor::Identity),
            ExtractorSpec::PatchStats { radius } => Ok(FeatureExtractor::PatchStats { radius }),
            ExtractorSpec::PatchPca {
                radius,
                dims,
                max_patches,
            } => fit_patch_pca(&train.images, radius, dims, max_patches, seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub data: TextureParams,
    pub schedule: ScheduleSpec,
    pub mlp: MlpConfig,
    pub train: TrainConfig,
    pub lambda: f64,
    pub strength: f64,
    pub clip_norm: Option<f64>,
    pub extractor: ExtractorSpec,
    pub metric: DistanceMetric,
    pub segment: SegmentParams,
    pub f1_thresholds: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            data: TextureParams::default(),
            schedule: ScheduleSpec::default(),
            mlp: MlpConfig {
                hidden: vec![256; 3],
                ..Default::default()
            },
            train: TrainConfig {
                steps: 6000,
                ..Default::default()
            },
            lambda: 0.3,
            strength: 1.0,
            clip_norm: Some(10.0),
            extractor: ExtractorSpec::Identity,
            metric: DistanceMetric::L2,
            segment: SegmentParams::default(),
            f1_thresholds: 9,
            seed: 0,
        }
    }
}

impl BenchConfig {
    pub fn detect_config(
        &self,
        extractor: FeatureExtractor,
        strategy: Strategy,
        sampler: Sampler,
    ) -> Result<DetectConfig> {
        Ok(DetectConfig {
            guidance: GuidanceConfig {
                strategy,
                kernel: SimilarityKernel::new(self.lambda)?,
                strength: if strategy == Strategy::None {
                    0.0
                } else {
                    self.strength
                },
                clip_norm: self.clip_norm,
            },
            sampler,
            extractor,
            metric: self.metric,
            segment: self.segment,
        })
    }
}

/// Model, test split and extractor shared by every benchmark run.
pub struct PreparedBench {
    pub test: ImageDataset,
    pub sched: NoiseSchedule,
    pub model: ScoreModel,
    pub extractor: FeatureExtractor,
    /// Present when the model was trained by [`prepare_bench`].
    pub report: Option<TrainReport>,
    pub train_seconds: f64,
}

pub fn prepare_bench(cfg: &BenchConfig) -> Result<PreparedBench> {
    let (train, test) = gen_texture_dataset(&cfg.data, cfg.seed)?;
    let sched = cfg.schedule.build()?;
    let dim = cfg.data.height * cfg.data.width * cfg.data.channels;
    let init = MlpEpsModel::new(dim, &cfg.mlp)?;
    let start = Instant::now();
    let (mlp, report) = train_mlp(&init, &train.model_rows(), &sched, &cfg.train)?;
    let train_seconds = start.elapsed().as_secs_f64();
    let extractor = cfg.extractor.fit(&train, cfg.seed)?;
    Ok(PreparedBench {
        test,
        sched,
        model: ScoreModel::Mlp(mlp),
        extractor,
        report: Some(report),
        train_seconds,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub strategy: Strategy,
    pub sampler: Sampler,
    pub lambda: f64,
    pub strength: f64,
    pub auc_pr: f64,
    pub f1_star: f64,
    /// Mean `||x_edit - x_input||` in model space.
    pub mean_edit_distance: f64,
    pub seconds_per_image: f64,
}

/// Pooled metrics of refined maps against the planted masks.
pub fn score_maps(
    maps: &[AnomalyMap],
    test: &ImageDataset,
    f1_thresholds: usize,
) -> Result<(f64, f64)> {
    let parts = maps
        .iter()
        .zip(&test.masks)
        .map(|(m, mask)| {
            LabeledScores::from_components(m.refined.clone(), mask.clone(), m.height, m.width)
        })
        .collect::<Result<Vec<_>>>()?;
    let all = LabeledScores::concat(&parts)?;
    Ok((auc_pr(&all)?, f1_star(&all, f1_thresholds)?))
}

pub fn run_bench(
    bench: &PreparedBench,
    cfg: &BenchConfig,
    strategy: Strategy,
    sampler: Sampler,
) -> Result<(BenchRow, Vec<AnomalyMap>)> {
    if bench.test.is_empty() {
        return Err(Error::Invalid("benchmark test split is empty".into()));
    }
    let dc = cfg.detect_config(bench.extractor.clone(), strategy, sampler)?;
    let start = Instant::now();
    let out = detect_batch(
        &bench.test.images,
        &bench.model,
        &bench.sched,
        &dc,
        cfg.seed,
    )?;
    let seconds_per_image = start.elapsed().as_secs_f64() / bench.test.len() as f64;
    let dist: f64 = out
        .iter()
        .map(|(e, _)| {
            norm(
                &e.edit
                    .iter()
                    .zip(&e.input)
                    .map(|(a, b)| a - b)
                    .collect::<Vec<_>>(),
            )
        })
        .sum::<f64>()
        / out.len() as f64;
    let maps: Vec<AnomalyMap> = out.into_iter().map(|(_, m)| m).collect();
    let (ap, f1) = score_maps(&maps, &bench.test, cfg.f1_thresholds)?;
    let row = BenchRow {
        strategy,
        sampler,
        lambda: cfg.lambda,
        strength: dc.guidance.strength,
        auc_pr: ap,
        f1_star: f1,
        mean_edit_distance: dist,
        seconds_per_image,
    };
    Ok((row, maps))
}
