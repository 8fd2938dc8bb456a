//! Per-command run configurations. Every field has a default, so a config
//! file only needs the values it changes.

use std::path::PathBuf;

use abds_core::data::TextureParams;
use abds_core::experiment::{BenchConfig, ExtractorSpec, ScheduleSpec};
use abds_core::guidance::{GuidanceConfig, Sampler, SimilarityKernel, Strategy};
use abds_core::oracle::OracleConfig;
use abds_core::pipeline::{DistanceMetric, SegmentParams};
use abds_core::score::{MlpConfig, TrainConfig};
use abds_core::GmmDistribution;
use serde::{Deserialize, Serialize};

/// Anything that carries the run seed.
pub trait Seeded {
    /// Sets the top-level seed and every nested one derived from it.
    fn set_seed(&mut self, seed: u64);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DataKind {
    Gmm,
    #[default]
    Texture,
}

fn default_gmm() -> GmmDistribution {
    OracleConfig::default().gmm
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenDataConfig {
    pub kind: DataKind,
    pub seed: u64,
    /// Point count for `kind = "gmm"`.
    pub n: usize,
    /// Test images written as graymap previews.
    pub previews: usize,
    pub gmm: GmmDistribution,
    pub texture: TextureParams,
}

impl Default for GenDataConfig {
    fn default() -> Self {
        GenDataConfig {
            kind: DataKind::Texture,
            seed: 0,
            n: 10_000,
            previews: 4,
            gmm: default_gmm(),
            texture: TextureParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainCmdConfig {
    /// A point or image dataset artifact.
    pub dataset: PathBuf,
    pub seed: u64,
    pub schedule: ScheduleSpec,
    pub mlp: MlpConfig,
    pub train: TrainConfig,
}

impl Default for TrainCmdConfig {
    fn default() -> Self {
        TrainCmdConfig {
            dataset: PathBuf::from("train.abds"),
            seed: 0,
            schedule: ScheduleSpec::default(),
            mlp: MlpConfig {
                hidden: vec![256; 3],
                ..Default::default()
            },
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleConfig {
    pub model: PathBuf,
    pub seed: u64,
    pub n: usize,
    /// Falls back to the schedule stored with the model.
    pub schedule: Option<ScheduleSpec>,
    pub sampler: Sampler,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig {
            model: PathBuf::from("model.abds"),
            seed: 0,
            n: 16,
            schedule: None,
            sampler: Sampler::Ddpm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuidanceSpec {
    pub strategy: Strategy,
    pub lambda: f64,
    pub strength: f64,
    pub clip_norm: Option<f64>,
}

impl Default for GuidanceSpec {
    fn default() -> Self {
        GuidanceSpec {
            strategy: Strategy::ReverseMatch,
            lambda: 0.3,
            strength: 1.0,
            clip_norm: Some(10.0),
        }
    }
}

impl GuidanceSpec {
    pub fn build(&self) -> abds_core::Result<GuidanceConfig> {
        let g = GuidanceConfig {
            strategy: self.strategy,
            kernel: SimilarityKernel::new(self.lambda)?,
            strength: self.strength,
            clip_norm: self.clip_norm,
        };
        g.validate()?;
        Ok(g)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EditConfig {
    pub model: PathBuf,
    /// Point dataset, image dataset (edited in model space) or samples.
    pub input: PathBuf,
    pub seed: u64,
    /// Edit only the first `count` rows.
    pub count: Option<usize>,
    pub schedule: Option<ScheduleSpec>,
    pub sampler: Sampler,
    pub guidance: GuidanceSpec,
}

impl Default for EditConfig {
    fn default() -> Self {
        EditConfig {
            model: PathBuf::from("model.abds"),
            input: PathBuf::from("input.abds"),
            seed: 0,
            count: None,
            schedule: None,
            sampler: Sampler::Ddpm,
            guidance: GuidanceSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectCmdConfig {
    pub model: PathBuf,
    pub dataset: PathBuf,
    /// Training images, needed only to fit `patch_pca`.
    pub train_dataset: Option<PathBuf>,
    pub seed: u64,
    pub count: Option<usize>,
    pub schedule: Option<ScheduleSpec>,
    pub sampler: Sampler,
    pub guidance: GuidanceSpec,
    pub extractor: ExtractorSpec,
    pub metric: DistanceMetric,
    pub segment: SegmentParams,
    pub f1_thresholds: usize,
}

impl Default for DetectCmdConfig {
    fn default() -> Self {
        let bench = BenchConfig::default();
        DetectCmdConfig {
            model: PathBuf::from("model.abds"),
            dataset: PathBuf::from("test.abds"),
            train_dataset: None,
            seed: 0,
            count: None,
            schedule: None,
            sampler: Sampler::Ddim { steps: 20 },
            guidance: GuidanceSpec::default(),
            extractor: bench.extractor,
            metric: bench.metric,
            segment: bench.segment,
            f1_thresholds: bench.f1_thresholds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Output directory of a `detect` run.
    pub detect_dir: PathBuf,
    pub dataset: PathBuf,
    pub seed: u64,
    pub f1_thresholds: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            detect_dir: PathBuf::from("detect"),
            dataset: PathBuf::from("test.abds"),
            seed: 0,
            f1_thresholds: 9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    /// Guidance strength.
    #[default]
    Alpha,
    Lambda,
    /// One point per entry of `strategies`; `values` is ignored.
    Strategy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub seed: u64,
    pub param: SweepParam,
    pub values: Vec<f64>,
    pub strategies: Vec<Strategy>,
    pub samplers: Vec<Sampler>,
    /// Use an existing model and test set instead of generating and
    /// training from `bench`.
    pub model: Option<PathBuf>,
    pub test_dataset: Option<PathBuf>,
    pub train_dataset: Option<PathBuf>,
    pub bench: BenchConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            seed: 0,
            param: SweepParam::Strategy,
            values: Vec::new(),
            strategies: vec![
                Strategy::Naive,
                Strategy::ForwardMatch,
                Strategy::ReverseMatch,
            ],
            samplers: vec![Sampler::Ddpm, Sampler::Ddim { steps: 20 }],
            model: None,
            test_dataset: None,
            train_dataset: None,
            bench: BenchConfig::default(),
        }
    }
}

impl Seeded for GenDataConfig {
    fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
    }
}

impl Seeded for TrainCmdConfig {
    fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.mlp.seed = seed;
        self.train.seed = seed;
    }
}

impl Seeded for SampleConfig {
    fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
    }
}

impl Seeded for EditConfig {
    fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
    }
}

impl Seeded for DetectCmdConfig {
    fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
    }
}

impl Seeded for EvalConfig {
    fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
    }
}

impl Seeded for SweepConfig {
    fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.bench.seed = seed;
        self.bench.mlp.seed = seed;
        self.bench.train.seed = seed;
    }
}

impl Seeded for OracleConfig {
    fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
    }
}
