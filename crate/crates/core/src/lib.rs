//! Guided-diffusion editing and analysis-by-synthesis anomaly detection.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod experiment;
pub mod guidance;
pub mod image;
pub mod io;
pub mod metrics;
pub mod oracle;
pub mod pipeline;
pub mod schedule;
pub mod score;
pub mod tensor;

pub use error::{Error, Result};
pub use guidance::{EditResult, GuidanceConfig, Sampler, SimilarityKernel, Strategy};
pub use image::Image;
pub use metrics::LabeledScores;
pub use pipeline::{AnomalyMap, DetectConfig, FeatureExtractor};
pub use schedule::{NoiseSchedule, ScheduleKind};
pub use score::{EpsModel, GmmDistribution, MlpEpsModel, ScoreModel};
pub use tensor::Tensor;
