//! Analysis stage: compare an input with its in-distribution edit.

mod features;
mod segment;

pub use features::{
    extract_features, fit_patch_pca, pixel_distance, DistanceMetric, FeatureExtractor,
};
pub use segment::{
    connected_components, refine_with_segments, segment_image, Connectivity, Segmentation,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::guidance::{derive_seed, guided_sample, EditResult, GuidanceConfig, Sampler};
use crate::image::Image;
use crate::schedule::NoiseSchedule;
use crate::score::{EpsModel, ScoreModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentParams {
    pub levels: usize,
    pub connectivity: Connectivity,
}

impl Default for SegmentParams {
    fn default() -> Self {
        SegmentParams {
            levels: 4,
            connectivity: Connectivity::Four,
        }
    }
}

/// Per-pixel scores before and after segment averaging.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyMap {
    pub height: usize,
    pub width: usize,
    pub raw: Vec<f64>,
    pub refined: Vec<f64>,
    pub extractor: String,
    pub segmentation: SegmentParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectConfig {
    pub guidance: GuidanceConfig,
    pub sampler: Sampler,
    pub extractor: FeatureExtractor,
    pub metric: DistanceMetric,
    pub segment: SegmentParams,
}

/// Feature distance between `input` and `edit`, refined over segments of
/// the input.
pub fn analyze(input: &Image, edit: &Image, cfg: &DetectConfig) -> Result<AnomalyMap> {
    if !input.same_shape(edit) {
        return Err(Error::Shape("input and edit differ in shape".into()));
    }
    let fa = extract_features(edit, &cfg.extractor)?;
    let fb = extract_features(input, &cfg.extractor)?;
    let raw = pixel_distance(&fa, &fb, cfg.metric)?;
    let seg = segment_image(input, cfg.segment.levels, cfg.segment.connectivity)?;
    let refined = refine_with_segments(&raw, &seg)?;
    Ok(AnomalyMap {
        height: input.height,
        width: input.width,
        raw,
        refined,
        extractor: cfg.extractor.name(),
        segmentation: cfg.segment,
    })
}

/// Edits `input` with guided diffusion and scores what changed. The model
/// works on intensities mapped to `[-1, 1]`.
pub fn detect(
    input: &Image,
    model: &ScoreModel,
    sched: &NoiseSchedule,
    cfg: &DetectConfig,
    seed: u64,
) -> Result<(EditResult, AnomalyMap)> {
    input.check_unit_range()?;
    if model.dim() != input.data.len() {
        return Err(Error::Shape(format!(
            "model expects {} values, image has {}",
            model.dim(),
            input.data.len()
        )));
    }
    let result = guided_sample(
        model,
        sched,
        &cfg.guidance,
        &input.to_model_space(),
        seed,
        cfg.sampler,
    )?;
    let edit = Image::from_model_space(input.height, input.width, input.channels, &result.edit)?;
    let map = analyze(input, &edit, cfg)?;
    Ok((result, map))
}

/// Runs [`detect`] on every image in parallel; image `i` uses
/// `derive_seed(seed, i)`.
pub fn detect_batch(
    images: &[Image],
    model: &ScoreModel,
    sched: &NoiseSchedule,
    cfg: &DetectConfig,
    seed: u64,
) -> Result<Vec<(EditResult, AnomalyMap)>> {
    images
        .par_iter()
        .enumerate()
        .map(|(i, im)| detect(im, model, sched, cfg, derive_seed(seed, i as u64)))
        .collect()
}
