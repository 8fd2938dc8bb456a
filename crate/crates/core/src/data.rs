//! Seeded synthetic datasets: mixture point clouds and textured images
//! with planted anomalies.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::score::GmmDistribution;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointDataset {
    pub dim: usize,
    /// Row-major `n x dim`.
    pub samples: Vec<f64>,
    /// Mixture component of each row.
    pub components: Vec<usize>,
    pub gmm: GmmDistribution,
    pub seed: u64,
}

impl PointDataset {
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.samples[i * self.dim..(i + 1) * self.dim]
    }
}

pub fn gen_gmm_dataset(gmm: &GmmDistribution, n: usize, seed: u64) -> Result<PointDataset> {
    if n == 0 {
        return Err(Error::Invalid("dataset size must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = gmm.dim();
    let mut samples = Vec::with_capacity(n * dim);
    let mut components = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut k = gmm.components() - 1;
        for (j, w) in gmm.weights().iter().enumerate() {
            acc += w;
            if u < acc {
                k = j;
                break;
            }
        }
        for (m, v) in gmm.means()[k].iter().zip(&gmm.vars()[k]) {
            let z: f64 = StandardNormal.sample(&mut rng);
            samples.push(m + v.sqrt() * z);
        }
        components.push(k);
    }
    Ok(PointDataset {
        dim,
        samples,
        components,
        gmm: gmm.clone(),
        seed,
    })
}

/// Statistics of one texture family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextureFamily {
    pub mean: f64,
    /// Per-component amplitude ceiling; each image draws `U(0.5, 1)` of it.
    pub amplitude: f64,
    /// Spatial frequency band in radians per pixel.
    pub freq_lo: f64,
    pub freq_hi: f64,
}

impl TextureFamily {
    pub fn defaults() -> Vec<TextureFamily> {
        vec![
            TextureFamily {
                mean: 0.35,
                amplitude: 0.05,
                freq_lo: 0.7,
                freq_hi: 1.1,
            },
            TextureFamily {
                mean: 0.5,
                amplitude: 0.08,
                freq_lo: 0.3,
                freq_hi: 0.6,
            },
            TextureFamily {
                mean: 0.65,
                amplitude: 0.1,
                freq_lo: 0.08,
                freq_hi: 0.25,
            },
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyShape {
    Rectangle,
    Disk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TextureParams {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub families: Vec<TextureFamily>,
    /// Sinusoids per image.
    pub waves: usize,
    pub shapes: Vec<AnomalyShape>,
    /// Side length (rectangles) or diameter (disks) range, inclusive.
    pub anomaly_min: usize,
    pub anomaly_max: usize,
    pub anomaly_rate: f64,
}

impl Default for TextureParams {
    fn default() -> Self {
        TextureParams {
            height: 16,
            width: 16,
            channels: 1,
            n_train: 2000,
            n_test: 100,
            families: TextureFamily::defaults(),
            waves: 3,
            shapes: vec![AnomalyShape::Rectangle, AnomalyShape::Disk],
            anomaly_min: 4,
            anomaly_max: 7,
            anomaly_rate: 1.0,
        }
    }
}

impl TextureParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Invalid(m.to_string()));
        if self.height == 0 || self.width == 0 || self.channels == 0 {
            return bad("image size must be positive");
        }
        if self.families.is_empty() || self.waves == 0 {
            return bad("need at least one family and one wave");
        }
        if self
            .families
            .iter()
            .any(|f| !(f.freq_lo > 0.0 && f.freq_lo <= f.freq_hi) || f.amplitude < 0.0)
        {
            return bad("family frequency bands must satisfy 0 < lo <= hi and amplitudes >= 0");
        }
        if !(0.0..=1.0).contains(&self.anomaly_rate) {
            return bad("anomaly rate must lie in [0, 1]");
        }
        if self.anomaly_rate > 0.0 {
            if self.shapes.is_empty() {
                return bad("anomalies requested but no shapes allowed");
            }
            if self.anomaly_min == 0 || self.anomaly_min > self.anomaly_max {
                return bad("anomaly size range must satisfy 1 <= min <= max");
            }
            if self.anomaly_max >= self.height.min(self.width) {
                return bad("anomaly size must be smaller than the image");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageDataset {
    pub images: Vec<Image>,
    /// Per-image component masks (0 = clean, k = k-th planted shape).
    pub masks: Vec<Vec<u32>>,
    pub families: Vec<usize>,
    pub params: TextureParams,
    pub seed: u64,
}

impl ImageDataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// All images mapped to model space, row-major `n x (h w c)`.
    pub fn model_rows(&self) -> Vec<f64> {
        self.images.iter().flat_map(Image::to_model_space).collect()
    }
}

struct Wave {
    kx: f64,
    ky: f64,
}

fn image_rng(seed: u64, split: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((split << 32) | index as u64);
    rng
}

/// Fixed wave vectors for each family, shared by both splits.
fn family_waves(params: &TextureParams, seed: u64) -> Vec<Vec<Wave>> {
    let mut rng = image_rng(seed, 0, 0);
    params
        .families
        .iter()
        .map(|f| {
            (0..params.waves)
                .map(|_| {
                    let k = rng.random_range(f.freq_lo..=f.freq_hi);
                    let theta = rng.random_range(0.0..std::f64::consts::PI);
                    Wave {
                        kx: k * theta.cos(),
                        ky: k * theta.sin(),
                    }
                })
                .collect()
        })
        .collect()
}

fn base_texture(
    params: &TextureParams,
    fam: &TextureFamily,
    waves: &[Wave],
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let (h, w, ch) = (params.height, params.width, params.channels);
    let mut data = vec![fam.mean; h * w * ch];
    for c in 0..ch {
        for wave in waves {
            let amp = fam.amplitude * rng.random_range(0.5..1.0);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            for r in 0..h {
                for col in 0..w {
                    let arg = wave.kx * col as f64 + wave.ky * r as f64 + phase;
                    data[(r * w + col) * ch + c] += amp * arg.sin();
                }
            }
        }
    }
    data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    data
}

/// Pixels covered by a shape whose bounding box starts at `(top, left)`.
pub fn rasterize(shape: AnomalyShape, top: usize, left: usize, size: usize) -> Vec<(usize, usize)> {
    let mut px = Vec::new();
    let centre = (size as f64 - 1.0) / 2.0;
    let r2 = (size as f64 / 2.0).powi(2);
    for dr in 0..size {
        for dc in 0..size {
            let inside = match shape {
                AnomalyShape::Rectangle => true,
                AnomalyShape::Disk => {
                    (dr as f64 - centre).powi(2) + (dc as f64 - centre).powi(2) <= r2
                }
            };
            if inside {
                px.push((top + dr, left + dc));
            }
        }
    }
    px
}

fn plant(params: &TextureParams, data: &mut [f64], mask: &mut [u32], rng: &mut ChaCha8Rng) {
    let (h, w, ch) = (params.height, params.width, params.channels);
    let shape = params.shapes[rng.random_range(0..params.shapes.len())];
    let size = rng.random_range(params.anomaly_min..=params.anomaly_max);
    let top = rng.random_range(0..=h - size);
    let left = rng.random_range(0..=w - size);
    let solid = rng.random_bool(0.5);
    let level = if rng.random_bool(0.5) { 0.02 } else { 0.98 };
    for (r, c) in rasterize(shape, top, left, size) {
        // alien pattern: a one-pixel checkerboard, far above every family band
        let v = if solid {
            level
        } else if (r + c) % 2 == 0 {
            0.1
        } else {
            0.9
        };
        for k in 0..ch {
            data[(r * w + c) * ch + k] = v;
        }
        mask[r * w + c] = 1;
    }
}

fn split(
    params: &TextureParams,
    seed: u64,
    split_id: u64,
    n: usize,
    waves: &[Vec<Wave>],
) -> Result<ImageDataset> {
    let (h, w, ch) = (params.height, params.width, params.channels);
    let mut images = Vec::with_capacity(n);
    let mut masks = Vec::with_capacity(n);
    let mut families = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = image_rng(seed, split_id, i);
        let f = rng.random_range(0..params.families.len());
        let mut data = base_texture(params, &params.families[f], &waves[f], &mut rng);
        let mut mask = vec![0u32; h * w];
        if split_id == 2 && rng.random::<f64>() < params.anomaly_rate {
            plant(params, &mut data, &mut mask, &mut rng);
        }
        images.push(Image::new(h, w, ch, data)?);
        masks.push(mask);
        families.push(f);
    }
    Ok(ImageDataset {
        images,
        masks,
        families,
        params: params.clone(),
        seed,
    })
}

/// Anomaly-free training images and test images with planted shapes.
pub fn gen_texture_dataset(
    params: &TextureParams,
    seed: u64,
) -> Result<(ImageDataset, ImageDataset)> {
    params.validate()?;
    let waves = family_waves(params, seed);
    Ok((
        split(params, seed, 1, params.n_train, &waves)?,
        split(params, seed, 2, params.n_test, &waves)?,
    ))
}
