use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

const PCA_RIDGE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureExtractor {
    Identity,
    /// Per channel: window mean, window standard deviation, and absolute
    /// central differences along x and y.
    PatchStats {
        radius: usize,
    },
    /// Projection of the centred `(2r+1)^2 * channels` neighbourhood onto
    /// `basis` (one row per output feature). An empty basis means unfitted.
    PatchPca {
        radius: usize,
        dims: usize,
        #[serde(default)]
        mean: Vec<f64>,
        #[serde(default)]
        basis: Vec<Vec<f64>>,
    },
}

impl FeatureExtractor {
    pub fn name(&self) -> String {
        match self {
            FeatureExtractor::Identity => "identity".into(),
            FeatureExtractor::PatchStats { radius } => format!("patch_stats(r={radius})"),
            FeatureExtractor::PatchPca { radius, dims, .. } => {
                format!("patch_pca(r={radius},d={dims})")
            }
        }
    }

    pub fn is_fitted(&self) -> bool {
        match self {
            FeatureExtractor::PatchPca { dims, basis, .. } => basis.len() == *dims && *dims > 0,
            _ => true,
        }
    }

    pub fn output_channels(&self, input_channels: usize) -> usize {
        match self {
            FeatureExtractor::Identity => input_channels,
            FeatureExtractor::PatchStats { .. } => 4 * input_channels,
            FeatureExtractor::PatchPca { dims, .. } => *dims,
        }
    }
}

fn patch_len(radius: usize, channels: usize) -> usize {
    (2 * radius + 1).pow(2) * channels
}

/// Flattened neighbourhood of `(r, c)` with replicated borders.
fn patch_into(img: &Image, r: usize, c: usize, radius: usize, out: &mut Vec<f64>) {
    out.clear();
    let rad = radius as isize;
    for dr in -rad..=rad {
        for dc in -rad..=rad {
            for ch in 0..img.channels {
                out.push(img.at_clamped(r as isize + dr, c as isize + dc, ch));
            }
        }
    }
}

pub fn extract_features(image: &Image, fx: &FeatureExtractor) -> Result<Image> {
    image.check_unit_range()?;
    let (h, w, ch) = (image.height, image.width, image.channels);
    match fx {
        FeatureExtractor::Identity => Ok(image.clone()),
        FeatureExtractor::PatchStats { radius } => {
            let rad = *radius as isize;
            let n = ((2 * radius + 1) * (2 * radius + 1)) as f64;
            let mut out = Vec::with_capacity(h * w * 4 * ch);
            for r in 0..h as isize {
                for c in 0..w as isize {
                    for k in 0..ch {
                        let window = || {
                            (-rad..=rad).flat_map(move |dr| {
                                (-rad..=rad).map(move |dc| image.at_clamped(r + dr, c + dc, k))
                            })
                        };
                        let mean = window().sum::<f64>() / n;
                        let var = window().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                        let dx =
                            0.5 * (image.at_clamped(r, c + 1, k) - image.at_clamped(r, c - 1, k));
                        let dy =
                            0.5 * (image.at_clamped(r + 1, c, k) - image.at_clamped(r - 1, c, k));
                        out.extend_from_slice(&[mean, var.sqrt(), dx.abs(), dy.abs()]);
                    }
                }
            }
            Image::new(h, w, 4 * ch, out)
        }
        FeatureExtractor::PatchPca {
            radius,
            dims,
            mean,
            basis,
        } => {
            if !fx.is_fitted() {
                return Err(Error::Invalid(
                    "patch_pca extractor has no fitted basis".into(),
                ));
            }
            let len = patch_len(*radius, ch);
            if mean.len() != len || basis.iter().any(|b| b.len() != len) {
                return Err(Error::Shape(format!(
                    "patch_pca basis fitted for {} values per patch, image gives {len}",
                    mean.len()
                )));
            }
            let mut out = Vec::with_capacity(h * w * dims);
            let mut patch = Vec::with_capacity(len);
            for r in 0..h {
                for c in 0..w {
                    patch_into(image, r, c, *radius, &mut patch);
                    for b in basis {
                        out.push(
                            b.iter()
                                .zip(&patch)
                                .zip(mean)
                                .map(|((bi, p), m)| bi * (p - m))
                                .sum(),
                        );
                    }
                }
            }
            Image::new(h, w, *dims, out)
        }
    }
}

/// Fits a patch PCA basis from up to `max_patches` neighbourhoods drawn
/// uniformly (with replacement) from `images`.
pub fn fit_patch_pca(
    images: &[Image],
    radius: usize,
    dims: usize,
    max_patches: usize,
    seed: u64,
) -> Result<FeatureExtractor> {
    let first = images
        .first()
        .ok_or_else(|| Error::Invalid("no images to fit patch PCA".into()))?;
    if images.iter().any(|im| im.channels != first.channels) {
        return Err(Error::Shape("images disagree on channel count".into()));
    }
    let len = patch_len(radius, first.channels);
    if dims == 0 || dims > len {
        return Err(Error::Invalid(format!(
            "patch_pca dims must lie in 1..={len}, got {dims}"
        )));
    }
    let total: usize = images.iter().map(Image::pixels).sum();
    let n = total.min(max_patches);
    if n < dims {
        return Err(Error::Invalid(format!(
            "{n} patches cannot determine {dims} directions"
        )));
    }

    let mut patches = DMatrix::<f64>::zeros(n, len);
    let mut patch = Vec::with_capacity(len);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..n {
        let (im, r, c) = if n == total {
            locate(images, i)
        } else {
            let im = &images[rng.random_range(0..images.len())];
            (
                im,
                rng.random_range(0..im.height),
                rng.random_range(0..im.width),
            )
        };
        im.check_unit_range()?;
        patch_into(im, r, c, radius, &mut patch);
        patches.row_mut(i).copy_from_slice(&patch);
    }
    let mean: Vec<f64> = (0..len).map(|j| patches.column(j).mean()).collect();
    for j in 0..len {
        patches.column_mut(j).add_scalar_mut(-mean[j]);
    }
    let mut cov = patches.transpose() * &patches / n as f64;
    for j in 0..len {
        cov[(j, j)] += PCA_RIDGE;
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..len).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let basis = order[..dims]
        .iter()
        .map(|&k| {
            let v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
            // fix the sign so the largest-magnitude entry is positive
            let pivot = v
                .iter()
                .copied()
                .fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            let s = if pivot < 0.0 { -1.0 } else { 1.0 };
            v.into_iter().map(|x| s * x).collect()
        })
        .collect();
    Ok(FeatureExtractor::PatchPca {
        radius,
        dims,
        mean,
        basis,
    })
}

fn locate(images: &[Image], mut i: usize) -> (&Image, usize, usize) {
    for im in images {
        if i < im.pixels() {
            return (im, i / im.width, i % im.width);
        }
        i -= im.pixels();
    }
    unreachable!("index within total pixel count")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    #[default]
    Cosine,
    L2,
}

/// Per-pixel distance between two feature maps of equal shape. Cosine
/// distance is 0 between two zero vectors and 1 between a zero and a
/// non-zero vector.
pub fn pixel_distance(a: &Image, b: &Image, metric: DistanceMetric) -> Result<Vec<f64>> {
    if !a.same_shape(b) {
        return Err(Error::Shape(format!(
            "feature maps {}x{}x{} and {}x{}x{}",
            a.height, a.width, a.channels, b.height, b.width, b.channels
        )));
    }
    let ch = a.channels;
    Ok(a.data
        .chunks(ch)
        .zip(b.data.chunks(ch))
        .map(|(u, v)| match metric {
            DistanceMetric::L2 => u
                .iter()
                .zip(v)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt(),
            DistanceMetric::Cosine => {
                let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                match (nu == 0.0, nv == 0.0) {
                    _ if u == v => 0.0,
                    (true, true) => 0.0,
                    (true, false) | (false, true) => 1.0,
                    _ => {
                        let cos = u.iter().zip(v).map(|(x, y)| x * y).sum::<f64>() / (nu * nv);
                        (1.0 - cos).clamp(0.0, 2.0)
                    }
                }
            }
        })
        .collect())
}
