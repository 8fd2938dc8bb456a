use serde::{Deserialize, Serialize};

use crate::error::{ensure_same_len, Error, Result};
use crate::image::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Connectivity {
    #[default]
    #[serde(rename = "4")]
    Four,
    #[serde(rename = "8")]
    Eight,
}

impl Connectivity {
    pub fn from_count(n: u32) -> Result<Self> {
        match n {
            4 => Ok(Connectivity::Four),
            8 => Ok(Connectivity::Eight),
            _ => Err(Error::Invalid(format!(
                "connectivity must be 4 or 8, got {n}"
            ))),
        }
    }
}

/// Dense segment labels over an `height x width` grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segmentation {
    pub height: usize,
    pub width: usize,
    pub ids: Vec<usize>,
    pub sizes: Vec<usize>,
}

impl Segmentation {
    pub fn count(&self) -> usize {
        self.sizes.len()
    }
}

/// Labels connected regions where `same(a, b)` holds between neighbours.
/// Ids are assigned in raster order of each region's first pixel.
pub fn connected_components(
    height: usize,
    width: usize,
    connectivity: Connectivity,
    same: impl Fn(usize, usize) -> bool,
) -> Segmentation {
    const UNSET: usize = usize::MAX;
    let mut ids = vec![UNSET; height * width];
    let mut sizes = Vec::new();
    let mut stack = Vec::new();
    let offsets: &[(isize, isize)] = match connectivity {
        Connectivity::Four => &[(-1, 0), (1, 0), (0, -1), (0, 1)],
        Connectivity::Eight => &[
            (-1, -1),
            (-1, 0),
            (-1, 1),
            (0, -1),
            (0, 1),
            (1, -1),
            (1, 0),
            (1, 1),
        ],
    };
    for start in 0..ids.len() {
        if ids[start] != UNSET {
            continue;
        }
        let id = sizes.len();
        let mut size = 0;
        ids[start] = id;
        stack.push(start);
        while let Some(p) = stack.pop() {
            size += 1;
            let (r, c) = ((p / width) as isize, (p % width) as isize);
            for (dr, dc) in offsets {
                let (nr, nc) = (r + dr, c + dc);
                if nr < 0 || nc < 0 || nr >= height as isize || nc >= width as isize {
                    continue;
                }
                let q = nr as usize * width + nc as usize;
                if ids[q] == UNSET && same(p, q) {
                    ids[q] = id;
                    stack.push(q);
                }
            }
        }
        sizes.push(size);
    }
    Segmentation {
        height,
        width,
        ids,
        sizes,
    }
}

/// Quantises each channel into `levels` uniform bins over `[0, 1]` and
/// labels connected regions of identical quantised colour.
pub fn segment_image(
    image: &Image,
    levels: usize,
    connectivity: Connectivity,
) -> Result<Segmentation> {
    if levels < 2 {
        return Err(Error::Invalid(format!(
            "segmentation needs at least 2 levels, got {levels}"
        )));
    }
    let ch = image.channels;
    let q: Vec<usize> = image
        .data
        .iter()
        .map(|v| ((v.clamp(0.0, 1.0) * levels as f64) as usize).min(levels - 1))
        .collect();
    Ok(connected_components(
        image.height,
        image.width,
        connectivity,
        |a, b| q[a * ch..(a + 1) * ch] == q[b * ch..(b + 1) * ch],
    ))
}

/// Replaces every score by the mean over its segment.
pub fn refine_with_segments(raw: &[f64], seg: &Segmentation) -> Result<Vec<f64>> {
    ensure_same_len("refine scores vs segmentation", raw.len(), seg.ids.len())?;
    let mut sums = vec![0.0; seg.count()];
    for (v, &id) in raw.iter().zip(&seg.ids) {
        sums[id] += v;
    }
    let means: Vec<f64> = sums
        .iter()
        .zip(&seg.sizes)
        .map(|(s, &n)| s / n as f64)
        .collect();
    Ok(seg.ids.iter().map(|&id| means[id]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> Image {
        let data = (0..h * w).map(|i| f(i / w, i % w)).collect();
        Image::new(h, w, 1, data).unwrap()
    }

    #[test]
    fn constant_image_is_one_segment() {
        let s = segment_image(&gray(5, 7, |_, _| 0.3), 4, Connectivity::Four).unwrap();
        assert_eq!(s.count(), 1);
        assert_eq!(s.sizes, vec![35]);
    }

    #[test]
    fn two_halves() {
        let s = segment_image(
            &gray(4, 6, |_, c| if c < 2 { 0.1 } else { 0.9 }),
            4,
            Connectivity::Four,
        )
        .unwrap();
        assert_eq!(s.count(), 2);
        assert_eq!(s.sizes, vec![8, 16]);
    }

    #[test]
    fn checkerboard_connectivity() {
        let img = gray(4, 4, |r, c| ((r + c) % 2) as f64);
        assert_eq!(
            segment_image(&img, 2, Connectivity::Four).unwrap().count(),
            16
        );
        assert_eq!(
            segment_image(&img, 2, Connectivity::Eight).unwrap().count(),
            2
        );
        assert!(segment_image(&img, 1, Connectivity::Four).is_err());
    }

    #[test]
    fn channels_are_compared_jointly() {
        // equal first channel, different second channel
        let data = vec![0.1, 0.1, 0.1, 0.9];
        let img = Image::new(1, 2, 2, data).unwrap();
        assert_eq!(
            segment_image(&img, 2, Connectivity::Four).unwrap().count(),
            2
        );
    }

    #[test]
    fn refinement_properties() {
        let seg = segment_image(
            &gray(3, 4, |_, c| if c < 1 { 0.0 } else { 1.0 }),
            2,
            Connectivity::Four,
        )
        .unwrap();
        let raw: Vec<f64> = (0..12).map(|i| (i * i % 7) as f64 * 0.1).collect();
        let once = refine_with_segments(&raw, &seg).unwrap();
        let twice = refine_with_segments(&once, &seg).unwrap();
        for (a, b) in once.iter().zip(&twice) {
            assert!((a - b).abs() <= 1e-12);
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!((mean(&raw) - mean(&once)).abs() <= 1e-12);

        let one = Segmentation {
            height: 3,
            width: 4,
            ids: vec![0; 12],
            sizes: vec![12],
        };
        assert!(refine_with_segments(&raw, &one)
            .unwrap()
            .iter()
            .all(|v| (v - mean(&raw)).abs() < 1e-12));
        assert!(refine_with_segments(&raw[..5], &one).is_err());
    }
}
