//! Pixel-level detection metrics.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::pipeline::{connected_components, Connectivity};

/// Scores with ground truth over one or more `height x width` frames.
///
/// `components[i]` is the ground-truth anomaly component of pixel `i`, with
/// 0 meaning "not anomalous". Ids are global across frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledScores {
    scores: Vec<f64>,
    labels: Vec<bool>,
    components: Vec<u32>,
    height: usize,
    width: usize,
}

impl LabeledScores {
    pub fn new(
        scores: Vec<f64>,
        labels: Vec<bool>,
        components: Vec<u32>,
        height: usize,
        width: usize,
    ) -> Result<Self> {
        let frame = height * width;
        if frame == 0 || scores.is_empty() || !scores.len().is_multiple_of(frame) {
            return Err(Error::Shape(format!(
                "{} scores do not tile {height}x{width} frames",
                scores.len()
            )));
        }
        if labels.len() != scores.len() || components.len() != scores.len() {
            return Err(Error::Shape(
                "scores, labels and components differ in length".into(),
            ));
        }
        ensure_finite("scores", &scores)?;
        if labels.iter().zip(&components).any(|(l, c)| *l != (*c > 0)) {
            return Err(Error::Invalid(
                "labels must be positive exactly on ground-truth components".into(),
            ));
        }
        Ok(LabeledScores {
            scores,
            labels,
            components,
            height,
            width,
        })
    }

    /// Builds from a component mask alone; labels are `component > 0`.
    pub fn from_components(
        scores: Vec<f64>,
        components: Vec<u32>,
        height: usize,
        width: usize,
    ) -> Result<Self> {
        let labels = components.iter().map(|c| *c > 0).collect();
        LabeledScores::new(scores, labels, components, height, width)
    }

    /// Stacks frames, renumbering components so they stay distinct.
    pub fn concat(parts: &[LabeledScores]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Invalid("nothing to concatenate".into()))?;
        let (h, w) = (first.height, first.width);
        let mut out = LabeledScores {
            scores: vec![],
            labels: vec![],
            components: vec![],
            height: h,
            width: w,
        };
        let mut offset = 0u32;
        for p in parts {
            if (p.height, p.width) != (h, w) {
                return Err(Error::Shape("frames differ in size".into()));
            }
            out.scores.extend_from_slice(&p.scores);
            out.labels.extend_from_slice(&p.labels);
            out.components.extend(
                p.components
                    .iter()
                    .map(|&c| if c > 0 { c + offset } else { 0 }),
            );
            offset += p.components.iter().copied().max().unwrap_or(0);
        }
        Ok(out)
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|l| **l).count()
    }

    pub fn frames(&self) -> usize {
        self.scores.len() / (self.height * self.width)
    }
}

/// Average precision with tied scores treated as one block.
pub fn auc_pr(ls: &LabeledScores) -> Result<f64> {
    let pos = ls.positives();
    if pos == 0 || pos == ls.scores.len() {
        return Err(Error::Invalid(
            "AUC-PR needs both positive and negative pixels".into(),
        ));
    }
    let mut order: Vec<usize> = (0..ls.scores.len()).collect();
    order.sort_by(|&a, &b| ls.scores[b].total_cmp(&ls.scores[a]));
    let (mut tp, mut fp, mut ap) = (0usize, 0usize, 0.0);
    let mut i = 0;
    while i < order.len() {
        let s = ls.scores[order[i]];
        let mut block_pos = 0;
        while i < order.len() && ls.scores[order[i]] == s {
            if ls.labels[order[i]] {
                block_pos += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        tp += block_pos;
        if block_pos > 0 {
            ap += (tp as f64 / (tp + fp) as f64) * (block_pos as f64 / pos as f64);
        }
    }
    Ok(ap)
}

/// `n` thresholds at quantile levels `k / (n + 1)` of the distinct score
/// values, linearly interpolated.
pub fn quantile_thresholds(scores: &[f64], n: usize) -> Vec<f64> {
    let mut distinct = scores.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let m = distinct.len();
    (1..=n)
        .map(|k| {
            let pos = k as f64 / (n + 1) as f64 * (m - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(m - 1);
            let frac = pos - lo as f64;
            distinct[lo] + frac * (distinct[hi] - distinct[lo])
        })
        .collect()
}

/// Component-weighted F1 averaged over `n_thresholds` quantile thresholds.
///
/// A ground-truth pixel weighs `1 / |its component|`; a false-positive pixel
/// weighs `1 / |its 4-connected predicted component|`. A pixel is predicted
/// anomalous when its score is strictly above the threshold.
pub fn f1_star(ls: &LabeledScores, n_thresholds: usize) -> Result<f64> {
    if n_thresholds == 0 {
        return Err(Error::Invalid("F1* needs at least one threshold".into()));
    }
    let max_id = ls.components.iter().copied().max().unwrap_or(0) as usize;
    if max_id == 0 {
        return Err(Error::Invalid(
            "F1* needs at least one ground-truth component".into(),
        ));
    }
    let mut gt_size = vec![0usize; max_id + 1];
    for &c in &ls.components {
        gt_size[c as usize] += 1;
    }
    let frame = ls.height * ls.width;
    let mut total = 0.0;
    for thr in quantile_thresholds(&ls.scores, n_thresholds) {
        let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
        for f in 0..ls.frames() {
            let range = f * frame..(f + 1) * frame;
            let pred: Vec<bool> = ls.scores[range.clone()].iter().map(|s| *s > thr).collect();
            let comps = connected_components(ls.height, ls.width, Connectivity::Four, |a, b| {
                pred[a] == pred[b]
            });
            for (i, (&p, &c)) in pred.iter().zip(&ls.components[range]).enumerate() {
                match (p, c > 0) {
                    (true, true) => tp += 1.0 / gt_size[c as usize] as f64,
                    (false, true) => fn_ += 1.0 / gt_size[c as usize] as f64,
                    (true, false) => fp += 1.0 / comps.sizes[comps.ids[i]] as f64,
                    (false, false) => {}
                }
            }
        }
        total += 2.0 * tp / (2.0 * tp + fp + fn_);
    }
    Ok(total / n_thresholds as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(scores: &[f64], comps: &[u32]) -> LabeledScores {
        LabeledScores::from_components(scores.to_vec(), comps.to_vec(), 1, scores.len()).unwrap()
    }

    #[test]
    fn validation() {
        assert!(LabeledScores::new(
            vec![0.1; 4],
            vec![true, false, false, false],
            vec![0, 0, 0, 0],
            2,
            2
        )
        .is_err());
        assert!(LabeledScores::from_components(vec![0.1; 5], vec![0; 5], 2, 2).is_err());
        assert!(LabeledScores::from_components(vec![f64::NAN; 4], vec![0; 4], 2, 2).is_err());
    }

    #[test]
    fn ap_examples() {
        assert_eq!(
            auc_pr(&row(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0])).unwrap(),
            1.0
        );
        let constant = row(&[0.5; 10], &[1, 1, 1, 0, 0, 0, 0, 0, 0, 0]);
        assert!((auc_pr(&constant).unwrap() - 0.3).abs() < 1e-15);
        let hand = auc_pr(&row(&[0.9, 0.8, 0.7], &[1, 0, 2])).unwrap();
        assert!((hand - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        assert!(auc_pr(&row(&[0.1, 0.2], &[0, 0])).is_err());
        assert!(auc_pr(&row(&[0.1, 0.2], &[1, 1])).is_err());
    }

    #[test]
    fn thresholds_interpolate_distinct_values() {
        assert_eq!(quantile_thresholds(&[0.0, 1.0, 1.0, 0.0], 1), vec![0.5]);
        assert_eq!(
            quantile_thresholds(&[3.0, 1.0, 2.0], 3),
            vec![1.5, 2.0, 2.5]
        );
        assert_eq!(quantile_thresholds(&[0.0; 5], 2), vec![0.0, 0.0]);
    }

    #[test]
    fn f1_perfect_and_empty() {
        let perfect = row(&[1.0, 1.0, 0.0, 0.0, 1.0], &[1, 1, 0, 0, 2]);
        assert_eq!(f1_star(&perfect, 9).unwrap(), 1.0);
        let zero = row(&[0.0; 5], &[1, 1, 0, 0, 2]);
        assert_eq!(f1_star(&zero, 9).unwrap(), 0.0);
        assert!(f1_star(&row(&[0.1, 0.2], &[0, 0]), 9).is_err());
        assert!(f1_star(&perfect, 0).is_err());
    }

    #[test]
    fn f1_size_normalization() {
        // 10x10 frame: component 1 is one pixel, component 2 the other 99
        let mut comps = vec![2u32; 100];
        comps[0] = 1;
        let scores: Vec<f64> = comps
            .iter()
            .map(|&c| if c == 2 { 1.0 } else { 0.0 })
            .collect();
        let mut comps_with_bg = comps.clone();
        let mut scores_with_bg = scores.clone();
        comps_with_bg.extend(std::iter::repeat_n(0, 100));
        scores_with_bg.extend(std::iter::repeat_n(0.0, 100));
        let ls = LabeledScores::from_components(scores_with_bg, comps_with_bg, 10, 10).unwrap();
        assert!((f1_star(&ls, 9).unwrap() - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn false_positives_weigh_by_predicted_component() {
        // one true pixel detected, plus one 3-pixel false blob: FP = 3 * (1/3) = 1
        let ls = row(&[1.0, 0.0, 1.0, 1.0, 1.0, 0.0], &[1, 0, 0, 0, 0, 0]);
        assert!((f1_star(&ls, 1).unwrap() - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn concat_renumbers_components() {
        let a = row(&[1.0, 0.0], &[1, 0]);
        let b = row(&[0.0, 1.0], &[0, 1]);
        let c = LabeledScores::concat(&[a, b]).unwrap();
        assert_eq!(c.components, vec![1, 0, 0, 2]);
        assert_eq!(c.frames(), 2);
        assert_eq!(f1_star(&c, 3).unwrap(), 1.0);
    }
}
