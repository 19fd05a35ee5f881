//! Saliency metrics: MAE, maximum F-measure and the structure measure.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::sample::SaliencyMap;
use crate::tensor::Tensor;

/// β² of the F-measure.
pub const BETA2: f64 = 0.3;

/// Number of 8-bit binarization thresholds.
pub const THRESHOLDS: usize = 256;

const EPS: f64 = f64::EPSILON;

fn check(pred: &SaliencyMap, gt: &Tensor, op: &'static str) -> Result<()> {
    pred.values().expect_shape(gt, op)?;
    if !gt.is_binary() {
        return Err(Error::NonBinary { op });
    }
    Ok(())
}

/// Mean absolute error.
pub fn mae(pred: &SaliencyMap, gt: &Tensor) -> Result<f64> {
    check(pred, gt, "mae")?;
    let sum: f64 = pred
        .values()
        .data()
        .iter()
        .zip(gt.data())
        .map(|(p, g)| (p - g).abs())
        .sum();
    Ok(sum / gt.len() as f64)
}

/// Rounds a `[0, 1]` prediction to its 8-bit level.
#[inline]
pub fn quantize(p: f64) -> u8 {
    math::round(p * 255.0) as u8
}

/// F-measure at every threshold `t ∈ {0..255}`, binarizing `quantize(pred) > t`.
/// Thresholds with no positive prediction, or an empty GT, score 0.
pub fn f_curve(pred: &SaliencyMap, gt: &Tensor) -> Result<[f64; THRESHOLDS]> {
    check(pred, gt, "f_beta_max")?;
    let mut fg_hist = [0u64; THRESHOLDS];
    let mut all_hist = [0u64; THRESHOLDS];
    let mut positives = 0u64;
    for (&p, &g) in pred.values().data().iter().zip(gt.data()) {
        let q = quantize(p) as usize;
        all_hist[q] += 1;
        if g == 1.0 {
            fg_hist[q] += 1;
            positives += 1;
        }
    }
    let mut curve = [0.0; THRESHOLDS];
    // counts of q > t, accumulated from the top
    let (mut tp, mut pp) = (0u64, 0u64);
    for t in (0..THRESHOLDS).rev() {
        if t + 1 < THRESHOLDS {
            tp += fg_hist[t + 1];
            pp += all_hist[t + 1];
        }
        curve[t] = f_measure(tp, pp, positives);
    }
    Ok(curve)
}

fn f_measure(tp: u64, predicted: u64, positives: u64) -> f64 {
    if predicted == 0 || positives == 0 || tp == 0 {
        return 0.0;
    }
    let precision = tp as f64 / predicted as f64;
    let recall = tp as f64 / positives as f64;
    (1.0 + BETA2) * precision * recall / (BETA2 * precision + recall)
}

/// Maximum F-measure over the 256 thresholds.
pub fn f_beta_max(pred: &SaliencyMap, gt: &Tensor) -> Result<f64> {
    Ok(f_curve(pred, gt)?.iter().copied().fold(0.0, f64::max))
}

/// Structure measure with α = 0.5.
pub fn s_measure(pred: &SaliencyMap, gt: &Tensor) -> Result<f64> {
    check(pred, gt, "s_measure")?;
    let p = pred.values();
    let y = gt.mean();
    if y == 0.0 {
        return Ok(1.0 - p.mean());
    }
    if y == 1.0 {
        return Ok(p.mean());
    }
    let score = 0.5 * object_score(p, gt) + 0.5 * region_score(p, gt);
    Ok(score.max(0.0))
}

fn object_score(pred: &Tensor, gt: &Tensor) -> f64 {
    let mut fg = Vec::new();
    let mut bg = Vec::new();
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        if g == 1.0 {
            fg.push(p);
        } else {
            bg.push(1.0 - p);
        }
    }
    let u = gt.mean();
    u * object_similarity(&fg) + (1.0 - u) * object_similarity(&bg)
}

fn object_similarity(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        math::sqrt(values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0))
    };
    2.0 * mean / (mean * mean + 1.0 + std + EPS)
}

/// 1-based GT centroid `(x, y)`, rounded half away from zero.
fn centroid(gt: &Tensor) -> (usize, usize) {
    let (h, w) = (gt.height(), gt.width());
    let mut count = 0.0;
    let (mut sx, mut sy) = (0.0, 0.0);
    for y in 0..h {
        for x in 0..w {
            if gt.at(0, y, x) == 1.0 {
                count += 1.0;
                sx += (x + 1) as f64;
                sy += (y + 1) as f64;
            }
        }
    }
    if count == 0.0 {
        return (math::round(w as f64 / 2.0) as usize, math::round(h as f64 / 2.0) as usize);
    }
    (math::round(sx / count) as usize, math::round(sy / count) as usize)
}

fn region_score(pred: &Tensor, gt: &Tensor) -> f64 {
    let (h, w) = (gt.height(), gt.width());
    let (cx, cy) = centroid(gt);
    let area = (h * w) as f64;
    let blocks = [
        (0, cy, 0, cx),
        (0, cy, cx, w),
        (cy, h, 0, cx),
        (cy, h, cx, w),
    ];
    let w1 = (cx * cy) as f64 / area;
    let w2 = (cy * (w - cx)) as f64 / area;
    let w3 = ((h - cy) * cx) as f64 / area;
    let weights = [w1, w2, w3, 1.0 - w1 - w2 - w3];
    blocks
        .iter()
        .zip(weights)
        .map(|(&(y0, y1, x0, x1), wt)| {
            if y1 <= y0 || x1 <= x0 {
                0.0
            } else {
                wt * block_ssim(pred, gt, y0, y1, x0, x1)
            }
        })
        .sum()
}

fn block_ssim(pred: &Tensor, gt: &Tensor, y0: usize, y1: usize, x0: usize, x1: usize) -> f64 {
    let n = ((y1 - y0) * (x1 - x0)) as f64;
    let (mut mx, mut my) = (0.0, 0.0);
    for y in y0..y1 {
        for x in x0..x1 {
            mx += pred.at(0, y, x);
            my += gt.at(0, y, x);
        }
    }
    mx /= n;
    my /= n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for y in y0..y1 {
        for x in x0..x1 {
            let dx = pred.at(0, y, x) - mx;
            let dy = gt.at(0, y, x) - my;
            sxx += dx * dx;
            syy += dy * dy;
            sxy += dx * dy;
        }
    }
    let denom = n - 1.0 + EPS;
    let (sxx, syy, sxy) = (sxx / denom, syy / denom, sxy / denom);
    let alpha = 4.0 * mx * my * sxy;
    let beta = (mx * mx + my * my) * (sxx + syy);
    if alpha != 0.0 {
        alpha / (beta + EPS)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Per-frame scores.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameScores {
    pub s_alpha: f64,
    pub mae: f64,
    pub f_curve: [f64; THRESHOLDS],
}

impl FrameScores {
    pub fn compute(pred: &SaliencyMap, gt: &Tensor) -> Result<Self> {
        Ok(Self {
            s_alpha: s_measure(pred, gt)?,
            mae: mae(pred, gt)?,
            f_curve: f_curve(pred, gt)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceMetrics {
    pub sequence_id: String,
    pub frames: usize,
    pub s_alpha: f64,
    pub f_beta_max: f64,
    pub mae: f64,
}

/// Dataset-level scores: frame means of S_α and MAE, and the maximum over
/// thresholds of the frame-mean F-measure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub s_alpha: f64,
    pub f_beta_max: f64,
    pub mae: f64,
    pub frames: usize,
    pub per_sequence: Vec<SequenceMetrics>,
}

#[derive(Clone, Debug)]
struct Totals {
    frames: usize,
    s: f64,
    mae: f64,
    f: Vec<f64>,
}

impl Totals {
    fn new() -> Self {
        Self {
            frames: 0,
            s: 0.0,
            mae: 0.0,
            f: vec![0.0; THRESHOLDS],
        }
    }

    fn add(&mut self, s: &FrameScores) {
        self.frames += 1;
        self.s += s.s_alpha;
        self.mae += s.mae;
        for (a, b) in self.f.iter_mut().zip(s.f_curve.iter()) {
            *a += b;
        }
    }

    fn finish(&self) -> (f64, f64, f64) {
        let n = self.frames.max(1) as f64;
        let f_max = self.f.iter().map(|v| v / n).fold(0.0, f64::max);
        (self.s / n, f_max, self.mae / n)
    }
}

/// Accumulates frame scores in insertion order.
#[derive(Clone, Debug)]
pub struct Evaluator {
    all: Totals,
    sequences: Vec<(String, Totals)>,
}

impl Default for Evaluator {
    fn default() -> Self {
        Self::new()
    }
}

impl Evaluator {
    pub fn new() -> Self {
        Self {
            all: Totals::new(),
            sequences: Vec::new(),
        }
    }

    pub fn add(&mut self, sequence_id: &str, scores: &FrameScores) {
        self.all.add(scores);
        match self.sequences.iter_mut().find(|(id, _)| id == sequence_id) {
            Some((_, t)) => t.add(scores),
            None => {
                let mut t = Totals::new();
                t.add(scores);
                self.sequences.push((sequence_id.into(), t));
            }
        }
    }

    pub fn report(&self) -> MetricReport {
        let (s_alpha, f_beta_max, mae) = self.all.finish();
        MetricReport {
            s_alpha,
            f_beta_max,
            mae,
            frames: self.all.frames,
            per_sequence: self
                .sequences
                .iter()
                .map(|(id, t)| {
                    let (s, f, m) = t.finish();
                    SequenceMetrics {
                        sequence_id: id.clone(),
                        frames: t.frames,
                        s_alpha: s,
                        f_beta_max: f,
                        mae: m,
                    }
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gt() -> Tensor {
        Tensor::from_fn([1, 8, 8], |_, y, x| ((2..6).contains(&y) && (3..7).contains(&x)) as u8 as f64)
    }

    fn as_map(t: &Tensor) -> SaliencyMap {
        SaliencyMap::new(t.clone()).unwrap()
    }

    #[test]
    fn perfect_prediction() {
        let g = gt();
        assert_eq!(mae(&as_map(&g), &g).unwrap(), 0.0);
        assert!((f_beta_max(&as_map(&g), &g).unwrap() - 1.0).abs() < 1e-12);
        assert!((s_measure(&as_map(&g), &g).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn complement_and_constant() {
        let g = gt();
        let comp = g.map(|v| 1.0 - v);
        assert_eq!(f_beta_max(&as_map(&comp), &g).unwrap(), 0.0);
        let half = Tensor::full([1, 8, 8], 0.5);
        assert_eq!(mae(&as_map(&half), &g).unwrap(), 0.5);
        let flat = Tensor::full([1, 8, 8], g.mean());
        assert!(s_measure(&as_map(&flat), &g).unwrap() < s_measure(&as_map(&g), &g).unwrap());
    }

    #[test]
    fn degenerate_gt_conventions() {
        let zeros = Tensor::zeros([1, 4, 4]);
        let pred = Tensor::full([1, 4, 4], 0.25);
        assert!((s_measure(&as_map(&pred), &zeros).unwrap() - 0.75).abs() < 1e-15);
        let ones = Tensor::full([1, 4, 4], 1.0);
        assert!((s_measure(&as_map(&pred), &ones).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(f_beta_max(&as_map(&pred), &zeros).unwrap(), 0.0);
    }

    #[test]
    fn mae_symmetry() {
        let g = gt();
        let p = Tensor::from_fn([1, 8, 8], |_, y, x| ((y * 8 + x) % 11) as f64 / 10.0);
        let a = mae(&as_map(&p), &g).unwrap();
        let b = mae(&as_map(&p.map(|v| 1.0 - v)), &g.map(|v| 1.0 - v)).unwrap();
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn centroid_block_can_be_empty() {
        let g = Tensor::from_fn([1, 4, 4], |_, _, x| (x == 3) as u8 as f64);
        let p = Tensor::from_fn([1, 4, 4], |_, y, x| (y + x) as f64 / 6.0);
        let s = s_measure(&as_map(&p), &g).unwrap();
        assert!(s.is_finite() && (0.0..=1.0).contains(&s));
    }

    #[test]
    fn evaluator_means() {
        let g = gt();
        let mut ev = Evaluator::new();
        ev.add("a", &FrameScores::compute(&as_map(&g), &g).unwrap());
        ev.add("b", &FrameScores::compute(&as_map(&Tensor::full([1, 8, 8], 0.5)), &g).unwrap());
        let r = ev.report();
        assert_eq!(r.frames, 2);
        assert!((r.mae - 0.25).abs() < 1e-12);
        assert_eq!(r.per_sequence.len(), 2);
        assert_eq!(r.per_sequence[0].mae, 0.0);
    }

    #[test]
    fn rejects_mismatch() {
        let g = gt();
        let p = as_map(&Tensor::full([1, 4, 4], 0.5));
        assert!(mae(&p, &g).is_err());
        let nb = Tensor::full([1, 4, 4], 0.5);
        assert!(matches!(mae(&p, &nb), Err(Error::NonBinary { .. })));
    }
}
