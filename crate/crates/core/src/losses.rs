//! BCE + soft-IoU compound loss and the composed training objective.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::sample::SaliencyMap;
use crate::tensor::Tensor;
use crate::LEVELS;

/// Smoothing term of the IoU ratio, also the BCE clamp margin.
pub const EPS: f64 = 1e-6;

/// Weight of decoder level `i` (1-based): `1 / 2^(i-1)`.
pub const LEVEL_WEIGHTS: [f64; LEVELS] = [1.0, 0.5, 0.25, 0.125, 0.0625];

pub(crate) fn loss_bce_iou_raw(pred: &Tensor, target: &Tensor) -> Result<f64> {
    pred.expect_shape(target, "loss_bce_iou")?;
    let n = pred.len() as f64;
    let mut bce = 0.0;
    let (mut inter, mut sum_p, mut sum_t) = (0.0, 0.0, 0.0);
    for (&p, &t) in pred.data().iter().zip(target.data()) {
        let pc = p.clamp(EPS, 1.0 - EPS);
        bce -= t * math::ln(pc) + (1.0 - t) * math::ln(1.0 - pc);
        inter += p * t;
        sum_p += p;
        sum_t += t;
    }
    let union = sum_p + sum_t - inter;
    let iou = 1.0 - (inter + EPS) / (union + EPS);
    Ok(bce / n + iou)
}

pub(crate) fn loss_bce_iou_grad(pred: &Tensor, target: &Tensor) -> Tensor {
    let n = pred.len() as f64;
    let (mut inter, mut sum_p, mut sum_t) = (0.0, 0.0, 0.0);
    for (&p, &t) in pred.data().iter().zip(target.data()) {
        inter += p * t;
        sum_p += p;
        sum_t += t;
    }
    let num = inter + EPS;
    let den = sum_p + sum_t - inter + EPS;
    let mut out = Tensor::zeros(pred.shape());
    for ((o, &p), &t) in out.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let d_bce = if p > EPS && p < 1.0 - EPS {
            -(t / p - (1.0 - t) / (1.0 - p)) / n
        } else {
            0.0
        };
        // d/dp of -(I+ε)/(U+ε) with dI/dp = t, dU/dp = 1 - t
        let d_iou = -(t * den - num * (1.0 - t)) / (den * den);
        *o = d_bce + d_iou;
    }
    out
}

/// Mean BCE plus `1 - (Σpt + ε)/(Σp + Σt - Σpt + ε)`.
pub fn loss_bce_iou(pred: &SaliencyMap, target: &Tensor) -> Result<f64> {
    if !target.is_binary() {
        return Err(Error::NonBinary { op: "loss_bce_iou" });
    }
    loss_bce_iou_raw(pred.values(), target)
}

/// `L(S_D, GT) + L(S_F, GT) + L(SW, pGT)`; `sw` and `pgt` share the weight-map resolution.
pub fn loss_psf(
    s_d: &SaliencyMap,
    s_f: &SaliencyMap,
    sw: &Tensor,
    gt: &Tensor,
    pgt: &Tensor,
) -> Result<f64> {
    let terms = [
        loss_bce_iou(s_d, gt)?,
        loss_bce_iou(s_f, gt)?,
        loss_bce_iou_raw(sw, pgt)?,
    ];
    Ok(terms[0] + terms[1] + terms[2])
}

/// Level-weighted sum of the five decoder losses.
pub fn loss_decoder(maps: &[SaliencyMap], gt: &Tensor) -> Result<f64> {
    if maps.len() != LEVELS {
        return Err(Error::LevelCount {
            expected: LEVELS,
            found: maps.len(),
        });
    }
    let per_level: Vec<f64> = maps
        .iter()
        .map(|m| loss_bce_iou(m, gt))
        .collect::<Result<_>>()?;
    Ok(weighted_level_sum(&per_level))
}

pub(crate) fn weighted_level_sum(per_level: &[f64]) -> f64 {
    per_level
        .iter()
        .zip(LEVEL_WEIGHTS)
        .fold(0.0, |acc, (l, w)| acc + w * l)
}

/// Which supervision terms enter the objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossFlags {
    /// Include `L_PSF` at all.
    pub psf: bool,
    /// Include the `L(SW, pGT)` term inside `L_PSF`.
    pub pgt: bool,
}

impl Default for LossFlags {
    fn default() -> Self {
        Self {
            psf: true,
            pgt: true,
        }
    }
}

/// Loss breakdown of one step.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_psf: f64,
    pub l_decoder: f64,
    pub l_total: f64,
    pub per_level: [f64; LEVELS],
    /// `[L(S_D, GT), L(S_F, GT), L(SW, pGT)]`
    pub per_psf_term: [f64; 3],
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        self.l_total.is_finite()
            && self.l_psf.is_finite()
            && self.l_decoder.is_finite()
            && self.per_level.iter().all(|v| v.is_finite())
            && self.per_psf_term.iter().all(|v| v.is_finite())
    }

    /// Mean of several reports, field by field.
    pub fn mean(reports: &[LossReport]) -> LossReport {
        let n = reports.len() as f64;
        let mut out = LossReport::default();
        for r in reports {
            out.l_psf += r.l_psf / n;
            out.l_decoder += r.l_decoder / n;
            for i in 0..LEVELS {
                out.per_level[i] += r.per_level[i] / n;
            }
            for i in 0..3 {
                out.per_psf_term[i] += r.per_psf_term[i] / n;
            }
        }
        out.l_total = out.l_psf + out.l_decoder;
        out
    }
}

/// Composes the full objective from already-computed per-term losses.
pub fn loss_total(per_psf_term: [f64; 3], per_level: [f64; LEVELS], flags: LossFlags) -> LossReport {
    let l_psf = if flags.psf {
        let sw_term = if flags.pgt { per_psf_term[2] } else { 0.0 };
        per_psf_term[0] + per_psf_term[1] + sw_term
    } else {
        0.0
    };
    let l_decoder = weighted_level_sum(&per_level);
    LossReport {
        l_psf,
        l_decoder,
        l_total: l_psf + l_decoder,
        per_level,
        per_psf_term,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(shape: [usize; 3], v: f64) -> SaliencyMap {
        SaliencyMap::new(Tensor::full(shape, v)).unwrap()
    }

    #[test]
    fn perfect_prediction_is_near_zero() {
        let gt = Tensor::full([1, 4, 4], 1.0);
        let l = loss_bce_iou(&map([1, 4, 4], 1.0), &gt).unwrap();
        // clamp leaves -ln(1 - 1e-6) ≈ 1e-6 of BCE
        assert!(l.abs() < 2e-6, "{l}");
    }

    #[test]
    fn half_prediction_on_ones_by_hand() {
        let gt = Tensor::full([1, 2, 2], 1.0);
        let l = loss_bce_iou(&map([1, 2, 2], 0.5), &gt).unwrap();
        // BCE = ln 2; I = 2, U = 2 + 4 - 2 = 4
        let expected = core::f64::consts::LN_2 + (1.0 - (2.0 + EPS) / (4.0 + EPS));
        assert!((l - expected).abs() < 1e-12);
    }

    #[test]
    fn any_error_is_strictly_positive() {
        let gt = Tensor::from_fn([1, 3, 3], |_, y, x| ((y + x) % 2) as f64);
        let mut pred = gt.clone();
        pred.set(0, 1, 1, 0.9);
        let pred = SaliencyMap::new(pred).unwrap();
        assert!(loss_bce_iou(&pred, &gt).unwrap() > 0.0);
    }

    #[test]
    fn non_binary_target_rejected() {
        let gt = Tensor::full([1, 2, 2], 0.5);
        assert!(matches!(
            loss_bce_iou(&map([1, 2, 2], 0.5), &gt),
            Err(Error::NonBinary { .. })
        ));
    }

    #[test]
    fn psf_loss_is_sum_of_terms_and_symmetric() {
        let gt = Tensor::from_fn([1, 4, 4], |_, y, _| (y < 2) as u8 as f64);
        let s_a = SaliencyMap::new(Tensor::from_fn([1, 4, 4], |_, y, x| 0.1 + 0.05 * (y + x) as f64)).unwrap();
        let s_b = SaliencyMap::new(Tensor::from_fn([1, 4, 4], |_, y, x| 0.8 - 0.04 * (y * x) as f64)).unwrap();
        let sw = Tensor::full([1, 2, 2], 0.3);
        let pgt = Tensor::from_fn([1, 2, 2], |_, y, x| ((y + x) % 2) as f64);
        let total = loss_psf(&s_a, &s_b, &sw, &gt, &pgt).unwrap();
        let manual = loss_bce_iou(&s_a, &gt).unwrap()
            + loss_bce_iou(&s_b, &gt).unwrap()
            + loss_bce_iou_raw(&sw, &pgt).unwrap();
        assert_eq!(total, manual);
        let swapped = loss_psf(&s_b, &s_a, &sw, &gt, &pgt).unwrap();
        assert_eq!(total, swapped);
    }

    #[test]
    fn decoder_weights_sum_to_31_16() {
        let gt = Tensor::from_fn([1, 4, 4], |_, y, x| ((y * x) % 3 == 0) as u8 as f64);
        let m = map([1, 4, 4], 0.4);
        let l = loss_bce_iou(&m, &gt).unwrap();
        let maps = alloc::vec![m; LEVELS];
        let d = loss_decoder(&maps, &gt).unwrap();
        assert!((d - 31.0 / 16.0 * l).abs() < 1e-9);
        assert!(matches!(
            loss_decoder(&maps[..4], &gt),
            Err(Error::LevelCount { found: 4, .. })
        ));
    }

    #[test]
    fn report_identity_and_ablation() {
        let r = loss_total([0.3, 0.2, 0.7], [0.5, 0.4, 0.3, 0.2, 0.1], LossFlags::default());
        assert_eq!(r.l_total, r.l_psf + r.l_decoder);
        let off = loss_total(
            [0.3, 0.2, 0.7],
            [0.5, 0.4, 0.3, 0.2, 0.1],
            LossFlags { psf: false, pgt: true },
        );
        assert_eq!(off.l_total, off.l_decoder);
    }
}
