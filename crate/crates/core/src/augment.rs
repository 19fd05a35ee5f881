//! Joint geometric augmentation: horizontal flip, rotation, crop-and-resize.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::sample::{binarize, SampleTriplet};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub flip_prob: f64,
    pub crop_prob: f64,
    /// Smallest crop side as a fraction of the frame.
    pub min_crop: f64,
    pub rotate_prob: f64,
    /// Largest rotation in radians.
    pub max_rotation: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            flip_prob: 0.5,
            crop_prob: 0.5,
            min_crop: 0.8,
            rotate_prob: 0.3,
            max_rotation: 10f64.to_radians(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropWindow {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

/// One concrete draw. Applied in the order flip, rotate, crop.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub hflip: bool,
    pub rotation: f64,
    pub crop: Option<CropWindow>,
}

impl AugmentParams {
    pub fn sample<R: Rng + ?Sized>(config: &AugmentConfig, height: usize, width: usize, rng: &mut R) -> Self {
        let hflip = rng.gen::<f64>() < config.flip_prob;
        let rotation = if rng.gen::<f64>() < config.rotate_prob && config.max_rotation > 0.0 {
            rng.gen_range(-config.max_rotation..=config.max_rotation)
        } else {
            0.0
        };
        let crop = if rng.gen::<f64>() < config.crop_prob && config.min_crop < 1.0 {
            let frac = rng.gen_range(config.min_crop..=1.0);
            let ch = ((height as f64 * frac) as usize).clamp(1, height);
            let cw = ((width as f64 * frac) as usize).clamp(1, width);
            Some(CropWindow {
                top: rng.gen_range(0..=height - ch),
                left: rng.gen_range(0..=width - cw),
                height: ch,
                width: cw,
            })
        } else {
            None
        };
        Self { hflip, rotation, crop }
    }

    pub fn is_identity(&self) -> bool {
        !self.hflip && self.rotation == 0.0 && self.crop.is_none()
    }

    /// Applies the same transform to all four modalities. GT is re-binarized
    /// after every interpolating step.
    pub fn apply(&self, sample: &SampleTriplet) -> Result<SampleTriplet> {
        if self.is_identity() {
            return Ok(sample.clone());
        }
        let (h, w) = (sample.height(), sample.width());
        if let Some(c) = self.crop {
            if c.height == 0 || c.width == 0 || c.top + c.height > h || c.left + c.width > w {
                return Err(Error::OutOfRange { op: "augment.crop" });
            }
        }
        let t = |img: &Tensor, mask: bool| {
            let mut out = if self.hflip { hflip(img) } else { img.clone() };
            if self.rotation != 0.0 {
                out = rotate(&out, self.rotation);
                if mask {
                    out = binarize(&out);
                }
            }
            if let Some(c) = self.crop {
                out = crop(&out, c).resize_bilinear(h, w);
                if mask {
                    out = binarize(&out);
                }
            }
            out
        };
        Ok(SampleTriplet {
            rgb: t(&sample.rgb, false),
            flow: t(&sample.flow, false),
            depth: t(&sample.depth, false),
            gt: t(&sample.gt, true),
            sequence_id: sample.sequence_id.clone(),
            frame_index: sample.frame_index,
        })
    }
}

/// Draws parameters and applies them.
pub fn augment<R: Rng + ?Sized>(sample: &SampleTriplet, config: &AugmentConfig, rng: &mut R) -> Result<SampleTriplet> {
    AugmentParams::sample(config, sample.height(), sample.width(), rng).apply(sample)
}

pub fn hflip(t: &Tensor) -> Tensor {
    let w = t.width();
    Tensor::from_fn(t.shape(), |c, y, x| t.at(c, y, w - 1 - x))
}

pub fn crop(t: &Tensor, c: CropWindow) -> Tensor {
    Tensor::from_fn([t.channels(), c.height, c.width], |ch, y, x| t.at(ch, c.top + y, c.left + x))
}

/// Rotation about the frame centre, bilinear with edge clamping.
pub fn rotate(t: &Tensor, angle: f64) -> Tensor {
    let (h, w) = (t.height(), t.width());
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (s, c) = (math::sin(angle), math::cos(angle));
    let clamp = |v: f64, n: usize| v.clamp(0.0, (n - 1) as f64);
    Tensor::from_fn(t.shape(), |ch, y, x| {
        let (dy, dx) = (y as f64 - cy, x as f64 - cx);
        let sy = clamp(cy + c * dy - s * dx, h);
        let sx = clamp(cx + s * dy + c * dx, w);
        let (y0, x0) = (math::floor(sy) as usize, math::floor(sx) as usize);
        let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
        let (ly, lx) = (sy - y0 as f64, sx - x0 as f64);
        let top = (1.0 - lx) * t.at(ch, y0, x0) + lx * t.at(ch, y0, x1);
        let bottom = (1.0 - lx) * t.at(ch, y1, x0) + lx * t.at(ch, y1, x1);
        (1.0 - ly) * top + ly * bottom
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixture::{render, FixtureSpec};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> SampleTriplet {
        render(&FixtureSpec::default(), 5).unwrap().remove(2)
    }

    #[test]
    fn flip_definition() {
        let s = sample();
        let p = AugmentParams {
            hflip: true,
            ..Default::default()
        };
        let out = p.apply(&s).unwrap();
        for y in 0..64 {
            for x in 0..64 {
                assert_eq!(out.gt.at(0, y, x), s.gt.at(0, y, 63 - x));
                assert_eq!(out.depth.at(1, y, x), s.depth.at(1, y, 63 - x));
            }
        }
        assert_eq!(out.gt.sum(), s.gt.sum());
    }

    #[test]
    fn identity_draw_is_unchanged() {
        let s = sample();
        let cfg = AugmentConfig {
            flip_prob: 0.0,
            crop_prob: 0.0,
            rotate_prob: 0.0,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(augment(&s, &cfg, &mut rng).unwrap(), s);
        assert_eq!(rotate(&s.rgb, 0.0), s.rgb);
    }

    #[test]
    fn crop_window_is_shared() {
        let s = sample();
        let win = CropWindow {
            top: 4,
            left: 10,
            height: 32,
            width: 32,
        };
        let p = AugmentParams {
            crop: Some(win),
            ..Default::default()
        };
        let out = p.apply(&s).unwrap();
        assert_eq!(out.rgb, crop(&s.rgb, win).resize_bilinear(64, 64));
        assert_eq!(out.flow, crop(&s.flow, win).resize_bilinear(64, 64));
        assert_eq!(out.depth, crop(&s.depth, win).resize_bilinear(64, 64));
        assert!(out.gt.is_binary());
        let bad = AugmentParams {
            crop: Some(CropWindow { top: 40, ..win }),
            ..Default::default()
        };
        assert!(bad.apply(&s).is_err());
    }

    proptest! {
        #[test]
        fn any_draw_keeps_gt_binary(seed in any::<u64>()) {
            let s = sample();
            let cfg = AugmentConfig { flip_prob: 0.5, crop_prob: 0.8, rotate_prob: 0.8, ..Default::default() };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = AugmentParams::sample(&cfg, 64, 64, &mut rng);
            let out = p.apply(&s).unwrap();
            prop_assert!(out.gt.is_binary());
            out.validate().unwrap();
            if p.rotation == 0.0 && p.crop.is_none() {
                prop_assert_eq!(out.gt.sum(), s.gt.sum());
            }
        }
    }
}
