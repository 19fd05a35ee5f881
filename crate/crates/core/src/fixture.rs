//! Deterministic synthetic RGB / flow / depth sequences with scripted motion.
//!
//! Every rendered value is a multiple of 1/255, so writing to 8-bit PNG and
//! reading back is lossless. Depth is stretched to the full range before
//! quantization, which makes the loader's min-max normalization a no-op.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::sample::{check_size, SampleTriplet};
use crate::tensor::Tensor;

/// One square object. Positions and sizes are fractions of the frame,
/// velocities are fractions per frame. Larger depth means nearer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub size: f64,
    pub y: f64,
    pub x: f64,
    pub dy: f64,
    pub dx: f64,
    pub depth: f64,
    pub color: [f64; 3],
}

/// Ways to make a modality useless for locating the salient object.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub enum Corruption {
    #[default]
    None,
    /// Every pixel set to this value.
    Constant(f64),
    /// This fraction of pixels replaced by black or white.
    Salt(f64),
    /// The distractor is rendered with the salient object's cue and vice versa.
    WrongObject,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixtureSpec {
    pub sequence_id: String,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// The first object is the salient one; the rest are distractors.
    pub objects: Vec<ObjectSpec>,
    /// Standard deviation of additive Gaussian noise on every modality.
    pub noise: f64,
    /// Maximum random offset of each object's start position.
    pub jitter: f64,
    pub depth_corrupt: Corruption,
    pub flow_corrupt: Corruption,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self {
            sequence_id: "fixture".into(),
            frames: 8,
            height: 64,
            width: 64,
            objects: vec![
                ObjectSpec {
                    size: 0.3,
                    y: 0.15,
                    x: 0.1,
                    dy: 0.05,
                    dx: 0.07,
                    depth: 0.9,
                    color: [0.85, 0.25, 0.2],
                },
                ObjectSpec {
                    size: 0.25,
                    y: 0.6,
                    x: 0.6,
                    dy: 0.0,
                    dx: 0.0,
                    depth: 0.35,
                    color: [0.2, 0.45, 0.85],
                },
            ],
            noise: 0.01,
            jitter: 0.05,
            depth_corrupt: Corruption::None,
            flow_corrupt: Corruption::None,
        }
    }
}

impl FixtureSpec {
    pub fn validate(&self) -> Result<()> {
        check_size("fixture", self.height, self.width)?;
        if self.frames == 0 {
            return Err(Error::Config("fixture needs at least one frame".into()));
        }
        if self.objects.is_empty() {
            return Err(Error::Config("fixture needs at least one object".into()));
        }
        for o in &self.objects {
            if !(o.size > 0.0 && o.size <= 1.0) {
                return Err(Error::Config("object size must be in (0, 1]".into()));
            }
            if !(0.0..=1.0).contains(&o.depth) || o.color.iter().any(|c| !(0.0..=1.0).contains(c)) {
                return Err(Error::Config("object depth and color must be in [0, 1]".into()));
            }
        }
        for c in [self.depth_corrupt, self.flow_corrupt] {
            match c {
                Corruption::Constant(v) | Corruption::Salt(v) if !(0.0..=1.0).contains(&v) => {
                    return Err(Error::Config("corruption parameter must be in [0, 1]".into()));
                }
                _ => {}
            }
        }
        if !(self.noise >= 0.0 && self.jitter >= 0.0) {
            return Err(Error::Config("noise and jitter must be non-negative".into()));
        }
        Ok(())
    }
}

/// Reflects `p` into `[0, span]`.
fn bounce(p: f64, span: f64) -> f64 {
    if span <= 0.0 {
        return 0.0;
    }
    let period = 2.0 * span;
    let t = p - math::floor(p / period) * period;
    if t > span {
        period - t
    } else {
        t
    }
}

#[derive(Clone, Copy)]
struct Placed {
    top: usize,
    left: usize,
    side: usize,
    vy: f64,
    vx: f64,
}

fn place(o: &ObjectSpec, start: (f64, f64), frame: usize, h: usize, w: usize) -> Placed {
    let side = (math::round(o.size * h.min(w) as f64) as usize).clamp(1, h.min(w));
    let span_y = (h - side) as f64 / h as f64;
    let span_x = (w - side) as f64 / w as f64;
    let pos = |f: usize| {
        (
            bounce(start.0 + o.dy * f as f64, span_y),
            bounce(start.1 + o.dx * f as f64, span_x),
        )
    };
    let (py, px) = pos(frame);
    let (ny, nx) = pos(frame + 1);
    let top = (math::round(py * h as f64) as usize).min(h - side);
    let left = (math::round(px * w as f64) as usize).min(w - side);
    Placed {
        top,
        left,
        side,
        vy: (ny - py) * h as f64,
        vx: (nx - px) * w as f64,
    }
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h - math::floor(h)) * 6.0;
    let i = math::floor(h6);
    let f = h6 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match i as u32 % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Color-wheel rendering of a displacement: hue from direction, saturation
/// from magnitude relative to `max_mag`. Zero motion is white.
pub fn flow_color(vy: f64, vx: f64, max_mag: f64) -> [f64; 3] {
    let mag = math::sqrt(vy * vy + vx * vx);
    if mag == 0.0 || max_mag <= 0.0 {
        return [1.0; 3];
    }
    let hue = (math::atan2(-vy, -vx) / PI + 1.0) / 2.0;
    hsv_to_rgb(hue, (mag / max_mag).min(1.0), 1.0)
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    math::sqrt(-2.0 * math::ln(u1)) * math::cos(2.0 * PI * u2)
}

fn add_noise(t: &mut Tensor, sigma: f64, rng: &mut ChaCha8Rng) {
    if sigma > 0.0 {
        for v in t.data_mut() {
            *v += sigma * gaussian(rng);
        }
    }
}

/// Applies salt or constant corruption in place; `WrongObject` is handled at
/// render time.
fn corrupt(t: &mut Tensor, c: Corruption, rng: &mut ChaCha8Rng) {
    match c {
        Corruption::Constant(v) => t.data_mut().iter_mut().for_each(|x| *x = v),
        Corruption::Salt(p) => {
            let [ch, h, w] = t.shape();
            for y in 0..h {
                for x in 0..w {
                    if rng.gen::<f64>() < p {
                        let v = if rng.gen::<bool>() { 1.0 } else { 0.0 };
                        for c in 0..ch {
                            t.set(c, y, x, v);
                        }
                    }
                }
            }
        }
        Corruption::None | Corruption::WrongObject => {}
    }
}

fn quantize(t: &mut Tensor) {
    for v in t.data_mut() {
        *v = math::round(v.clamp(0.0, 1.0) * 255.0) / 255.0;
    }
}

/// Stretches to `[0, 1]`; constants stay put.
fn stretch(t: &mut Tensor) {
    let (lo, hi) = (t.min(), t.max());
    if hi > lo {
        for v in t.data_mut() {
            *v = (*v - lo) / (hi - lo);
        }
    }
}

/// Renders every frame of a fixture. A pure function of `(spec, seed)`.
pub fn render(spec: &FixtureSpec, seed: u64) -> Result<Vec<SampleTriplet>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (spec.height, spec.width);
    let starts: Vec<(f64, f64)> = spec
        .objects
        .iter()
        .map(|o| {
            let j = spec.jitter;
            let jy = if j > 0.0 { rng.gen_range(-j..=j) } else { 0.0 };
            let jx = if j > 0.0 { rng.gen_range(-j..=j) } else { 0.0 };
            (o.y + jy, o.x + jx)
        })
        .collect();
    // draw far objects first so nearer ones occlude them
    let mut order: Vec<usize> = (0..spec.objects.len()).collect();
    order.sort_by(|&a, &b| spec.objects[a].depth.total_cmp(&spec.objects[b].depth));

    let swap = |i: usize, c: Corruption| -> usize {
        if c == Corruption::WrongObject && spec.objects.len() > 1 {
            match i {
                0 => 1,
                1 => 0,
                other => other,
            }
        } else {
            i
        }
    };

    let mut frames = Vec::with_capacity(spec.frames);
    for f in 0..spec.frames {
        let placed: Vec<Placed> = spec
            .objects
            .iter()
            .zip(&starts)
            .map(|(o, &s)| place(o, s, f, h, w))
            .collect();
        // topmost object index per pixel
        let mut owner = vec![usize::MAX; h * w];
        for &i in &order {
            let p = placed[i];
            for y in p.top..p.top + p.side {
                for x in p.left..p.left + p.side {
                    owner[y * w + x] = i;
                }
            }
        }
        let max_mag = placed
            .iter()
            .map(|p| math::sqrt(p.vy * p.vy + p.vx * p.vx))
            .fold(0.0, f64::max);

        let mut rgb = Tensor::zeros([3, h, w]);
        let mut flow = Tensor::zeros([3, h, w]);
        let mut depth = Tensor::zeros([1, h, w]);
        let mut gt = Tensor::zeros([1, h, w]);
        for y in 0..h {
            for x in 0..w {
                let fy = y as f64 / h as f64;
                let fx = x as f64 / w as f64;
                let owner = owner[y * w + x];
                let (color, d, motion) = if owner == usize::MAX {
                    ([0.55 + 0.2 * fx, 0.6, 0.45 + 0.2 * fy], 0.1 + 0.15 * fy, (0.0, 0.0))
                } else {
                    let o = &spec.objects[owner];
                    let di = swap(owner, spec.depth_corrupt);
                    let fi = swap(owner, spec.flow_corrupt);
                    (o.color, spec.objects[di].depth, (placed[fi].vy, placed[fi].vx))
                };
                for c in 0..3 {
                    rgb.set(c, y, x, color[c]);
                }
                let fc = flow_color(motion.0, motion.1, max_mag);
                for c in 0..3 {
                    flow.set(c, y, x, fc[c]);
                }
                depth.set(0, y, x, d);
                gt.set(0, y, x, (owner == 0) as u8 as f64);
            }
        }

        add_noise(&mut rgb, spec.noise, &mut rng);
        add_noise(&mut flow, spec.noise, &mut rng);
        add_noise(&mut depth, spec.noise, &mut rng);
        corrupt(&mut flow, spec.flow_corrupt, &mut rng);
        corrupt(&mut depth, spec.depth_corrupt, &mut rng);
        if !matches!(spec.depth_corrupt, Corruption::Constant(_)) {
            stretch(&mut depth);
        }
        quantize(&mut rgb);
        quantize(&mut flow);
        quantize(&mut depth);
        let depth = Tensor::concat(&[&depth, &depth, &depth])?;

        frames.push(SampleTriplet {
            rgb,
            flow,
            depth,
            gt,
            sequence_id: spec.sequence_id.clone(),
            frame_index: f,
        });
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_valid() {
        let spec = FixtureSpec::default();
        let a = render(&spec, 7).unwrap();
        let b = render(&spec, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 8);
        for s in &a {
            s.validate().unwrap();
            for t in [&s.rgb, &s.flow, &s.depth] {
                assert!(t.data().iter().all(|v| (v * 255.0).fract() == 0.0));
            }
        }
        assert_ne!(a, render(&spec, 8).unwrap());
    }

    #[test]
    fn single_square_gt_is_filled_square() {
        let spec = FixtureSpec {
            objects: vec![FixtureSpec::default().objects[0].clone()],
            ..FixtureSpec::default()
        };
        for s in render(&spec, 1).unwrap() {
            let side = math::round(0.3 * 64.0) as usize;
            assert_eq!(s.gt.sum() as usize, side * side);
            let ys: Vec<usize> = (0..64).filter(|&y| (0..64).any(|x| s.gt.at(0, y, x) == 1.0)).collect();
            let xs: Vec<usize> = (0..64).filter(|&x| (0..64).any(|y| s.gt.at(0, y, x) == 1.0)).collect();
            assert_eq!(ys.len(), side);
            assert_eq!(xs.len(), side);
            assert_eq!(ys[side - 1] - ys[0] + 1, side);
        }
    }

    #[test]
    fn constant_depth_corruption() {
        let spec = FixtureSpec {
            depth_corrupt: Corruption::Constant(0.5),
            ..FixtureSpec::default()
        };
        let clean = render(&FixtureSpec::default(), 3).unwrap();
        let bad = render(&spec, 3).unwrap();
        for (c, b) in clean.iter().zip(&bad) {
            assert_eq!(b.depth.min(), b.depth.max());
            assert_eq!(c.gt, b.gt);
        }
    }

    #[test]
    fn flow_marks_moving_object_only() {
        let spec = FixtureSpec {
            noise: 0.0,
            ..FixtureSpec::default()
        };
        let s = &render(&spec, 0).unwrap()[0];
        for y in 0..64 {
            for x in 0..64 {
                let white = (0..3).all(|c| s.flow.at(c, y, x) == 1.0);
                assert_eq!(white, s.gt.at(0, y, x) == 0.0, "({y},{x})");
            }
        }
        // salient object is the nearest surface
        let salient = (0..64 * 64).find(|&i| s.gt.data()[i] == 1.0).unwrap();
        assert_eq!(s.depth.data()[salient], 1.0);
    }

    #[test]
    fn wrong_object_moves_the_flow_cue() {
        let spec = FixtureSpec {
            noise: 0.0,
            flow_corrupt: Corruption::WrongObject,
            ..FixtureSpec::default()
        };
        let s = &render(&spec, 0).unwrap()[0];
        let coloured_on_gt = (0..64 * 64)
            .filter(|&i| s.gt.data()[i] == 1.0 && s.flow.data()[i] < 1.0)
            .count();
        assert_eq!(coloured_on_gt, 0);
        assert!(s.flow.min() < 1.0);
    }

    #[test]
    fn rejects_bad_resolution() {
        let spec = FixtureSpec {
            height: 40,
            ..FixtureSpec::default()
        };
        assert!(matches!(render(&spec, 0), Err(Error::NotDivisible { .. })));
    }

    #[test]
    fn bounce_stays_in_range() {
        for i in -50..50 {
            let p = bounce(i as f64 * 0.13, 0.7);
            assert!((0.0..=0.7).contains(&p));
        }
    }
}
