//! Pixel-level selective fusion of flow and depth features.
//!
//! A spatial weight map `SW` in `[0, 1]` is generated from both pyramids and
//! blends them per pixel: `f_df = SW ⊗ f_flow + (1 − SW) ⊗ f_depth`. During
//! training `SW` is supervised by a binary pseudo ground truth that marks, per
//! pixel, whether the flow stream's coarse prediction beats the depth stream's.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::encoder::{FeaturePyramid, PyramidTag};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::Conv2d;
use crate::params::{Init, ParamGroup, ParamStore};
use crate::sample::SaliencyMap;
use crate::tensor::{ConvGeometry, Tensor};
use crate::LEVELS;

/// The weight map at level-1 resolution and its resizes to every level.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialWeightMap {
    pub sw: Tensor,
    pub per_level: Vec<Tensor>,
}

impl SpatialWeightMap {
    /// Fills `per_level` by bilinear resizing of `sw`, which sits at level 1.
    pub fn from_level1(sw: Tensor) -> Self {
        let (h, w) = (sw.height(), sw.width());
        let per_level = (0..LEVELS)
            .map(|i| sw.resize_bilinear(h >> i, w >> i))
            .collect();
        Self { sw, per_level }
    }

    /// Uniform weight map for pyramids whose level 1 is `height × width`.
    pub fn constant(height: usize, width: usize, value: f64) -> Self {
        Self::from_level1(Tensor::full([1, height, width], value))
    }
}

/// Produces `SW` from aligned flow and depth pyramids.
#[derive(Clone, Debug)]
pub struct SwGenerator {
    level: Vec<Conv2d>,
    merge: Vec<Conv2d>,
    out: Conv2d,
}

impl SwGenerator {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, channels: usize, rng: &mut R) -> Self {
        let group = ParamGroup::SwGenerator;
        let level = (1..=LEVELS)
            .map(|i| {
                Conv2d::new(
                    store,
                    &format!("psf.sw.level{i}"),
                    group,
                    ConvGeometry::same(2 * channels, channels, 3),
                    Init::Relu,
                    rng,
                )
            })
            .collect();
        let merge = (1..LEVELS)
            .map(|i| {
                Conv2d::new(
                    store,
                    &format!("psf.sw.merge{i}"),
                    group,
                    ConvGeometry::same(2 * channels, channels, 3),
                    Init::Relu,
                    rng,
                )
            })
            .collect();
        let out = Conv2d::new(
            store,
            "psf.sw.out",
            group,
            ConvGeometry::pointwise(channels, 1),
            Init::Linear,
            rng,
        );
        Self { level, merge, out }
    }

    /// Returns `SW` at level-1 resolution.
    pub fn forward(&self, g: &mut Graph<'_>, flow: &[Var; LEVELS], depth: &[Var; LEVELS]) -> Result<Var> {
        for i in 0..LEVELS {
            let (a, b) = (g.shape(flow[i]), g.shape(depth[i]));
            if a != b {
                return Err(Error::ShapeMismatch {
                    op: "generate_sw",
                    left: a,
                    right: b,
                });
            }
        }
        let mut mixed = [flow[0]; LEVELS];
        for i in 0..LEVELS {
            let cat = g.concat(&[flow[i], depth[i]])?;
            mixed[i] = self.level[i].forward_relu(g, cat);
        }
        let mut agg = mixed[LEVELS - 1];
        for i in (0..LEVELS - 1).rev() {
            let up = g.upsample2(agg);
            let cat = g.concat(&[mixed[i], up])?;
            agg = self.merge[i].forward_relu(g, cat);
        }
        let logits = self.out.forward(g, agg);
        Ok(g.sigmoid(logits))
    }
}

/// Resizes a level-1 weight map onto every pyramid level.
pub fn sw_levels(g: &mut Graph<'_>, sw: Var) -> [Var; LEVELS] {
    let [_, h, w] = g.shape(sw);
    let mut out = [sw; LEVELS];
    for (i, o) in out.iter_mut().enumerate().skip(1) {
        *o = g.resize(sw, h >> i, w >> i);
    }
    out
}

/// `SW_i ⊗ f_flow + (1 − SW_i) ⊗ f_depth` on the tape.
pub fn fuse_level(g: &mut Graph<'_>, sw: Var, flow: Var, depth: Var) -> Result<Var> {
    let a = g.mul(sw, flow)?;
    let inv = g.one_minus(sw);
    let b = g.mul(inv, depth)?;
    g.add(a, b)
}

/// U-shaped single-stream head predicting a coarse saliency map.
#[derive(Clone, Debug)]
pub struct CoarseHead {
    top: Conv2d,
    merge: Vec<Conv2d>,
    out: Conv2d,
}

impl CoarseHead {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        group: ParamGroup,
        channels: usize,
        rng: &mut R,
    ) -> Self {
        let top = Conv2d::new(
            store,
            &format!("{prefix}.top"),
            group,
            ConvGeometry::same(channels, channels, 3),
            Init::Relu,
            rng,
        );
        let merge = (1..LEVELS)
            .map(|i| {
                Conv2d::new(
                    store,
                    &format!("{prefix}.merge{i}"),
                    group,
                    ConvGeometry::same(2 * channels, channels, 3),
                    Init::Relu,
                    rng,
                )
            })
            .collect();
        let out = Conv2d::new(
            store,
            &format!("{prefix}.out"),
            group,
            ConvGeometry::pointwise(channels, 1),
            Init::Linear,
            rng,
        );
        Self { top, merge, out }
    }

    /// Sigmoid map upsampled to `height × width`.
    pub fn forward(&self, g: &mut Graph<'_>, levels: &[Var; LEVELS], height: usize, width: usize) -> Result<Var> {
        let mut h = self.top.forward_relu(g, levels[LEVELS - 1]);
        for i in (0..LEVELS - 1).rev() {
            let up = g.upsample2(h);
            let cat = g.concat(&[levels[i], up])?;
            h = self.merge[i].forward_relu(g, cat);
        }
        let logits = self.out.forward(g, h);
        let s = g.sigmoid(logits);
        Ok(g.resize(s, height, width))
    }
}

fn pyramid_vars(g: &mut Graph<'_>, pyr: &FeaturePyramid) -> Result<[Var; LEVELS]> {
    if pyr.levels.len() != LEVELS {
        return Err(Error::LevelCount {
            expected: LEVELS,
            found: pyr.levels.len(),
        });
    }
    let vars: Vec<Var> = pyr.levels.iter().map(|l| g.input(l.clone())).collect();
    Ok(vars.try_into().expect("level count checked"))
}

/// Generates the weight map for a pair of pyramids.
pub fn generate_sw(
    store: &ParamStore,
    generator: &SwGenerator,
    flow: &FeaturePyramid,
    depth: &FeaturePyramid,
) -> Result<SpatialWeightMap> {
    if !flow.aligned_with(depth) || flow.levels.len() != depth.levels.len() {
        return Err(Error::ShapeMismatch {
            op: "generate_sw",
            left: flow.levels[0].shape(),
            right: depth.levels[0].shape(),
        });
    }
    let mut g = Graph::new(store);
    let f = pyramid_vars(&mut g, flow)?;
    let d = pyramid_vars(&mut g, depth)?;
    let sw = generator.forward(&mut g, &f, &d)?;
    Ok(SpatialWeightMap::from_level1(g.value(sw).clone()))
}

/// Per-level convex blend of the flow and depth pyramids.
pub fn selective_fuse(
    flow: &FeaturePyramid,
    depth: &FeaturePyramid,
    swm: &SpatialWeightMap,
) -> Result<FeaturePyramid> {
    let mut levels = Vec::with_capacity(LEVELS);
    for i in 0..LEVELS {
        let (f, d, sw) = (&flow.levels[i], &depth.levels[i], &swm.per_level[i]);
        f.expect_shape(d, "selective_fuse")?;
        if sw.height() != f.height() || sw.width() != f.width() || sw.channels() != 1 {
            return Err(Error::ShapeMismatch {
                op: "selective_fuse",
                left: sw.shape(),
                right: f.shape(),
            });
        }
        let plane = f.height() * f.width();
        let mut out = Tensor::zeros(f.shape());
        for c in 0..f.channels() {
            let dst = &mut out.data_mut()[c * plane..(c + 1) * plane];
            for (j, o) in dst.iter_mut().enumerate() {
                let s = sw.data()[j];
                *o = s * f.channel(c)[j] + (1.0 - s) * d.channel(c)[j];
            }
        }
        levels.push(out);
    }
    FeaturePyramid::new(levels, PyramidTag::DepthFlow)
}

/// Coarse saliency map of one stream at `height × width`.
pub fn predict_coarse(
    store: &ParamStore,
    head: &CoarseHead,
    pyr: &FeaturePyramid,
    height: usize,
    width: usize,
) -> Result<SaliencyMap> {
    let mut g = Graph::new(store);
    let levels = pyramid_vars(&mut g, pyr)?;
    let s = head.forward(&mut g, &levels, height, width)?;
    SaliencyMap::new(g.value(s).clone())
}

/// Min-max scaling to `[0, 1]`; a constant map becomes all zeros.
pub fn normalize01(map: &Tensor) -> Result<Tensor> {
    if map.has_nan() {
        return Err(Error::NotFinite { op: "normalize01" });
    }
    let (lo, hi) = (map.min(), map.max());
    if hi <= lo {
        return Ok(Tensor::zeros(map.shape()));
    }
    let span = hi - lo;
    Ok(map.map(|v| (v - lo) / span))
}

/// Binary pseudo ground truth: 1 where flow should be trusted.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoGt {
    pub pgt: Tensor,
    /// Contribution from salient GT pixels.
    pub salient: Tensor,
    /// Contribution from non-salient GT pixels.
    pub non_salient: Tensor,
}

/// Case analysis over `(S_F, S_D, GT)`; ties select depth in both regions.
pub fn pseudo_gt(s_f: &Tensor, s_d: &Tensor, gt: &Tensor) -> Result<PseudoGt> {
    s_f.expect_shape(s_d, "pseudo_gt")?;
    s_f.expect_shape(gt, "pseudo_gt")?;
    if !gt.is_binary() {
        return Err(Error::NonBinary { op: "pseudo_gt" });
    }
    let mut salient = Tensor::zeros(gt.shape());
    let mut non_salient = Tensor::zeros(gt.shape());
    for (j, &g) in gt.data().iter().enumerate() {
        let (f, d) = (s_f.data()[j], s_d.data()[j]);
        if g == 1.0 && f > d {
            salient.data_mut()[j] = 1.0;
        } else if g == 0.0 && f < d {
            non_salient.data_mut()[j] = 1.0;
        }
    }
    let pgt = salient.zip_map(&non_salient, |a, b| a.max(b))?;
    Ok(PseudoGt {
        pgt,
        salient,
        non_salient,
    })
}

/// Normalizes both coarse maps, then applies [`pseudo_gt`].
pub fn pseudo_gt_from_coarse(s_f: &Tensor, s_d: &Tensor, gt: &Tensor) -> Result<PseudoGt> {
    pseudo_gt(&normalize01(s_f)?, &normalize01(s_d)?, gt)
}

/// Splits a weight map into its GT-masked part and the complement.
pub fn split_sw(sw: &Tensor, gt: &Tensor) -> Result<(Tensor, Tensor)> {
    if !gt.is_binary() {
        return Err(Error::NonBinary { op: "split_sw" });
    }
    let s = sw.zip_map(gt, |w, g| w * g)?;
    let ns = sw.zip_map(gt, |w, g| w * (1.0 - g))?;
    Ok((s, ns))
}
