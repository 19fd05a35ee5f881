//! Multi-dimensional selective attention: four weight-perception branches
//! (width, height, spatial, channel) fusing RGB features with the PSF output.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::Conv2d;
use crate::params::{Init, ParamGroup, ParamStore};
use crate::tensor::{ConvGeometry, PoolAxis, Shape, Tensor};

/// Attention dimension of a branch. Branch outputs are summed in this order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Branch {
    Width,
    Height,
    Spatial,
    Channel,
}

impl Branch {
    pub const ALL: [Branch; 4] = [Branch::Width, Branch::Height, Branch::Spatial, Branch::Channel];

    /// Width attention keeps the width axis (mean over height), height keeps
    /// height, channel keeps channels, spatial keeps both spatial axes.
    pub fn pool_axis(self) -> PoolAxis {
        match self {
            Branch::Width => PoolAxis::OverHeight,
            Branch::Height => PoolAxis::OverWidth,
            Branch::Channel => PoolAxis::OverSpatial,
            Branch::Spatial => PoolAxis::OverChannels,
        }
    }

    pub fn pooled_shape(self, shape: Shape) -> Shape {
        self.pool_axis().pooled_shape(shape)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Branch::Width => "width",
            Branch::Height => "height",
            Branch::Spatial => "spatial",
            Branch::Channel => "channel",
        }
    }
}

/// Average pooling for one attention branch.
pub fn pool_axis(feature: &Tensor, branch: Branch) -> Tensor {
    feature.pool(branch.pool_axis())
}

/// Weight perception module of one branch.
#[derive(Clone, Debug)]
pub struct Wpm {
    pub branch: Branch,
    mix: Conv2d,
    gate_df: Conv2d,
    gate_r: Conv2d,
    width: usize,
}

impl Wpm {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        branch: Branch,
        channels: usize,
        rng: &mut R,
    ) -> Self {
        let group = ParamGroup::Msam;
        let width = if branch == Branch::Spatial { 1 } else { channels };
        let name = format!("{prefix}.{}", branch.as_str());
        let mix = Conv2d::new(
            store,
            &format!("{name}.mix"),
            group,
            ConvGeometry::pointwise(2 * width, 2 * width),
            Init::Linear,
            rng,
        );
        let gate_df = Conv2d::new(
            store,
            &format!("{name}.gate_df"),
            group,
            ConvGeometry::pointwise(width, width),
            Init::Linear,
            rng,
        );
        let gate_r = Conv2d::new(
            store,
            &format!("{name}.gate_r"),
            group,
            ConvGeometry::pointwise(width, width),
            Init::Linear,
            rng,
        );
        Self {
            branch,
            mix,
            gate_df,
            gate_r,
            width,
        }
    }

    pub fn weight_ids(&self) -> [crate::params::ParamId; 6] {
        [
            self.mix.weight(),
            self.mix.bias(),
            self.gate_df.weight(),
            self.gate_df.bias(),
            self.gate_r.weight(),
            self.gate_r.bias(),
        ]
    }

    /// Attention vectors `(y_df, y_r)` from pooled descriptors.
    pub fn attention(&self, g: &mut Graph<'_>, w_df: Var, w_r: Var) -> Result<(Var, Var)> {
        let (a, b) = (g.shape(w_df), g.shape(w_r));
        if a != b || a[0] != self.width {
            return Err(Error::ShapeMismatch {
                op: "wpm",
                left: a,
                right: b,
            });
        }
        let cat = g.concat(&[w_df, w_r])?;
        let mixed = self.mix.forward(g, cat);
        let x_df = g.slice_channels(mixed, 0, self.width);
        let x_r = g.slice_channels(mixed, self.width, self.width);
        let y_df = self.gate_df.forward(g, x_df);
        let y_df = g.sigmoid(y_df);
        let y_r = self.gate_r.forward(g, x_r);
        let y_r = g.sigmoid(y_r);
        Ok((y_df, y_r))
    }

    /// `y_df ⊗ f_df + y_r ⊗ f_r` with the attention broadcast over pooled axes.
    pub fn forward(&self, g: &mut Graph<'_>, w_df: Var, w_r: Var, f_df: Var, f_r: Var) -> Result<Var> {
        if g.shape(f_df) != g.shape(f_r) {
            return Err(Error::ShapeMismatch {
                op: "wpm",
                left: g.shape(f_df),
                right: g.shape(f_r),
            });
        }
        let (y_df, y_r) = self.attention(g, w_df, w_r)?;
        let a = g.mul(y_df, f_df)?;
        let b = g.mul(y_r, f_r)?;
        g.add(a, b)
    }

    /// Pools both features along this branch's axis and applies the module.
    pub fn branch_forward(&self, g: &mut Graph<'_>, f_r: Var, f_df: Var) -> Result<Var> {
        let axis = self.branch.pool_axis();
        let w_df = g.pool(f_df, axis);
        let w_r = g.pool(f_r, axis);
        self.forward(g, w_df, w_r, f_df, f_r)
    }
}

/// One MSAM block (one pyramid level).
#[derive(Clone, Debug)]
pub struct Msam {
    pub branches: Vec<Wpm>,
}

impl Msam {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, channels: usize, rng: &mut R) -> Self {
        Self {
            branches: Branch::ALL
                .iter()
                .map(|&b| Wpm::new(store, prefix, b, channels, rng))
                .collect(),
        }
    }

    /// Per-branch outputs in [`Branch::ALL`] order.
    pub fn branch_outputs(&self, g: &mut Graph<'_>, f_r: Var, f_df: Var) -> Result<Vec<Var>> {
        self.branches
            .iter()
            .map(|w| w.branch_forward(g, f_r, f_df))
            .collect()
    }

    /// `f_w + f_h + f_s + f_c`
    pub fn forward(&self, g: &mut Graph<'_>, f_r: Var, f_df: Var) -> Result<Var> {
        let outs = self.branch_outputs(g, f_r, f_df)?;
        let terms: Vec<(f64, Var)> = outs.into_iter().map(|v| (1.0, v)).collect();
        g.weighted_sum(&terms)
    }
}

/// Runs one MSAM block on plain tensors.
pub fn msam_fuse(store: &ParamStore, block: &Msam, f_r: &Tensor, f_df: &Tensor) -> Result<Tensor> {
    f_r.expect_shape(f_df, "msam_fuse")?;
    let mut g = Graph::new(store);
    let r = g.input(f_r.clone());
    let df = g.input(f_df.clone());
    let out = block.forward(&mut g, r, df)?;
    Ok(g.value(out).clone())
}

/// Runs a single WPM on plain tensors.
pub fn wpm(
    store: &ParamStore,
    module: &Wpm,
    w_df: &Tensor,
    w_r: &Tensor,
    f_df: &Tensor,
    f_r: &Tensor,
) -> Result<Tensor> {
    let mut g = Graph::new(store);
    let vars = [w_df, w_r, f_df, f_r].map(|t| g.input(t.clone()));
    let out = module.forward(&mut g, vars[0], vars[1], vars[2], vars[3])?;
    Ok(g.value(out).clone())
}
