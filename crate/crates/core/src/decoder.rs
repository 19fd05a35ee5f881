//! U-shaped top-down decoder with one supervised saliency output per level.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::Conv2d;
use crate::params::{Init, ParamGroup, ParamStore};
use crate::sample::SaliencyMap;
use crate::tensor::{ConvGeometry, Tensor};
use crate::LEVELS;

/// `S_1 .. S_5`, all at input resolution. `S_1` is the prediction.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderOutput {
    pub maps: Vec<SaliencyMap>,
}

impl DecoderOutput {
    pub fn prediction(&self) -> &SaliencyMap {
        &self.maps[0]
    }
}

#[derive(Clone, Debug)]
struct Block {
    conv_a: Conv2d,
    conv_b: Conv2d,
}

impl Block {
    fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let a = self.conv_a.forward_relu(g, x);
        self.conv_b.forward_relu(g, a)
    }
}

#[derive(Clone, Debug)]
pub struct Decoder {
    blocks: Vec<Block>,
    heads: Vec<Conv2d>,
}

impl Decoder {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, channels: usize, rng: &mut R) -> Self {
        let group = ParamGroup::Decoder;
        let mut blocks = Vec::with_capacity(LEVELS);
        let mut heads = Vec::with_capacity(LEVELS);
        for i in 1..=LEVELS {
            let in_ch = if i == LEVELS { channels } else { 2 * channels };
            let conv_a = Conv2d::new(
                store,
                &format!("decoder.block{i}.conv_a"),
                group,
                ConvGeometry::same(in_ch, channels, 3),
                Init::Relu,
                rng,
            );
            let conv_b = Conv2d::new(
                store,
                &format!("decoder.block{i}.conv_b"),
                group,
                ConvGeometry::same(channels, channels, 3),
                Init::Relu,
                rng,
            );
            blocks.push(Block { conv_a, conv_b });
            heads.push(Conv2d::new(
                store,
                &format!("decoder.head{i}"),
                group,
                ConvGeometry::pointwise(channels, 1),
                Init::Linear,
                rng,
            ));
        }
        Self { blocks, heads }
    }

    /// Returns `[S_1, .., S_5]` upsampled to `height × width`.
    pub fn forward(&self, g: &mut Graph<'_>, fused: &[Var], height: usize, width: usize) -> Result<[Var; LEVELS]> {
        if fused.len() != LEVELS {
            return Err(Error::LevelCount {
                expected: LEVELS,
                found: fused.len(),
            });
        }
        let mut maps = [fused[0]; LEVELS];
        let mut d = self.blocks[LEVELS - 1].forward(g, fused[LEVELS - 1]);
        maps[LEVELS - 1] = self.head(g, LEVELS - 1, d, height, width);
        for i in (0..LEVELS - 1).rev() {
            let up = g.upsample2(d);
            let cat = g.concat(&[fused[i], up])?;
            d = self.blocks[i].forward(g, cat);
            maps[i] = self.head(g, i, d, height, width);
        }
        Ok(maps)
    }

    fn head(&self, g: &mut Graph<'_>, level: usize, d: Var, height: usize, width: usize) -> Var {
        let logits = self.heads[level].forward(g, d);
        let s = g.sigmoid(logits);
        g.resize(s, height, width)
    }
}

/// Decodes five fused levels on plain tensors.
pub fn decode(
    store: &ParamStore,
    decoder: &Decoder,
    fused: &[Tensor],
    height: usize,
    width: usize,
) -> Result<DecoderOutput> {
    let mut g = Graph::new(store);
    let vars: Vec<Var> = fused.iter().map(|t| g.input(t.clone())).collect();
    let maps = decoder.forward(&mut g, &vars, height, width)?;
    Ok(DecoderOutput {
        maps: maps
            .iter()
            .map(|v| SaliencyMap::new(g.value(*v).clone()))
            .collect::<Result<_>>()?,
    })
}
