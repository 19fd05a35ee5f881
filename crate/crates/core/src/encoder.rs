//! Five-stage residual feature extractor with an atrous pyramid on the deepest
//! stage and per-level 1×1 channel compression.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::Conv2d;
use crate::params::{Init, Modality, ParamGroup, ParamStore};
use crate::sample::check_size;
use crate::tensor::{ConvGeometry, PoolAxis, Tensor};
use crate::LEVELS;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Channels produced by each residual stage before compression.
    pub stage_widths: [usize; LEVELS],
    pub aspp_rates: Vec<usize>,
    /// Channels of every pyramid level after compression.
    pub compressed_channels: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            stage_widths: [16, 32, 64, 96, 128],
            aspp_rates: alloc::vec![1, 2, 4],
            compressed_channels: 64,
        }
    }
}

impl EncoderConfig {
    /// Small widths for CPU-bound fixture training.
    pub fn desk() -> Self {
        Self {
            stage_widths: [8, 16, 16, 24, 24],
            aspp_rates: alloc::vec![1, 2, 4],
            compressed_channels: 16,
        }
    }

    /// Widths no larger than 8, for gradient checks.
    pub fn tiny() -> Self {
        Self {
            stage_widths: [4, 4, 8, 8, 8],
            aspp_rates: alloc::vec![1, 2],
            compressed_channels: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage_widths.contains(&0) {
            return Err(Error::Config("stage widths must be positive".into()));
        }
        if self.stage_widths.windows(2).any(|p| p[1] < p[0]) {
            return Err(Error::Config("stage widths must be nondecreasing".into()));
        }
        if self.compressed_channels == 0 {
            return Err(Error::Config("compressed_channels must be at least 1".into()));
        }
        if self.aspp_rates.is_empty() || self.aspp_rates.contains(&0) {
            return Err(Error::Config("aspp_rates must be nonempty and positive".into()));
        }
        Ok(())
    }
}

/// Which stream (or fusion) a pyramid came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PyramidTag {
    Rgb,
    Flow,
    Depth,
    /// Selectively fused flow + depth.
    DepthFlow,
}

impl From<Modality> for PyramidTag {
    fn from(m: Modality) -> Self {
        match m {
            Modality::Rgb => PyramidTag::Rgb,
            Modality::Flow => PyramidTag::Flow,
            Modality::Depth => PyramidTag::Depth,
        }
    }
}

/// Five feature levels at strides 2, 4, 8, 16 and 32.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePyramid {
    pub levels: Vec<Tensor>,
    pub tag: PyramidTag,
}

impl FeaturePyramid {
    pub fn new(levels: Vec<Tensor>, tag: PyramidTag) -> Result<Self> {
        if levels.len() != LEVELS {
            return Err(Error::LevelCount {
                expected: LEVELS,
                found: levels.len(),
            });
        }
        for pair in levels.windows(2) {
            let (a, b) = (pair[0].shape(), pair[1].shape());
            if a[0] != b[0] || a[1] != 2 * b[1] || a[2] != 2 * b[2] {
                return Err(Error::ShapeMismatch {
                    op: "feature_pyramid",
                    left: a,
                    right: b,
                });
            }
        }
        Ok(Self { levels, tag })
    }

    pub fn aligned_with(&self, other: &FeaturePyramid) -> bool {
        self.levels
            .iter()
            .zip(&other.levels)
            .all(|(a, b)| a.shape() == b.shape())
    }
}

#[derive(Clone, Debug)]
struct ResidualStage {
    down: Conv2d,
    conv: Conv2d,
    shortcut: Conv2d,
}

impl ResidualStage {
    fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let a = self.down.forward_relu(g, x);
        let b = self.conv.forward(g, a);
        let s = self.shortcut.forward(g, x);
        let sum = g.add(b, s)?;
        Ok(g.relu(sum))
    }
}

/// Parallel dilated 3×3 branches plus a global-average branch, projected back.
#[derive(Clone, Debug)]
pub struct Aspp {
    branches: Vec<Conv2d>,
    global: Conv2d,
    project: Conv2d,
}

impl Aspp {
    fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        group: ParamGroup,
        channels: usize,
        rates: &[usize],
        rng: &mut R,
    ) -> Self {
        let branches = rates
            .iter()
            .map(|&r| {
                let geometry = ConvGeometry {
                    padding: r,
                    dilation: r,
                    ..ConvGeometry::same(channels, channels, 3)
                };
                Conv2d::new(store, &format!("{prefix}.aspp.rate{r}"), group, geometry, Init::Relu, rng)
            })
            .collect();
        let global = Conv2d::new(
            store,
            &format!("{prefix}.aspp.global"),
            group,
            ConvGeometry::pointwise(channels, channels),
            Init::Relu,
            rng,
        );
        let project = Conv2d::new(
            store,
            &format!("{prefix}.aspp.project"),
            group,
            ConvGeometry::pointwise((rates.len() + 1) * channels, channels),
            Init::Relu,
            rng,
        );
        Self {
            branches,
            global,
            project,
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let shape = g.shape(x);
        let mut parts: Vec<Var> = self
            .branches
            .iter()
            .map(|b| b.forward_relu(g, x))
            .collect();
        let pooled = g.pool(x, PoolAxis::OverSpatial);
        let global = self.global.forward_relu(g, pooled);
        parts.push(g.broadcast_to(global, shape));
        let cat = g.concat(&parts)?;
        Ok(self.project.forward_relu(g, cat))
    }
}

/// Linear 1×1 projection to the shared pyramid width.
#[derive(Clone, Copy, Debug)]
pub struct Compression(Conv2d);

impl Compression {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        group: ParamGroup,
        in_channels: usize,
        out_channels: usize,
        rng: &mut R,
    ) -> Self {
        Self(Conv2d::new(
            store,
            name,
            group,
            ConvGeometry::pointwise(in_channels, out_channels),
            Init::Linear,
            rng,
        ))
    }

    pub fn conv(&self) -> &Conv2d {
        &self.0
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        self.0.forward(g, x)
    }
}

/// Weights of one encoder stream.
#[derive(Clone, Debug)]
pub struct StreamWeights {
    pub modality: Modality,
    stages: Vec<ResidualStage>,
    pub aspp: Aspp,
    compress: Vec<Compression>,
}

impl StreamWeights {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        config: &EncoderConfig,
        modality: Modality,
        rng: &mut R,
    ) -> Self {
        let group = ParamGroup::Encoder(modality);
        let prefix = format!("encoder.{}", modality.as_str());
        let mut stages = Vec::with_capacity(LEVELS);
        let mut in_ch = 3;
        for (i, &width) in config.stage_widths.iter().enumerate() {
            let name = format!("{prefix}.stage{}", i + 1);
            let down = Conv2d::new(
                store,
                &format!("{name}.down"),
                group,
                ConvGeometry {
                    stride: 2,
                    ..ConvGeometry::same(in_ch, width, 3)
                },
                Init::Relu,
                rng,
            );
            let conv = Conv2d::new(
                store,
                &format!("{name}.conv"),
                group,
                ConvGeometry::same(width, width, 3),
                Init::Relu,
                rng,
            );
            let shortcut = Conv2d::new(
                store,
                &format!("{name}.shortcut"),
                group,
                ConvGeometry {
                    stride: 2,
                    padding: 0,
                    ..ConvGeometry::pointwise(in_ch, width)
                },
                Init::Linear,
                rng,
            );
            stages.push(ResidualStage {
                down,
                conv,
                shortcut,
            });
            in_ch = width;
        }
        let aspp = Aspp::new(
            store,
            &prefix,
            group,
            config.stage_widths[LEVELS - 1],
            &config.aspp_rates,
            rng,
        );
        let compress = config
            .stage_widths
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                Compression::new(
                    store,
                    &format!("{prefix}.compress{}", i + 1),
                    group,
                    w,
                    config.compressed_channels,
                    rng,
                )
            })
            .collect();
        Self {
            modality,
            stages,
            aspp,
            compress,
        }
    }

    /// Returns the five compressed levels, shallow to deep.
    pub fn forward(&self, g: &mut Graph<'_>, image: Var) -> Result<[Var; LEVELS]> {
        let [_, h, w] = g.shape(image);
        check_size("encode_stream", h, w)?;
        let mut x = image;
        let mut taps = [image; LEVELS];
        for (i, stage) in self.stages.iter().enumerate() {
            x = stage.forward(g, x)?;
            taps[i] = x;
        }
        taps[LEVELS - 1] = self.aspp.forward(g, taps[LEVELS - 1])?;
        let mut out = taps;
        for (o, (t, c)) in out.iter_mut().zip(taps.iter().zip(&self.compress)) {
            *o = c.forward(g, *t);
        }
        Ok(out)
    }
}

/// Runs one stream on an image and returns its pyramid.
pub fn encode_stream(store: &ParamStore, weights: &StreamWeights, image: &Tensor) -> Result<FeaturePyramid> {
    let mut g = Graph::new(store);
    let x = g.input(image.clone());
    let levels = weights.forward(&mut g, x)?;
    FeaturePyramid::new(
        levels.iter().map(|v| g.value(*v).clone()).collect(),
        weights.modality.into(),
    )
}

/// Applies a compression layer to a single feature map.
pub fn compress(store: &ParamStore, layer: &Compression, feature: &Tensor) -> Result<Tensor> {
    let geometry = layer.conv().geometry;
    if feature.channels() != geometry.in_channels {
        return Err(Error::ShapeMismatch {
            op: "compress",
            left: feature.shape(),
            right: [geometry.in_channels, feature.height(), feature.width()],
        });
    }
    let mut g = Graph::new(store);
    let x = g.input(feature.clone());
    let y = layer.forward(&mut g, x);
    Ok(g.value(y).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn build(config: &EncoderConfig) -> (ParamStore, Vec<StreamWeights>) {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let streams = Modality::ALL
            .iter()
            .map(|&m| StreamWeights::new(&mut store, config, m, &mut rng))
            .collect();
        (store, streams)
    }

    fn image(h: usize, w: usize) -> Tensor {
        Tensor::from_fn([3, h, w], |c, y, x| ((c * 31 + y * 7 + x * 3) % 17) as f64 / 17.0)
    }

    #[test]
    fn stride_schedule_64() {
        let (store, streams) = build(&EncoderConfig::tiny());
        let pyr = encode_stream(&store, &streams[0], &image(64, 64)).unwrap();
        let sizes: Vec<usize> = pyr.levels.iter().map(|l| l.height()).collect();
        assert_eq!(sizes, [32, 16, 8, 4, 2]);
        assert!(pyr.levels.iter().all(|l| l.channels() == 8));
    }

    #[test]
    fn rejects_non_divisible_input() {
        let (store, streams) = build(&EncoderConfig::tiny());
        assert!(matches!(
            encode_stream(&store, &streams[0], &image(48, 64)),
            Err(Error::NotDivisible { .. })
        ));
    }

    #[test]
    fn deterministic() {
        let (store, streams) = build(&EncoderConfig::tiny());
        let a = encode_stream(&store, &streams[1], &image(32, 64)).unwrap();
        let b = encode_stream(&store, &streams[1], &image(32, 64)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn compress_shape_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let wide = Compression::new(&mut store, "a", ParamGroup::Decoder, 256, 64, &mut rng);
        let same = Compression::new(&mut store, "b", ParamGroup::Decoder, 64, 64, &mut rng);
        let f = Tensor::full([256, 14, 14], 0.1);
        assert_eq!(compress(&store, &wide, &f).unwrap().shape(), [64, 14, 14]);
        let f = Tensor::full([64, 14, 14], 0.1);
        assert_eq!(compress(&store, &same, &f).unwrap().shape(), [64, 14, 14]);
        assert!(compress(&store, &same, &Tensor::full([3, 2, 2], 0.0)).is_err());
    }

    #[test]
    fn aspp_keeps_spatial_size() {
        let (store, streams) = build(&EncoderConfig::tiny());
        let mut g = Graph::new(&store);
        let x = g.input(Tensor::full([8, 4, 6], 0.3));
        let y = streams[0].aspp.forward(&mut g, x).unwrap();
        assert_eq!(g.shape(y), [8, 4, 6]);
    }

    #[test]
    fn config_validation() {
        assert!(EncoderConfig::default().validate().is_ok());
        let bad = EncoderConfig {
            stage_widths: [8, 4, 8, 8, 8],
            ..EncoderConfig::tiny()
        };
        assert!(bad.validate().is_err());
        let bad = EncoderConfig {
            compressed_channels: 0,
            ..EncoderConfig::tiny()
        };
        assert!(bad.validate().is_err());
    }
}
