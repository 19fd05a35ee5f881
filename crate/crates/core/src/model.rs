//! The assembled trimodal network, its training objectives and inference.

use alloc::format;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decoder::{Decoder, DecoderOutput};
use crate::encoder::{EncoderConfig, StreamWeights};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::losses::{self, LossFlags, LossReport, LEVEL_WEIGHTS};
use crate::msam::Msam;
use crate::nn::Conv2d;
use crate::params::{Init, Modality, ParamGroup, ParamStore};
use crate::psf::{self, CoarseHead, PseudoGt, SpatialWeightMap, SwGenerator};
use crate::sample::{check_size, SaliencyMap, SampleTriplet};
use crate::tensor::{ConvGeometry, Tensor};
use crate::LEVELS;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
}

impl ModelConfig {
    pub fn full() -> Self {
        Self {
            encoder: EncoderConfig::default(),
        }
    }

    pub fn desk() -> Self {
        Self {
            encoder: EncoderConfig::desk(),
        }
    }

    pub fn tiny() -> Self {
        Self {
            encoder: EncoderConfig::tiny(),
        }
    }

    pub fn channels(&self) -> usize {
        self.encoder.compressed_channels
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()
    }
}

/// Network wiring between the encoders and the decoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Selective fusion of flow/depth followed by attention fusion with RGB.
    Full,
    /// Per-level concatenation of all three streams and one convolution.
    Baseline,
}

/// What a training step optimizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Objective {
    /// One stream's encoder plus its coarse head, supervised by GT.
    Pretrain(Modality),
    /// End-to-end objective.
    Finetune { variant: Variant, flags: LossFlags },
}

impl Objective {
    pub fn full() -> Self {
        Objective::Finetune {
            variant: Variant::Full,
            flags: LossFlags::default(),
        }
    }

    /// Parameter groups this objective may update.
    pub fn trainable(&self, group: ParamGroup) -> bool {
        match *self {
            Objective::Pretrain(m) => group == ParamGroup::Encoder(m) || group == ParamGroup::Head(m),
            Objective::Finetune { variant, flags } => match group {
                ParamGroup::Encoder(_) | ParamGroup::Decoder => true,
                ParamGroup::Head(Modality::Rgb) => false,
                ParamGroup::Head(_) => variant == Variant::Full && flags.psf,
                ParamGroup::SwGenerator | ParamGroup::Msam => variant == Variant::Full,
                ParamGroup::Baseline => variant == Variant::Baseline,
            },
        }
    }
}

/// Layer handles of the whole network. Parameter values live in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Smfnet {
    pub config: ModelConfig,
    encoders: Vec<StreamWeights>,
    heads: Vec<CoarseHead>,
    pub sw_generator: SwGenerator,
    pub msam: Vec<Msam>,
    baseline: Vec<Conv2d>,
    pub decoder: Decoder,
}

fn modality_index(m: Modality) -> usize {
    match m {
        Modality::Rgb => 0,
        Modality::Flow => 1,
        Modality::Depth => 2,
    }
}

impl Smfnet {
    /// Builds the network with weights drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<(Self, ParamStore)> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let c = config.channels();
        let encoders = Modality::ALL
            .iter()
            .map(|&m| StreamWeights::new(&mut store, &config.encoder, m, &mut rng))
            .collect();
        let heads = Modality::ALL
            .iter()
            .map(|&m| {
                CoarseHead::new(
                    &mut store,
                    &format!("head.{}", m.as_str()),
                    ParamGroup::Head(m),
                    c,
                    &mut rng,
                )
            })
            .collect();
        let sw_generator = SwGenerator::new(&mut store, c, &mut rng);
        let msam = (1..=LEVELS)
            .map(|i| Msam::new(&mut store, &format!("msam.level{i}"), c, &mut rng))
            .collect();
        let baseline = (1..=LEVELS)
            .map(|i| {
                Conv2d::new(
                    &mut store,
                    &format!("baseline.level{i}"),
                    ParamGroup::Baseline,
                    ConvGeometry::same(3 * c, c, 3),
                    Init::Relu,
                    &mut rng,
                )
            })
            .collect();
        let decoder = Decoder::new(&mut store, c, &mut rng);
        let net = Self {
            config,
            encoders,
            heads,
            sw_generator,
            msam,
            baseline,
            decoder,
        };
        Ok((net, store))
    }

    /// Rebuilds the layer handles for `config` and checks `store` matches them.
    pub fn attach(config: ModelConfig, store: &ParamStore) -> Result<Self> {
        let (net, fresh) = Self::new(config, 0)?;
        if !fresh.same_layout(store) {
            return Err(Error::Config("parameter layout does not match the model config".into()));
        }
        Ok(net)
    }

    pub fn encoder(&self, m: Modality) -> &StreamWeights {
        &self.encoders[modality_index(m)]
    }

    pub fn head(&self, m: Modality) -> &CoarseHead {
        &self.heads[modality_index(m)]
    }

    fn encode(&self, g: &mut Graph<'_>, m: Modality, image: &Tensor) -> Result<[Var; LEVELS]> {
        let x = g.input(image.clone());
        self.encoder(m).forward(g, x)
    }

    /// Builds the forward pass of `sample` onto `g`.
    pub fn forward(&self, g: &mut Graph<'_>, sample: &SampleTriplet, variant: Variant, coarse: bool) -> Result<ForwardVars> {
        let (h, w) = (sample.height(), sample.width());
        check_size("forward", h, w)?;
        let r = self.encode(g, Modality::Rgb, &sample.rgb)?;
        let f = self.encode(g, Modality::Flow, &sample.flow)?;
        let d = self.encode(g, Modality::Depth, &sample.depth)?;
        let mut out = ForwardVars {
            rgb: r,
            flow: f,
            depth: d,
            fused: None,
            sw: None,
            s_f: None,
            s_d: None,
            levels: r,
            maps: r,
        };
        match variant {
            Variant::Full => {
                let sw = self.sw_generator.forward(g, &f, &d)?;
                let sw_l = psf::sw_levels(g, sw);
                let mut fused = [sw; LEVELS];
                let mut levels = [sw; LEVELS];
                for i in 0..LEVELS {
                    fused[i] = psf::fuse_level(g, sw_l[i], f[i], d[i])?;
                    levels[i] = self.msam[i].forward(g, r[i], fused[i])?;
                }
                out.sw = Some(sw);
                out.fused = Some(fused);
                out.levels = levels;
                if coarse {
                    out.s_f = Some(self.head(Modality::Flow).forward(g, &f, h, w)?);
                    out.s_d = Some(self.head(Modality::Depth).forward(g, &d, h, w)?);
                }
            }
            Variant::Baseline => {
                let mut levels = r;
                for i in 0..LEVELS {
                    let cat = g.concat(&[r[i], f[i], d[i]])?;
                    levels[i] = self.baseline[i].forward_relu(g, cat);
                }
                out.levels = levels;
            }
        }
        out.maps = self.decoder.forward(g, &out.levels, h, w)?;
        Ok(out)
    }

    /// Builds the loss of `objective` on one sample and returns the scalar to
    /// differentiate plus its breakdown.
    pub fn loss(&self, g: &mut Graph<'_>, sample: &SampleTriplet, objective: Objective) -> Result<(Var, LossReport)> {
        let gt = &sample.gt;
        let (h, w) = (sample.height(), sample.width());
        match objective {
            Objective::Pretrain(m) => {
                let image = match m {
                    Modality::Rgb => &sample.rgb,
                    Modality::Flow => &sample.flow,
                    Modality::Depth => &sample.depth,
                };
                let levels = self.encode(g, m, image)?;
                let s = self.head(m).forward(g, &levels, h, w)?;
                let l = g.bce_iou(s, gt)?;
                let value = g.value(l).item();
                let mut report = LossReport {
                    l_total: value,
                    ..LossReport::default()
                };
                match m {
                    Modality::Depth => {
                        report.per_psf_term[0] = value;
                        report.l_psf = value;
                    }
                    Modality::Flow => {
                        report.per_psf_term[1] = value;
                        report.l_psf = value;
                    }
                    Modality::Rgb => {
                        report.per_level[0] = value;
                        report.l_decoder = value;
                    }
                }
                Ok((l, report))
            }
            Objective::Finetune { variant, flags } => {
                let use_psf = variant == Variant::Full && flags.psf;
                let fwd = self.forward(g, sample, variant, use_psf)?;
                let mut per_level = [0.0; LEVELS];
                let mut level_terms = Vec::with_capacity(LEVELS);
                for i in 0..LEVELS {
                    let l = g.bce_iou(fwd.maps[i], gt)?;
                    per_level[i] = g.value(l).item();
                    level_terms.push((LEVEL_WEIGHTS[i], l));
                }
                let l_dec = g.weighted_sum(&level_terms)?;
                let mut per_psf = [0.0; 3];
                let root = if use_psf {
                    let (s_f, s_d, sw) = (fwd.s_f.unwrap(), fwd.s_d.unwrap(), fwd.sw.unwrap());
                    let l_d = g.bce_iou(s_d, gt)?;
                    let l_f = g.bce_iou(s_f, gt)?;
                    let pgt = psf::pseudo_gt_from_coarse(g.value(s_f), g.value(s_d), gt)?;
                    let [_, sh, sw_w] = g.shape(sw);
                    let target = pgt.pgt.resize_nearest(sh, sw_w);
                    let l_sw = g.bce_iou(sw, &target)?;
                    per_psf = [g.value(l_d).item(), g.value(l_f).item(), g.value(l_sw).item()];
                    let mut terms = alloc::vec![(1.0, l_d), (1.0, l_f)];
                    if flags.pgt {
                        terms.push((1.0, l_sw));
                    }
                    let l_psf = g.weighted_sum(&terms)?;
                    g.weighted_sum(&[(1.0, l_psf), (1.0, l_dec)])?
                } else {
                    l_dec
                };
                let report = losses::loss_total(per_psf, per_level, LossFlags { psf: use_psf, ..flags });
                debug_assert!((report.l_total - g.value(root).item()).abs() <= 1e-12 * (1.0 + report.l_total));
                Ok((root, report))
            }
        }
    }

    /// Inference plus the intermediate maps used for inspection.
    pub fn inspect(&self, store: &ParamStore, sample: &SampleTriplet, variant: Variant) -> Result<Inspection> {
        let mut g = Graph::new(store);
        let fwd = self.forward(&mut g, sample, variant, variant == Variant::Full)?;
        let maps = DecoderOutput {
            maps: fwd
                .maps
                .iter()
                .map(|v| SaliencyMap::new(g.value(*v).clone()))
                .collect::<Result<_>>()?,
        };
        let sw = fwd.sw.map(|v| SpatialWeightMap::from_level1(g.value(v).clone()));
        let coarse = |v: Option<Var>| v.map(|v| SaliencyMap::new(g.value(v).clone())).transpose();
        Ok(Inspection {
            s_f: coarse(fwd.s_f)?,
            s_d: coarse(fwd.s_d)?,
            flow_top: g.value(fwd.flow[LEVELS - 1]).clone(),
            depth_top: g.value(fwd.depth[LEVELS - 1]).clone(),
            fused_top: fwd.fused.map(|f| g.value(f[LEVELS - 1]).clone()),
            maps,
            sw,
        })
    }

    /// `S_1` for one sample.
    pub fn predict(&self, store: &ParamStore, sample: &SampleTriplet, variant: Variant) -> Result<SaliencyMap> {
        let mut g = Graph::new(store);
        let fwd = self.forward(&mut g, sample, variant, false)?;
        SaliencyMap::new(g.value(fwd.maps[0]).clone())
    }

    /// Coarse prediction of one stream's head (used after pre-training).
    pub fn predict_stream(&self, store: &ParamStore, sample: &SampleTriplet, m: Modality) -> Result<SaliencyMap> {
        let mut g = Graph::new(store);
        let image = match m {
            Modality::Rgb => &sample.rgb,
            Modality::Flow => &sample.flow,
            Modality::Depth => &sample.depth,
        };
        let levels = self.encode(&mut g, m, image)?;
        let s = self.head(m).forward(&mut g, &levels, sample.height(), sample.width())?;
        SaliencyMap::new(g.value(s).clone())
    }

    /// Pseudo ground truth for a sample from the current coarse heads.
    pub fn pseudo_gt(&self, store: &ParamStore, sample: &SampleTriplet) -> Result<PseudoGt> {
        let s_f = self.predict_stream(store, sample, Modality::Flow)?;
        let s_d = self.predict_stream(store, sample, Modality::Depth)?;
        psf::pseudo_gt_from_coarse(s_f.values(), s_d.values(), &sample.gt)
    }
}

/// Graph handles produced by [`Smfnet::forward`].
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    pub rgb: [Var; LEVELS],
    pub flow: [Var; LEVELS],
    pub depth: [Var; LEVELS],
    pub fused: Option<[Var; LEVELS]>,
    pub sw: Option<Var>,
    pub s_f: Option<Var>,
    pub s_d: Option<Var>,
    /// Inputs to the decoder (MSAM outputs, or baseline fusion outputs).
    pub levels: [Var; LEVELS],
    pub maps: [Var; LEVELS],
}

/// Outputs of one inference pass kept for visualization.
#[derive(Clone, Debug)]
pub struct Inspection {
    pub maps: DecoderOutput,
    pub sw: Option<SpatialWeightMap>,
    pub s_f: Option<SaliencyMap>,
    pub s_d: Option<SaliencyMap>,
    pub flow_top: Tensor,
    pub depth_top: Tensor,
    pub fused_top: Option<Tensor>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixture::{render, FixtureSpec};

    fn sample() -> SampleTriplet {
        let spec = FixtureSpec {
            height: 32,
            width: 32,
            frames: 1,
            ..FixtureSpec::default()
        };
        render(&spec, 3).unwrap().remove(0)
    }

    #[test]
    fn rgb_weights_do_not_leak_into_other_streams() {
        let (net, mut store) = Smfnet::new(ModelConfig::tiny(), 1).unwrap();
        let s = sample();
        let pyr = |store: &ParamStore, m: Modality, img: &Tensor| {
            crate::encoder::encode_stream(store, net.encoder(m), img).unwrap()
        };
        let before_f = pyr(&store, Modality::Flow, &s.flow);
        let before_d = pyr(&store, Modality::Depth, &s.depth);
        let before_r = pyr(&store, Modality::Rgb, &s.rgb);
        for id in store.ids_in(ParamGroup::Encoder(Modality::Rgb)).collect::<Vec<_>>() {
            store.values_mut(id).iter_mut().for_each(|v| *v *= 1.1);
        }
        assert_eq!(before_f, pyr(&store, Modality::Flow, &s.flow));
        assert_eq!(before_d, pyr(&store, Modality::Depth, &s.depth));
        assert_ne!(before_r, pyr(&store, Modality::Rgb, &s.rgb));
    }

    #[test]
    fn pretrain_gradients_touch_only_their_stream() {
        let (net, store) = Smfnet::new(ModelConfig::tiny(), 2).unwrap();
        let s = sample();
        for m in Modality::ALL {
            let mut g = Graph::new(&store);
            let (root, _) = net.loss(&mut g, &s, Objective::Pretrain(m)).unwrap();
            let grads = g.backward(root).params;
            for id in store.ids() {
                let group = store.entry(id).group;
                if grads.touches(id) {
                    assert!(group == ParamGroup::Encoder(m) || group == ParamGroup::Head(m), "{group:?}");
                }
            }
            assert!(store.ids_in(ParamGroup::Head(m)).any(|id| grads.touches(id)));
        }
    }

    #[test]
    fn finetune_report_identity_and_ablation() {
        let (net, store) = Smfnet::new(ModelConfig::tiny(), 3).unwrap();
        let s = sample();
        let mut g = Graph::new(&store);
        let (root, report) = net.loss(&mut g, &s, Objective::full()).unwrap();
        assert_eq!(report.l_total, report.l_psf + report.l_decoder);
        assert_eq!(report.l_total, g.value(root).item());
        let off = Objective::Finetune {
            variant: Variant::Full,
            flags: LossFlags { psf: false, pgt: true },
        };
        let mut g = Graph::new(&store);
        let (_, report) = net.loss(&mut g, &s, off).unwrap();
        assert_eq!(report.l_total, report.l_decoder);
        assert_eq!(report.l_psf, 0.0);
    }

    #[test]
    fn finetune_reaches_every_trainable_group() {
        let (net, store) = Smfnet::new(ModelConfig::tiny(), 4).unwrap();
        let s = sample();
        for objective in [
            Objective::full(),
            Objective::Finetune {
                variant: Variant::Baseline,
                flags: LossFlags::default(),
            },
        ] {
            let mut g = Graph::new(&store);
            let (root, _) = net.loss(&mut g, &s, objective).unwrap();
            let grads = g.backward(root).params;
            for id in store.ids() {
                let group = store.entry(id).group;
                if grads.touches(id) {
                    assert!(objective.trainable(group), "{objective:?} touched {group:?}");
                }
            }
            for group in [
                ParamGroup::Encoder(Modality::Rgb),
                ParamGroup::Encoder(Modality::Flow),
                ParamGroup::Encoder(Modality::Depth),
                ParamGroup::Decoder,
            ] {
                assert!(store.ids_in(group).any(|id| grads.touches(id)), "{group:?}");
            }
        }
    }

    #[test]
    fn inspection_shapes() {
        let (net, store) = Smfnet::new(ModelConfig::tiny(), 5).unwrap();
        let s = sample();
        let ins = net.inspect(&store, &s, Variant::Full).unwrap();
        assert_eq!(ins.maps.maps.len(), 5);
        let sw = ins.sw.unwrap();
        assert_eq!(sw.sw.shape(), [1, 16, 16]);
        assert_eq!(sw.per_level[4].shape(), [1, 1, 1]);
        assert!(sw.sw.data().iter().all(|&v| v > 0.0 && v < 1.0));
        assert_eq!(ins.s_f.unwrap().values().shape(), [1, 32, 32]);
        assert_eq!(net.predict(&store, &s, Variant::Full).unwrap(), ins.maps.maps[0]);
    }

    #[test]
    fn attach_checks_layout() {
        let (_, store) = Smfnet::new(ModelConfig::tiny(), 6).unwrap();
        assert!(Smfnet::attach(ModelConfig::tiny(), &store).is_ok());
        assert!(Smfnet::attach(ModelConfig::desk(), &store).is_err());
    }
}
