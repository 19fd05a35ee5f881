//! Staged training: three stream pre-training stages, then end-to-end fine-tuning.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use smfnet_core::augment::{AugmentConfig, AugmentParams};
use smfnet_core::losses::{LossFlags, LossReport};
use smfnet_core::model::{ModelConfig, Objective, Smfnet, Variant};
use smfnet_core::optim::{OptimizerState, Sgd};
use smfnet_core::params::Gradients;
use smfnet_core::{Graph, Modality, ParamGroup, ParamStore, SampleTriplet};

use crate::checkpoint::Checkpoint;
use crate::dataset::{load_frame, DatasetIndex};
use crate::error::{Error, Result};
use crate::kv::{parse_bool, parse_size, KvFile};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    PretrainDepth,
    PretrainFlow,
    PretrainRgb,
    Finetune,
}

impl Stage {
    /// Pre-training stages in their required order.
    pub const PRETRAIN: [Stage; 3] = [Stage::PretrainDepth, Stage::PretrainFlow, Stage::PretrainRgb];

    pub fn pretrain(m: Modality) -> Stage {
        match m {
            Modality::Depth => Stage::PretrainDepth,
            Modality::Flow => Stage::PretrainFlow,
            Modality::Rgb => Stage::PretrainRgb,
        }
    }

    pub fn modality(self) -> Option<Modality> {
        match self {
            Stage::PretrainDepth => Some(Modality::Depth),
            Stage::PretrainFlow => Some(Modality::Flow),
            Stage::PretrainRgb => Some(Modality::Rgb),
            Stage::Finetune => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::PretrainDepth => "pretrain_depth",
            Stage::PretrainFlow => "pretrain_flow",
            Stage::PretrainRgb => "pretrain_rgb",
            Stage::Finetune => "finetune",
        }
    }

    fn salt(self) -> u64 {
        match self {
            Stage::PretrainDepth => 0x11,
            Stage::PretrainFlow => 0x22,
            Stage::PretrainRgb => 0x33,
            Stage::Finetune => 0x44,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "depth" | "pretrain_depth" => Ok(Stage::PretrainDepth),
            "flow" | "pretrain_flow" => Ok(Stage::PretrainFlow),
            "rgb" | "pretrain_rgb" => Ok(Stage::PretrainRgb),
            "finetune" => Ok(Stage::Finetune),
            other => Err(format!("unknown stage `{other}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelProfile {
    Tiny,
    Desk,
    Full,
}

impl ModelProfile {
    pub fn config(self) -> ModelConfig {
        match self {
            ModelProfile::Tiny => ModelConfig::tiny(),
            ModelProfile::Desk => ModelConfig::desk(),
            ModelProfile::Full => ModelConfig::full(),
        }
    }
}

impl FromStr for ModelProfile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "tiny" => Ok(ModelProfile::Tiny),
            "desk" => Ok(ModelProfile::Desk),
            "full" => Ok(ModelProfile::Full),
            other => Err(format!("unknown model profile `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub stage: Stage,
    pub model: ModelProfile,
    pub lr_backbone: f64,
    pub lr_other: f64,
    pub batch_size: usize,
    pub input_size: (usize, usize),
    pub epochs: usize,
    /// Step budget; overrides `epochs` when set.
    pub steps: Option<usize>,
    pub seed: u64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub max_grad_norm: Option<f64>,
    pub augment: bool,
    /// Replace selective fusion and attention by concatenation + convolution.
    pub no_psf: bool,
    /// Train the weight map without pseudo-GT supervision.
    pub no_pgt: bool,
    /// Allow fine-tuning with fewer than three pre-trained streams.
    pub allow_missing_pretrain: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage: Stage::Finetune,
            model: ModelProfile::Full,
            lr_backbone: 1e-5,
            lr_other: 1e-4,
            batch_size: 8,
            input_size: (448, 448),
            epochs: 70,
            steps: None,
            seed: 0,
            momentum: 0.9,
            weight_decay: 0.0,
            max_grad_norm: None,
            augment: true,
            no_psf: false,
            no_pgt: false,
            allow_missing_pretrain: false,
        }
    }
}

const KEYS: &[&str] = &[
    "stage",
    "model",
    "lr_backbone",
    "lr_other",
    "batch_size",
    "input_size",
    "epochs",
    "steps",
    "seed",
    "momentum",
    "weight_decay",
    "max_grad_norm",
    "augment",
    "ablation",
    "allow_missing_pretrain",
];

impl TrainConfig {
    /// Small-model profile used by the fixture runs and tests.
    pub fn desk(stage: Stage) -> Self {
        let (lr_backbone, lr_other, steps) = match stage {
            Stage::Finetune => (0.01, 0.05, 600),
            _ => (0.05, 0.05, 300),
        };
        Self {
            stage,
            model: ModelProfile::Tiny,
            lr_backbone,
            lr_other,
            batch_size: 4,
            input_size: (64, 64),
            epochs: 1,
            steps: Some(steps),
            seed: 0,
            momentum: 0.9,
            weight_decay: 0.0,
            max_grad_norm: Some(5.0),
            augment: false,
            no_psf: false,
            no_pgt: false,
            allow_missing_pretrain: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.lr_backbone > 0.0 && self.lr_other > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.steps == Some(0) || (self.steps.is_none() && self.epochs == 0) {
            return bad("need a positive step or epoch budget");
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return bad("momentum must be in [0, 1) and weight_decay non-negative");
        }
        if self.max_grad_norm.is_some_and(|m| m <= 0.0) {
            return bad("max_grad_norm must be positive");
        }
        crate::dataset::check_input_size(self.input_size)?;
        Ok(())
    }

    /// Reads a key-value config over `base`. `ablation` may repeat
    /// (`no_psf`, `no_pgt`).
    pub fn from_kv(kv: &KvFile, base: TrainConfig) -> Result<Self> {
        kv.reject_unknown(KEYS)?;
        let mut c = base;
        let text = |key: &str, v: &str| Error::Config(format!("bad {key} `{v}`"));
        if let Some(v) = kv.get("stage") {
            c.stage = v.parse().map_err(Error::Config)?;
        }
        if let Some(v) = kv.get("model") {
            c.model = v.parse().map_err(Error::Config)?;
        }
        if let Some(v) = kv.parsed("lr_backbone")? {
            c.lr_backbone = v;
        }
        if let Some(v) = kv.parsed("lr_other")? {
            c.lr_other = v;
        }
        if let Some(v) = kv.parsed("batch_size")? {
            c.batch_size = v;
        }
        if let Some(v) = kv.get("input_size") {
            c.input_size = parse_size(v).ok_or_else(|| text("input_size", v))?;
        }
        if let Some(v) = kv.parsed("epochs")? {
            c.epochs = v;
            c.steps = None;
        }
        if let Some(v) = kv.parsed("steps")? {
            c.steps = Some(v);
        }
        if let Some(v) = kv.parsed("seed")? {
            c.seed = v;
        }
        if let Some(v) = kv.parsed("momentum")? {
            c.momentum = v;
        }
        if let Some(v) = kv.parsed("weight_decay")? {
            c.weight_decay = v;
        }
        if let Some(v) = kv.get("max_grad_norm") {
            c.max_grad_norm = match v {
                "none" => None,
                _ => Some(v.parse().map_err(|_| text("max_grad_norm", v))?),
            };
        }
        for key in ["augment", "allow_missing_pretrain"] {
            if let Some(v) = kv.get(key) {
                let b = parse_bool(v).ok_or_else(|| text(key, v))?;
                match key {
                    "augment" => c.augment = b,
                    _ => c.allow_missing_pretrain = b,
                }
            }
        }
        for v in kv.get_all("ablation") {
            match v {
                "no_psf" => c.no_psf = true,
                "no_pgt" => c.no_pgt = true,
                "none" => {}
                _ => return Err(text("ablation", v)),
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn to_kv(&self) -> String {
        let mut out = format!(
            "stage = {}\nmodel = {}\nlr_backbone = {}\nlr_other = {}\nbatch_size = {}\ninput_size = {}x{}\n",
            self.stage,
            serde_json::to_value(self.model).unwrap().as_str().unwrap(),
            self.lr_backbone,
            self.lr_other,
            self.batch_size,
            self.input_size.0,
            self.input_size.1,
        );
        out += &format!("epochs = {}\n", self.epochs);
        if let Some(s) = self.steps {
            out += &format!("steps = {s}\n");
        }
        out += &format!(
            "seed = {}\nmomentum = {}\nweight_decay = {}\nmax_grad_norm = {}\naugment = {}\nallow_missing_pretrain = {}\n",
            self.seed,
            self.momentum,
            self.weight_decay,
            self.max_grad_norm.map_or("none".to_string(), |m| m.to_string()),
            self.augment,
            self.allow_missing_pretrain,
        );
        if self.no_psf {
            out += "ablation = no_psf\n";
        }
        if self.no_pgt {
            out += "ablation = no_pgt\n";
        }
        out
    }

    /// Hex SHA-256 of the canonical key-value form.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_kv().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn variant(&self) -> Variant {
        if self.no_psf {
            Variant::Baseline
        } else {
            Variant::Full
        }
    }

    pub fn objective(&self) -> Objective {
        match self.stage.modality() {
            Some(m) => Objective::Pretrain(m),
            None => Objective::Finetune {
                variant: self.variant(),
                flags: LossFlags {
                    psf: true,
                    pgt: !self.no_pgt,
                },
            },
        }
    }

    /// Learning rate per group, `None` for frozen groups.
    pub fn learning_rate(&self, group: ParamGroup) -> Option<f64> {
        if !self.objective().trainable(group) {
            None
        } else if group.is_backbone() {
            Some(self.lr_backbone)
        } else {
            Some(self.lr_other)
        }
    }

    pub fn total_steps(&self, samples: usize) -> usize {
        self.steps
            .unwrap_or_else(|| self.epochs * samples.div_ceil(self.batch_size.min(samples.max(1))))
    }

    fn sgd(&self) -> Sgd {
        Sgd {
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            max_grad_norm: self.max_grad_norm,
        }
    }
}

/// Random-access training samples. Implementations must be deterministic.
pub trait SampleSource: Sync {
    fn len(&self) -> usize;
    fn get(&self, i: usize) -> Result<SampleTriplet>;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl SampleSource for [SampleTriplet] {
    fn len(&self) -> usize {
        <[SampleTriplet]>::len(self)
    }

    fn get(&self, i: usize) -> Result<SampleTriplet> {
        Ok(self[i].clone())
    }
}

impl SampleSource for Vec<SampleTriplet> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn get(&self, i: usize) -> Result<SampleTriplet> {
        Ok(self[i].clone())
    }
}

/// Loads frames from disk on demand at a fixed input size.
pub struct IndexSource<'a> {
    pub index: &'a DatasetIndex,
    pub size: (usize, usize),
}

impl SampleSource for IndexSource<'_> {
    fn len(&self) -> usize {
        self.index.len()
    }

    fn get(&self, i: usize) -> Result<SampleTriplet> {
        let (seq, frame) = self.index.frame(i)?;
        load_frame(&seq.id, frame, self.size)
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub stage: Stage,
    pub step: u64,
    #[serde(flatten)]
    pub report: LossReport,
}

/// Mean gradient and loss report of one batch; per-sample work may run in
/// parallel but the reduction is in batch order.
fn batch_gradients(
    net: &Smfnet,
    store: &ParamStore,
    objective: Objective,
    batch: &[SampleTriplet],
) -> Result<(Gradients, LossReport)> {
    let per_sample: Vec<Result<(Gradients, LossReport)>> = batch
        .par_iter()
        .map(|s| {
            let mut g = Graph::new(store);
            let (root, report) = net.loss(&mut g, s, objective)?;
            Ok((g.backward(root).params, report))
        })
        .collect();
    let mut total = Gradients::zeros_like(store);
    let mut reports = Vec::with_capacity(batch.len());
    let scale = 1.0 / batch.len() as f64;
    for r in per_sample {
        let (g, report) = r?;
        total.add_scaled(&g, scale);
        reports.push(report);
    }
    Ok((total, LossReport::mean(&reports)))
}

/// Runs one stage from `store`. `on_step` sees every step's batch-mean report.
pub fn train_stage(
    cfg: &TrainConfig,
    net: &Smfnet,
    mut store: ParamStore,
    data: &(impl SampleSource + ?Sized),
    mut on_step: impl FnMut(&StepRecord) -> Result<()>,
) -> Result<Checkpoint> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Config("no training samples".into()));
    }
    let objective = cfg.objective();
    let n = data.len();
    let batch = cfg.batch_size.min(n);
    let steps = cfg.total_steps(n);
    let sgd = cfg.sgd();
    let mut state = OptimizerState::new(&store);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (cfg.stage.salt() << 56));
    let aug = AugmentConfig::default();
    let mut order: Vec<usize> = Vec::new();
    for step in 1..=steps as u64 {
        let mut picks = Vec::with_capacity(batch);
        while picks.len() < batch {
            if order.is_empty() {
                order = (0..n).collect();
                order.shuffle(&mut rng);
                order.reverse();
            }
            picks.push(order.pop().unwrap());
        }
        let params: Vec<AugmentParams> = picks
            .iter()
            .map(|_| {
                if cfg.augment {
                    AugmentParams::sample(&aug, cfg.input_size.0, cfg.input_size.1, &mut rng)
                } else {
                    AugmentParams::default()
                }
            })
            .collect();
        let samples: Vec<SampleTriplet> = picks
            .par_iter()
            .zip(&params)
            .map(|(&i, p)| p.apply(&data.get(i)?).map_err(Error::from))
            .collect::<Result<_>>()?;
        let (grads, report) = batch_gradients(net, &store, objective, &samples)?;
        if !report.is_finite() || !grads.is_finite() {
            return Err(Error::Diverged {
                stage: cfg.stage.to_string(),
                step,
            });
        }
        sgd.step(&mut store, &grads, &mut state, |g| cfg.learning_rate(g));
        on_step(&StepRecord {
            stage: cfg.stage,
            step,
            report,
        })?;
    }
    Ok(Checkpoint {
        model: net.config.clone(),
        stage: cfg.stage,
        variant: cfg.variant(),
        config_hash: cfg.hash(),
        step: steps as u64,
        store,
        optimizer: Some(state),
    })
}

/// Pre-trains one stream (encoder plus coarse head) from a fresh seeded init.
pub fn pretrain_stream(
    modality: Modality,
    cfg: &TrainConfig,
    data: &(impl SampleSource + ?Sized),
    on_step: impl FnMut(&StepRecord) -> Result<()>,
) -> Result<Checkpoint> {
    let cfg = TrainConfig {
        stage: Stage::pretrain(modality),
        ..cfg.clone()
    };
    let (net, store) = Smfnet::new(cfg.model.config(), cfg.seed)?;
    train_stage(&cfg, &net, store, data, on_step)
}

/// Fresh seeded parameters with each pre-trained stream's encoder and head
/// copied in.
pub fn merge_pretrained(cfg: &TrainConfig, pretrained: &[Checkpoint]) -> Result<(Smfnet, ParamStore)> {
    let (net, mut store) = Smfnet::new(cfg.model.config(), cfg.seed)?;
    let mut seen = Vec::new();
    for ck in pretrained {
        let Some(m) = ck.stage.modality() else {
            return Err(Error::StageOrder(format!("{} is not a pre-training checkpoint", ck.stage)));
        };
        if ck.model != net.config || !ck.store.same_layout(&store) {
            return Err(Error::StageOrder(format!("{} checkpoint has a different model", ck.stage)));
        }
        if seen.contains(&m) {
            return Err(Error::StageOrder(format!("two {} checkpoints", ck.stage)));
        }
        seen.push(m);
        store.copy_group_from(&ck.store, ParamGroup::Encoder(m));
        store.copy_group_from(&ck.store, ParamGroup::Head(m));
    }
    if !cfg.allow_missing_pretrain {
        let missing: Vec<&str> = Modality::ALL
            .iter()
            .filter(|m| !seen.contains(m))
            .map(|m| m.as_str())
            .collect();
        if !missing.is_empty() {
            return Err(Error::StageOrder(format!(
                "fine-tuning needs pre-trained {} stream(s); pass allow_missing_pretrain to override",
                missing.join(", ")
            )));
        }
    }
    Ok((net, store))
}

/// End-to-end fine-tuning from the pre-trained streams.
pub fn finetune(
    cfg: &TrainConfig,
    pretrained: &[Checkpoint],
    data: &(impl SampleSource + ?Sized),
    on_step: impl FnMut(&StepRecord) -> Result<()>,
) -> Result<Checkpoint> {
    let cfg = TrainConfig {
        stage: Stage::Finetune,
        ..cfg.clone()
    };
    let (net, store) = merge_pretrained(&cfg, pretrained)?;
    train_stage(&cfg, &net, store, data, on_step)
}

/// Per-stage settings for a whole staged run.
#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
}

impl Schedule {
    pub fn desk() -> Self {
        Self {
            pretrain: TrainConfig::desk(Stage::PretrainDepth),
            finetune: TrainConfig::desk(Stage::Finetune),
        }
    }
}

/// Output of [`run_schedule`].
#[derive(Clone, Debug)]
pub struct StagedRun {
    pub pretrained: Vec<Checkpoint>,
    pub finetuned: Checkpoint,
    pub log: Vec<StepRecord>,
}

/// Depth, flow and RGB pre-training followed by fine-tuning.
pub fn run_schedule(schedule: &Schedule, data: &(impl SampleSource + ?Sized)) -> Result<StagedRun> {
    let mut log = Vec::new();
    let mut pretrained = Vec::new();
    for stage in Stage::PRETRAIN {
        let m = stage.modality().unwrap();
        pretrained.push(pretrain_stream(m, &schedule.pretrain, data, |r| {
            log.push(r.clone());
            Ok(())
        })?);
    }
    let finetuned = finetune(&schedule.finetune, &pretrained, data, |r| {
        log.push(r.clone());
        Ok(())
    })?;
    Ok(StagedRun {
        pretrained,
        finetuned,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_round_trip_and_hash() {
        let mut c = TrainConfig::desk(Stage::PretrainFlow);
        c.no_pgt = true;
        let back = TrainConfig::from_kv(&KvFile::parse(&c.to_kv()).unwrap(), TrainConfig::default()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        let mut d = c.clone();
        d.seed = 1;
        assert_ne!(d.hash(), c.hash());
    }

    #[test]
    fn rejects_bad_configs() {
        let base = TrainConfig::default;
        assert!(TrainConfig::from_kv(&KvFile::parse("lr_other = 0").unwrap(), base()).is_err());
        assert!(TrainConfig::from_kv(&KvFile::parse("input_size = 50x64").unwrap(), base()).is_err());
        assert!(TrainConfig::from_kv(&KvFile::parse("ablation = no_msam").unwrap(), base()).is_err());
        assert!(TrainConfig::from_kv(&KvFile::parse("optimizer = adam").unwrap(), base()).is_err());
    }

    #[test]
    fn full_profile_defaults() {
        let c = TrainConfig::default();
        assert_eq!((c.lr_backbone, c.lr_other, c.batch_size), (1e-5, 1e-4, 8));
        assert_eq!(c.input_size, (448, 448));
        assert_eq!(c.momentum, 0.9);
    }

    #[test]
    fn learning_rates_follow_groups() {
        let c = TrainConfig::desk(Stage::PretrainRgb);
        assert_eq!(c.learning_rate(ParamGroup::Encoder(Modality::Rgb)), Some(c.lr_backbone));
        assert_eq!(c.learning_rate(ParamGroup::Head(Modality::Rgb)), Some(c.lr_other));
        assert_eq!(c.learning_rate(ParamGroup::Encoder(Modality::Flow)), None);
        assert_eq!(c.learning_rate(ParamGroup::Decoder), None);
        let f = TrainConfig::desk(Stage::Finetune);
        assert_eq!(f.learning_rate(ParamGroup::Msam), Some(f.lr_other));
        assert_eq!(f.learning_rate(ParamGroup::Baseline), None);
        let b = TrainConfig { no_psf: true, ..f };
        assert_eq!(b.learning_rate(ParamGroup::Baseline), Some(b.lr_other));
        assert_eq!(b.learning_rate(ParamGroup::SwGenerator), None);
    }

    #[test]
    fn finetune_requires_all_streams() {
        let c = TrainConfig::desk(Stage::Finetune);
        assert!(matches!(merge_pretrained(&c, &[]), Err(Error::StageOrder(_))));
        let ok = TrainConfig {
            allow_missing_pretrain: true,
            ..c
        };
        assert!(merge_pretrained(&ok, &[]).is_ok());
    }
}
