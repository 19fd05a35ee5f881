use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::math;

/// One of the three input streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Modality {
    Rgb,
    Flow,
    Depth,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Rgb, Modality::Flow, Modality::Depth];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Rgb => "rgb",
            Modality::Flow => "flow",
            Modality::Depth => "depth",
        }
    }
}

/// Parameter groups drive learning rates, stage isolation and checkpoint merging.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ParamGroup {
    Encoder(Modality),
    /// Coarse prediction head of a stream (S_F, S_D, or the temporary RGB head).
    Head(Modality),
    SwGenerator,
    Msam,
    Decoder,
    /// Concatenation + convolution fusion used by the ablation baseline.
    Baseline,
}

impl ParamGroup {
    pub fn is_backbone(self) -> bool {
        matches!(self, ParamGroup::Encoder(_))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Initialisation scheme for a convolution weight.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// He-uniform, for layers followed by a ReLU.
    Relu,
    /// Gain 1, for linear projections and pre-sigmoid layers.
    Linear,
    Zeros,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub group: ParamGroup,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Flat registry of every learnable tensor in a model.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register<R: Rng + ?Sized>(
        &mut self,
        name: String,
        group: ParamGroup,
        shape: Vec<usize>,
        fan_in: usize,
        init: Init,
        rng: &mut R,
    ) -> ParamId {
        let len = shape.iter().product();
        let values = match init {
            Init::Zeros => vec![0.0; len],
            Init::Relu | Init::Linear => {
                let gain = if init == Init::Relu { 2.0 } else { 1.0 };
                let bound = math::sqrt(3.0 * gain / fan_in as f64);
                (0..len).map(|_| rng.gen_range(-bound..bound)).collect()
            }
        };
        self.entries.push(ParamEntry {
            name,
            group,
            shape,
            values,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn values(&self, id: ParamId) -> &[f64] {
        &self.entries[id.0].values
    }

    pub fn values_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.entries[id.0].values
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn ids_in(&self, group: ParamGroup) -> impl Iterator<Item = ParamId> + '_ {
        self.ids().filter(move |id| self.entries[id.0].group == group)
    }

    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|e| e.values.len()).sum()
    }

    /// Copies every tensor of `group` from `other`, which must share this layout.
    pub fn copy_group_from(&mut self, other: &ParamStore, group: ParamGroup) {
        for (dst, src) in self.entries.iter_mut().zip(&other.entries) {
            debug_assert_eq!(dst.name, src.name);
            if dst.group == group {
                dst.values.clone_from(&src.values);
            }
        }
    }

    /// True when both stores hold identical names, shapes and groups.
    pub fn same_layout(&self, other: &ParamStore) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|(a, b)| a.name == b.name && a.shape == b.shape && a.group == b.group)
    }

    pub(crate) fn from_entries(entries: Vec<ParamEntry>) -> Self {
        Self { entries }
    }

    pub fn into_entries(self) -> Vec<ParamEntry> {
        self.entries
    }
}

impl From<Vec<ParamEntry>> for ParamStore {
    fn from(entries: Vec<ParamEntry>) -> Self {
        Self::from_entries(entries)
    }
}

/// Per-parameter gradient buffers laid out like a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    grads: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            grads: store.entries().iter().map(|e| vec![0.0; e.values.len()]).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.grads[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.grads[id.0]
    }

    pub fn accumulate(&mut self, id: ParamId, values: &[f64]) {
        for (g, v) in self.grads[id.0].iter_mut().zip(values) {
            *g += v;
        }
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.grads.iter_mut().flatten().for_each(|g| *g *= factor);
    }

    pub fn norm(&self) -> f64 {
        math::sqrt(self.grads.iter().flatten().map(|g| g * g).sum())
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().flatten().all(|g| g.is_finite())
    }

    /// True when any entry of `id` is nonzero.
    pub fn touches(&self, id: ParamId) -> bool {
        self.grads[id.0].iter().any(|&g| g != 0.0)
    }
}
