//! Allocation-only core of the SMFNet RGB-D video salient object detector.
//!
//! Everything in this crate is a pure function of its inputs: dense `[C, H, W]`
//! tensors, a small reverse-mode autograd tape, the trimodal network
//! (encoders, pixel-level selective fusion, multi-dimensional selective
//! attention, U-shaped decoder), the training objective, saliency metrics and
//! the synthetic fixture renderer. File formats, dataset IO, checkpoints and
//! the CLI live in the `smfnet` companion crate.

#![no_std]

extern crate alloc;

pub mod augment;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod fixture;
pub mod graph;
pub mod losses;
pub mod math;
pub mod metrics;
pub mod model;
pub mod msam;
pub mod nn;
pub mod optim;
pub mod params;
pub mod psf;
pub mod sample;
pub mod tensor;

pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use params::{Modality, ParamGroup, ParamId, ParamStore};
pub use sample::{SaliencyMap, SampleTriplet};
pub use tensor::{Shape, Tensor};

/// Number of pyramid levels tapped from every encoder stream.
pub const LEVELS: usize = 5;

/// Total downsampling factor of the deepest pyramid level.
pub const MAX_STRIDE: usize = 32;
