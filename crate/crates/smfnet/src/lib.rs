//! Dataset IO, fixture files, checkpoints, staged training, evaluation and
//! visualization around [`smfnet_core`].

pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod fixtures;
pub mod kv;
pub mod train;
pub mod viz;

pub use error::{Error, Result};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "SMFNET_OUT";

/// `$SMFNET_OUT`, or `runs` when unset.
pub fn output_root() -> std::path::PathBuf {
    std::env::var_os(OUT_ENV).map_or_else(|| "runs".into(), Into::into)
}
