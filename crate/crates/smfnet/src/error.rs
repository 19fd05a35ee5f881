use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] smfnet_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("sequence {sequence}: frame {frame} has no {modality} image")]
    MissingFrame {
        sequence: String,
        frame: String,
        modality: &'static str,
    },
    #[error("sequence {0} has no frames")]
    EmptySequence(String),
    #[error("{0}: no sequences found")]
    NoSequences(PathBuf),
    #[error("no testable frames: every sequence is a single frame")]
    NoTestableFrames,
    #[error("frame index {index} out of range for {count} frames")]
    FrameIndex { index: usize, count: usize },
    #[error("config line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{stage}: loss diverged at step {step}")]
    Diverged { stage: String, step: u64 },
    #[error("{0}")]
    StageOrder(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| Error::Io {
            path: path.into(),
            source,
        })
    }
}
