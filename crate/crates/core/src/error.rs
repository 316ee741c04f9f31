use std::io;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("sample id `{0}` occurs in more than one manifest")]
    MergeConflict(String),

    #[error("synthetic images must be at least {min}x{min}, got {width}x{height}")]
    SizeTooSmall { width: usize, height: usize, min: usize },

    #[error("image {width}x{height} is smaller than the {rows}x{cols} tile grid")]
    TileError {
        width: usize,
        height: usize,
        rows: usize,
        cols: usize,
    },

    #[error("no foreground region found")]
    RoiNotFound,

    #[error("image {width}x{height} is smaller than the {patch}x{patch} patch")]
    TooSmall { width: usize, height: usize, patch: usize },

    #[error("unknown architecture `{0}` (expected one of fv2021, bondi, marra, vgg16b, resnet50, xception)")]
    UnknownArchitecture(String),

    #[error("unknown sensor `{0}`")]
    UnknownSensor(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("too few samples: need at least {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("training diverged: non-finite loss at epoch {epoch}")]
    Divergence { epoch: usize },

    #[error("checkpoint integrity check failed: {0}")]
    Checksum(String),

    #[error("failed to write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("AUC is undefined for every class (scores contain a single true class)")]
    AllClassesUndefined,

    #[error("metric undefined: {0}")]
    Undefined(String),

    #[error("split leakage: {0}")]
    Leakage(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn write(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Write {
            path: path.into(),
            source,
        }
    }
}
