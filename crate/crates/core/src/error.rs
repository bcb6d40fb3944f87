use std::path::PathBuf;

use thiserror::Error;

use crate::geometry::BBox;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("box has non-finite coordinates ({x}, {y}, {w}, {h})")]
    NonFinite { x: f64, y: f64, w: f64, h: f64 },
    #[error("box extent must be positive, got {w}x{h}")]
    Degenerate { w: f64, h: f64 },
    #[error("box {bbox:?} lies outside the {frame_w}x{frame_h} frame")]
    OutsideFrame {
        bbox: BBox,
        frame_w: f64,
        frame_h: f64,
    },
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("split sizes sum to {expected} but the manifest has {actual} slides")]
    SplitCountMismatch { expected: usize, actual: usize },
    #[error("leave-one-scanner-out needs at least two scanners, found {found}")]
    TooFewScanners { found: usize },
    #[error("duplicate slide id `{0}`")]
    DuplicateSlide(String),
    #[error("slide `{slide_id}`: {reason}")]
    InvalidSlide { slide_id: String, reason: String },
    #[error("tile size must be at least 1")]
    InvalidTileSize,
    #[error("drop probability {0} is outside [0, 1]")]
    InvalidProbability(f64),
    #[error("slide `{slide_id}` image is {actual_w}x{actual_h}, manifest says {width}x{height}")]
    ImageSizeMismatch {
        slide_id: String,
        width: u32,
        height: u32,
        actual_w: u32,
        actual_h: u32,
    },
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid config value `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("cannot serialize config: {0}")]
    Serialize(#[from] toml::ser::Error),
}

impl ConfigError {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ConfigError::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum PredictionsError {
    #[error("line {line}: expected header `{expected}`, found `{found}`")]
    Header {
        line: u64,
        expected: String,
        found: String,
    },
    #[error("line {line}, field `{field}`: {reason}")]
    Field {
        line: u64,
        field: &'static str,
        reason: String,
    },
    #[error("line {line}: expected 7 fields, found {found}")]
    Arity { line: u64, found: usize },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("prediction references unknown slide `{0}`")]
    UnknownSlide(String),
    #[error("threshold search needs at least one image")]
    NoImages,
}

/// Crate-level error; each variant wraps one subsystem's failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Predictions(#[from] PredictionsError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
