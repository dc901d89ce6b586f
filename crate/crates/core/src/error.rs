use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is outside its documented bounds.
    #[error("config error: {field}: {message}")]
    Config { field: String, message: String },

    #[error("filter design error: {0}")]
    FilterDesign(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("segment too short: {len} samples (need at least 2)")]
    SegmentTooShort { len: usize },

    #[error("degenerate pulse: standard deviation {std:e} is below 1e-12")]
    DegeneratePulse { std: f64 },

    #[error("annotation error: signal {signal_id}: {message}")]
    Annotation { signal_id: u32, message: String },

    #[error("shape error: {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("numerics error: {0}")]
    Numerics(String),

    #[error("contract error: {0}")]
    Contract(String),

    #[error("mask error: mask_size {mask_size} exceeds row length {row_len}")]
    Mask { mask_size: usize, row_len: usize },

    #[error("imbalance error: {0}")]
    Imbalance(String),

    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Process exit code used by the CLI and the C ABI.
    ///
    /// 2 = configuration, 3 = data, 4 = numerics, 1 = anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::FilterDesign(_) => 2,
            Error::Data(_)
            | Error::SegmentTooShort { .. }
            | Error::DegeneratePulse { .. }
            | Error::Annotation { .. }
            | Error::Mask { .. }
            | Error::Imbalance(_)
            | Error::Format { .. }
            | Error::Io { .. } => 3,
            Error::Numerics(_) => 4,
            Error::Shape { .. } | Error::Contract(_) => 1,
        }
    }
}
