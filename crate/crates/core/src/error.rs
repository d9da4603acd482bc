use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("missing bundle file `{}`", .0.display())]
    MissingFile(PathBuf),

    #[error("i/o error on `{}`: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed header: {0}")]
    Header(String),

    #[error("size mismatch in `{field}`: expected {expected} bytes, found {found}")]
    SizeMismatch {
        field: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in `{field}` at index {index}")]
    NonFinite { field: &'static str, index: usize },

    #[error("label {label} at index {index} is outside 0..={classes}")]
    LabelOutOfRange {
        label: i64,
        index: usize,
        classes: usize,
    },

    #[error("invalid extent: {0}")]
    InvalidExtent(String),

    #[error("class {0} has no labeled pixels")]
    EmptyClass(usize),

    #[error("pixel index {index} out of range (cube has {len} pixels)")]
    PixelOutOfRange { index: usize, len: usize },

    #[error("pixel {0} is unlabeled")]
    Unlabeled(usize),

    #[error("pixel {0} has a zero spectrum and cannot be normalized")]
    ZeroNorm(usize),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParam { name: &'static str, reason: String },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("training diverged at epoch {epoch}: mean loss {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("unknown solver `{0}`")]
    UnknownSolver(String),

    #[error("at {param} = {value}: {source}")]
    Sweep {
        param: String,
        value: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("csv parse error at line {line}: {reason}")]
    Csv { line: usize, reason: String },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParam {
        name,
        reason: reason.into(),
    }
}
