use std::path::PathBuf;

/// Errors produced by the regmap library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed MetaImage header {path}: {reason}")]
    Header { path: PathBuf, reason: String },

    #[error("unsupported dimensionality: NDims = {0}")]
    UnsupportedDimensionality(usize),

    #[error("unsupported element type {0}")]
    UnsupportedElementType(String),

    #[error("raw payload size mismatch: expected {expected} bytes, found {found}")]
    PayloadSize { expected: usize, found: usize },

    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("registration cost became non-finite at resolution {level}, iteration {iteration}")]
    NonFiniteCost { level: usize, iteration: usize },

    #[error("B-spline grid does not cover the volume along axis {axis}")]
    GridCoverage { axis: usize },

    #[error("point ({0:.3}, {1:.3}, {2:.3}) mm lies outside the volume")]
    OutOfBounds(f64, f64, f64),

    #[error("insufficient training rows: {rows} rows, at least {required} required")]
    InsufficientRows { rows: usize, required: usize },

    #[error("tree {tree} has no out-of-bootstrap rows")]
    EmptyOob { tree: usize },

    #[error("unknown schema '{0}'")]
    UnknownSchema(String),

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("missing feature map '{0}'")]
    MissingMap(String),

    #[error("unsupported file version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("corrupt payload: {0}")]
    CorruptPayload(String),

    #[error("parse error at {path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("{0}")]
    Png(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
