use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty dataset")]
    EmptyDataset,

    #[error("empty trajectory{}", .0.as_ref().map(|id| format!(" `{id}`")).unwrap_or_default())]
    EmptyTrajectory(Option<String>),

    #[error("degenerate {axis} axis: min == max == {value}")]
    DegenerateAxis { axis: &'static str, value: f64 },

    #[error("invalid coordinate: {0}")]
    InvalidCoordinate(String),

    #[error("target length {target} is shorter than trajectory length {len}")]
    PadTooShort { target: usize, len: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("no computation record to run backward on")]
    NoRecord,

    #[error("oracle size cap exceeded: lengths {n} x {m}, cap {cap}")]
    OracleCap { n: usize, m: usize, cap: usize },

    #[error("measure failed on pair ({row}, {col}): {source}")]
    Pair {
        row: usize,
        col: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("bad file format: {0}")]
    Format(String),

    #[error("version mismatch: file has version {found}, expected {expected}")]
    Version { found: u32, expected: u32 },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
