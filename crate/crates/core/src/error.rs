use crate::grid::{GridExtent, GridPos};

/// Errors raised across the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid extent {i}x{j}x{k}: {reason}")]
    InvalidExtent {
        i: usize,
        j: usize,
        k: usize,
        reason: String,
    },
    #[error("position {pos} lies outside extent {extent}")]
    OutOfExtent { pos: GridPos, extent: GridExtent },
    #[error("notch chain broken at {0}")]
    BrokenChain(GridPos),
    #[error("structure violates the grammar: {0}")]
    InvalidStructure(String),
    #[error("extent {extent} has {positions} positions, above the enumeration limit of {limit}")]
    ScaleGuard {
        extent: GridExtent,
        positions: usize,
        limit: usize,
    },
    #[error("no valid structure satisfies the constraints")]
    NoValidStructure,
    #[error("point lies behind the camera (depth {0})")]
    BehindCamera(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("shift {0} outside [0, 0.5)")]
    ShiftOutOfRange(f64),
    #[error("extent mismatch: {0}")]
    ExtentMismatch(String),
    #[error("no candidate actions supplied")]
    NoCandidates,
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Language(#[from] crate::nl::LanguageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn format(line: usize, message: impl Into<String>) -> Self {
        Error::Format {
            line,
            message: message.into(),
        }
    }
}
