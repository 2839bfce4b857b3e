use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error("config error: {0}")]
    Config(String),
    #[error("aggregation error: {0}")]
    Aggregate(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Problems found while parsing or validating an ASCII map.
///
/// Coordinates are zero-based `(row, col)`.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MapError {
    #[error("empty map")]
    Empty,
    #[error("row {row} has {len} cells, expected {expected}")]
    Ragged { row: usize, len: usize, expected: usize },
    #[error("unknown glyph {glyph:?} at ({row}, {col})")]
    UnknownGlyph { row: usize, col: usize, glyph: char },
    #[error("map has no start cell")]
    NoStart,
    #[error("multiple start cells at ({}, {}) and ({}, {})", first.0, first.1, second.0, second.1)]
    MultipleStarts {
        first: (usize, usize),
        second: (usize, usize),
    },
    #[error("map has no treasure cell")]
    NoTreasure,
    #[error("treasure at ({row}, {col}) is unreachable from the start")]
    UnreachableTreasure { row: usize, col: usize },
}
