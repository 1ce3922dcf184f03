use std::path::PathBuf;

use thiserror::Error;

use crate::geo::PoiId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("unknown POI in time model: {0}")]
    UnknownPoi(PoiId),

    #[error("unknown {kind} id {id} (table has {len} rows)")]
    UnknownId {
        kind: &'static str,
        id: u32,
        len: usize,
    },

    #[error("corpus too small to split: {0} trips (need at least 10)")]
    CorpusTooSmall(usize),

    #[error("world has {available} POIs but the candidate set needs {requested}")]
    WorldTooSmall { available: usize, requested: usize },

    #[error(
        "infeasible query: budget {budget_s:.1}s is below the start POI duration {duration_s:.1}s"
    )]
    InfeasibleQuery { budget_s: f64, duration_s: f64 },

    #[error("infeasible move to candidate slot {0}")]
    InfeasibleMove(usize),

    #[error("ground-truth POI {0} is missing from the candidate set")]
    MissingTarget(PoiId),

    #[error("degenerate reference trip: need at least 2 POIs, got {0}")]
    DegenerateReference(usize),

    #[error("trips do not share a start POI ({0} vs {1})")]
    StartMismatch(PoiId, PoiId),

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("fully masked distribution")]
    FullyMasked,

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss((usize, usize)),

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
