use std::path::PathBuf;

use thiserror::Error;

use crate::reactor::ReactorState;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("integrator failed to converge at t = {time:.4} h (substep {substep:.3e} h), state {state:?}")]
    SimulationFault {
        time: f64,
        substep: f64,
        state: ReactorState,
    },

    #[error("steady-state solver did not converge (residual {residual:.3e})")]
    SteadyState { residual: f64 },

    #[error("episode already finished; call reset before stepping")]
    EpisodeDone,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("unknown scenario `{0}` (expected startup, grade_down or grade_up)")]
    UnknownScenario(String),

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("corrupt row {row}: {reason}")]
    CorruptRow { row: usize, reason: String },

    #[error("architecture mismatch: {0}")]
    ArchMismatch(String),

    #[error("training diverged at epoch {epoch}: {what}")]
    Diverged { epoch: usize, what: String },

    #[error("degenerate normalization anchors: R_min = R_max = {0}")]
    DegenerateAnchors(f64),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
