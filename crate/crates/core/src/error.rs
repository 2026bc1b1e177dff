use std::path::PathBuf;

use crate::data::ClassLabel;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dataset contains no samples")]
    EmptyDataset,

    #[error("round contains no trajectories")]
    EmptyRound,

    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),

    #[error("episode is over (t={t}); reset before stepping again")]
    EpisodeOver { t: u32 },

    #[error("expert failed to complete the task for episode seed {episode_seed}")]
    DemoFailed { episode_seed: u64 },

    #[error("infeasible target distribution: residual robot mass {residual}")]
    InfeasibleTarget { residual: f64 },

    #[error("target requests mass for class {0} which has no samples")]
    MissingClass(ClassLabel),

    #[error("class {0} has target mass but zero observed mass")]
    DivisionByZeroClass(ClassLabel),

    #[error("invalid weighting scheme: {0}")]
    InvalidScheme(String),

    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },

    #[error("need at least {needed} checkpoints, log has {available}")]
    InsufficientCheckpoints { needed: usize, available: usize },

    #[error("protected trajectories ({protected}) exceed buffer capacity {capacity}")]
    CapacityInfeasible { protected: usize, capacity: usize },

    #[error("deployment reached the episode cap ({episodes}) without any intervention")]
    QuotaUnreachable { episodes: usize },

    #[error("runs have mismatched configurations: {0}")]
    MismatchedConfigs(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error("intervenor: {0}")]
    Intervenor(String),

    #[error("round {round}: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
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

    pub fn in_round(self, round: usize) -> Self {
        match self {
            e @ Error::Round { .. } => e,
            e => Error::Round {
                round,
                source: Box::new(e),
            },
        }
    }

    /// True for errors caused by bad configuration rather than runtime failure.
    pub fn is_config_error(&self) -> bool {
        match self {
            Error::Config(_) | Error::InvalidScheme(_) | Error::InfeasibleTarget { .. } => true,
            Error::Round { source, .. } => source.is_config_error(),
            _ => false,
        }
    }
}
