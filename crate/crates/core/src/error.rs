use thiserror::Error;

use crate::classify::BlockIndex;
use crate::model::ValidationReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Process exit codes used by the `distobs` binary and mirrored by the C ABI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(i32)]
pub enum ExitCode {
    Ok = 0,
    Input = 1,
    Infeasible = 2,
    Divergence = 3,
    OracleMismatch = 4,
}

impl ExitCode {
    pub fn code(self) -> i32 {
        self as i32
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input:\n{0}")]
    Invalid(ValidationReport),

    #[error("malformed config at `{path}`: {message}")]
    Parse { path: String, message: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("classification does not match the supplied system and outputs")]
    StaleClassification,

    #[error("assumption {which} violated: {detail}")]
    Assumption { which: u8, detail: String },

    #[error("block {block} infeasible for strategy {strategy}: {reason}")]
    Infeasible {
        block: BlockIndex,
        strategy: u8,
        reason: String,
    },

    #[error("gain {k} for block {block} outside feasible interval {interval}")]
    GainOutOfRange {
        block: BlockIndex,
        k: f64,
        interval: String,
    },

    #[error("no coupling gain is used by block {0} (observed completely by every agent)")]
    UnusedGain(BlockIndex),

    #[error("pair is not detectable: unobservable mode {eigenvalue} has modulus >= 1")]
    NotDetectable { eigenvalue: String },

    /// `agent` is 1-based.
    #[error("Luenberger gain for agent {agent} is not Schur (spectral radius {radius})")]
    LuenbergerNotSchur { agent: usize, radius: f64 },

    #[error("pole placement failed: {0}")]
    Placement(String),

    #[error("eigenvalue iteration did not converge on a {0}x{0} matrix")]
    EigenSolver(usize),

    /// `agent` is 1-based.
    #[error("estimation diverged at t={t}: agent {agent} error norm {norm:e}")]
    Divergence { t: usize, agent: usize, norm: f64 },

    #[error("oracle mismatch: {0}")]
    OracleMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            Error::Invalid(_)
            | Error::Parse { .. }
            | Error::Dimension(_)
            | Error::StaleClassification
            | Error::GainOutOfRange { .. }
            | Error::UnusedGain(_)
            | Error::LuenbergerNotSchur { .. }
            | Error::Io(_)
            | Error::Json(_)
            | Error::Csv(_) => ExitCode::Input,
            Error::Assumption { .. } | Error::Infeasible { .. } | Error::NotDetectable { .. } => {
                ExitCode::Infeasible
            }
            Error::Divergence { .. } => ExitCode::Divergence,
            Error::EigenSolver(_) | Error::Placement(_) | Error::OracleMismatch(_) => ExitCode::OracleMismatch,
        }
    }
}
