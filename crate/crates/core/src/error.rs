use thiserror::Error;

use crate::models::ModelError;

/// Where in a run a forward-model failure happened.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunPhase {
    /// Filter time step (1-based, the step whose data is being assimilated).
    Step(usize),
    /// Inversion iteration (0-based, the iteration whose ensemble was evaluated).
    Iteration(usize),
    /// Outside of any run loop.
    Standalone,
}

impl std::fmt::Display for RunPhase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunPhase::Step(j) => write!(f, "step {j}"),
            RunPhase::Iteration(j) => write!(f, "iteration {j}"),
            RunPhase::Standalone => write!(f, "standalone evaluation"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("forward model failed at {phase}, member {member}: {source}")]
    ForwardModel {
        phase: RunPhase,
        member: usize,
        #[source]
        source: ModelError,
    },

    #[error("constraint set is empty{}", describe_member(*.phase, *.member))]
    Infeasible {
        phase: RunPhase,
        member: Option<usize>,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

fn describe_member(phase: RunPhase, member: Option<usize>) -> String {
    match (phase, member) {
        (RunPhase::Standalone, None) => String::new(),
        (RunPhase::Standalone, Some(m)) => format!(" for member {m}"),
        (p, None) => format!(" at {p}"),
        (p, Some(m)) => format!(" at {p} for member {m}"),
    }
}

impl Error {
    pub(crate) fn infeasible() -> Self {
        Error::Infeasible {
            phase: RunPhase::Standalone,
            member: None,
        }
    }

    /// Attach run context to errors raised by per-member routines.
    pub(crate) fn at(self, phase: RunPhase, member: usize) -> Self {
        match self {
            Error::Infeasible { .. } => Error::Infeasible {
                phase,
                member: Some(member),
            },
            Error::ForwardModel { source, .. } => Error::ForwardModel {
                phase,
                member,
                source,
            },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
