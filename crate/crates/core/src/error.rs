use std::path::PathBuf;

use thiserror::Error;

use crate::mdp::{ActionId, StateId};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("state {0} is terminal; no transitions are defined from it")]
    TerminalState(StateId),

    #[error("state {state} out of range (mdp has {num_states} states)")]
    StateOutOfRange { state: usize, num_states: usize },

    #[error("action {action} out of range (mdp has {num_actions} actions)")]
    ActionOutOfRange { action: usize, num_actions: usize },

    #[error("no arrival reward defined for edge {0} -> {1}")]
    MissingReward(StateId, StateId),

    #[error("kernel row for state {0}, action {1} is empty")]
    EmptyRow(StateId, ActionId),

    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("missing required field `{0}`")]
    MissingField(String),

    #[error(
        "record chaining mismatch: record ends in {expected} but next record starts in {found}"
    )]
    Chaining { expected: StateId, found: StateId },

    #[error("agent error: {0}")]
    Agent(String),

    #[error("fixed-point iteration did not converge after {0} sweeps")]
    Divergence(usize),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
