use thiserror::Error;

/// Errors raised by the in-memory operations of this crate.
///
/// File-format problems have their own type, [`crate::store::StoreError`].
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("state {state} out of range 1..={num_states}")]
    StateOutOfRange { state: usize, num_states: usize },

    #[error("no bias correction is defined for state {0}; correction starts at state 2")]
    InitialState(usize),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("shape mismatch in {what}: expected {expected}, found {found}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("label {label} is not a class seen by state {state}")]
    LabelOutOfRange { label: usize, state: usize },

    #[error("calibration table has no entry for (s={s}, k={k})")]
    MissingEntry { s: usize, k: usize },

    #[error("validation logits for state {state} have no samples for groups {groups:?}")]
    MissingGroups { state: usize, groups: Vec<usize> },

    #[error("no logits supplied for state {0}")]
    MissingState(usize),

    #[error("logits for state {0} supplied more than once")]
    DuplicateState(usize),

    #[error("schedule mismatch: {0}")]
    ScheduleMismatch(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("degenerate input: {0}")]
    Degenerate(String),
}

pub type Result<T> = std::result::Result<T, Error>;
