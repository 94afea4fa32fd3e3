use thiserror::Error;

/// Errors raised by the estimation, testing and simulation routines.
#[derive(Debug, Error)]
pub enum MsmError {
    #[error("invalid state space: {0}")]
    InvalidStateSpace(String),

    #[error("subject {subject}: record {record}: {reason}")]
    InvalidHistory {
        subject: String,
        record: usize,
        reason: String,
    },

    #[error("subject {subject}: time {time} is outside the observation window [0, {end}]")]
    OutsideObservation { subject: String, time: f64, end: f64 },

    #[error("empty landmark sample at s = {time} for states {states:?}")]
    EmptyLandmark { time: f64, states: Vec<usize> },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("transition {from}->{to} is not in the state space")]
    UnknownTransition { from: usize, to: usize },

    #[error("bootstrap dropped {dropped} of {total} replicates (empty landmark sample)")]
    TooManyDropped { dropped: usize, total: usize },

    #[error("invalid frailty model: {0}")]
    InvalidModel(String),

    #[error("{path}: {reason}")]
    Input { path: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl MsmError {
    /// True for errors caused by bad input data or configuration rather
    /// than by a failed computation.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, MsmError::TooManyDropped { .. }) && self.io_kind().is_none()
    }

    /// The underlying I/O error kind, if this is an I/O failure.
    pub fn io_kind(&self) -> Option<std::io::ErrorKind> {
        match self {
            MsmError::Io(e) => Some(e.kind()),
            MsmError::Csv(e) => match e.kind() {
                csv::ErrorKind::Io(e) => Some(e.kind()),
                _ => None,
            },
            MsmError::Json(e) => e.io_error_kind(),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, MsmError>;
