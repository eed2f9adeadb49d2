use axum::http::StatusCode;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("unknown condition `{0}`")]
    UnknownCondition(String),
    #[error("suggestions disabled")]
    SuggestionsDisabled,
    #[error("span {0} is not a current highlight")]
    NotHighlighted(String),
    #[error("`{to}` is not adjacent to `{from}`")]
    NotAdjacent { from: String, to: String },
    #[error("`{0}` was not served for this highlight")]
    NotServed(String),
    #[error("task is finalized")]
    Finalized,
    #[error("nothing to revert")]
    NothingToRevert,
    #[error("rating answers must be integers from 1 to 5")]
    InvalidRating,
    #[error("expected sequence number {expected}, got {got}")]
    Sequence { expected: u64, got: u64 },
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("corrupt session log: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Core(#[from] hear_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;

impl ServiceError {
    pub fn status(&self) -> StatusCode {
        use ServiceError::*;
        match self {
            UnknownSession(_) | UnknownTask(_) => StatusCode::NOT_FOUND,
            SuggestionsDisabled => StatusCode::FORBIDDEN,
            Finalized | NothingToRevert | Sequence { .. } => StatusCode::CONFLICT,
            NotHighlighted(_) | NotAdjacent { .. } | NotServed(_) | InvalidRating => StatusCode::UNPROCESSABLE_ENTITY,
            UnknownCondition(_) | BadRequest(_) => StatusCode::BAD_REQUEST,
            Core(hear_core::Error::InvalidExample(_)) => StatusCode::BAD_REQUEST,
            Core(hear_core::Error::StaleSpan) => StatusCode::CONFLICT,
            Corrupt(_) | Core(_) | Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    pub fn code(&self) -> &'static str {
        use ServiceError::*;
        match self {
            UnknownSession(_) => "unknown_session",
            UnknownTask(_) => "unknown_task",
            UnknownCondition(_) => "unknown_condition",
            SuggestionsDisabled => "suggestions_disabled",
            NotHighlighted(_) => "not_highlighted",
            NotAdjacent { .. } => "not_adjacent",
            NotServed(_) => "not_served",
            Finalized => "finalized",
            NothingToRevert => "nothing_to_revert",
            InvalidRating => "invalid_rating",
            Sequence { .. } => "sequence_conflict",
            BadRequest(_) => "bad_request",
            Corrupt(_) => "corrupt_log",
            Core(_) => "internal",
            Io(_) => "io",
        }
    }
}
