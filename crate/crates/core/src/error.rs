use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::domain::Stage;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Closed set of error categories surfaced to API clients and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    Validation,
    NotFound,
    Conflict,
    State,
    StageFailure,
    Format,
}

impl ErrorCode {
    pub const ALL: [ErrorCode; 6] = [
        ErrorCode::Validation,
        ErrorCode::NotFound,
        ErrorCode::Conflict,
        ErrorCode::State,
        ErrorCode::StageFailure,
        ErrorCode::Format,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::Validation => "validation",
            ErrorCode::NotFound => "not_found",
            ErrorCode::Conflict => "conflict",
            ErrorCode::State => "state",
            ErrorCode::StageFailure => "stage_failure",
            ErrorCode::Format => "format",
        }
    }

    /// Fixed HTTP status for each code.
    pub fn http_status(self) -> u16 {
        match self {
            ErrorCode::Validation | ErrorCode::Format => 400,
            ErrorCode::NotFound => 404,
            ErrorCode::Conflict => 409,
            ErrorCode::State => 422,
            ErrorCode::StageFailure => 502,
        }
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageErrorKind {
    Timeout,
    Transport,
    Protocol,
}

/// A model-backed stage failed. Carries every id whose output was not produced.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{stage} stage failed ({adapter_id}, {kind:?}): {message}")]
pub struct StageError {
    pub stage: Stage,
    pub adapter_id: String,
    pub kind: StageErrorKind,
    pub message: String,
    pub failed_ids: Vec<String>,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("invalid state: {0}")]
    State(String),
    #[error(transparent)]
    Stage(#[from] StageError),
    #[error("format error: {message}")]
    Format {
        message: String,
        details: BTreeMap<String, Value>,
    },
    #[error("storage error: {0}")]
    Storage(String),
}

impl Error {
    pub fn format(message: impl Into<String>) -> Self {
        Error::Format {
            message: message.into(),
            details: BTreeMap::new(),
        }
    }

    pub fn format_at(message: impl Into<String>, key: &str, value: impl Into<Value>) -> Self {
        let mut details = BTreeMap::new();
        details.insert(key.to_string(), value.into());
        Error::Format {
            message: message.into(),
            details,
        }
    }

    pub fn code(&self) -> ErrorCode {
        match self {
            Error::Validation(_) => ErrorCode::Validation,
            Error::NotFound(_) => ErrorCode::NotFound,
            Error::Conflict(_) => ErrorCode::Conflict,
            // Storage faults are server-side state problems; the code set is closed.
            Error::State(_) | Error::Storage(_) => ErrorCode::State,
            Error::Stage(_) => ErrorCode::StageFailure,
            Error::Format { .. } => ErrorCode::Format,
        }
    }

    /// Structured details for API responses (failed ids, byte offsets, ...).
    pub fn details(&self) -> Option<BTreeMap<String, Value>> {
        match self {
            Error::Stage(e) => {
                let mut m = BTreeMap::new();
                m.insert("stage".into(), Value::from(e.stage.as_str()));
                m.insert("adapter_id".into(), Value::from(e.adapter_id.clone()));
                m.insert("kind".into(), serde_json::to_value(e.kind).expect("kind serializes"));
                m.insert("failed_ids".into(), Value::from(e.failed_ids.clone()));
                Some(m)
            }
            Error::Format { details, .. } if !details.is_empty() => Some(details.clone()),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Storage(e.to_string())
    }
}
