use std::fmt;

use serde::{Deserialize, Serialize};

/// Stable error names. The `Display` form is the exact string used on the
/// wire, so renaming a variant is a protocol change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ErrorCode {
    InvalidInputLength,
    EmptyAgents,
    TooManyAgents,
    InvalidVaultMint,
    ZeroCap,
    CapTooSmall,
    ZeroAmount,
    UnknownAgent,
    UnknownThread,
    UnknownSession,
    NotParticipant,
    ThreadClosed,
    DuplicateAgent,
    DuplicateSession,
    AlreadyClaimed,
    CapExceeded,
    DeadlinePassed,
    DeadlineNotReached,
    BadSignature,
    InsufficientVault,
    Unauthorized,
    Timeout,
    AlreadyRefunded,
    UnknownTool,
    MalformedRequest,
    Overflow,
    Internal,
}

impl ErrorCode {
    pub const ALL: [ErrorCode; 27] = [
        ErrorCode::InvalidInputLength,
        ErrorCode::EmptyAgents,
        ErrorCode::TooManyAgents,
        ErrorCode::InvalidVaultMint,
        ErrorCode::ZeroCap,
        ErrorCode::CapTooSmall,
        ErrorCode::ZeroAmount,
        ErrorCode::UnknownAgent,
        ErrorCode::UnknownThread,
        ErrorCode::UnknownSession,
        ErrorCode::NotParticipant,
        ErrorCode::ThreadClosed,
        ErrorCode::DuplicateAgent,
        ErrorCode::DuplicateSession,
        ErrorCode::AlreadyClaimed,
        ErrorCode::CapExceeded,
        ErrorCode::DeadlinePassed,
        ErrorCode::DeadlineNotReached,
        ErrorCode::BadSignature,
        ErrorCode::InsufficientVault,
        ErrorCode::Unauthorized,
        ErrorCode::Timeout,
        ErrorCode::AlreadyRefunded,
        ErrorCode::UnknownTool,
        ErrorCode::MalformedRequest,
        ErrorCode::Overflow,
        ErrorCode::Internal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::InvalidInputLength => "InvalidInputLength",
            ErrorCode::EmptyAgents => "EmptyAgents",
            ErrorCode::TooManyAgents => "TooManyAgents",
            ErrorCode::InvalidVaultMint => "InvalidVaultMint",
            ErrorCode::ZeroCap => "ZeroCap",
            ErrorCode::CapTooSmall => "CapTooSmall",
            ErrorCode::ZeroAmount => "ZeroAmount",
            ErrorCode::UnknownAgent => "UnknownAgent",
            ErrorCode::UnknownThread => "UnknownThread",
            ErrorCode::UnknownSession => "UnknownSession",
            ErrorCode::NotParticipant => "NotParticipant",
            ErrorCode::ThreadClosed => "ThreadClosed",
            ErrorCode::DuplicateAgent => "DuplicateAgent",
            ErrorCode::DuplicateSession => "DuplicateSession",
            ErrorCode::AlreadyClaimed => "AlreadyClaimed",
            ErrorCode::CapExceeded => "CapExceeded",
            ErrorCode::DeadlinePassed => "DeadlinePassed",
            ErrorCode::DeadlineNotReached => "DeadlineNotReached",
            ErrorCode::BadSignature => "BadSignature",
            ErrorCode::InsufficientVault => "InsufficientVault",
            ErrorCode::Unauthorized => "Unauthorized",
            ErrorCode::Timeout => "Timeout",
            ErrorCode::AlreadyRefunded => "AlreadyRefunded",
            ErrorCode::UnknownTool => "UnknownTool",
            ErrorCode::MalformedRequest => "MalformedRequest",
            ErrorCode::Overflow => "Overflow",
            ErrorCode::Internal => "Internal",
        }
    }

    pub fn parse(name: &str) -> Option<ErrorCode> {
        ErrorCode::ALL.into_iter().find(|c| c.as_str() == name)
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// An [`ErrorCode`] plus a human-readable detail string.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{code}: {detail}")]
pub struct Error {
    pub code: ErrorCode,
    pub detail: String,
}

impl Error {
    pub fn new(code: ErrorCode, detail: impl Into<String>) -> Self {
        Error {
            code,
            detail: detail.into(),
        }
    }
}

impl From<ErrorCode> for Error {
    fn from(code: ErrorCode) -> Self {
        Error {
            code,
            detail: code.as_str().to_string(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
