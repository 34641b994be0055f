// SPDX-License-Identifier: Apache-2.0

use std::fmt;

use serde::Serialize;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Position-annotated syntax error from the DSL or query parser.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub expected: Vec<String>,
    pub found: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}: expected {}, found {}",
            self.line,
            self.column,
            self.expected.join(" or "),
            self.found
        )
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema {0} already exists")]
    DuplicateSchema(String),
    #[error("invalid identifier {0:?}")]
    InvalidIdentifier(String),
    #[error("unknown schema {0}")]
    UnknownSchema(String),
    #[error("table {0} already exists")]
    DuplicateTable(String),
    #[error("invalid column definition: {0}")]
    InvalidColumn(String),
    #[error("unknown table {0}")]
    UnknownTable(String),
    #[error("unknown column {0}")]
    UnknownColumn(String),
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
    #[error("constraint violation: {0}")]
    ConstraintViolation(String),
    #[error("malformed query: {0}")]
    MalformedQuery(String),
    #[error("table {0} is read-only")]
    ReadOnlyTable(String),

    #[error("unknown transaction {0}")]
    UnknownTxn(u64),
    #[error("transaction {0} is already closed")]
    AlreadyClosed(u64),

    #[error("parse error at {0}")]
    Parse(ParseError),
    #[error("resolution error: {0}")]
    Resolution(String),
    #[error("procedure {0} already exists")]
    DuplicateProcedure(String),
    #[error("unknown procedure {0}")]
    UnknownProcedure(String),
    #[error("trigger {0} already exists")]
    DuplicateTrigger(String),
    #[error("argument mismatch: {0}")]
    ArgMismatch(String),
    #[error("trigger cascade exceeded depth {0}")]
    CascadeDepthExceeded(u32),
    #[error("runtime error: {0}")]
    Runtime(String),
    #[error("raised: {0}")]
    Raised(String),

    #[error("provenance log not initialized")]
    NotInitialized,
    #[error("unknown log id {0}")]
    UnknownLogId(u64),
    #[error("broken provenance chain at log id {0}")]
    BrokenChain(u64),

    #[error("malformed span: {0}")]
    MalformedSpan(String),
    #[error("unknown node {0}")]
    UnknownNode(i64),

    #[error("unknown external call {0}")]
    UnknownExternal(String),
    #[error("device error: {0}")]
    DeviceError(String),
    #[error("unknown device {0}")]
    UnknownDevice(String),

    #[error("access denied: {0}")]
    AccessDenied(String),
    #[error("unknown user {0:?}")]
    UnknownUser(String),
    #[error("malformed request: {0}")]
    Malformed(String),

    #[error("journal: {0}")]
    Journal(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("internal error: {0}")]
    Internal(String),
}

impl From<ParseError> for Error {
    fn from(e: ParseError) -> Self {
        Error::Parse(e)
    }
}

impl Error {
    /// Stable machine-readable name, used as `error_kind` in API bodies.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DuplicateSchema(_) => "DuplicateSchema",
            Error::InvalidIdentifier(_) => "InvalidIdentifier",
            Error::UnknownSchema(_) => "UnknownSchema",
            Error::DuplicateTable(_) => "DuplicateTable",
            Error::InvalidColumn(_) => "InvalidColumn",
            Error::UnknownTable(_) => "UnknownTable",
            Error::UnknownColumn(_) => "UnknownColumn",
            Error::TypeMismatch(_) => "TypeMismatch",
            Error::ConstraintViolation(_) => "ConstraintViolation",
            Error::MalformedQuery(_) => "MalformedQuery",
            Error::ReadOnlyTable(_) => "ReadOnlyTable",
            Error::UnknownTxn(_) => "UnknownTxn",
            Error::AlreadyClosed(_) => "AlreadyClosed",
            Error::Parse(_) => "ParseError",
            Error::Resolution(_) => "ResolutionError",
            Error::DuplicateProcedure(_) => "DuplicateProcedure",
            Error::UnknownProcedure(_) => "UnknownProcedure",
            Error::DuplicateTrigger(_) => "DuplicateTrigger",
            Error::ArgMismatch(_) => "ArgMismatch",
            Error::CascadeDepthExceeded(_) => "CascadeDepthExceeded",
            Error::Runtime(_) => "RuntimeError",
            Error::Raised(_) => "Raised",
            Error::NotInitialized => "NotInitialized",
            Error::UnknownLogId(_) => "UnknownLogId",
            Error::BrokenChain(_) => "BrokenChain",
            Error::MalformedSpan(_) => "MalformedSpan",
            Error::UnknownNode(_) => "UnknownNode",
            Error::UnknownExternal(_) => "UnknownExternal",
            Error::DeviceError(_) => "DeviceError",
            Error::UnknownDevice(_) => "UnknownDevice",
            Error::AccessDenied(_) => "AccessDenied",
            Error::UnknownUser(_) => "UnknownUser",
            Error::Malformed(_) => "Malformed",
            Error::Journal(_) => "JournalError",
            Error::Io(_) => "IoError",
            Error::Internal(_) => "Internal",
        }
    }

    pub fn http_status(&self) -> u16 {
        match self {
            Error::InvalidIdentifier(_)
            | Error::InvalidColumn(_)
            | Error::TypeMismatch(_)
            | Error::MalformedQuery(_)
            | Error::Parse(_)
            | Error::Resolution(_)
            | Error::ArgMismatch(_)
            | Error::MalformedSpan(_)
            | Error::Malformed(_) => 400,
            Error::UnknownUser(_) => 401,
            Error::AccessDenied(_) | Error::ReadOnlyTable(_) => 403,
            Error::UnknownSchema(_)
            | Error::UnknownTable(_)
            | Error::UnknownColumn(_)
            | Error::UnknownTxn(_)
            | Error::UnknownProcedure(_)
            | Error::UnknownLogId(_)
            | Error::UnknownNode(_)
            | Error::UnknownExternal(_)
            | Error::UnknownDevice(_) => 404,
            Error::DuplicateSchema(_)
            | Error::DuplicateTable(_)
            | Error::DuplicateProcedure(_)
            | Error::DuplicateTrigger(_)
            | Error::ConstraintViolation(_)
            | Error::AlreadyClosed(_)
            | Error::CascadeDepthExceeded(_)
            | Error::Runtime(_)
            | Error::Raised(_)
            | Error::NotInitialized => 409,
            Error::DeviceError(_) | Error::BrokenChain(_) | Error::Journal(_) | Error::Io(_) | Error::Internal(_) => {
                500
            }
        }
    }

    /// Errors that are detected before a statement stages anything. They
    /// leave an explicit transaction open; every other error aborts it.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::UnknownTable(_)
                | Error::UnknownColumn(_)
                | Error::TypeMismatch(_)
                | Error::MalformedQuery(_)
                | Error::ReadOnlyTable(_)
                | Error::Parse(_)
                | Error::Resolution(_)
                | Error::UnknownProcedure(_)
                | Error::ArgMismatch(_)
                | Error::AccessDenied(_)
        )
    }
}
