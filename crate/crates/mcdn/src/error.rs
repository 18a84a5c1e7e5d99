use std::fmt;
use std::path::{Path, PathBuf};

use thiserror::Error;

/// Process exit status for each failure class.
pub mod exit {
    pub const OK: u8 = 0;
    pub const FAILURE: u8 = 1;
    pub const USAGE: u8 = 2;
    pub const DATA: u8 = 3;
    pub const CHECKPOINT: u8 = 4;
    pub const GRADCHECK: u8 = 5;
}

#[derive(Debug, Error)]
pub enum ParseErrorKind {
    #[error("missing header line")]
    MissingHeader,
    #[error("header must be \"count dim\", got {0:?}")]
    BadHeader(String),
    #[error("expected {expected} values, found {found}")]
    Arity { expected: usize, found: usize },
    #[error("value {0:?} is not a number")]
    NotNumeric(String),
    #[error("duplicate token {0:?}")]
    DuplicateToken(String),
    #[error("header promised {expected} vectors, file has {found}")]
    Count { expected: usize, found: usize },
    #[error("invalid JSON: {0}")]
    Json(String),
    #[error("{0}")]
    Invalid(String),
    #[error("read failed: {0}")]
    Io(#[from] std::io::Error),
}

/// A malformed line in an input file.
#[derive(Debug)]
pub struct ParseError {
    pub path: Option<PathBuf>,
    pub line: usize,
    pub kind: ParseErrorKind,
}

impl ParseError {
    pub fn new(line: usize, kind: ParseErrorKind) -> Self {
        Self { path: None, line, kind }
    }

    pub(crate) fn io(line: usize, e: std::io::Error) -> Self {
        Self::new(line, ParseErrorKind::Io(e))
    }

    pub fn at(mut self, path: &Path) -> Self {
        self.path = Some(path.to_owned());
        self
    }
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(p) = &self.path {
            write!(f, "{}:", p.display())?;
        }
        write!(f, "line {}: {}", self.line, self.kind)
    }
}

impl std::error::Error for ParseError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        self.kind.source()
    }
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint truncated at byte {offset} while reading {what}")]
    Truncated { offset: usize, what: &'static str },
    #[error("checkpoint has {0} unexpected trailing bytes")]
    TrailingBytes(usize),
    #[error("checkpoint field {what} is invalid: {detail}")]
    Invalid { what: &'static str, detail: String },
    #[error("checkpoint does not match its model: {0}")]
    Model(mcdn_core::Error),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("{path}: {source}")]
    Checkpoint {
        path: PathBuf,
        #[source]
        source: CheckpointError,
    },
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] mcdn_core::Error),
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_owned(),
            source,
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Io { .. } | Self::Parse(_) => exit::DATA,
            Self::Checkpoint { .. } => exit::CHECKPOINT,
            Self::Config(_) => exit::USAGE,
            Self::Model(mcdn_core::Error::Config(_)) => exit::USAGE,
            Self::Model(_) => exit::FAILURE,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
