use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed archive: {0}")]
    MalformedArchive(String),
    #[error("unsupported compression for member {member:?}")]
    UnsupportedCompression { member: String },
    #[error("member {member:?} is truncated: need {needed} bytes, have {available}")]
    TruncatedMember {
        member: String,
        needed: usize,
        available: usize,
    },
    #[error("entry path {0:?} escapes the archive root")]
    UnsafePath(String),
    #[error("malformed index stanza at line {line}: {reason}")]
    MalformedStanza { line: usize, reason: String },
    #[error("invalid package metadata: {0}")]
    InvalidMeta(String),
    #[error("truncated ELF image: {0}")]
    TruncatedElf(String),
    #[error("malformed ELF image: {0}")]
    MalformedElf(String),
    #[error("ELF machine {machine:#x} is not x86-64")]
    NonX86 { machine: u16 },
    #[error("{0} is not a binary file")]
    NotABinary(String),
    #[error("the same binary {package}:{path} is present in both reports")]
    OverlapDetected { package: String, path: String },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("unknown package {0:?}")]
    UnknownPackage(String),
    #[error("fetching {url} failed: {reason}")]
    Fetch { url: String, reason: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
