use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NamError {
    /// A caller broke an operation's precondition (shapes, ranges, empty inputs).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("{path}:{line}: malformed line {text:?}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        text: String,
        reason: String,
    },

    #[error("unknown {kind} {symbol:?}")]
    UnknownSymbol { kind: &'static str, symbol: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },
}

pub type Result<T> = std::result::Result<T, NamError>;

impl NamError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        NamError::Io {
            path: path.into(),
            source,
        }
    }
}

macro_rules! contract {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err($crate::error::NamError::Contract(format!($($arg)+)));
        }
    };
}
pub(crate) use contract;
