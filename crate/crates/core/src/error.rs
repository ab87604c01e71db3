use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },

    #[error("unknown identifier `{name}` at offset {offset}")]
    UnknownIdentifier { name: String, offset: usize },

    #[error("derivative order {order} exceeds supported maximum {max}")]
    DerivativeOrder { order: usize, max: usize },

    #[error("profile `{label}` is not finite at tau = {tau}")]
    NonFinite { label: String, tau: f64 },

    #[error("invalid mode {mode:?}: {reason}")]
    InvalidMode { mode: Vec<i64>, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("ill-conditioned frequency dedup: cluster of diameter {diameter:e} exceeds 10 x tolerance {tol:e}")]
    LadderMerge { diameter: f64, tol: f64 },

    #[error("combinatorial budget exceeded: {what} reached {count} (cap {cap})")]
    Budget { what: String, count: usize, cap: usize },

    #[error("step size underflow at t = {t}")]
    StepUnderflow { t: f64 },

    #[error("blow-up detected at t = {t}: norm {norm:e} exceeds {limit:e}")]
    BlowUp { t: f64, norm: f64, limit: f64 },

    #[error("time {t} outside window [{start}, {end}]")]
    OutsideWindow { t: f64, start: f64, end: f64 },

    #[error("internal consistency failure: {0}")]
    Internal(String),

    #[error("configuration error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
