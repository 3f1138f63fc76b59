//! Error type shared by every module in the crate.

use std::path::PathBuf;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Dimension mismatch between operands.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Argument outside the operation's domain (bad rate, bad label, bad config value).
    #[error("domain error: {0}")]
    Domain(String),

    /// A caller-visible contract was not met (missing labels, empty dataset, ...).
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Floating-point trouble: non-finite loss, vanishing denominator, diverged run.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Linear system refused: singular or condition estimate beyond the guard.
    #[error("singular or ill-conditioned system (condition estimate {cond:.3e})")]
    Singular { cond: f64 },

    /// A row with no positive mass cannot be normalized.
    #[error("degenerate row {row}: no positive entry to normalize")]
    DegenerateRow { row: usize },

    /// File did not parse; `at` names the byte offset or line number.
    #[error("format error in {path} at {at}: {msg}")]
    Format {
        path: PathBuf,
        at: String,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn precondition(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub(crate) fn format(path: impl Into<PathBuf>, at: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            at: at.into(),
            msg: msg.into(),
        }
    }
}
