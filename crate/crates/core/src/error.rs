use thiserror::Error;

/// Errors raised by the channel, detector and experiment routines.
#[derive(Debug, Error)]
pub enum Error {
    /// An input lies outside the operation's mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A numerical procedure failed to meet its tolerance.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Both hypotheses induce the same output law.
    #[error("degenerate channel: {0}")]
    Degenerate(String),

    /// An equation has no admissible root.
    #[error("no solution: {0}")]
    NoSolution(String),

    /// A least-squares normal matrix could not be factored.
    #[error("singular normal matrix in segment {segment}: {detail}")]
    Singular { segment: usize, detail: String },

    /// Malformed configuration, manifest or record.
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
