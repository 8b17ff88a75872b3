//! Error type shared by the engine.

/// Failure classes surfaced by the engine.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Error {
    /// Shapes or lengths do not line up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    /// A scheme or parameter violates its constraints.
    #[error("invalid configuration: {0}")]
    Config(String),
    /// An operation produced or encountered a non-finite value.
    #[error("numeric failure: {0}")]
    Numeric(String),
    /// An argument lies outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// Reading or writing a serialized form failed.
    #[error("i/o failure: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;
