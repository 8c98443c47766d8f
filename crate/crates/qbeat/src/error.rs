use std::path::PathBuf;

/// Unified error type for the crate.
///
/// Variants are grouped by *what the caller can do about them*: fix the inputs
/// (`Domain`, `Config`), fix the environment (`Io`), fix the file (`Format`),
/// or loosen the request (`Numeric`, `Fit`). The CLI maps each group to a
/// distinct exit code.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A function argument is outside its mathematical domain
    /// (non-physical quantum numbers, negative field, empty data, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A scenario or option set is internally inconsistent or incomplete.
    #[error("configuration error: {0}")]
    Config(String),

    /// Underlying filesystem failure, annotated with the path involved.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A byte stream or text file does not conform to its format.
    /// `offset` is the byte position at which parsing failed.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    /// A numerical routine failed to reach its tolerance
    /// (step size underflow, non-convergent integral, singular system).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A fit did not converge or its result is unusable.
    #[error("fit error: {0}")]
    Fit(String),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format { offset, message: msg.into() }
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn fit(msg: impl Into<String>) -> Self {
        Error::Fit(msg.into())
    }

    /// Stable machine-readable category name, used in CLI error reports.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
            Error::Format { .. } => "format",
            Error::Numeric(_) => "numeric",
            Error::Fit(_) => "fit",
        }
    }

    /// Process exit code the CLI uses for this error category.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Domain(_) | Error::Config(_) => 2,
            Error::Io { .. } => 3,
            Error::Format { .. } => 4,
            Error::Numeric(_) => 5,
            Error::Fit(_) => 6,
        }
    }
}
