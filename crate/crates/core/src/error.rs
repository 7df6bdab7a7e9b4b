use thiserror::Error;

/// Errors produced anywhere in the crate.
///
/// Each variant maps onto one CLI exit-code class, see [`SalrError::exit_code`].
#[derive(Debug, Error)]
pub enum SalrError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("bounds error: {0}")]
    Bounds(String),

    #[error("corrupt data: {0}")]
    Corruption(String),

    #[error("format error in {section}: {detail}")]
    Format { section: &'static str, detail: String },

    #[error("verification failed: {0}")]
    Verification(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SalrError>;

impl SalrError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        SalrError::Shape { op, detail: detail.into() }
    }

    pub(crate) fn format(section: &'static str, detail: impl Into<String>) -> Self {
        SalrError::Format { section, detail: detail.into() }
    }

    /// 0 ok, 2 usage, 3 format, 4 domain, 5 verification failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            SalrError::Usage(_) => 2,
            SalrError::Format { .. } | SalrError::Corruption(_) | SalrError::Io(_) => 3,
            SalrError::Shape { .. } | SalrError::Domain(_) | SalrError::Config(_) | SalrError::Bounds(_) => 4,
            SalrError::Verification(_) => 5,
            SalrError::Internal(_) => 1,
        }
    }
}
