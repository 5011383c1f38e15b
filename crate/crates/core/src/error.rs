use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid architecture, layer spec or hyperparameter.
    #[error("configuration error: {0}")]
    Config(String),

    /// Caller violated an operation's preconditions.
    #[error("usage error: {0}")]
    Usage(String),

    /// A non-finite value showed up in a forward or backward pass.
    #[error("numerical error in {op}: {detail}")]
    Numerical { op: String, detail: String },

    /// Encoded data is inconsistent or truncated.
    #[error("corrupt data: {0}")]
    Corruption(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported container version {0}")]
    UnsupportedVersion(u8),

    #[error("unsupported size: {0}")]
    UnsupportedSize(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub fn corruption(msg: impl Into<String>) -> Self {
        Error::Corruption(msg.into())
    }

    pub fn numerical(op: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Numerical {
            op: op.into(),
            detail: detail.into(),
        }
    }

    /// True for the data/corruption family (bad bytes, unreadable files).
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Corruption(_)
                | Error::Format(_)
                | Error::UnsupportedVersion(_)
                | Error::UnsupportedSize(_)
                | Error::Io(_)
                | Error::Image(_)
        )
    }
}
