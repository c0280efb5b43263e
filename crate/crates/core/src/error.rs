use std::fmt;

/// Errors raised anywhere in the staining pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: dimension mismatch on {axis}: expected {expected}, got {actual}")]
    Dimension {
        op: &'static str,
        axis: Axis,
        expected: usize,
        actual: usize,
    },

    #[error("{0}")]
    Invalid(String),

    #[error("non-finite loss {loss} at batch patch {index}")]
    NonFiniteLoss { index: usize, loss: f64 },

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("png decode: {0}")]
    PngDecode(#[from] png::DecodingError),

    #[error("png encode: {0}")]
    PngEncode(#[from] png::EncodingError),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn dim(op: &'static str, axis: Axis, expected: usize, actual: usize) -> Self {
        Error::Dimension {
            op,
            axis,
            expected,
            actual,
        }
    }

    /// True for errors caused by bad input data or arguments, as opposed to
    /// failures while running (I/O, numerical blow-up).
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Dimension { .. }
                | Error::Invalid(_)
                | Error::Checkpoint(_)
                | Error::PngDecode(_)
                | Error::Json(_)
        )
    }

    /// Short machine-readable category used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension",
            Error::Invalid(_) => "validation",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io(_) => "io",
            Error::PngDecode(_) | Error::PngEncode(_) => "png",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Tensor axis named in dimension errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Rank,
    Channels,
    Filters,
    Height,
    Width,
    Kernel,
    Features,
    Length,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Axis::Rank => "rank",
            Axis::Channels => "channels",
            Axis::Filters => "filters",
            Axis::Height => "height",
            Axis::Width => "width",
            Axis::Kernel => "kernel",
            Axis::Features => "features",
            Axis::Length => "length",
        };
        f.write_str(s)
    }
}
