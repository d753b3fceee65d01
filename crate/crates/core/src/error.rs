use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("degenerate grid {rows}x{cols}: partitioning needs at least 2x2")]
    DegenerateGrid { rows: usize, cols: usize },

    #[error("not calibrated: {0}")]
    NotCalibrated(String),

    #[error("layer selection: {0}")]
    LayerSelection(String),

    #[error("backend contract: {0}")]
    BackendContract(String),

    #[error("backend error: {0}")]
    Backend(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error("mode unsupported by backend: {0}")]
    ModeUnsupported(String),

    #[error("frame {sequence}: {source}")]
    AtFrame {
        sequence: u64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Attach the sequence number of the frame being processed.
    pub fn at_frame(self, sequence: u64) -> Self {
        match self {
            e @ Error::AtFrame { .. } => e,
            e => Error::AtFrame {
                sequence,
                source: Box::new(e),
            },
        }
    }

    /// The innermost error, with any frame annotation stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtFrame { source, .. } => source.root(),
            e => e,
        }
    }
}
