use std::path::PathBuf;

/// Errors produced by the core library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("degenerate heatmap: {0}")]
    FitDegenerate(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("undefined input: {0}")]
    UndefinedInput(String),

    #[error("non-finite loss at iteration {iteration}: {detail}")]
    NonFiniteLoss { iteration: usize, detail: String },

    #[error("missing landmark {0}")]
    MissingLandmark(String),

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("annotation out of bounds: image {image_id}, landmark {landmark_id} at ({x}, {y}) outside {width}x{height}")]
    OutOfBounds {
        image_id: String,
        landmark_id: usize,
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
