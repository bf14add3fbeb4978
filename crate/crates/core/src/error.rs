use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("grid must be at least 2x2, got {rows}x{cols}")]
    GridTooSmall { rows: usize, cols: usize },

    #[error("grid {rows}x{cols} needs {expected} points, got {actual}")]
    PointCount {
        rows: usize,
        cols: usize,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite coordinate at point {0}")]
    NonFinite(usize),

    #[error("invalid reference spec: {0}")]
    InvalidSpec(String),

    #[error("step {step} does not divide a side of {side} vertices; valid steps: {valid:?}")]
    InvalidStep {
        step: usize,
        side: usize,
        valid: Vec<usize>,
    },

    #[error("invalid resolution {width}x{height}")]
    InvalidResolution { width: f64, height: f64 },

    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),

    #[error("index ({row}, {col}) out of range for a {rows}x{cols} grid")]
    IndexOutOfRange {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("invalid backward map data: {0}")]
    InvalidMap(String),

    #[error("invalid annotation: {0}")]
    InvalidAnnotation(String),

    #[error("image codec error: {0}")]
    Codec(#[from] ::image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the caller's data rather than the environment.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::Io { .. })
    }
}
