use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: malformed record: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("frame {frame_idx}: response map is {got_rows}x{got_cols}, expected {want}x{want}")]
    MapShape {
        frame_idx: usize,
        got_rows: usize,
        got_cols: usize,
        want: usize,
    },

    #[error("duplicate frame index {0}")]
    DuplicateFrame(usize),

    #[error("frame index {frame_idx} out of range [0, {frame_count})")]
    FrameOutOfRange { frame_idx: usize, frame_count: usize },

    #[error("frame {frame_idx} missing {direction} tracking result")]
    MissingDirection { frame_idx: usize, direction: &'static str },

    #[error("invalid bounding box ({x_min}, {y_min}, {x_max}, {y_max})")]
    InvalidBox {
        x_min: f64,
        y_min: f64,
        x_max: f64,
        y_max: f64,
    },

    #[error("{0}")]
    Invalid(String),

    #[error("missing artifact: {0}")]
    MissingArtifact(PathBuf),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
