use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("argument error: {0}")]
    Argument(String),

    #[error("invalid architecture: {0}")]
    Spec(String),

    #[error("state error: {0}")]
    State(String),

    /// A binary artifact failed validation. `field` names the first offending field.
    #[error("format error in {field}: {detail}")]
    Format { field: String, detail: String },

    #[error("no images found in {}", .0.display())]
    NoImages(PathBuf),

    #[error("image error in {}: {detail}", .path.display())]
    Image { path: PathBuf, detail: String },

    #[error("resource limit: {0}")]
    Resource(String),

    #[error("training diverged at step {step} (loss {loss})")]
    Divergence {
        step: u64,
        loss: f64,
        last_checkpoint: Option<PathBuf>,
    },

    #[error("i/o error on {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn format(field: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Format {
            field: field.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
