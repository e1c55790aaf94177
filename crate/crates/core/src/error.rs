use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("invalid config {path}: {message}")]
    Config { path: PathBuf, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("header of {path} does not match the column plan")]
    HeaderMismatch { path: PathBuf },

    #[error("no data: {0}")]
    NoData(String),

    #[error("chunk mixes labels {expected} and {found}")]
    MixedLabels { expected: String, found: String },

    #[error("record has {found} features, image encoding needs {expected}")]
    FeatureCount { expected: usize, found: usize },

    #[error("invalid image: {0}")]
    Image(String),

    #[error("invalid labels: {0}")]
    Labels(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by the input data rather than the caller's
    /// configuration or the environment.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Csv { .. }
                | Error::Schema(_)
                | Error::HeaderMismatch { .. }
                | Error::NoData(_)
                | Error::MixedLabels { .. }
                | Error::FeatureCount { .. }
                | Error::Image(_)
                | Error::Labels(_)
        )
    }
}
