use flowpix_nn::NnError;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Core(#[from] flowpix_core::Error),
    #[error(transparent)]
    Model(#[from] NnError),
    #[error("{0}")]
    Internal(String),
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Config,
    Data,
    Internal,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Config => 1,
            ErrorKind::Data => 2,
            ErrorKind::Internal => 3,
        }
    }
}

fn core_kind(e: &flowpix_core::Error) -> ErrorKind {
    match e {
        flowpix_core::Error::Config { .. } => ErrorKind::Config,
        e if e.is_data_error() => ErrorKind::Data,
        flowpix_core::Error::Json(_) => ErrorKind::Data,
        _ => ErrorKind::Internal,
    }
}

impl CliError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            CliError::Config(_) => ErrorKind::Config,
            CliError::Data(_) => ErrorKind::Data,
            CliError::Internal(_) => ErrorKind::Internal,
            CliError::Core(e) => core_kind(e),
            CliError::Model(e) => match e {
                NnError::Config(_) => ErrorKind::Config,
                NnError::EmptySplit(_) | NnError::Checkpoint { .. } | NnError::Json(_) => ErrorKind::Data,
                NnError::Data(e) => core_kind(e),
                NnError::NonFiniteLoss { .. } | NnError::Io { .. } => ErrorKind::Internal,
            },
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.kind().exit_code()
    }

    /// One-line machine-readable summary for stderr.
    pub fn summary(&self) -> String {
        #[derive(Serialize)]
        struct Summary<'a> {
            status: &'a str,
            kind: ErrorKind,
            exit_code: i32,
            message: String,
        }
        serde_json::to_string(&Summary {
            status: "error",
            kind: self.kind(),
            exit_code: self.exit_code(),
            message: self.to_string(),
        })
        .unwrap_or_else(|_| format!("{{\"status\":\"error\",\"exit_code\":{}}}", self.exit_code()))
    }
}
