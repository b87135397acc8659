use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("unknown config key `{key}`; valid keys: {}", valid.join(", "))]
    UnknownKey { key: String, valid: Vec<&'static str> },
    #[error("data error: {0}")]
    Data(tgsl_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Run(tgsl_core::Error),
    #[error("{0} check(s) failed")]
    ChecksFailed(usize),
}

impl CliError {
    /// 1 for failed checks or runs, 2 for configuration, 3 for data.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::UnknownKey { .. } => 2,
            Self::Data(_) | Self::Io { .. } => 3,
            Self::Run(_) | Self::ChecksFailed(_) => 1,
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| Self::Io { path, source }
    }
}

impl From<tgsl_core::Error> for CliError {
    fn from(e: tgsl_core::Error) -> Self {
        use tgsl_core::Error as E;
        match e {
            E::Config(m) => Self::Config(m),
            E::Io { .. } | E::Parse { .. } | E::EmptyStore | E::InvalidStore(_) | E::InvalidNode { .. } | E::DegeneratePool(_) | E::EmptyEvalSet(_) => Self::Data(e),
            other => Self::Run(other),
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
