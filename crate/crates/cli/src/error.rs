use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config at {path}: {reason}")]
    Config { path: String, reason: String },
    #[error("missing artifact {}; run `wscl {stage}` first", path.display())]
    MissingArtifact { path: PathBuf, stage: &'static str },
    #[error("artifact {} was built from a different config; rerun `wscl {stage}`", path.display())]
    StaleArtifact { path: PathBuf, stage: &'static str },
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error(transparent)]
    Core(wscl::Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            CliError::MissingArtifact { .. } | CliError::StaleArtifact { .. } => 3,
            CliError::Numeric(_) => 4,
            CliError::Core(_) | CliError::Io { .. } => 1,
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }
}

impl From<wscl::Error> for CliError {
    fn from(e: wscl::Error) -> Self {
        use wscl::Error as E;
        match e {
            E::NonFiniteLoss { .. } | E::EmptyMask => CliError::Numeric(e.to_string()),
            E::Config(reason) => CliError::Config {
                path: "<config>".into(),
                reason,
            },
            E::InvalidSpec(reason) => CliError::Config {
                path: "descriptions".into(),
                reason,
            },
            E::UnknownPool(name) => CliError::Config {
                path: "pool".into(),
                reason: format!("unknown pool {name:?}"),
            },
            other => CliError::Core(other),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
