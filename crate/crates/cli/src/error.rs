use std::path::PathBuf;

/// Exit code for success.
pub const EXIT_OK: i32 = 0;
/// Exit code for bad configuration or input, detected before computing.
pub const EXIT_VALIDATION: i32 = 2;
/// Exit code for a failure while computing or writing outputs.
pub const EXIT_COMPUTE: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("missing upstream artifact {}: run `{stage}` first", path.display())]
    MissingArtifact { path: PathBuf, stage: &'static str },
    #[error("stage {stage} failed for subject {subject} (seed {seed}): {message}")]
    Stage {
        stage: &'static str,
        subject: String,
        seed: u64,
        message: String,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        Self::Config(msg.into())
    }

    pub fn input(msg: impl std::fmt::Display) -> Self {
        Self::Input(msg.to_string())
    }

    pub fn stage(stage: &'static str, subject: &str, seed: u64, err: impl std::fmt::Display) -> Self {
        Self::Stage {
            stage,
            subject: subject.to_string(),
            seed,
            message: err.to_string(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Input(_) | Self::MissingArtifact { .. } => EXIT_VALIDATION,
            Self::Stage { .. } | Self::Io { .. } => EXIT_COMPUTE,
        }
    }
}
