// SPDX-License-Identifier: Apache-2.0

use std::fmt::Display;
use std::path::Path;

use thiserror::Error;

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{artifact}: {source}")]
    Validation {
        artifact: String,
        source: tromux::Error,
    },

    #[error("{artifact}: {source}")]
    Infeasible {
        artifact: String,
        source: tromux::Error,
    },

    #[error("{0}")]
    Mismatch(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Validation { .. } | CliError::Mismatch(_) => 2,
            CliError::Infeasible { .. } => 3,
        }
    }

    /// Classify a library error raised while processing `artifact`.
    pub fn at(artifact: impl Display, source: tromux::Error) -> Self {
        let artifact = artifact.to_string();
        match source {
            tromux::Error::Argument(msg) => CliError::Usage(format!("{artifact}: {msg}")),
            e @ (tromux::Error::Placement { .. } | tromux::Error::Locking { .. }) => {
                CliError::Infeasible {
                    artifact,
                    source: e,
                }
            }
            e => CliError::Validation {
                artifact,
                source: e,
            },
        }
    }
}

/// `map_err` helper naming the artifact.
pub fn on<P: AsRef<Path>>(path: P) -> impl FnOnce(tromux::Error) -> CliError {
    let name = path.as_ref().display().to_string();
    move |e| CliError::at(name, e)
}

pub fn read(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::at(path.display(), e.into()))
}

pub fn write(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    std::fs::write(path, contents).map_err(|e| CliError::at(path.display(), e.into()))
}

pub fn json<T: serde::Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text =
        serde_json::to_string_pretty(value).map_err(|e| CliError::at(path.display(), e.into()))?;
    write(path, text + "\n")
}
