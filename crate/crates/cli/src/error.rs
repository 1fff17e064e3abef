use std::fs::File;
use std::io;
use std::path::Path;

use thiserror::Error;

/// Failure classes, each with its own exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("data: {0}")]
    Data(String),
    #[error("internal: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Internal(_) => 4,
        }
    }

    /// The error as one `error: <class>: <message>` line.
    pub fn line(&self) -> String {
        format!("error: {}", self.to_string().replace(['\n', '\r'], " "))
    }
}

/// Prefixes any displayable error with `context` as a data error.
pub fn data<E: std::fmt::Display>(context: impl std::fmt::Display) -> impl FnOnce(E) -> CliError {
    move |e| CliError::Data(format!("{context}: {e}"))
}

pub fn open_input(path: &Path) -> Result<File, CliError> {
    File::open(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => {
            CliError::Usage(format!("input file `{}` not found", path.display()))
        }
        _ => CliError::Data(format!("{}: {e}", path.display())),
    })
}

pub fn read_input(path: &Path) -> Result<String, CliError> {
    let mut text = String::new();
    io::Read::read_to_string(&mut open_input(path)?, &mut text)
        .map_err(data(path.display()))?;
    Ok(text)
}

pub fn write_output(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents)
        .map_err(|e| CliError::Internal(format!("writing `{}`: {e}", path.display())))
}

pub fn ensure_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path)
        .map_err(|e| CliError::Internal(format!("creating `{}`: {e}", path.display())))
}
