use std::path::PathBuf;

/// Errors raised across the toolkit.
///
/// Variants map onto the CLI exit codes: input/config/parse/io problems
/// exit with 1, numerical failures with 2.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("input error: {0}")]
    Input(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("numerical error: {message} ({diagnostics})")]
    Numerical { message: String, diagnostics: String },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub fn numerical(msg: impl Into<String>, diagnostics: impl Into<String>) -> Self {
        Error::Numerical {
            message: msg.into(),
            diagnostics: diagnostics.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numerical { .. } => 2,
            _ => 1,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
