//! Error classification for exit codes: configuration problems exit with 2,
//! runtime failures with 1.

use std::fmt;

#[derive(Debug)]
pub enum AppError {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl AppError {
    pub fn exit_code(&self) -> u8 {
        match self {
            AppError::Config(_) => 2,
            AppError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for AppError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AppError::Config(e) => write!(f, "configuration error: {e:#}"),
            AppError::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<anyhow::Error> for AppError {
    fn from(e: anyhow::Error) -> Self {
        AppError::Runtime(e)
    }
}

pub type AppResult<T> = Result<T, AppError>;
