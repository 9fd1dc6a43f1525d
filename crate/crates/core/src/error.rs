use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, LpathError>;

#[derive(Debug, Error)]
pub enum LpathError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("domain error: {0}")]
    Domain(String),

    /// A NaN or infinity appeared while evaluating the network.
    #[error("non-finite value in layer {layer}: {message}")]
    Numeric { layer: usize, message: String },

    #[error("numeric failure: {0}")]
    Singular(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl LpathError {
    pub(crate) fn shape(context: &'static str, expected: usize, got: usize) -> Self {
        LpathError::Shape {
            context,
            expected,
            got,
        }
    }

    pub(crate) fn format(offset: usize, message: impl Into<String>) -> Self {
        LpathError::Format {
            offset,
            message: message.into(),
        }
    }

    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            LpathError::InvalidConfig(_) | LpathError::Domain(_) => 2,
            LpathError::InvalidInput(_)
            | LpathError::Shape { .. }
            | LpathError::Format { .. }
            | LpathError::InsufficientData(_)
            | LpathError::Io(_) => 3,
            LpathError::Numeric { .. } | LpathError::Singular(_) => 4,
        }
    }
}
