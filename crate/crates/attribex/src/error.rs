//! Error taxonomy shared across the crate.
//!
//! Exit-code mapping for the CLI: [`Error::Numerics`] maps to exit code 2,
//! every other variant maps to exit code 1 (validation failure).

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input shape mismatch: expected {expected:?}, got {got:?}")]
    InputShape {
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    /// Non-finite values encountered during computation.
    #[error("numerics: {0}")]
    Numerics(String),

    /// Model file schema violation. The message carries layer index and
    /// field name where applicable.
    #[error("model format: {0}")]
    ModelFormat(String),

    /// Data / explanation / auxiliary file schema violation.
    #[error("data format: {0}")]
    DataFormat(String),

    /// Invalid operation configuration (patch sizes, rule maps, partitions, ...).
    #[error("config: {0}")]
    Config(String),

    /// Problem instance exceeds a hard size cap (e.g. Shapley player count).
    #[error("size: {0}")]
    Size(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// CLI process exit code for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numerics(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
