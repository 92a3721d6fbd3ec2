//! Configuration-driven runner for the `lls` binary.

pub mod commands;
pub mod config;
mod plot;

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("physics: {0}")]
    Physics(String),
    #[error("simulation: {message}")]
    Simulation {
        message: String,
        diagnostics: Option<PathBuf>,
    },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Physics(_) => 3,
            CliError::Simulation { .. } | CliError::Io(_) => 4,
        }
    }
}

impl From<lls_core::Error> for CliError {
    fn from(e: lls_core::Error) -> Self {
        use lls_core::Error as E;
        match e {
            E::InvalidInput(m) => CliError::Config(m),
            E::Program(_) => CliError::Config(e.to_string()),
            E::Physics(m) => CliError::Physics(m),
            E::Infeasible { .. } => CliError::Physics(e.to_string()),
            _ => CliError::Simulation {
                message: e.to_string(),
                diagnostics: None,
            },
        }
    }
}
