//! Command implementations behind the `dpdlgmm` binary: training runs driven
//! by a config file, prediction, generation, latent export and synthetic data.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;

use thiserror::Error;

pub mod checkpoint;
pub mod commands;
pub mod config;

pub use checkpoint::Checkpoint;
pub use commands::{
    cmd_export_latents, cmd_generate, cmd_predict, cmd_synth, cmd_train, ClusterChoice, HeldOutScores,
    ReadOptions, TrainReport,
};
pub use config::{DataSource, RunConfig};

/// Process exit codes.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const USAGE: i32 = 1;
    pub const DATA: i32 = 2;
    pub const NUMERICAL: i32 = 3;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{origin}, line {line}: {message}")]
    Syntax {
        origin: String,
        line: usize,
        message: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{key}: no such file {}", path.display())]
    MissingPath { key: String, path: PathBuf },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("checkpoint {origin}: {message}")]
    Checkpoint { origin: String, message: String },

    #[error("{0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Syntax { .. } | CliError::Config(_) => exit::USAGE,
            CliError::MissingPath { .. } | CliError::Io { .. } | CliError::Checkpoint { .. } | CliError::Data(_) => {
                exit::DATA
            }
        }
    }
}

fn core_exit_code(e: &dpdlgmm::Error) -> i32 {
    use dpdlgmm::Error as E;
    match e {
        E::Config(_) => exit::USAGE,
        E::Parse { .. } | E::Data(_) | E::Io { .. } | E::Dimension { .. } | E::Index { .. } => exit::DATA,
        E::Numerical(_) | E::Domain { .. } | E::Cache(_) => exit::NUMERICAL,
    }
}

/// Exit code for an error: the first recognised cause decides.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<CliError>() {
            return e.exit_code();
        }
        if let Some(e) = cause.downcast_ref::<dpdlgmm::Error>() {
            return core_exit_code(e);
        }
        if cause.is::<std::io::Error>() || cause.is::<csv::Error>() {
            return exit::DATA;
        }
    }
    exit::USAGE
}
