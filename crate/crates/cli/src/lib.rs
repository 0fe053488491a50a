//! The `fontid` command line: dataset generation, auto-encoder and
//! supervised training, compression, evaluation and similarity queries.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod data;

use std::ffi::OsString;

use clap::Parser;
use thiserror::Error;

use fontid_core::compress::CompressError;
use fontid_core::dataset::DatasetError;
use fontid_core::evalsim::EvalError;
use fontid_core::network::NetworkError;
use fontid_core::training::TrainError;

pub use commands::{Cli, Command};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<checkpoint::CheckpointError> for CliError {
    fn from(e: checkpoint::CheckpointError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<NetworkError> for CliError {
    fn from(e: NetworkError) -> Self {
        match e {
            NetworkError::KSplit { .. } => CliError::Usage(e.to_string()),
            NetworkError::Numerics(_) => CliError::Numeric(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Network(n) => n.into(),
            TrainError::Numerics(_) | TrainError::Diverged(_) => CliError::Numeric(e.to_string()),
            TrainError::Config(_) | TrainError::UnknownVariant(_) | TrainError::UnknownLayer(_) => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<CompressError> for CliError {
    fn from(e: CompressError) -> Self {
        match e {
            CompressError::Network(n) => n.into(),
            CompressError::RankExceeded { .. }
            | CompressError::Reconstruction(_)
            | CompressError::Numerics(_) => CliError::Numeric(e.to_string()),
            CompressError::UnknownMode(_)
            | CompressError::UnknownLayer(_)
            | CompressError::NotFc(_)
            | CompressError::ZeroRank => CliError::Usage(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Network(n) => n.into(),
            EvalError::UnknownProtocol(_) | EvalError::UnknownClass(_) => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

/// Parse and run; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match commands::execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
