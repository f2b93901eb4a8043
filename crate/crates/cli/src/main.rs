mod args;
mod commands;
mod files;

use std::process::ExitCode;

use clap::Parser;
use thiserror::Error;

use dsd_core::compression::CompressionError;
use dsd_core::model::ModelError;
use dsd_core::pipesim::PipeError;
use dsd_core::spikesort::SpikeError;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments or missing inputs; exit code 2.
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Compression(#[from] CompressionError),
    #[error(transparent)]
    Pipe(#[from] PipeError),
    #[error(transparent)]
    Spike(#[from] SpikeError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

fn main() -> ExitCode {
    let cli = args::Cli::parse();
    match commands::run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
