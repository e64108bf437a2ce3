//! `reptrain`: synthetic data, repetitive drop-out training, evaluation and
//! highlight extraction from the command line.

mod commands;

use std::process::ExitCode;

use clap::Parser;

use commands::{Cli, UsageError};

/// 0 success, 1 runtime failure, 2 usage or validation error.
fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<reptrain::Error>() {
        Some(
            reptrain::Error::Proportions(_)
            | reptrain::Error::Config(_)
            | reptrain::Error::Manifest { .. }
            | reptrain::Error::InsufficientCheckpoints { .. },
        ) => 2,
        _ => 1,
    }
}

fn init_threads() -> anyhow::Result<()> {
    let Ok(value) = std::env::var("REPTRAIN_THREADS") else {
        return Ok(());
    };
    let threads: usize = match value.trim().parse() {
        Ok(n) if n > 0 => n,
        _ => return Err(UsageError(format!("REPTRAIN_THREADS must be a positive integer, got {value:?}")).into()),
    };
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match init_threads().and_then(|()| commands::run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
