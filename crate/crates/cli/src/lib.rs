//! Command-line front end: bundle I/O and the `generate`, `ingest`,
//! `spectrum`, `infer` and `bench` subcommands.

pub mod bundle;
pub mod cmd;
pub mod error;

use clap::{Parser, Subcommand};

pub use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(
    name = "mndag",
    version,
    about = "Multi-resolution non-stationary DAG toolkit"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a synthetic MN-DAG and its observations into a bundle.
    Generate(cmd::generate::GenerateArgs),
    /// Convert a price CSV into a bundle of log returns.
    Ingest(cmd::ingest::IngestArgs),
    /// Estimate the wavelet spectrum of a bundle or a CSV file.
    Spectrum(cmd::spectrum::SpectrumArgs),
    /// Fit MN-CASTLE to a bundle.
    Infer(cmd::infer::InferArgs),
    /// Run the synthetic benchmark grid.
    Bench(cmd::bench::BenchArgs),
}

/// Runs one parsed command and returns the line to print on success.
pub fn run(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::Generate(a) => cmd::generate::run(a).map(|r| r.summary()),
        Command::Ingest(a) => cmd::ingest::run(a).map(|r| r.summary()),
        Command::Spectrum(a) => cmd::spectrum::run(a).map(|e| {
            let d = e.values.shape();
            format!("estimated spectrum with dims {d:?}")
        }),
        Command::Infer(a) => cmd::infer::run(a).map(|p| cmd::infer::summary(&p)),
        Command::Bench(a) => cmd::bench::run(a).map(|o| {
            let f1 = cmd::bench::column_medians(&o.rows, |r| r.f1);
            let parts: Vec<String> = f1
                .iter()
                .map(|(m, v)| format!("{m} median F1 {v:.3}"))
                .collect();
            format!("{} result rows; {}", o.rows.len(), parts.join(", "))
        }),
    }
}
