//! Subcommand implementations. Each `run` takes its parsed arguments and
//! returns a report; printing is left to the dispatcher.

pub mod bench;
pub mod generate;
pub mod infer;
pub mod ingest;
pub mod spectrum;
