//! Command-line front end: flag resolution, image ingestion, transfer runs
//! and the scheme benchmark.

pub mod config;
pub mod ingest;
pub mod run;

pub use config::{Args, RunConfig};
pub use run::{run_benchmark_cli, run_transfer, RunSummary, LOSS_CSV_HEADER};
