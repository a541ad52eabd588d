//! Benchmark harness: parses an experiment description, runs independent seeded
//! optimizations in parallel and writes per-run CSV traces, a mean/std summary,
//! the effective configuration and an optional SVG convergence plot.

pub mod config;
pub mod error;
pub mod experiment;
pub mod plot;

pub use config::{parse_cli, ExperimentConfig};
pub use error::{HarnessError, Result};
pub use experiment::{
    read_trace_csv, run_experiment, summarize, write_summary_csv, write_trace_csv,
    ExperimentOutput, Summary, SummaryRow, TRACE_HEADER,
};
pub use plot::emit_plot;
