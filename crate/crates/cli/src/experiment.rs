use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use seqopt::optimizer::{run_optimizer_with, RunOptions, RunTrace, TraceRecord};
use seqopt::problems::problem_from_name;

use crate::config::ExperimentConfig;
use crate::error::{csv_err, io_err, HarnessError, Result};
use crate::plot::emit_plot;

pub const TRACE_HEADER: [&str; 7] = [
    "iter",
    "mean_cum_obj",
    "best_sampled_cum_obj",
    "min_eig_sigma",
    "max_eig_sigma",
    "queries",
    "wallclock_ms",
];

pub const SUMMARY_HEADER: [&str; 6] = [
    "iter",
    "mean_cum_obj_mean",
    "mean_cum_obj_std",
    "best_sampled_cum_obj_mean",
    "best_sampled_cum_obj_std",
    "queries",
];

/// Across-run statistics for one iteration. `std` is the population standard
/// deviation, so a single run gives 0.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub iter: usize,
    pub mean_cum_obj_mean: f64,
    pub mean_cum_obj_std: f64,
    pub best_sampled_mean: f64,
    pub best_sampled_std: f64,
    pub queries: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
}

#[derive(Debug)]
pub struct ExperimentOutput {
    pub traces: Vec<RunTrace>,
    pub summary: Summary,
    pub run_files: Vec<PathBuf>,
    pub summary_file: PathBuf,
    pub plot_file: Option<PathBuf>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per-iteration mean and standard deviation across runs of equal length.
pub fn summarize(traces: &[RunTrace]) -> Result<Summary> {
    let Some(first) = traces.first() else {
        return Err(HarnessError::InvalidInput("no runs to summarize".into()));
    };
    if traces.iter().any(|t| t.len() != first.len()) {
        return Err(HarnessError::InvalidInput(
            "runs have different lengths".into(),
        ));
    }
    let rows = (0..first.len())
        .map(|i| {
            let col = |f: fn(&TraceRecord) -> f64| {
                traces.iter().map(|t| f(&t.records[i])).collect::<Vec<_>>()
            };
            let (m, s) = mean_std(&col(|r| r.mean_cum_obj));
            let (bm, bs) = mean_std(&col(|r| r.best_sampled_cum_obj));
            SummaryRow {
                iter: i,
                mean_cum_obj_mean: m,
                mean_cum_obj_std: s,
                best_sampled_mean: bm,
                best_sampled_std: bs,
                queries: first.records[i].queries,
            }
        })
        .collect();
    Ok(Summary { rows })
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(csv_err(path))
}

/// Writes one trace as CSV. Floats use the shortest representation that reads
/// back to the same value.
pub fn write_trace_csv(trace: &RunTrace, path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(TRACE_HEADER).map_err(csv_err(path))?;
    for r in &trace.records {
        w.write_record([
            r.iter.to_string(),
            r.mean_cum_obj.to_string(),
            r.best_sampled_cum_obj.to_string(),
            r.min_eig().to_string(),
            r.max_eig().to_string(),
            r.queries.to_string(),
            r.wallclock_ms.to_string(),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_summary_csv(summary: &Summary, path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(SUMMARY_HEADER).map_err(csv_err(path))?;
    for r in &summary.rows {
        w.write_record([
            r.iter.to_string(),
            r.mean_cum_obj_mean.to_string(),
            r.mean_cum_obj_std.to_string(),
            r.best_sampled_mean.to_string(),
            r.best_sampled_std.to_string(),
            r.queries.to_string(),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Reads a trace CSV back as rows of numbers, checking the header.
pub fn read_trace_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let header = r.headers().map_err(csv_err(path))?;
    if header.iter().ne(TRACE_HEADER) {
        return Err(HarnessError::Parse {
            path: path.into(),
            msg: format!("unexpected header {header:?}"),
        });
    }
    r.records()
        .map(|rec| {
            let rec = rec.map_err(csv_err(path))?;
            rec.iter()
                .map(|f| {
                    f.parse::<f64>().map_err(|e| HarnessError::Parse {
                        path: path.into(),
                        msg: format!("{f:?}: {e}"),
                    })
                })
                .collect()
        })
        .collect()
}

/// Runs every seed of the experiment and writes all output files into
/// `config.out`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate().map_err(HarnessError::InvalidInput)?;
    let out = &config.out;
    fs::create_dir_all(out).map_err(io_err(out))?;
    let config_file = out.join("config.txt");
    fs::write(&config_file, config.describe()).map_err(io_err(&config_file))?;

    let problem = problem_from_name(&config.problem, config.k, config.d, config.seed)?;
    let optimizer = config.optimizer_config();

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = config.jobs {
        pool = pool.num_threads(jobs);
    }
    let pool = pool.build()?;

    let runs: Vec<(RunTrace, PathBuf)> = pool.install(|| {
        (0..config.runs)
            .into_par_iter()
            .map(|r| {
                let mut options = RunOptions::with_seed(config.seed.wrapping_add(r as u64));
                options.checkpoint_every = config.checkpoint_every;
                options.record_wallclock = config.wallclock;
                let (trace, _) =
                    run_optimizer_with(problem.as_ref(), &optimizer, &options, |t, chain| {
                        let path = out.join(format!("chain_{r}_{t}.txt"));
                        fs::write(&path, chain.to_snapshot()).map_err(|e| {
                            seqopt::Error::Checkpoint(format!("{}: {e}", path.display()))
                        })
                    })?;
                let path = out.join(format!("run_{r}.csv"));
                write_trace_csv(&trace, &path)?;
                Ok((trace, path))
            })
            .collect::<Result<_>>()
    })?;
    let (traces, run_files): (Vec<_>, Vec<_>) = runs.into_iter().unzip();

    let summary = summarize(&traces)?;
    let summary_file = out.join("summary.csv");
    write_summary_csv(&summary, &summary_file)?;

    let plot_file = if config.plot {
        let path = out.join("plot.svg");
        let title = format!(
            "{} ({}, K={}, d={}, {} runs)",
            config.problem, config.mode, config.k, config.d, config.runs
        );
        emit_plot(&summary, &title, &path)?;
        Some(path)
    } else {
        None
    };

    Ok(ExperimentOutput {
        traces,
        summary,
        run_files,
        summary_file,
        plot_file,
    })
}
