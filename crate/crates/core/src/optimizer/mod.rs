//! Optimization loops and run traces.
//!
//! Every loop minimizes. Each iteration appends one [`TraceRecord`]; record 0
//! describes the initial chain before any query is spent.

pub mod bdtg;
pub mod casbo;
pub mod es;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DVector;

use crate::error::{invalid, Result};
use crate::policy::PolicyChain;
use crate::problems::{rollout_trajectory, SequentialProblem};

pub use bdtg::{bdtg_iterate, BdtgConfig};
pub use casbo::{casbo_iterate, casbo_project_h, CasboConfig, CasboSchedules};
pub use es::{es_baseline_iterate, EsConfig};

/// Which loop to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Bdtg,
    Casbo,
    Es,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Bdtg => "bdtg",
            Mode::Casbo => "casbo",
            Mode::Es => "es",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bdtg" => Ok(Mode::Bdtg),
            "casbo" => Ok(Mode::Casbo),
            "es" => Ok(Mode::Es),
            other => Err(invalid(format!(
                "unknown mode {other:?}; expected bdtg, casbo or es"
            ))),
        }
    }
}

/// Mode plus its hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub enum OptimizerConfig {
    Bdtg(BdtgConfig),
    Casbo(CasboConfig),
    Es(EsConfig),
}

impl OptimizerConfig {
    pub fn mode(&self) -> Mode {
        match self {
            OptimizerConfig::Bdtg(_) => Mode::Bdtg,
            OptimizerConfig::Casbo(_) => Mode::Casbo,
            OptimizerConfig::Es(_) => Mode::Es,
        }
    }

    pub fn iterations(&self) -> usize {
        match self {
            OptimizerConfig::Bdtg(c) => c.iterations,
            OptimizerConfig::Casbo(c) => c.iterations,
            OptimizerConfig::Es(c) => c.iterations,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            OptimizerConfig::Bdtg(c) => c.validate(),
            OptimizerConfig::Casbo(c) => c.validate(),
            OptimizerConfig::Es(c) => c.validate(),
        }
    }

    /// Initial covariance scale of the search distribution.
    pub fn initial_tau(&self) -> f64 {
        match self {
            OptimizerConfig::Bdtg(c) => c.tau,
            OptimizerConfig::Casbo(c) => c.tau(),
            OptimizerConfig::Es(c) => c.sigma * c.sigma,
        }
    }
}

/// One row of a run trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub iter: usize,
    /// `sum_k f_k` along the mean trajectory after this iteration's update.
    pub mean_cum_obj: f64,
    /// `min_j s_1^j` over this iteration's batch; NaN for the initial record.
    pub best_sampled_cum_obj: f64,
    /// `lambda_min(Sigma_k)` per step.
    pub min_eig_sigma: Vec<f64>,
    /// `lambda_max(Sigma_k)` per step.
    pub max_eig_sigma: Vec<f64>,
    /// Scoring calls charged so far.
    pub queries: usize,
    pub wallclock_ms: f64,
}

impl TraceRecord {
    pub fn min_eig(&self) -> f64 {
        self.min_eig_sigma
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_eig(&self) -> f64 {
        self.max_eig_sigma
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Equality on everything except wall-clock time, comparing floats by bits.
    pub fn same_values(&self, other: &TraceRecord) -> bool {
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        self.iter == other.iter
            && self.mean_cum_obj.to_bits() == other.mean_cum_obj.to_bits()
            && self.best_sampled_cum_obj.to_bits() == other.best_sampled_cum_obj.to_bits()
            && bits(&self.min_eig_sigma) == bits(&other.min_eig_sigma)
            && bits(&self.max_eig_sigma) == bits(&other.max_eig_sigma)
            && self.queries == other.queries
    }
}

/// Per-iteration history of a run.
#[derive(Debug, Clone)]
pub struct RunTrace {
    pub mode: Mode,
    pub records: Vec<TraceRecord>,
    started: Instant,
    record_wallclock: bool,
}

impl RunTrace {
    pub fn new(mode: Mode, record_wallclock: bool) -> Self {
        RunTrace {
            mode,
            records: Vec::new(),
            started: Instant::now(),
            record_wallclock,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    pub fn queries(&self) -> usize {
        self.last().map_or(0, |r| r.queries)
    }

    pub fn mean_objectives(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.mean_cum_obj).collect()
    }

    /// Same values in every record, ignoring wall-clock time.
    pub fn same_values(&self, other: &RunTrace) -> bool {
        self.mode == other.mode
            && self.records.len() == other.records.len()
            && self
                .records
                .iter()
                .zip(&other.records)
                .all(|(a, b)| a.same_values(b))
    }

    fn elapsed_ms(&self) -> f64 {
        if self.record_wallclock {
            self.started.elapsed().as_secs_f64() * 1e3
        } else {
            0.0
        }
    }

    /// Appends a record describing `chain` after `spent` more queries.
    pub fn push<P>(
        &mut self,
        problem: &P,
        chain: &PolicyChain,
        best_sampled: f64,
        spent: usize,
    ) -> Result<()>
    where
        P: SequentialProblem + ?Sized,
    {
        let scores = rollout_trajectory(problem, &chain.mean_trajectory())?;
        let record = TraceRecord {
            iter: self.records.len(),
            mean_cum_obj: scores.iter().sum(),
            best_sampled_cum_obj: best_sampled,
            min_eig_sigma: chain.steps().iter().map(|s| s.cov_min_eig()).collect(),
            max_eig_sigma: chain.steps().iter().map(|s| s.cov_max_eig()).collect(),
            queries: self.queries() + spent,
            wallclock_ms: self.elapsed_ms(),
        };
        self.records.push(record);
        Ok(())
    }
}

/// Per-run settings that are not hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub seed: u64,
    /// Starting value for every step mean; zero when unset.
    pub initial_mean: Option<DVector<f64>>,
    /// Call the checkpoint hook every this many iterations.
    pub checkpoint_every: Option<usize>,
    pub record_wallclock: bool,
}

impl RunOptions {
    pub fn with_seed(seed: u64) -> Self {
        RunOptions {
            seed,
            initial_mean: None,
            checkpoint_every: None,
            record_wallclock: true,
        }
    }
}

/// Runs `config.iterations()` iterations from a fresh chain and returns the trace.
pub fn run_optimizer<P>(problem: &P, config: &OptimizerConfig, seed: u64) -> Result<RunTrace>
where
    P: SequentialProblem + ?Sized,
{
    run_optimizer_with(problem, config, &RunOptions::with_seed(seed), |_, _| Ok(())).map(|(t, _)| t)
}

/// Like [`run_optimizer`], also returning the final chain. `checkpoint(t, chain)`
/// is called after iteration `t` whenever `t` is a multiple of
/// `options.checkpoint_every`.
pub fn run_optimizer_with<P, F>(
    problem: &P,
    config: &OptimizerConfig,
    options: &RunOptions,
    mut checkpoint: F,
) -> Result<(RunTrace, PolicyChain)>
where
    P: SequentialProblem + ?Sized,
    F: FnMut(usize, &PolicyChain) -> Result<()>,
{
    config.validate()?;
    let (k, d) = problem.dims();
    let mut chain = PolicyChain::init(k, d, config.initial_tau())?;
    if let Some(m) = &options.initial_mean {
        chain.set_all_means(m)?;
    }
    let mut rng = crate::rng_from_seed(options.seed);
    let mut trace = RunTrace::new(config.mode(), options.record_wallclock);
    trace.push(problem, &chain, f64::NAN, 0)?;

    for t in 1..=config.iterations() {
        match config {
            OptimizerConfig::Bdtg(c) => bdtg_iterate(&mut chain, problem, c, &mut rng, &mut trace)?,
            OptimizerConfig::Casbo(c) => casbo_iterate(
                &mut chain,
                problem,
                &c.schedules,
                c.n,
                t,
                &mut rng,
                &mut trace,
            )?,
            OptimizerConfig::Es(c) => {
                es::es_chain_iterate(&mut chain, problem, c, &mut rng, &mut trace)?
            }
        }
        if let Some(every) = options.checkpoint_every.filter(|&e| e > 0) {
            if t % every == 0 {
                checkpoint(t, &chain)?;
            }
        }
    }
    Ok((trace, chain))
}
