use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{CommandFactory, Parser};

use seqopt::optimizer::Mode;
use seqopt::problems::problem_from_name;
use seqopt::{BdtgConfig, CasboConfig, CasboSchedules, EsConfig, OptimizerConfig};

const DEFAULT_CASBO_BETA: f64 = 0.1;
const DEFAULT_CASBO_NU: f64 = 1.0;
const DEFAULT_ES_SIGMA: f64 = 1.0;

/// Command-line flags. Mode-specific flags stay `None` unless given so that
/// misplaced ones can be rejected.
#[derive(Parser, Debug)]
#[command(
    name = "seqopt",
    version,
    about = "Multi-seed benchmark runs for sequential black-box optimizers"
)]
struct Cli {
    /// Problem name: rastrigin10, l1ellipsoid, levy, toy-diffusion or toy-diffusion:<function>.
    #[arg(long)]
    problem: String,

    /// Number of sequential steps.
    #[arg(long = "K", default_value_t = 10)]
    k: usize,

    /// Dimension of each step.
    #[arg(long, default_value_t = 100)]
    d: usize,

    /// Optimizer: bdtg, casbo or es.
    #[arg(long, default_value = "bdtg")]
    mode: Mode,

    /// Base step size (the ES step size in es mode).
    #[arg(long, default_value_t = 10.0)]
    alpha: f64,

    /// Base mean-step schedule (casbo only, default 0.1).
    #[arg(long)]
    beta: Option<f64>,

    /// Regularization weight (casbo only, default 1).
    #[arg(long)]
    nu: Option<f64>,

    /// Fixed sampling standard deviation (es only, default 1).
    #[arg(long)]
    sigma: Option<f64>,

    /// Initial covariance scale tau (covariance tau * I; bdtg and casbo only).
    #[arg(long)]
    tau: Option<f64>,

    /// Samples per iteration.
    #[arg(long = "N", default_value_t = 32)]
    n: usize,

    /// Optimization steps per run.
    #[arg(long = "T", default_value_t = 100)]
    t: usize,

    /// Number of independent runs; run r uses seed + r.
    #[arg(long, default_value_t = 5)]
    runs: usize,

    /// Base seed. Also seeds the problem instance.
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,

    /// Output directory.
    #[arg(long)]
    out: PathBuf,

    /// Write a chain snapshot every this many iterations.
    #[arg(long = "checkpoint-every")]
    checkpoint_every: Option<usize>,

    /// Also write plot.svg.
    #[arg(long)]
    plot: bool,

    /// Write 0 in the wallclock_ms column so repeated runs give identical files.
    #[arg(long = "no-wallclock")]
    no_wallclock: bool,
}

/// A fully resolved experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub problem: String,
    pub k: usize,
    pub d: usize,
    pub mode: Mode,
    pub alpha: f64,
    pub beta: Option<f64>,
    pub nu: Option<f64>,
    pub sigma: Option<f64>,
    pub tau: Option<f64>,
    pub n: usize,
    pub t: usize,
    pub runs: usize,
    pub seed: u64,
    pub jobs: Option<usize>,
    pub out: PathBuf,
    pub checkpoint_every: Option<usize>,
    pub plot: bool,
    pub wallclock: bool,
}

/// Parses `argv` (program name first). Help, version and every invalid
/// configuration come back as a clap error carrying the right exit code.
pub fn parse_cli<I, T>(argv: I) -> Result<ExperimentConfig, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv)?;
    let config = ExperimentConfig {
        problem: cli.problem,
        k: cli.k,
        d: cli.d,
        mode: cli.mode,
        alpha: cli.alpha,
        beta: cli.beta,
        nu: cli.nu,
        sigma: cli.sigma,
        tau: cli.tau,
        n: cli.n,
        t: cli.t,
        runs: cli.runs,
        seed: cli.seed,
        jobs: cli.jobs,
        out: cli.out,
        checkpoint_every: cli.checkpoint_every,
        plot: cli.plot,
        wallclock: !cli.no_wallclock,
    };
    config
        .validate()
        .map_err(|msg| Cli::command().error(ErrorKind::ValueValidation, msg))?;
    Ok(config)
}

impl ExperimentConfig {
    /// Checks every field against its mode. Returns a message suitable for a
    /// usage error.
    pub fn validate(&self) -> Result<(), String> {
        if self.runs == 0 {
            return Err("--runs must be at least 1".into());
        }
        if self.jobs == Some(0) {
            return Err("--jobs must be at least 1".into());
        }
        if self.checkpoint_every == Some(0) {
            return Err("--checkpoint-every must be at least 1".into());
        }
        let misplaced = |flag: &str, set: bool, modes: &str| {
            if set {
                Err(format!("--{flag} only applies to {modes} mode"))
            } else {
                Ok(())
            }
        };
        misplaced(
            "beta",
            self.beta.is_some() && self.mode != Mode::Casbo,
            "casbo",
        )?;
        misplaced("nu", self.nu.is_some() && self.mode != Mode::Casbo, "casbo")?;
        misplaced("sigma", self.sigma.is_some() && self.mode != Mode::Es, "es")?;
        misplaced(
            "tau",
            self.tau.is_some() && self.mode == Mode::Es,
            "bdtg or casbo",
        )?;
        problem_from_name(&self.problem, self.k, self.d, self.seed).map_err(|e| e.to_string())?;
        self.optimizer_config()
            .validate()
            .map_err(|e| e.to_string())
    }

    pub fn optimizer_config(&self) -> OptimizerConfig {
        match self.mode {
            Mode::Bdtg => {
                let mut c = BdtgConfig::new(self.alpha, self.n, self.t);
                if let Some(tau) = self.tau {
                    c.tau = tau;
                }
                OptimizerConfig::Bdtg(c)
            }
            Mode::Casbo => {
                let sched = CasboSchedules::new(
                    self.beta.unwrap_or(DEFAULT_CASBO_BETA),
                    self.alpha,
                    self.nu.unwrap_or(DEFAULT_CASBO_NU),
                );
                let mut c = CasboConfig::new(sched, self.n, self.t);
                c.tau = self.tau;
                OptimizerConfig::Casbo(c)
            }
            Mode::Es => OptimizerConfig::Es(EsConfig::new(
                self.alpha,
                self.sigma.unwrap_or(DEFAULT_ES_SIGMA),
                self.n,
                self.t,
            )),
        }
    }

    /// Flags that reproduce this configuration through [`parse_cli`].
    pub fn to_args(&self) -> Vec<String> {
        let mut args = vec![
            "--problem".to_string(),
            self.problem.clone(),
            "--K".into(),
            self.k.to_string(),
            "--d".into(),
            self.d.to_string(),
            "--mode".into(),
            self.mode.to_string(),
            "--alpha".into(),
            self.alpha.to_string(),
        ];
        let mut opt = |flag: &str, v: Option<String>| {
            if let Some(v) = v {
                args.push(flag.to_string());
                args.push(v);
            }
        };
        opt("--beta", self.beta.map(|v| v.to_string()));
        opt("--nu", self.nu.map(|v| v.to_string()));
        opt("--sigma", self.sigma.map(|v| v.to_string()));
        opt("--tau", self.tau.map(|v| v.to_string()));
        opt("--N", Some(self.n.to_string()));
        opt("--T", Some(self.t.to_string()));
        opt("--runs", Some(self.runs.to_string()));
        opt("--seed", Some(self.seed.to_string()));
        opt("--jobs", self.jobs.map(|v| v.to_string()));
        opt("--out", Some(self.out.display().to_string()));
        opt(
            "--checkpoint-every",
            self.checkpoint_every.map(|v| v.to_string()),
        );
        if self.plot {
            args.push("--plot".into());
        }
        if !self.wallclock {
            args.push("--no-wallclock".into());
        }
        args
    }

    /// Contents of `config.txt`: the reproducing command line followed by every
    /// effective value, defaults included.
    pub fn describe(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# seqopt {}", self.to_args().join(" "));
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("problem", self.problem.clone());
        kv("K", self.k.to_string());
        kv("d", self.d.to_string());
        kv("mode", self.mode.to_string());
        kv("N", self.n.to_string());
        kv("T", self.t.to_string());
        kv("runs", self.runs.to_string());
        kv("seed", self.seed.to_string());
        kv("problem_seed", self.seed.to_string());
        kv(
            "run_seeds",
            format!("{}..={}", self.seed, self.seed + self.runs as u64 - 1),
        );
        match self.optimizer_config() {
            OptimizerConfig::Bdtg(c) => {
                kv("alpha", c.alpha.to_string());
                kv("beta_mu", c.beta_mu(self.d).to_string());
                kv("beta_sigma", c.beta_sigma(self.d).to_string());
                kv("tau", c.tau.to_string());
            }
            OptimizerConfig::Casbo(c) => {
                kv("alpha", c.schedules.alpha.to_string());
                kv("beta", c.schedules.beta.to_string());
                kv("nu", c.schedules.nu.to_string());
                kv("tau", c.tau().to_string());
            }
            OptimizerConfig::Es(c) => {
                kv("step", c.beta.to_string());
                kv("sigma", c.sigma.to_string());
            }
        }
        kv("jobs", self.jobs.map_or("all".into(), |j| j.to_string()));
        kv(
            "checkpoint_every",
            self.checkpoint_every
                .map_or("off".into(), |c| c.to_string()),
        );
        kv("plot", self.plot.to_string());
        kv("wallclock", self.wallclock.to_string());
        s
    }
}
