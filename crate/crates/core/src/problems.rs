//! Sequential black-box problems with hidden transition dynamics.
//!
//! A [`SequentialProblem`] is driven one step at a time: the optimizer supplies
//! `x_k` and receives `f_k`, which may depend on everything fed in so far. The
//! hidden state never leaves the problem.

use std::f64::consts::PI;
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand::SeedableRng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::policy::TrajectoryBatch;

/// Scores indexed `[(k, j)]`: `K` rows (steps) by `N` columns (samples).
pub type ScoreMatrix = DMatrix<f64>;

/// Per-rollout state: the number of steps taken and the hidden evaluation point.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutState {
    pub k: usize,
    pub y: DVector<f64>,
}

impl RolloutState {
    pub fn new(d: usize) -> Self {
        RolloutState {
            k: 0,
            y: DVector::zeros(d),
        }
    }
}

/// A cumulative objective whose step scores are revealed through `advance`.
///
/// `advance` is called exactly `K` times per rollout, in step order, and must be
/// deterministic in its input sequence.
pub trait SequentialProblem: Send + Sync {
    /// `(K, d)`.
    fn dims(&self) -> (usize, usize);

    fn begin_rollout(&self) -> RolloutState {
        RolloutState::new(self.dims().1)
    }

    /// Feeds `x_k` and returns `f_k`.
    fn advance(&self, state: &mut RolloutState, x: &DVector<f64>) -> Result<f64>;

    /// Whether independent rollouts may be evaluated concurrently.
    fn eval_safe(&self) -> bool {
        true
    }
}

impl<P: SequentialProblem + ?Sized> SequentialProblem for Box<P> {
    fn dims(&self) -> (usize, usize) {
        (**self).dims()
    }
    fn begin_rollout(&self) -> RolloutState {
        (**self).begin_rollout()
    }
    fn advance(&self, state: &mut RolloutState, x: &DVector<f64>) -> Result<f64> {
        (**self).advance(state, x)
    }
    fn eval_safe(&self) -> bool {
        (**self).eval_safe()
    }
}

impl<P: SequentialProblem + ?Sized> SequentialProblem for Arc<P> {
    fn dims(&self) -> (usize, usize) {
        (**self).dims()
    }
    fn begin_rollout(&self) -> RolloutState {
        (**self).begin_rollout()
    }
    fn advance(&self, state: &mut RolloutState, x: &DVector<f64>) -> Result<f64> {
        (**self).advance(state, x)
    }
    fn eval_safe(&self) -> bool {
        (**self).eval_safe()
    }
}

fn check_step(state: &RolloutState, x: &DVector<f64>, k_max: usize, d: usize) -> Result<()> {
    if state.k >= k_max {
        return Err(invalid(format!("rollout already advanced {k_max} steps")));
    }
    if x.len() != d {
        return Err(invalid(format!(
            "candidate has length {}, expected {d}",
            x.len()
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Test functions
// ---------------------------------------------------------------------------

/// The benchmark objectives. All are minimized, with optimum value 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TestFunction {
    Rastrigin10,
    L1Ellipsoid,
    Levy,
}

impl TestFunction {
    pub const ALL: [TestFunction; 3] = [Self::Rastrigin10, Self::L1Ellipsoid, Self::Levy];

    pub fn name(self) -> &'static str {
        match self {
            Self::Rastrigin10 => "rastrigin10",
            Self::L1Ellipsoid => "l1ellipsoid",
            Self::Levy => "levy",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.name() == name)
    }

    pub fn eval(self, x: &[f64]) -> Result<f64> {
        match self {
            Self::Rastrigin10 => rastrigin10(x),
            Self::L1Ellipsoid => l1_ellipsoid(x),
            Self::Levy => levy(x),
        }
    }

    /// The global minimizer in `d` dimensions.
    pub fn minimizer(self, d: usize) -> DVector<f64> {
        match self {
            Self::Levy => DVector::from_element(d, 1.0),
            _ => DVector::zeros(d),
        }
    }
}

impl fmt::Display for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// `(i - 1) / (d - 1)` for 1-based `i`; 0 when `d = 1`.
fn ramp(i: usize, d: usize) -> f64 {
    if d <= 1 {
        0.0
    } else {
        i as f64 / (d - 1) as f64
    }
}

fn nonempty(x: &[f64]) -> Result<()> {
    if x.is_empty() {
        Err(invalid("test functions need a non-empty input"))
    } else {
        Ok(())
    }
}

pub fn rastrigin10(x: &[f64]) -> Result<f64> {
    nonempty(x)?;
    let d = x.len();
    let sum: f64 = x
        .iter()
        .enumerate()
        .map(|(i, &xi)| {
            let u = 10f64.powf(ramp(i, d)) * xi;
            u * u - 10.0 * (2.0 * PI * u).cos()
        })
        .sum();
    Ok(10.0 * d as f64 + sum)
}

pub fn l1_ellipsoid(x: &[f64]) -> Result<f64> {
    nonempty(x)?;
    let d = x.len();
    Ok(x.iter()
        .enumerate()
        .map(|(i, &xi)| 10f64.powf(6.0 * ramp(i, d)) * xi.abs())
        .sum())
}

pub fn levy(x: &[f64]) -> Result<f64> {
    nonempty(x)?;
    let w: Vec<f64> = x.iter().map(|&xi| 1.0 + (xi - 1.0) / 4.0).collect();
    let d = w.len();
    let head = (PI * w[0]).sin().powi(2);
    let mid: f64 = w[..d - 1]
        .iter()
        .map(|&wi| (wi - 1.0).powi(2) * (1.0 + 10.0 * (PI * wi + 1.0).sin().powi(2)))
        .sum();
    let wd = w[d - 1];
    let tail = (wd - 1.0).powi(2) * (1.0 + (2.0 * PI * wd).sin().powi(2));
    Ok(head + mid + tail)
}

// ---------------------------------------------------------------------------
// Rotation dynamics
// ---------------------------------------------------------------------------

/// Test function scored at a hidden point `y_k = Q (y_{k-1} + x_k) + sqrt(k + 1) * 1`
/// with `y_0 = 0` and a seeded rotation `Q`.
#[derive(Debug, Clone)]
pub struct RotationProblem {
    base: TestFunction,
    k: usize,
    d: usize,
    q: DMatrix<f64>,
}

impl RotationProblem {
    pub fn new(base: TestFunction, k: usize, d: usize, seed: u64) -> Result<Self> {
        if k == 0 {
            return Err(invalid("K must be at least 1"));
        }
        if d < 2 {
            return Err(invalid(format!("rotation dynamics need d >= 2, got {d}")));
        }
        Ok(RotationProblem {
            base,
            k,
            d,
            q: seeded_rotation(d, seed),
        })
    }

    pub fn rotation(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn base(&self) -> TestFunction {
        self.base
    }
}

impl SequentialProblem for RotationProblem {
    fn dims(&self) -> (usize, usize) {
        (self.k, self.d)
    }

    fn advance(&self, state: &mut RolloutState, x: &DVector<f64>) -> Result<f64> {
        check_step(state, x, self.k, self.d)?;
        state.k += 1;
        let drift = ((state.k + 1) as f64).sqrt();
        let moved = &self.q * (&state.y + x);
        state.y = moved.add_scalar(drift);
        self.base.eval(state.y.as_slice())
    }
}

/// Orthogonal matrix from a seeded standard-normal matrix by column-wise
/// Gram-Schmidt (two passes per column). The implied triangular factor has a
/// positive diagonal.
pub fn seeded_rotation(d: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut g = DMatrix::<f64>::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            g[(i, j)] = rng.sample(StandardNormal);
        }
    }
    let mut q = DMatrix::<f64>::zeros(d, d);
    for j in 0..d {
        let mut v = g.column(j).into_owned();
        for _pass in 0..2 {
            for i in 0..j {
                let qi = q.column(i);
                let r = qi.dot(&v);
                v.axpy(-r, &qi, 1.0);
            }
        }
        let norm = v.norm();
        q.set_column(j, &(v / norm));
    }
    q
}

// ---------------------------------------------------------------------------
// Toy diffusion rollout
// ---------------------------------------------------------------------------

/// Scoring function on the hidden state.
pub type ScoreFn = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;

/// A frozen linear "denoiser" `x~ -> a_k x~` with per-step solver coefficients.
///
/// `contraction[k - 1]` and `solver_coeffs[k - 1]` are used at step `k`.
#[derive(Clone)]
pub struct ToyDiffusionModel {
    pub contraction: Vec<f64>,
    pub solver_coeffs: Vec<f64>,
    pub terminal: ScoreFn,
}

impl ToyDiffusionModel {
    /// `a_k = 0.9`, `sigma_k = 0.5 * 0.8^(K - k)`.
    pub fn with_defaults(k: usize, terminal: ScoreFn) -> Self {
        ToyDiffusionModel {
            contraction: vec![0.9; k],
            solver_coeffs: (1..=k).map(|s| 0.5 * 0.8f64.powi((k - s) as i32)).collect(),
            terminal,
        }
    }
}

impl fmt::Debug for ToyDiffusionModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ToyDiffusionModel")
            .field("contraction", &self.contraction)
            .field("solver_coeffs", &self.solver_coeffs)
            .finish_non_exhaustive()
    }
}

/// `F(x)` = squared distance to `target`.
pub fn squared_distance_to(target: DVector<f64>) -> ScoreFn {
    Arc::new(move |x: &DVector<f64>| (x - &target).norm_squared())
}

pub fn squared_norm() -> ScoreFn {
    Arc::new(|x: &DVector<f64>| x.norm_squared())
}

pub fn test_function_score(f: TestFunction) -> ScoreFn {
    Arc::new(move |x: &DVector<f64>| f.eval(x.as_slice()).unwrap_or(f64::NAN))
}

/// Rollout `x~_k = a_{k-1} x~_{k-1} + sigma_k x_k`, scored by `F(x~_k)`.
#[derive(Debug, Clone)]
pub struct ToyDiffusionProblem {
    model: ToyDiffusionModel,
    d: usize,
}

impl ToyDiffusionProblem {
    pub fn new(model: ToyDiffusionModel, k: usize, d: usize) -> Result<Self> {
        if k == 0 || d == 0 {
            return Err(invalid("K and d must be positive"));
        }
        if model.contraction.len() != k || model.solver_coeffs.len() != k {
            return Err(invalid(format!(
                "model has {} contraction and {} solver coefficients, expected {k}",
                model.contraction.len(),
                model.solver_coeffs.len()
            )));
        }
        if let Some(bad) = model.solver_coeffs.iter().find(|&&s| !(s > 0.0)) {
            return Err(invalid(format!(
                "solver coefficients must be positive, got {bad}"
            )));
        }
        Ok(ToyDiffusionProblem { model, d })
    }

    pub fn model(&self) -> &ToyDiffusionModel {
        &self.model
    }

    /// Hidden state after feeding the whole trajectory `xs`.
    pub fn terminal_state(&self, xs: &[DVector<f64>]) -> Result<DVector<f64>> {
        let mut state = self.begin_rollout();
        for x in xs {
            self.advance(&mut state, x)?;
        }
        Ok(state.y)
    }

    /// `F` at the hidden state reached by `xs`.
    pub fn terminal_score(&self, xs: &[DVector<f64>]) -> Result<f64> {
        Ok((self.model.terminal)(&self.terminal_state(xs)?))
    }
}

impl SequentialProblem for ToyDiffusionProblem {
    fn dims(&self) -> (usize, usize) {
        (self.model.contraction.len(), self.d)
    }

    fn advance(&self, state: &mut RolloutState, x: &DVector<f64>) -> Result<f64> {
        let (k, d) = self.dims();
        check_step(state, x, k, d)?;
        let a = self.model.contraction[state.k];
        let s = self.model.solver_coeffs[state.k];
        state.y = &state.y * a + x * s;
        state.k += 1;
        Ok((self.model.terminal)(&state.y))
    }
}

// ---------------------------------------------------------------------------
// Adapters
// ---------------------------------------------------------------------------

/// Reports `scale * f_k + shift` in place of `f_k`. `scale = -1` turns a
/// maximization problem into the minimization form the optimizers expect.
#[derive(Debug, Clone)]
pub struct AffineScores<P> {
    pub inner: P,
    pub scale: f64,
    pub shift: f64,
}

impl<P> AffineScores<P> {
    pub fn new(inner: P, scale: f64, shift: f64) -> Self {
        AffineScores {
            inner,
            scale,
            shift,
        }
    }

    pub fn negated(inner: P) -> Self {
        Self::new(inner, -1.0, 0.0)
    }
}

impl<P: SequentialProblem> SequentialProblem for AffineScores<P> {
    fn dims(&self) -> (usize, usize) {
        self.inner.dims()
    }
    fn begin_rollout(&self) -> RolloutState {
        self.inner.begin_rollout()
    }
    fn advance(&self, state: &mut RolloutState, x: &DVector<f64>) -> Result<f64> {
        Ok(self.scale * self.inner.advance(state, x)? + self.shift)
    }
    fn eval_safe(&self) -> bool {
        self.inner.eval_safe()
    }
}

/// Counts `advance` calls.
#[derive(Debug)]
pub struct CountingProblem<P> {
    inner: P,
    calls: AtomicUsize,
}

impl<P> CountingProblem<P> {
    pub fn new(inner: P) -> Self {
        CountingProblem {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }
}

impl<P: SequentialProblem> SequentialProblem for CountingProblem<P> {
    fn dims(&self) -> (usize, usize) {
        self.inner.dims()
    }
    fn begin_rollout(&self) -> RolloutState {
        self.inner.begin_rollout()
    }
    fn advance(&self, state: &mut RolloutState, x: &DVector<f64>) -> Result<f64> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.advance(state, x)
    }
    fn eval_safe(&self) -> bool {
        self.inner.eval_safe()
    }
}

// ---------------------------------------------------------------------------
// Rollouts
// ---------------------------------------------------------------------------

/// Runs one rollout along `xs` and returns the `K` step scores.
pub fn rollout_trajectory<P>(problem: &P, xs: &[DVector<f64>]) -> Result<Vec<f64>>
where
    P: SequentialProblem + ?Sized,
{
    let (k, d) = problem.dims();
    if xs.len() != k || xs.iter().any(|x| x.len() != d) {
        return Err(invalid(format!(
            "trajectory must be {k} steps of length {d}"
        )));
    }
    let mut state = problem.begin_rollout();
    xs.iter().map(|x| problem.advance(&mut state, x)).collect()
}

/// Scores every sampled trajectory: `out[(k, j)] = f_k` along column `j`.
///
/// Rollouts run in parallel when the problem is evaluation-safe; results are
/// gathered in sample order either way.
pub fn rollout_batch<P>(problem: &P, batch: &TrajectoryBatch) -> Result<ScoreMatrix>
where
    P: SequentialProblem + ?Sized,
{
    let (k, d) = problem.dims();
    if batch.k() != k || batch.d() != d {
        return Err(invalid(format!(
            "batch is {}x{}x{} but problem expects K={k}, d={d}",
            batch.k(),
            batch.n(),
            batch.d()
        )));
    }
    let n = batch.n();
    let run = |j: usize| -> Result<Vec<f64>> {
        let mut state = problem.begin_rollout();
        (0..k)
            .map(|s| problem.advance(&mut state, batch.x(s, j)))
            .collect()
    };
    let columns: Vec<Result<Vec<f64>>> = if problem.eval_safe() {
        (0..n).into_par_iter().map(run).collect()
    } else {
        (0..n).map(run).collect()
    };
    let mut out = ScoreMatrix::zeros(k, n);
    for (j, col) in columns.into_iter().enumerate() {
        for (s, v) in col?.into_iter().enumerate() {
            out[(s, j)] = v;
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Registry
// ---------------------------------------------------------------------------

/// Names accepted by [`problem_from_name`].
pub const PROBLEM_NAMES: [&str; 4] = ["rastrigin10", "l1ellipsoid", "levy", "toy-diffusion"];

/// Builds a registered problem.
///
/// - `rastrigin10`, `l1ellipsoid`, `levy`: the test function under rotation dynamics
///   with `Q` drawn from `seed`.
/// - `toy-diffusion`: the default toy diffusion model scored by squared distance to
///   a standard-normal target drawn from `seed`.
/// - `toy-diffusion:<fn>`: the default toy diffusion model scored by test function `<fn>`.
pub fn problem_from_name(
    name: &str,
    k: usize,
    d: usize,
    seed: u64,
) -> Result<Box<dyn SequentialProblem>> {
    if let Some(f) = TestFunction::from_name(name) {
        return Ok(Box::new(RotationProblem::new(f, k, d, seed)?));
    }
    if name == "toy-diffusion" {
        let target = seeded_target(d, seed);
        let model = ToyDiffusionModel::with_defaults(k, squared_distance_to(target));
        return Ok(Box::new(ToyDiffusionProblem::new(model, k, d)?));
    }
    if let Some(f) = name
        .strip_prefix("toy-diffusion:")
        .and_then(TestFunction::from_name)
    {
        let model = ToyDiffusionModel::with_defaults(k, test_function_score(f));
        return Ok(Box::new(ToyDiffusionProblem::new(model, k, d)?));
    }
    Err(invalid(format!(
        "unknown problem {name:?}; expected one of {}",
        PROBLEM_NAMES.join(", ")
    )))
}

/// Standard-normal target point for the toy diffusion problem.
pub fn seeded_target(d: usize, seed: u64) -> DVector<f64> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x7a3c_91e5_d02b_6f48);
    DVector::from_fn(d, |_, _| rng.sample(StandardNormal))
}
