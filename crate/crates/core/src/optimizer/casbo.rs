//! The scheduled loop with `gamma`-enlarged mean steps and a precision update
//! projected into the feasibility band.
//!
//! Schedules, for iteration `t >= 1`:
//!
//! ```text
//! beta_t  = t * beta
//! alpha_t = sqrt(t + 1) * alpha
//! gamma_t = alpha * nu / (beta * sqrt(t + 1))
//! omega_t = 1
//! ```
//!
//! Under these the band on `H` reduces to `nu Sigma <= H <= nu Sigma + I / (t alpha_t)`.

use nalgebra::DMatrix;

use super::RunTrace;
use crate::error::{invalid, Error, Result};
use crate::estimators::{build_h, grad_estimates_for_step, sum_grad_for_step, ScoreTable};
use crate::linalg::SpdMatrix;
use crate::policy::{GaussianStepParam, PolicyChain};
use crate::problems::{rollout_batch, rollout_trajectory, SequentialProblem};
use crate::Rng;

/// Slack allowed on the PSD check of the score-weighted second moment.
const PSD_SLACK: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CasboSchedules {
    pub beta: f64,
    pub alpha: f64,
    pub nu: f64,
}

impl CasboSchedules {
    pub fn new(beta: f64, alpha: f64, nu: f64) -> Self {
        CasboSchedules { beta, alpha, nu }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("beta", self.beta), ("alpha", self.alpha), ("nu", self.nu)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn beta_t(&self, t: usize) -> f64 {
        t as f64 * self.beta
    }

    pub fn alpha_t(&self, t: usize) -> f64 {
        ((t + 1) as f64).sqrt() * self.alpha
    }

    pub fn gamma_t(&self, t: usize) -> f64 {
        self.alpha * self.nu / (self.beta * ((t + 1) as f64).sqrt())
    }

    pub fn omega_t(&self, _t: usize) -> f64 {
        1.0
    }

    /// Largest initial covariance scale allowed: `||Sigma^1||_2^{-1} >= (5/3) alpha nu`.
    pub fn max_tau(&self) -> f64 {
        3.0 / (5.0 * self.alpha * self.nu)
    }

    /// `(beta_{t+1} / beta_t - omega_t) / alpha_t`, the identity coefficient of the
    /// upper band edge, evaluated from the schedules as written.
    pub fn band_identity_coef(&self, t: usize) -> f64 {
        (self.beta_t(t + 1) / self.beta_t(t) - self.omega_t(t)) / self.alpha_t(t)
    }

    /// `beta_{t+1} gamma_t / alpha_t`, the covariance coefficient of the upper band
    /// edge, evaluated from the schedules as written. Equals `nu`.
    pub fn band_sigma_coef(&self, t: usize) -> f64 {
        self.beta_t(t + 1) * self.gamma_t(t) / self.alpha_t(t)
    }

    /// `1 / (t alpha_t)`: the band width in closed form.
    pub fn band_width(&self, t: usize) -> f64 {
        1.0 / (t as f64 * self.alpha_t(t))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CasboConfig {
    pub schedules: CasboSchedules,
    pub n: usize,
    pub iterations: usize,
    /// Initial covariance scale; the largest admissible value when unset.
    pub tau: Option<f64>,
}

impl CasboConfig {
    pub fn new(schedules: CasboSchedules, n: usize, iterations: usize) -> Self {
        CasboConfig {
            schedules,
            n,
            iterations,
            tau: None,
        }
    }

    pub fn tau(&self) -> f64 {
        self.tau.unwrap_or_else(|| self.schedules.max_tau())
    }

    pub fn validate(&self) -> Result<()> {
        self.schedules.validate()?;
        if self.n < 2 {
            return Err(Error::Config(format!(
                "batch size must be at least 2, got {}",
                self.n
            )));
        }
        let tau = self.tau();
        if !(tau > 0.0) {
            return Err(Error::Config(format!("tau must be positive, got {tau}")));
        }
        let max = self.schedules.max_tau();
        if tau > max * (1.0 + 1e-12) {
            return Err(Error::Config(format!(
                "tau = {tau} exceeds 3 / (5 alpha nu) = {max}"
            )));
        }
        Ok(())
    }
}

/// Projects `W` into the band: `D = c1 W` with `c1 = min(1, 1 / (t alpha_t lambda_max(W)))`,
/// `H = nu Sigma + D`, `G = Sigma^{-1/2} H Sigma^{-1/2} = nu I + Sigma^{-1/2} D Sigma^{-1/2}`.
pub fn casbo_project_h(
    w: &SpdMatrix,
    step: &GaussianStepParam,
    t: usize,
    schedules: &CasboSchedules,
) -> Result<(SpdMatrix, SpdMatrix)> {
    if t == 0 {
        return Err(invalid("iterations are counted from 1"));
    }
    let d = step.dim();
    if w.dim() != d {
        return Err(invalid(format!(
            "W is {}x{}, expected {d}x{d}",
            w.dim(),
            w.dim()
        )));
    }
    let spectrum = w.spectral()?;
    if spectrum.min() < -PSD_SLACK {
        return Err(invalid(format!(
            "W must be positive semi-definite, smallest eigenvalue {}",
            spectrum.min()
        )));
    }
    let width = schedules.band_width(t);
    let top = spectrum.max();
    let c1 = if top > 0.0 {
        (width / top).min(1.0)
    } else {
        1.0
    };
    let dmat = w.as_matrix() * c1;
    let nu = schedules.nu;
    let h = SpdMatrix::symmetrized(step.cov().as_matrix() * nu + &dmat);
    let p_half = step.precision_sqrt().as_matrix();
    let g = SpdMatrix::symmetrized(DMatrix::identity(d, d) * nu + p_half * dmat * p_half);
    Ok((h, g))
}

/// One full iteration at index `t >= 1`.
pub fn casbo_iterate<P>(
    chain: &mut PolicyChain,
    problem: &P,
    schedules: &CasboSchedules,
    n: usize,
    t: usize,
    rng: &mut Rng,
    trace: &mut RunTrace,
) -> Result<()>
where
    P: SequentialProblem + ?Sized,
{
    let (k, d) = problem.dims();
    if (k, d) != (chain.k(), chain.d()) {
        return Err(invalid("problem dimensions do not match the chain"));
    }
    let batch = chain.sample_batch(n, rng)?;
    let raw = rollout_batch(problem, &batch)?;
    let baseline = rollout_trajectory(problem, &chain.mean_trajectory())?;
    let scores = ScoreTable::from_raw(raw)?;

    let beta_t = schedules.beta_t(t);
    let alpha_t = schedules.alpha_t(t);
    let gamma_t = schedules.gamma_t(t);
    let omega_t = schedules.omega_t(t);

    let mut updates = Vec::with_capacity(k);
    for s in 0..k {
        let grads = grad_estimates_for_step(chain, &batch, &scores.raw, &baseline, s)?;
        let g_sum = sum_grad_for_step(&grads)?;
        let step = chain.step(s);
        let w = build_h(batch.z_step(s), &scores.h_row(s))?;
        let (_, g_hat) = casbo_project_h(&w, step, t, schedules)?;
        let drive = step.mu() * gamma_t + g_sum;
        let mu = step.mu() - step.cov().as_matrix() * drive * beta_t;
        let precision = SpdMatrix::symmetrized(
            step.precision().as_matrix() * omega_t + g_hat.as_matrix() * alpha_t,
        );
        updates.push((mu, precision));
    }
    for (s, (mu, precision)) in updates.into_iter().enumerate() {
        let step = chain.step_mut(s);
        step.set_mu(mu)?;
        step.set_precision(precision)?;
    }
    trace.push(problem, chain, scores.best_cumulative(), k * n + k)
}
