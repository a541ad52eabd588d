//! The practical loop: min-max normalized cumulative scores drive a mean step of
//! size `alpha / sqrt(d)` and a precision step of size `alpha / d`.

use nalgebra::{DMatrix, DVector};

use super::RunTrace;
use crate::error::{invalid, Error, Result};
use crate::estimators::{build_h, ScoreTable};
use crate::linalg::SpdMatrix;
use crate::policy::{GaussianStepParam, PolicyChain};
use crate::problems::{rollout_batch, SequentialProblem};
use crate::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct BdtgConfig {
    pub alpha: f64,
    pub n: usize,
    pub iterations: usize,
    /// Initial covariance `tau * I`.
    pub tau: f64,
}

impl BdtgConfig {
    pub fn new(alpha: f64, n: usize, iterations: usize) -> Self {
        BdtgConfig {
            alpha,
            n,
            iterations,
            tau: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        if self.n < 2 {
            return Err(Error::Config(format!(
                "batch size must be at least 2, got {}",
                self.n
            )));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        Ok(())
    }

    /// Mean step size `alpha / sqrt(d)`.
    pub fn beta_mu(&self, d: usize) -> f64 {
        self.alpha / (d as f64).sqrt()
    }

    /// Precision step size `alpha / d`.
    pub fn beta_sigma(&self, d: usize) -> f64 {
        self.alpha / d as f64
    }
}

/// `mu - (beta / N) sum_j (x_j - mu) h_j`.
pub fn bdtg_update_mu(
    step: &GaussianStepParam,
    x_k: &[DVector<f64>],
    h_row: &[f64],
    beta_mu: f64,
) -> Result<DVector<f64>> {
    if x_k.len() != h_row.len() || x_k.is_empty() {
        return Err(invalid(format!(
            "{} candidates but {} weights",
            x_k.len(),
            h_row.len()
        )));
    }
    let mu = step.mu();
    if x_k.iter().any(|x| x.len() != mu.len()) {
        return Err(invalid("candidate length does not match the mean"));
    }
    let mut dir = DVector::zeros(mu.len());
    for (x, &h) in x_k.iter().zip(h_row) {
        dir.axpy(h, &(x - mu), 1.0);
    }
    Ok(mu - dir * (beta_mu / x_k.len() as f64))
}

/// `Sigma^{-1/2} ((1 - kappa beta) I + beta H) Sigma^{-1/2}`, the new precision
/// before eigenvalue clamping.
pub fn bdtg_update_sigma(
    step: &GaussianStepParam,
    h: &SpdMatrix,
    kappa: f64,
    beta_sigma: f64,
) -> Result<SpdMatrix> {
    let d = step.dim();
    if h.dim() != d {
        return Err(invalid(format!(
            "H is {}x{}, expected {d}x{d}",
            h.dim(),
            h.dim()
        )));
    }
    let product = kappa * beta_sigma;
    if product >= 1.0 {
        return Err(Error::StepSize { product });
    }
    let p_half = step.precision_sqrt().as_matrix();
    let inner = DMatrix::identity(d, d) * (1.0 - product) + h.as_matrix() * beta_sigma;
    Ok(SpdMatrix::symmetrized(p_half * inner * p_half))
}

/// Unnormalized Monte-Carlo update with the step sums regrouped into cumulative
/// scores: `mu - (beta/N) sum_j (x_j - mu) s_j` and
/// `P + (beta/N) sum_j (P (x_j - mu)(x_j - mu)^T P - P) s_j`.
///
/// The precision can become indefinite for large steps, so it is returned as a
/// plain matrix.
pub fn closed_form_update(
    step: &GaussianStepParam,
    x_k: &[DVector<f64>],
    s_row: &[f64],
    beta: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if x_k.len() != s_row.len() || x_k.is_empty() {
        return Err(invalid(format!(
            "{} candidates but {} scores",
            x_k.len(),
            s_row.len()
        )));
    }
    let n = x_k.len() as f64;
    let mu = step.mu();
    let p = step.precision().as_matrix();
    let mut mu_dir = DVector::zeros(mu.len());
    let mut p_dir = DMatrix::zeros(mu.len(), mu.len());
    for (x, &s) in x_k.iter().zip(s_row) {
        let dev = x - mu;
        mu_dir.axpy(s, &dev, 1.0);
        let pd = p * &dev;
        p_dir += (&pd * pd.transpose() - p) * s;
    }
    Ok((mu - mu_dir * (beta / n), p + p_dir * (beta / n)))
}

/// One full iteration: sample, roll out, normalize, update every step, record.
pub fn bdtg_iterate<P>(
    chain: &mut PolicyChain,
    problem: &P,
    config: &BdtgConfig,
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
    let batch = chain.sample_batch(config.n, rng)?;
    let scores = ScoreTable::from_raw(rollout_batch(problem, &batch)?)?;
    let beta_mu = config.beta_mu(d);
    let beta_sigma = config.beta_sigma(d);

    for s in 0..k {
        if scores.degenerate[s] {
            continue;
        }
        let h = scores.h_row(s);
        let step = chain.step(s);
        let mu = bdtg_update_mu(step, batch.x_step(s), &h, beta_mu)?;
        let pre = build_h(batch.z_step(s), &h)?;
        let precision = bdtg_update_sigma(step, &pre, scores.kappa[s], beta_sigma)?;
        let step = chain.step_mut(s);
        step.set_mu(mu)?;
        step.set_precision(precision)?;
    }
    trace.push(problem, chain, scores.best_cumulative(), k * config.n)
}
