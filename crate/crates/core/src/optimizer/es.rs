//! Fixed-variance ES on the concatenated trajectory:
//! `mu <- mu - beta / (N sigma) sum_i eps_i F(mu + sigma eps_i)`.

use nalgebra::DVector;
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::RunTrace;
use crate::error::{invalid, Error, Result};
use crate::policy::{GaussianStepParam, PolicyChain};
use crate::problems::{rollout_trajectory, SequentialProblem};
use crate::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct EsConfig {
    pub beta: f64,
    pub sigma: f64,
    pub n: usize,
    pub iterations: usize,
}

impl EsConfig {
    pub fn new(beta: f64, sigma: f64, n: usize, iterations: usize) -> Self {
        EsConfig {
            beta,
            sigma,
            n,
            iterations,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!(
                "beta must be positive, got {}",
                self.beta
            )));
        }
        if self.n == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(())
    }
}

/// Splits a length `K d` vector into `K` step vectors.
fn split(x: &DVector<f64>, k: usize, d: usize) -> Vec<DVector<f64>> {
    (0..k).map(|s| x.rows(s * d, d).into_owned()).collect()
}

/// `sum_k f_k` along the trajectory stored in `x` (length `K d`).
pub fn total_objective<P>(problem: &P, x: &DVector<f64>) -> Result<f64>
where
    P: SequentialProblem + ?Sized,
{
    let (k, d) = problem.dims();
    if x.len() != k * d {
        return Err(invalid(format!(
            "expected {} coordinates, got {}",
            k * d,
            x.len()
        )));
    }
    Ok(rollout_trajectory(problem, &split(x, k, d))?.iter().sum())
}

/// One ES step. Returns the new mean and the sampled objective values.
pub fn es_baseline_iterate<P>(
    mu: &DVector<f64>,
    sigma: f64,
    problem: &P,
    n: usize,
    beta: f64,
    rng: &mut Rng,
) -> Result<(DVector<f64>, Vec<f64>)>
where
    P: SequentialProblem + ?Sized,
{
    if !(sigma > 0.0) {
        return Err(invalid(format!("sigma must be positive, got {sigma}")));
    }
    if n == 0 {
        return Err(invalid("batch size must be positive"));
    }
    let dim = mu.len();
    let eps: Vec<DVector<f64>> = (0..n)
        .map(|_| DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal)))
        .collect();
    let eval = |e: &DVector<f64>| total_objective(problem, &(mu + e * sigma));
    let values: Vec<f64> = if problem.eval_safe() {
        eps.par_iter().map(eval).collect::<Result<_>>()?
    } else {
        eps.iter().map(eval).collect::<Result<_>>()?
    };
    Ok((es_step(mu, &eps, &values, sigma, beta), values))
}

/// `mu - beta / (N sigma) sum_i eps_i f_i`.
pub fn es_step(
    mu: &DVector<f64>,
    eps: &[DVector<f64>],
    values: &[f64],
    sigma: f64,
    beta: f64,
) -> DVector<f64> {
    let mut dir = DVector::zeros(mu.len());
    for (e, &f) in eps.iter().zip(values) {
        dir.axpy(f, e, 1.0);
    }
    mu - dir * (beta / (eps.len() as f64 * sigma))
}

/// ES step expressed on a chain of isotropic `sigma^2 I` steps, for the shared runner.
pub(crate) fn es_chain_iterate<P>(
    chain: &mut PolicyChain,
    problem: &P,
    config: &EsConfig,
    rng: &mut Rng,
    trace: &mut RunTrace,
) -> Result<()>
where
    P: SequentialProblem + ?Sized,
{
    let (k, d) = problem.dims();
    let flat = DVector::from_iterator(
        k * d,
        chain
            .mean_trajectory()
            .iter()
            .flat_map(|m| m.iter().copied()),
    );
    let (next, values) =
        es_baseline_iterate(&flat, config.sigma, problem, config.n, config.beta, rng)?;
    let tau = config.sigma * config.sigma;
    let steps = split(&next, k, d)
        .into_iter()
        .map(|m| {
            let mut s = GaussianStepParam::isotropic(d, tau);
            s.set_mu(m).map(|_| s)
        })
        .collect::<Result<Vec<_>>>()?;
    *chain = PolicyChain::from_steps(steps)?;
    let best = values.iter().copied().fold(f64::INFINITY, f64::min);
    trace.push(problem, chain, best, k * config.n)
}
