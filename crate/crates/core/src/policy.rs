//! Per-step Gaussian search distributions and batch sampling.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};
use crate::linalg::{SpdMatrix, Spectral, EIG_FLOOR};

/// One step's search distribution `N(mu, cov)`.
///
/// The precision matrix is the stored state; covariance, covariance root and
/// precision root are caches rebuilt from a single eigendecomposition whenever
/// the precision changes. Precision eigenvalues are kept inside
/// `[EIG_FLOOR, 1 / EIG_FLOOR]` so the covariance is bounded below by the floor too.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStepParam {
    mu: DVector<f64>,
    precision: SpdMatrix,
    cov: SpdMatrix,
    cov_sqrt: SpdMatrix,
    precision_sqrt: SpdMatrix,
    precision_eigs: DVector<f64>,
}

impl GaussianStepParam {
    pub fn from_precision(mu: DVector<f64>, precision: SpdMatrix) -> Result<Self> {
        if mu.len() != precision.dim() {
            return Err(invalid(format!(
                "mean has length {} but precision is {}x{}",
                mu.len(),
                precision.dim(),
                precision.dim()
            )));
        }
        let (lo, hi) = (EIG_FLOOR, 1.0 / EIG_FLOOR);
        let mut spectrum = precision.spectral()?;
        let clamped = spectrum.values.iter().any(|&l| l < lo || l > hi);
        let precision = if clamped {
            spectrum.values.apply(|l| *l = l.clamp(lo, hi));
            spectrum.compose(|l| l)
        } else {
            precision
        };
        Ok(Self::with_spectrum(mu, precision, &spectrum))
    }

    pub fn from_covariance(mu: DVector<f64>, cov: &SpdMatrix) -> Result<Self> {
        let prec = crate::linalg::sym_inv(cov)?;
        Self::from_precision(mu, prec)
    }

    fn with_spectrum(mu: DVector<f64>, precision: SpdMatrix, spectrum: &Spectral) -> Self {
        GaussianStepParam {
            mu,
            cov: spectrum.compose(f64::recip),
            cov_sqrt: spectrum.compose(|l| l.sqrt().recip()),
            precision_sqrt: spectrum.compose(f64::sqrt),
            precision_eigs: spectrum.values.clone(),
            precision,
        }
    }

    /// `N(0, tau I)` with all caches in closed form.
    pub fn isotropic(d: usize, tau: f64) -> Self {
        let eigs = DVector::from_element(d, tau.recip());
        GaussianStepParam {
            mu: DVector::zeros(d),
            precision: SpdMatrix::scaled_identity(d, tau.recip()),
            cov: SpdMatrix::scaled_identity(d, tau),
            cov_sqrt: SpdMatrix::scaled_identity(d, tau.sqrt()),
            precision_sqrt: SpdMatrix::scaled_identity(d, tau.sqrt().recip()),
            precision_eigs: eigs,
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn set_mu(&mut self, mu: DVector<f64>) -> Result<()> {
        if mu.len() != self.dim() {
            return Err(invalid(format!(
                "mean has length {}, expected {}",
                mu.len(),
                self.dim()
            )));
        }
        self.mu = mu;
        Ok(())
    }

    /// `Sigma^{-1}`.
    pub fn precision(&self) -> &SpdMatrix {
        &self.precision
    }

    /// `Sigma`.
    pub fn cov(&self) -> &SpdMatrix {
        &self.cov
    }

    /// `Sigma^{1/2}`.
    pub fn cov_sqrt(&self) -> &SpdMatrix {
        &self.cov_sqrt
    }

    /// `Sigma^{-1/2}`.
    pub fn precision_sqrt(&self) -> &SpdMatrix {
        &self.precision_sqrt
    }

    /// Replaces the precision matrix and refreshes every cache.
    pub fn set_precision(&mut self, precision: SpdMatrix) -> Result<()> {
        let mu = std::mem::replace(&mut self.mu, DVector::zeros(0));
        *self = Self::from_precision(mu, precision)?;
        Ok(())
    }

    /// Ascending eigenvalues of the precision matrix.
    pub fn precision_eigenvalues(&self) -> &DVector<f64> {
        &self.precision_eigs
    }

    /// `lambda_min(Sigma)`.
    pub fn cov_min_eig(&self) -> f64 {
        self.precision_eigs[self.precision_eigs.len() - 1].recip()
    }

    /// `lambda_max(Sigma)`, which is also `||Sigma||_2`.
    pub fn cov_max_eig(&self) -> f64 {
        self.precision_eigs[0].recip()
    }
}

/// The chain of per-step distributions, one per step `k = 1..K`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyChain {
    steps: Vec<GaussianStepParam>,
}

impl PolicyChain {
    pub fn init(k: usize, d: usize, tau: f64) -> Result<Self> {
        if k == 0 || d == 0 {
            return Err(invalid(format!(
                "K and d must be positive, got K={k}, d={d}"
            )));
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(invalid(format!("tau must be positive, got {tau}")));
        }
        Ok(PolicyChain {
            steps: vec![GaussianStepParam::isotropic(d, tau); k],
        })
    }

    pub fn from_steps(steps: Vec<GaussianStepParam>) -> Result<Self> {
        let d = steps
            .first()
            .ok_or_else(|| invalid("chain needs at least one step"))?
            .dim();
        if steps.iter().any(|s| s.dim() != d) {
            return Err(invalid("all steps must share one dimension"));
        }
        Ok(PolicyChain { steps })
    }

    pub fn k(&self) -> usize {
        self.steps.len()
    }

    pub fn d(&self) -> usize {
        self.steps[0].dim()
    }

    pub fn steps(&self) -> &[GaussianStepParam] {
        &self.steps
    }

    pub fn step(&self, k: usize) -> &GaussianStepParam {
        &self.steps[k]
    }

    pub fn step_mut(&mut self, k: usize) -> &mut GaussianStepParam {
        &mut self.steps[k]
    }

    /// Sets every step mean to `mu` (length `d`).
    pub fn set_all_means(&mut self, mu: &DVector<f64>) -> Result<()> {
        for s in &mut self.steps {
            s.set_mu(mu.clone())?;
        }
        Ok(())
    }

    /// The per-step means, used as the reported iterate and as the estimator baseline.
    pub fn mean_trajectory(&self) -> Vec<DVector<f64>> {
        self.steps.iter().map(|s| s.mu.clone()).collect()
    }

    /// Draws `n` trajectories: `x[k][j] = mu_k + Sigma_k^{1/2} z[k][j]`.
    ///
    /// Draw order is step-major, then sample, then coordinate, so a seed fully
    /// determines the batch.
    pub fn sample_batch<R: rand::Rng + ?Sized>(
        &self,
        n: usize,
        rng: &mut R,
    ) -> Result<TrajectoryBatch> {
        if n < 2 {
            return Err(invalid(format!("batch size must be at least 2, got {n}")));
        }
        let d = self.d();
        let mut z = Vec::with_capacity(self.k());
        let mut x = Vec::with_capacity(self.k());
        for step in &self.steps {
            let mut zk = Vec::with_capacity(n);
            let mut xk = Vec::with_capacity(n);
            for _ in 0..n {
                let zj = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
                let xj = &step.mu + step.cov_sqrt.as_matrix() * &zj;
                zk.push(zj);
                xk.push(xj);
            }
            z.push(zk);
            x.push(xk);
        }
        Ok(TrajectoryBatch { z, x })
    }

    /// Text snapshot: one line per step with `k` (1-based), the `d` mean entries and
    /// the `d*d` covariance entries in row-major order, space separated.
    pub fn to_snapshot(&self) -> String {
        let mut out = String::new();
        for (k, s) in self.steps.iter().enumerate() {
            write!(out, "{}", k + 1).unwrap();
            for v in s.mu.iter() {
                write!(out, " {v:?}").unwrap();
            }
            let c = s.cov.as_matrix();
            for i in 0..c.nrows() {
                for j in 0..c.ncols() {
                    write!(out, " {:?}", c[(i, j)]).unwrap();
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn from_snapshot(text: &str) -> Result<Self> {
        let mut steps = Vec::new();
        for (idx, line) in text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
        {
            let err = |msg: String| Error::Snapshot { line: idx + 1, msg };
            let mut fields = line.split_whitespace();
            let k: usize = fields
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| err("missing step index".into()))?;
            if k != steps.len() + 1 {
                return Err(err(format!("expected step {}, found {k}", steps.len() + 1)));
            }
            let values = fields
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|e| err(format!("bad number {t:?}: {e}")))
                })
                .collect::<Result<Vec<f64>>>()?;
            // values.len() = d + d^2
            let d = ((((1 + 4 * values.len()) as f64).sqrt() - 1.0) / 2.0).round() as usize;
            if d == 0 || d + d * d != values.len() {
                return Err(err(format!(
                    "{} values do not form d + d^2 entries",
                    values.len()
                )));
            }
            let mu = DVector::from_column_slice(&values[..d]);
            let cov = SpdMatrix::new(DMatrix::from_row_slice(d, d, &values[d..]))
                .map_err(|e| err(e.to_string()))?;
            steps.push(
                GaussianStepParam::from_covariance(mu, &cov).map_err(|e| err(e.to_string()))?,
            );
        }
        Self::from_steps(steps)
    }
}

/// Standard-normal draws and the candidates they produced, indexed `[k][j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBatch {
    z: Vec<Vec<DVector<f64>>>,
    x: Vec<Vec<DVector<f64>>>,
}

impl TrajectoryBatch {
    /// Builds a batch from explicit draws and candidates. Mostly for tests and
    /// for callers that generate perturbations themselves.
    pub fn from_parts(z: Vec<Vec<DVector<f64>>>, x: Vec<Vec<DVector<f64>>>) -> Result<Self> {
        let k = z.len();
        if k == 0 || x.len() != k {
            return Err(invalid(
                "z and x must have the same positive number of steps",
            ));
        }
        let n = z[0].len();
        let d = z[0].first().map(|v| v.len()).unwrap_or(0);
        let shape_ok = z
            .iter()
            .chain(x.iter())
            .all(|row| row.len() == n && row.iter().all(|v| v.len() == d));
        if n == 0 || d == 0 || !shape_ok {
            return Err(invalid("batch arrays must be K x N x d with N, d > 0"));
        }
        Ok(TrajectoryBatch { z, x })
    }

    pub fn k(&self) -> usize {
        self.z.len()
    }

    pub fn n(&self) -> usize {
        self.z[0].len()
    }

    pub fn d(&self) -> usize {
        self.z[0][0].len()
    }

    pub fn z(&self, k: usize, j: usize) -> &DVector<f64> {
        &self.z[k][j]
    }

    pub fn x(&self, k: usize, j: usize) -> &DVector<f64> {
        &self.x[k][j]
    }

    /// All draws for step `k`.
    pub fn z_step(&self, k: usize) -> &[DVector<f64>] {
        &self.z[k]
    }

    /// All candidates for step `k`.
    pub fn x_step(&self, k: usize) -> &[DVector<f64>] {
        &self.x[k]
    }
}
