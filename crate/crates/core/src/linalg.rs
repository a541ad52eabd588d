//! Dense symmetric positive-(semi)definite matrix utilities.
//!
//! Everything goes through one symmetric eigendecomposition so that square roots,
//! inverses and inverse square roots of the same matrix share eigenvectors.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{invalid, Error, Result};

/// Eigenvalues below this are lifted before square roots or inverses are taken.
pub const EIG_FLOOR: f64 = 1e-12;
/// Relative tolerance for the symmetry check.
pub const SYM_TOL: f64 = 1e-12;

const MAX_EIG_SWEEPS: usize = 100_000;

/// Tolerances used by the matrix routines. `Default` gives the module constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub eig_floor: f64,
    pub sym_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            eig_floor: EIG_FLOOR,
            sym_tol: SYM_TOL,
        }
    }
}

/// A dense symmetric matrix holding covariances, precisions and their roots.
///
/// Construction checks symmetry and then symmetrizes exactly. Positive
/// definiteness is enforced by the operations that need it ([`sym_sqrt`],
/// [`sym_inv`], [`eig_clamp`]) rather than at construction, so score-weighted
/// second moments with zero eigenvalues can be represented too.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix(DMatrix<f64>);

impl SpdMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        Self::with_tolerance(m, SYM_TOL)
    }

    pub fn with_tolerance(m: DMatrix<f64>, sym_tol: f64) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(invalid(format!(
                "matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.nrows() == 0 {
            return Err(invalid("matrix must have positive dimension"));
        }
        if let Some(bad) = m.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite matrix entry {bad}")));
        }
        let d = m.nrows();
        for i in 0..d {
            for j in (i + 1)..d {
                let (a, b) = (m[(i, j)], m[(j, i)]);
                if (a - b).abs() > sym_tol * (1.0 + a.abs()) {
                    return Err(invalid(format!(
                        "matrix is not symmetric at ({i}, {j}): {a} vs {b}"
                    )));
                }
            }
        }
        Ok(Self::symmetrized(m))
    }

    /// Wraps `m` after averaging it with its transpose. No symmetry check.
    pub(crate) fn symmetrized(m: DMatrix<f64>) -> Self {
        let t = m.transpose();
        SpdMatrix((m + t) * 0.5)
    }

    pub fn identity(d: usize) -> Self {
        SpdMatrix(DMatrix::identity(d, d))
    }

    pub fn scaled_identity(d: usize, s: f64) -> Self {
        SpdMatrix(DMatrix::identity(d, d) * s)
    }

    pub fn zeros(d: usize) -> Self {
        SpdMatrix(DMatrix::zeros(d, d))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        SpdMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    /// Symmetric eigendecomposition.
    pub fn spectral(&self) -> Result<Spectral> {
        Spectral::of(self)
    }
}

impl AsRef<DMatrix<f64>> for SpdMatrix {
    fn as_ref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// Eigenvalues (ascending) and orthonormal eigenvectors (columns) of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct Spectral {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl Spectral {
    pub fn of(m: &SpdMatrix) -> Result<Self> {
        let eig = SymmetricEigen::try_new(m.0.clone(), f64::EPSILON, MAX_EIG_SWEEPS).ok_or_else(
            || Error::Numeric("symmetric eigendecomposition did not converge".into()),
        )?;
        let d = m.dim();
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let values = DVector::from_iterator(d, order.iter().map(|&i| eig.eigenvalues[i]));
        let mut vectors = DMatrix::zeros(d, d);
        for (dst, &src) in order.iter().enumerate() {
            vectors.set_column(dst, &eig.eigenvectors.column(src));
        }
        Ok(Spectral { values, vectors })
    }

    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// Rebuilds `V diag(f(lambda)) V^T`.
    pub fn compose(&self, f: impl Fn(f64) -> f64) -> SpdMatrix {
        let mut scaled = self.vectors.clone();
        for (mut col, &lam) in scaled.column_iter_mut().zip(self.values.iter()) {
            col *= f(lam);
        }
        SpdMatrix::symmetrized(scaled * self.vectors.transpose())
    }
}

/// Symmetric square root, with eigenvalues lifted to the default floor first.
pub fn sym_sqrt(m: &SpdMatrix) -> Result<SpdMatrix> {
    sym_sqrt_with(m, &Tolerances::default())
}

pub fn sym_sqrt_with(m: &SpdMatrix, tol: &Tolerances) -> Result<SpdMatrix> {
    let s = m.spectral()?;
    let floor = tol.eig_floor;
    Ok(s.compose(|l| l.max(floor).sqrt()))
}

/// Inverse through the eigendecomposition. Fails when the matrix is below the floor.
pub fn sym_inv(m: &SpdMatrix) -> Result<SpdMatrix> {
    sym_inv_with(m, &Tolerances::default())
}

pub fn sym_inv_with(m: &SpdMatrix, tol: &Tolerances) -> Result<SpdMatrix> {
    let s = m.spectral()?;
    if s.min() < tol.eig_floor {
        return Err(Error::Singular {
            min_eig: s.min(),
            floor: tol.eig_floor,
        });
    }
    Ok(s.compose(f64::recip))
}

/// Same eigenvectors, eigenvalues clamped into `[lo, hi]`.
pub fn eig_clamp(m: &SpdMatrix, lo: f64, hi: f64) -> Result<SpdMatrix> {
    if !(lo <= hi) {
        return Err(invalid(format!("clamp band is empty: lo {lo} > hi {hi}")));
    }
    let s = m.spectral()?;
    Ok(s.compose(|l| l.clamp(lo, hi)))
}

pub fn min_eigenvalue(m: &SpdMatrix) -> Result<f64> {
    Ok(m.spectral()?.min())
}

pub fn max_eigenvalue(m: &SpdMatrix) -> Result<f64> {
    Ok(m.spectral()?.max())
}

/// `||a - b||_F / max(||b||_F, tiny)`.
pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}
