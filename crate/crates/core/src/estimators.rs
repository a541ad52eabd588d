//! Score aggregation and the estimators built from a sampled batch.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::linalg::SpdMatrix;
use crate::policy::{PolicyChain, TrajectoryBatch};
use crate::problems::ScoreMatrix;

/// Relative threshold under which a score row counts as constant.
pub const SCORE_EPS_REL: f64 = 1e-12;

/// `1e-12 * (1 + |s_max|)`.
pub fn default_score_eps(s_max: f64) -> f64 {
    SCORE_EPS_REL * (1.0 + s_max.abs())
}

/// Suffix sums down each column: `out[(k, j)] = sum_{i >= k} raw[(i, j)]`.
pub fn cumulative_scores(raw: &ScoreMatrix) -> Result<ScoreMatrix> {
    if let Some(pos) = raw.iter().position(|v| !v.is_finite()) {
        // column-major storage
        let (k, j) = (pos % raw.nrows(), pos / raw.nrows());
        return Err(Error::InvalidScore {
            k,
            j,
            value: raw[(k, j)],
        });
    }
    let mut out = raw.clone();
    for k in (0..raw.nrows().saturating_sub(1)).rev() {
        for j in 0..raw.ncols() {
            out[(k, j)] += out[(k + 1, j)];
        }
    }
    Ok(out)
}

/// Min-max normalized row.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedRow {
    pub h: Vec<f64>,
    pub kappa: f64,
    pub degenerate: bool,
}

/// Maps the row onto `[0, 1]` with the row minimum at 0 and maximum at 1.
///
/// When the row spread is below `score_eps` every weight is 0 and the row is
/// flagged degenerate, which turns the corresponding update into a no-op.
pub fn normalize_scores(s_row: &[f64], score_eps: f64) -> Result<NormalizedRow> {
    if s_row.len() < 2 {
        return Err(invalid(format!(
            "normalization needs at least 2 scores, got {}",
            s_row.len()
        )));
    }
    let lo = s_row.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = s_row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if !(span >= score_eps) {
        return Ok(NormalizedRow {
            h: vec![0.0; s_row.len()],
            kappa: 0.0,
            degenerate: true,
        });
    }
    let h: Vec<f64> = s_row.iter().map(|&s| (s - lo) / span).collect();
    let kappa = h.iter().sum::<f64>() / h.len() as f64;
    Ok(NormalizedRow {
        h,
        kappa,
        degenerate: false,
    })
}

/// Raw, cumulative and normalized scores of one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub raw: ScoreMatrix,
    pub cumulative: ScoreMatrix,
    pub normalized: ScoreMatrix,
    pub kappa: Vec<f64>,
    pub degenerate: Vec<bool>,
}

impl ScoreTable {
    pub fn from_raw(raw: ScoreMatrix) -> Result<Self> {
        let cumulative = cumulative_scores(&raw)?;
        let (k, n) = raw.shape();
        let mut normalized = DMatrix::zeros(k, n);
        let mut kappa = Vec::with_capacity(k);
        let mut degenerate = Vec::with_capacity(k);
        for s in 0..k {
            let row: Vec<f64> = cumulative.row(s).iter().copied().collect();
            let s_max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let norm = normalize_scores(&row, default_score_eps(s_max))?;
            for (j, v) in norm.h.iter().enumerate() {
                normalized[(s, j)] = *v;
            }
            kappa.push(norm.kappa);
            degenerate.push(norm.degenerate);
        }
        Ok(ScoreTable {
            raw,
            cumulative,
            normalized,
            kappa,
            degenerate,
        })
    }

    pub fn k(&self) -> usize {
        self.raw.nrows()
    }

    pub fn n(&self) -> usize {
        self.raw.ncols()
    }

    pub fn h_row(&self, k: usize) -> Vec<f64> {
        self.normalized.row(k).iter().copied().collect()
    }

    /// `min_j s_1^j`: the best sampled cumulative objective.
    pub fn best_cumulative(&self) -> f64 {
        self.cumulative
            .row(0)
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

/// Pre-conditioning matrix `(1/N) sum_j h_j z_j z_j^T`.
pub fn build_h(z_k: &[DVector<f64>], h_row: &[f64]) -> Result<SpdMatrix> {
    if z_k.is_empty() || z_k.len() != h_row.len() {
        return Err(invalid(format!(
            "{} draws but {} weights",
            z_k.len(),
            h_row.len()
        )));
    }
    let d = z_k[0].len();
    if z_k.iter().any(|z| z.len() != d) {
        return Err(invalid("draws must share one dimension"));
    }
    let n = z_k.len() as f64;
    let mut acc = DMatrix::<f64>::zeros(d, d);
    for (z, &h) in z_k.iter().zip(h_row) {
        if h != 0.0 {
            acc.ger(h / n, z, z, 1.0);
        }
    }
    Ok(SpdMatrix::symmetrized(acc))
}

fn check_estimator_shapes(
    chain: &PolicyChain,
    batch: &TrajectoryBatch,
    raw: &ScoreMatrix,
    baseline: &[f64],
) -> Result<()> {
    let k = chain.k();
    if batch.k() != k || batch.d() != chain.d() {
        return Err(invalid("batch does not match the chain"));
    }
    if raw.shape() != (k, batch.n()) {
        return Err(invalid(format!(
            "score matrix is {:?}, expected ({k}, {})",
            raw.shape(),
            batch.n()
        )));
    }
    if baseline.len() != k {
        return Err(invalid(format!(
            "baseline has {} entries, expected {k}",
            baseline.len()
        )));
    }
    Ok(())
}

/// `Sigma_k^{-1/2} z_k^j` for every sample of step `k`.
fn whitened_draws(chain: &PolicyChain, batch: &TrajectoryBatch, k: usize) -> Vec<DVector<f64>> {
    let p_half = chain.step(k).precision_sqrt().as_matrix();
    batch.z_step(k).iter().map(|z| p_half * z).collect()
}

fn estimate_from_whitened(
    whitened: &[DVector<f64>],
    raw: &ScoreMatrix,
    baseline: f64,
    i: usize,
) -> DVector<f64> {
    let n = whitened.len();
    let mut g = DVector::zeros(whitened[0].len());
    for (j, w) in whitened.iter().enumerate() {
        g.axpy(raw[(i, j)] - baseline, w, 1.0);
    }
    g / n as f64
}

/// Zeroth-order estimate of the gradient of `E[f_i]` with respect to `mu_k`:
/// `(1/N) sum_j Sigma_k^{-1/2} z_k^j (f_i(x^j) - f_i(mu))`. Steps are 0-based.
pub fn grad_estimator_mu(
    chain: &PolicyChain,
    batch: &TrajectoryBatch,
    raw: &ScoreMatrix,
    baseline: &[f64],
    i: usize,
    k: usize,
) -> Result<DVector<f64>> {
    check_estimator_shapes(chain, batch, raw, baseline)?;
    if k > i {
        return Err(invalid(format!("step k = {k} must not exceed i = {i}")));
    }
    if i >= chain.k() {
        return Err(invalid(format!("step i = {i} out of range")));
    }
    let w = whitened_draws(chain, batch, k);
    Ok(estimate_from_whitened(&w, raw, baseline[i], i))
}

/// All estimates `g_ik` for `i = k..K`, in order. Whitening is shared.
pub fn grad_estimates_for_step(
    chain: &PolicyChain,
    batch: &TrajectoryBatch,
    raw: &ScoreMatrix,
    baseline: &[f64],
    k: usize,
) -> Result<Vec<DVector<f64>>> {
    check_estimator_shapes(chain, batch, raw, baseline)?;
    if k >= chain.k() {
        return Err(invalid(format!("step k = {k} out of range")));
    }
    let w = whitened_draws(chain, batch, k);
    Ok((k..chain.k())
        .map(|i| estimate_from_whitened(&w, raw, baseline[i], i))
        .collect())
}

/// Elementwise sum of the per-objective estimates for one step.
pub fn sum_grad_for_step(terms: &[DVector<f64>]) -> Result<DVector<f64>> {
    let first = terms
        .first()
        .ok_or_else(|| invalid("no gradient terms to sum"))?;
    let d = first.len();
    if terms.iter().any(|t| t.len() != d) {
        return Err(invalid("gradient terms must share one length"));
    }
    Ok(terms.iter().skip(1).fold(first.clone(), |acc, t| acc + t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::min_eigenvalue;
    use crate::rng_from_seed;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn cumulative_cases() {
        let raw = DMatrix::from_row_slice(2, 1, &[3.0, 5.0]);
        assert_eq!(
            cumulative_scores(&raw).unwrap(),
            DMatrix::from_row_slice(2, 1, &[8.0, 5.0])
        );
        let z = DMatrix::<f64>::zeros(3, 4);
        assert_eq!(cumulative_scores(&z).unwrap(), z);
        let raw = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let want = DMatrix::from_row_slice(3, 2, &[9.0, 12.0, 8.0, 10.0, 5.0, 6.0]);
        assert_eq!(cumulative_scores(&raw).unwrap(), want);
    }

    #[test]
    fn cumulative_names_bad_entry() {
        let mut raw = DMatrix::<f64>::zeros(3, 4);
        raw[(2, 1)] = f64::NAN;
        match cumulative_scores(&raw) {
            Err(Error::InvalidScore { k, j, .. }) => assert_eq!((k, j), (2, 1)),
            other => panic!("unexpected {other:?}"),
        }
        raw[(2, 1)] = f64::INFINITY;
        assert!(cumulative_scores(&raw).is_err());
    }

    #[test]
    fn normalize_cases() {
        let r = normalize_scores(&[2.0, 4.0, 6.0], 1e-12).unwrap();
        assert_eq!(r.h, vec![0.0, 0.5, 1.0]);
        assert_eq!(r.kappa, 0.5);
        assert!(!r.degenerate);

        let r = normalize_scores(&[7.0, 7.0, 7.0], 1e-12).unwrap();
        assert_eq!(r.h, vec![0.0; 3]);
        assert_eq!(r.kappa, 0.0);
        assert!(r.degenerate);

        let r = normalize_scores(&[-3.0, 1.0], 1e-12).unwrap();
        assert_eq!(r.h, vec![0.0, 1.0]);
        assert_eq!(r.kappa, 0.5);

        assert!(normalize_scores(&[1.0], 1e-12).is_err());
    }

    #[test]
    fn score_table_flags_degenerate_rows() {
        let raw = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 4.0, 4.0]);
        let t = ScoreTable::from_raw(raw).unwrap();
        assert_eq!(t.degenerate, vec![false, true]);
        assert_eq!(t.kappa[1], 0.0);
        assert_eq!(t.h_row(0), vec![0.0, 0.5, 1.0]);
        assert_eq!(t.best_cumulative(), 5.0);
    }

    #[test]
    fn build_h_cases() {
        let e1 = v(&[1.0, 0.0]);
        let e2 = v(&[0.0, 1.0]);
        let zero = build_h(&[e1.clone(), e2.clone()], &[0.0, 0.0]).unwrap();
        assert_eq!(zero.as_matrix(), &DMatrix::<f64>::zeros(2, 2));

        let one = build_h(std::slice::from_ref(&e1), &[1.0]).unwrap();
        assert_eq!(
            one.as_matrix(),
            &DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0])
        );

        let two = build_h(&[e1, e2], &[1.0, 0.5]).unwrap();
        assert_eq!(
            two.as_matrix(),
            &DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.25])
        );

        assert!(build_h(&[v(&[1.0])], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn build_h_is_psd_on_random_instances() {
        let mut rng = rng_from_seed(5);
        for _ in 0..1000 {
            let n = rng.random_range(1..10usize);
            let d = rng.random_range(1..6usize);
            let z: Vec<_> = (0..n)
                .map(|_| DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal)))
                .collect();
            let h: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            assert!(min_eigenvalue(&build_h(&z, &h).unwrap()).unwrap() >= -1e-10);
        }
    }

    fn scalar_setup(
        z: f64,
        f: f64,
        base: f64,
    ) -> (PolicyChain, TrajectoryBatch, ScoreMatrix, Vec<f64>) {
        let chain = PolicyChain::init(1, 1, 1.0).unwrap();
        let batch = TrajectoryBatch::from_parts(vec![vec![v(&[z])]], vec![vec![v(&[z])]]).unwrap();
        (chain, batch, DMatrix::from_element(1, 1, f), vec![base])
    }

    #[test]
    fn estimator_scalar_substitution() {
        let (c, b, raw, base) = scalar_setup(2.0, 4.0, 1.0);
        assert_eq!(
            grad_estimator_mu(&c, &b, &raw, &base, 0, 0).unwrap()[0],
            6.0
        );
    }

    #[test]
    fn estimator_zero_when_scores_match_baseline() {
        let chain = PolicyChain::init(2, 3, 1.0).unwrap();
        let batch = chain.sample_batch(5, &mut rng_from_seed(3)).unwrap();
        let raw = DMatrix::from_fn(2, 5, |i, _| i as f64 + 0.5);
        let g = grad_estimator_mu(&chain, &batch, &raw, &[0.5, 1.5], 1, 0).unwrap();
        assert_eq!(g, DVector::zeros(3));
    }

    #[test]
    fn estimator_rejects_k_after_i() {
        let (c, b, raw, base) = scalar_setup(1.0, 1.0, 0.0);
        let chain = PolicyChain::init(2, 1, 1.0).unwrap();
        let batch = TrajectoryBatch::from_parts(
            vec![vec![v(&[1.0])], vec![v(&[1.0])]],
            vec![vec![v(&[1.0])], vec![v(&[1.0])]],
        )
        .unwrap();
        let raw2 = DMatrix::from_element(2, 1, 1.0);
        assert!(grad_estimator_mu(&chain, &batch, &raw2, &[0.0, 0.0], 0, 1).is_err());
        assert!(grad_estimator_mu(&c, &b, &raw, &base, 0, 0).is_ok());
    }

    #[test]
    fn estimates_for_step_match_single_estimates() {
        let chain = PolicyChain::init(3, 2, 0.7).unwrap();
        let batch = chain.sample_batch(6, &mut rng_from_seed(8)).unwrap();
        let raw = DMatrix::from_fn(3, 6, |i, j| (i * 7 + j) as f64 * 0.3 - 1.0);
        let base = [0.1, -0.2, 0.3];
        for k in 0..3 {
            let all = grad_estimates_for_step(&chain, &batch, &raw, &base, k).unwrap();
            assert_eq!(all.len(), 3 - k);
            for (off, g) in all.iter().enumerate() {
                let single = grad_estimator_mu(&chain, &batch, &raw, &base, k + off, k).unwrap();
                assert_eq!(g, &single);
            }
        }
    }

    #[test]
    fn sum_grad_cases() {
        assert_eq!(
            sum_grad_for_step(&[v(&[1.0, 2.0])]).unwrap(),
            v(&[1.0, 2.0])
        );
        assert_eq!(
            sum_grad_for_step(&[v(&[1.0, -2.0]), v(&[-1.0, 2.0])]).unwrap(),
            v(&[0.0, 0.0])
        );
        let s = sum_grad_for_step(&[v(&[1.0, 0.0]), v(&[0.0, 1.0]), v(&[1.0, 1.0])]).unwrap();
        assert_eq!(s, v(&[2.0, 2.0]));
        assert!(sum_grad_for_step(&[]).is_err());
    }

    proptest! {
        #[test]
        fn normalization_is_affine_invariant(
            row in prop::collection::vec(-100.0f64..100.0, 2..12),
            a in 0.01f64..100.0,
            b in -1000.0f64..1000.0,
        ) {
            let base = normalize_scores(&row, 1e-12).unwrap();
            let moved: Vec<f64> = row.iter().map(|s| a * s + b).collect();
            let other = normalize_scores(&moved, 1e-12 * a).unwrap();
            prop_assert_eq!(base.degenerate, other.degenerate);
            for (x, y) in base.h.iter().zip(&other.h) {
                prop_assert!((x - y).abs() <= 1e-9);
            }
            prop_assert!((base.kappa - other.kappa).abs() <= 1e-9);
        }

        #[test]
        fn power_of_two_scaling_is_exact(
            row in prop::collection::vec(-100.0f64..100.0, 2..12),
            e in -8i32..8,
        ) {
            let a = 2f64.powi(e);
            let base = normalize_scores(&row, 1e-12).unwrap();
            let moved: Vec<f64> = row.iter().map(|s| a * s).collect();
            let other = normalize_scores(&moved, 1e-12 * a).unwrap();
            prop_assert_eq!(base, other);
        }

        #[test]
        fn weights_and_kappa_in_unit_interval(row in prop::collection::vec(-1e6f64..1e6, 2..20)) {
            let r = normalize_scores(&row, default_score_eps(1e6)).unwrap();
            prop_assert!(r.h.iter().all(|h| (0.0..=1.0).contains(h)));
            prop_assert!((0.0..=1.0).contains(&r.kappa));
            if !r.degenerate {
                prop_assert!(r.h.contains(&0.0));
                prop_assert!(r.h.contains(&1.0));
            }
        }
    }
}
