//! Penalized least squares over additive design blocks.
//!
//! The cross-product (Gram) matrix is assembled once per data set; every
//! smoothing-parameter candidate then costs one penalty add plus one
//! Cholesky factorization. Effective degrees of freedom come from the exact
//! joint system (per-term trace of the influence blocks) or from a fast
//! per-term approximation for very large models.

use super::design::PenalizedTerm;
use super::SplineError;
use crate::linalg;
use ndarray::{s, Array1, Array2};
use rayon::prelude::*;

/// How per-term effective degrees of freedom are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EdfMode {
    /// Exact trace of the joint influence blocks.
    #[default]
    Exact,
    /// Per-term approximation ignoring cross-term couplings; cheap enough
    /// for models with tens of thousands of coefficients.
    Local,
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    /// Include an unpenalized intercept column.
    pub intercept: bool,
    pub edf_mode: EdfMode,
    /// Absolute ridge added to the penalized diagonal (0 = none).
    pub ridge: f64,
    /// Compute the hat-matrix diagonal (materializes the design; small
    /// models only).
    pub compute_hat: bool,
    /// Keep the per-term unscaled coefficient covariance blocks
    /// `(X'X + P)^-1 | block` for Wald-style term statistics.
    pub compute_cov: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            intercept: true,
            edf_mode: EdfMode::Exact,
            ridge: 0.0,
            compute_hat: false,
            compute_cov: false,
        }
    }
}

/// Result of one penalized solve against a [`PenalizedSystem`].
#[derive(Debug, Clone)]
pub struct SystemSolution {
    pub beta: Array1<f64>,
    /// Training residual sum of squares (via the Gram identity).
    pub rss: f64,
    pub edf: Vec<f64>,
    pub edf_total: f64,
}

/// A fitted penalized additive model.
#[derive(Debug, Clone)]
pub struct PenalizedFit {
    pub intercept: f64,
    pub coeffs: Vec<Array1<f64>>,
    pub lambdas: Vec<f64>,
    pub edf: Vec<f64>,
    pub edf_total: f64,
    pub rss: f64,
    pub sigma2: f64,
    pub n_rows: usize,
    pub hat_diag: Option<Vec<f64>>,
    /// Unscaled covariance blocks, when requested.
    pub cov_blocks: Option<Vec<Array2<f64>>>,
}

impl PenalizedFit {
    /// Sum of term predictions plus intercept over the blocks' rows.
    pub fn predict(&self, terms: &[PenalizedTerm]) -> Vec<f64> {
        let n = terms.first().map_or(0, |t| t.n_rows());
        let mut out = vec![self.intercept; n];
        for (term, beta) in terms.iter().zip(&self.coeffs) {
            term.add_prediction(beta, &mut out);
        }
        out
    }
}

/// Precomputed normal-equation pieces for one (terms, y) pair.
pub struct PenalizedSystem {
    /// Unpenalized cross-product matrix (p x p), intercept column first when
    /// present.
    gram: Array2<f64>,
    xty: Array1<f64>,
    yty: f64,
    n_rows: usize,
    intercept: bool,
    /// Per-term coefficient ranges into the stacked vector.
    offsets: Vec<std::ops::Range<usize>>,
    /// Eigen square roots R of each penalty (S = R R^T), for exact traces.
    pen_roots: Vec<Array2<f64>>,
    labels: Vec<String>,
    penalties: Vec<Array2<f64>>,
    block_cols: Vec<usize>,
}

impl PenalizedSystem {
    pub fn p(&self) -> usize {
        self.gram.nrows()
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn offsets(&self) -> &[std::ops::Range<usize>] {
        &self.offsets
    }

    /// Assembles the Gram matrix, cross products and penalty factors.
    pub fn build(
        terms: &[PenalizedTerm],
        y: &[f64],
        opts: &FitOptions,
    ) -> Result<Self, SplineError> {
        if terms.is_empty() {
            return Err(SplineError::EmptyInput);
        }
        let n = terms[0].n_rows();
        if n != y.len() {
            return Err(SplineError::DimensionMismatch(format!(
                "design has {n} rows, y has {}",
                y.len()
            )));
        }
        for t in terms {
            if t.n_rows() != n {
                return Err(SplineError::DimensionMismatch(format!(
                    "term `{}` has {} rows, expected {n}",
                    t.label,
                    t.n_rows()
                )));
            }
            if t.penalty.nrows() != t.ncols() {
                return Err(SplineError::DimensionMismatch(format!(
                    "term `{}` penalty is {}x{} for {} columns",
                    t.label,
                    t.penalty.nrows(),
                    t.penalty.ncols(),
                    t.ncols()
                )));
            }
        }
        let base = usize::from(opts.intercept);
        let mut offsets = Vec::with_capacity(terms.len());
        let mut at = base;
        for t in terms {
            offsets.push(at..at + t.ncols());
            at += t.ncols();
        }
        let p = at;
        let mut gram = Array2::<f64>::zeros((p, p));
        if opts.intercept {
            gram[[0, 0]] = n as f64;
        }
        let ones = vec![1.0; n];
        for (i, t) in terms.iter().enumerate() {
            if opts.intercept {
                let cs = t.t_vec(&ones);
                let off = offsets[i].clone();
                for (j, v) in cs.iter().enumerate() {
                    gram[[0, off.start + j]] = *v;
                    gram[[off.start + j, 0]] = *v;
                }
            }
        }
        // Cross blocks in parallel batches; each batch is computed
        // independently then copied into the shared matrix.
        let pairs: Vec<(usize, usize)> =
            (0..terms.len()).flat_map(|i| (i..terms.len()).map(move |j| (i, j))).collect();
        for batch in pairs.chunks(512) {
            let blocks: Vec<(usize, usize, Array2<f64>)> = batch
                .par_iter()
                .map(|&(i, j)| (i, j, terms[i].gram_with(&terms[j])))
                .collect();
            for (i, j, block) in blocks {
                let (oi, oj) = (offsets[i].clone(), offsets[j].clone());
                gram.slice_mut(s![oi.clone(), oj.clone()]).assign(&block);
                if i != j {
                    gram.slice_mut(s![oj, oi]).assign(&block.t());
                }
            }
        }

        let mut xty = Array1::<f64>::zeros(p);
        if opts.intercept {
            xty[0] = y.iter().sum();
        }
        for (i, t) in terms.iter().enumerate() {
            xty.slice_mut(s![offsets[i].clone()]).assign(&t.t_vec(y));
        }
        let yty = y.iter().map(|v| v * v).sum();

        let pen_roots = terms
            .iter()
            .map(|t| penalty_root(&t.penalty))
            .collect::<Result<Vec<_>, _>>()?;

        Ok(Self {
            gram,
            xty,
            yty,
            n_rows: n,
            intercept: opts.intercept,
            offsets,
            pen_roots,
            labels: terms.iter().map(|t| t.label.clone()).collect(),
            penalties: terms.iter().map(|t| t.penalty.clone()).collect(),
            block_cols: terms.iter().map(|t| t.ncols()).collect(),
        })
    }

    /// Solves the penalized normal equations at the given per-term smoothing
    /// parameters.
    pub fn solve(
        &self,
        lambdas: &[f64],
        edf_mode: EdfMode,
        ridge: f64,
    ) -> Result<SystemSolution, SplineError> {
        assert_eq!(lambdas.len(), self.offsets.len());
        let p = self.p();
        let mut m = self.gram.clone();
        for (i, off) in self.offsets.iter().enumerate() {
            let lam = lambdas[i];
            if lam != 0.0 {
                let pen = &self.penalties[i];
                let mut block = m.slice_mut(s![off.clone(), off.clone()]);
                block.scaled_add(lam, pen);
            }
        }
        if ridge > 0.0 {
            for d in 0..p {
                m[[d, d]] += ridge;
            }
        }
        linalg::cholesky_in_place(&mut m).map_err(|e| self.singular_error(e))?;
        let l = m;
        let beta = linalg::cholesky_solve_vec(&l, &self.xty);

        // RSS via the Gram identity: with (G+P)beta = X'y,
        // rss = y'y - beta'X'y - beta'P beta.
        let mut pen_quad = 0.0;
        for (i, off) in self.offsets.iter().enumerate() {
            if lambdas[i] != 0.0 {
                let b = beta.slice(s![off.clone()]);
                pen_quad += lambdas[i] * b.dot(&self.penalties[i].dot(&b));
            }
        }
        let rss = (self.yty - beta.dot(&self.xty) - pen_quad).max(0.0);

        let edf = match edf_mode {
            EdfMode::Exact => self.exact_edf(&l, lambdas),
            EdfMode::Local => self.local_edf(lambdas)?,
        };
        let mut edf_total: f64 = edf.iter().sum();
        if self.intercept {
            edf_total += 1.0;
        }
        Ok(SystemSolution { beta, rss, edf, edf_total })
    }

    fn singular_error(&self, e: linalg::LinalgError) -> SplineError {
        let term = match &e {
            linalg::LinalgError::NotPositiveDefinite(pivot) => self
                .offsets
                .iter()
                .position(|r| r.contains(pivot))
                .map(|i| self.labels[i].clone())
                .unwrap_or_else(|| "intercept".into()),
            _ => "<unknown>".into(),
        };
        SplineError::SingularSystem { term, detail: e.to_string() }
    }

    /// Exact per-term EDF: k_i - lambda_i * tr((M^-1)_bb S_i), evaluated via
    /// one batched forward solve against the penalty square roots.
    fn exact_edf(&self, l: &Array2<f64>, lambdas: &[f64]) -> Vec<f64> {
        let p = self.p();
        let ranks: Vec<usize> = self.pen_roots.iter().map(|r| r.ncols()).collect();
        let total: usize = ranks.iter().sum();
        if total == 0 {
            return self.block_cols.iter().map(|&k| k as f64).collect();
        }
        let mut rhs = Array2::<f64>::zeros((p, total));
        let mut col = 0;
        for (i, root) in self.pen_roots.iter().enumerate() {
            let off = self.offsets[i].clone();
            rhs.slice_mut(s![off, col..col + ranks[i]]).assign(root);
            col += ranks[i];
        }
        linalg::solve_lower_in_place(l, &mut rhs);
        let mut edf = Vec::with_capacity(self.offsets.len());
        let mut col = 0;
        for (i, &rank) in ranks.iter().enumerate() {
            let w = rhs.slice(s![.., col..col + rank]);
            let fro: f64 = w.iter().map(|v| v * v).sum();
            edf.push(self.block_cols[i] as f64 - lambdas[i] * fro);
            col += rank;
        }
        edf
    }

    /// Per-term approximation tr((G_bb + lambda S)^-1 G_bb) ignoring
    /// cross-term coupling.
    fn local_edf(&self, lambdas: &[f64]) -> Result<Vec<f64>, SplineError> {
        self.offsets
            .par_iter()
            .enumerate()
            .map(|(i, off)| {
                let g = self.gram.slice(s![off.clone(), off.clone()]).to_owned();
                let mut m = g.clone();
                m.scaled_add(lambdas[i], &self.penalties[i]);
                // jitter for blocks that are themselves rank deficient
                let scale = (0..m.nrows()).map(|d| m[[d, d]]).sum::<f64>() / m.nrows() as f64;
                for attempt in 0..3 {
                    let mut l = m.clone();
                    if attempt > 0 {
                        let j = scale * 1e-10 * 100f64.powi(attempt);
                        for d in 0..l.nrows() {
                            l[[d, d]] += j;
                        }
                    }
                    if linalg::cholesky_in_place(&mut l).is_ok() {
                        let x = linalg::cholesky_solve(&l, &g);
                        let tr: f64 = (0..x.nrows()).map(|d| x[[d, d]]).sum();
                        return Ok(tr);
                    }
                }
                Err(SplineError::SingularSystem {
                    term: self.labels[i].clone(),
                    detail: "local EDF block not factorizable".into(),
                })
            })
            .collect()
    }

    /// Unscaled coefficient covariance blocks `(M^-1)_bb`.
    fn cov_blocks(&self, l: &Array2<f64>) -> Vec<Array2<f64>> {
        let p = self.p();
        self.offsets
            .iter()
            .map(|off| {
                let k = off.len();
                let mut rhs = Array2::<f64>::zeros((p, k));
                for (j, row) in off.clone().enumerate() {
                    rhs[[row, j]] = 1.0;
                }
                let x = linalg::cholesky_solve(l, &rhs);
                x.slice(s![off.clone(), ..]).to_owned()
            })
            .collect()
    }

    pub fn criterion_inputs(&self) -> (usize, f64) {
        (self.n_rows, self.yty)
    }
}

/// Eigen square root R of a PSD penalty: S = R R^T with R of full column
/// rank.
fn penalty_root(s: &Array2<f64>) -> Result<Array2<f64>, SplineError> {
    if s.nrows() == 0 {
        return Ok(Array2::zeros((0, 0)));
    }
    let (vals, vecs) = linalg::jacobi_eigh(s)?;
    let max = vals.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return Ok(Array2::zeros((s.nrows(), 0)));
    }
    let keep: Vec<usize> = (0..vals.len()).filter(|&i| vals[i] > 1e-12 * max).collect();
    let mut r = Array2::zeros((s.nrows(), keep.len()));
    for (c, &i) in keep.iter().enumerate() {
        let w = vals[i].sqrt();
        for row in 0..s.nrows() {
            r[[row, c]] = vecs[[row, i]] * w;
        }
    }
    Ok(r)
}

/// Fits a penalized least-squares model: minimizes
/// `||y - alpha - sum_i X_i b_i||^2 + sum_i lambda_i b_i' S_i b_i`.
pub fn fit_penalized_ls(
    terms: &[PenalizedTerm],
    lambdas: &[f64],
    y: &[f64],
    opts: &FitOptions,
) -> Result<PenalizedFit, SplineError> {
    let system = PenalizedSystem::build(terms, y, opts)?;
    fit_with_system(&system, terms, lambdas, y, opts)
}

/// Same as [`fit_penalized_ls`] with a pre-built system (used after
/// smoothing selection to avoid a second Gram assembly).
pub fn fit_with_system(
    system: &PenalizedSystem,
    terms: &[PenalizedTerm],
    lambdas: &[f64],
    y: &[f64],
    opts: &FitOptions,
) -> Result<PenalizedFit, SplineError> {
    let sol = system.solve(lambdas, opts.edf_mode, opts.ridge)?;
    let n = system.n_rows();
    if (n as f64) <= sol.edf_total {
        return Err(SplineError::InsufficientData { rows: n, edf: sol.edf_total });
    }
    let intercept = if opts.intercept { sol.beta[0] } else { 0.0 };
    let coeffs: Vec<Array1<f64>> = system
        .offsets()
        .iter()
        .map(|off| sol.beta.slice(s![off.clone()]).to_owned())
        .collect();

    // Reported RSS comes from an actual residual pass.
    let mut pred = vec![intercept; n];
    for (term, beta) in terms.iter().zip(&coeffs) {
        term.add_prediction(beta, &mut pred);
    }
    let rss: f64 = y.iter().zip(&pred).map(|(a, b)| (a - b) * (a - b)).sum();
    let sigma2 = rss / (n as f64 - sol.edf_total);

    let (hat_diag, cov_blocks) = if opts.compute_hat || opts.compute_cov {
        // refactorize once for the extra solves
        let mut m = system.gram.clone();
        for (i, off) in system.offsets().iter().enumerate() {
            if lambdas[i] != 0.0 {
                let mut block = m.slice_mut(s![off.clone(), off.clone()]);
                block.scaled_add(lambdas[i], &system.penalties[i]);
            }
        }
        if opts.ridge > 0.0 {
            for d in 0..m.nrows() {
                m[[d, d]] += opts.ridge;
            }
        }
        linalg::cholesky_in_place(&mut m).map_err(|e| system.singular_error(e))?;
        let hat = if opts.compute_hat {
            let mut x = Array2::<f64>::zeros((n, system.p()));
            if opts.intercept {
                x.column_mut(0).fill(1.0);
            }
            for (i, term) in terms.iter().enumerate() {
                let dense = term.to_dense();
                x.slice_mut(s![.., system.offsets()[i].clone()]).assign(&dense);
            }
            let mut w = x.t().as_standard_layout().into_owned();
            linalg::solve_lower_in_place(&m, &mut w);
            Some((0..n).map(|r| w.column(r).dot(&w.column(r))).collect())
        } else {
            None
        };
        let cov = opts.compute_cov.then(|| system.cov_blocks(&m));
        (hat, cov)
    } else {
        (None, None)
    };

    Ok(PenalizedFit {
        intercept,
        coeffs,
        lambdas: lambdas.to_vec(),
        edf: sol.edf,
        edf_total: sol.edf_total,
        rss,
        sigma2,
        n_rows: n,
        hat_diag,
        cov_blocks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spline::{BSplineBasis, KnotPlacement};
    use ndarray::Array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent dense oracle: solves (X'X + lambda S) b = X'y by Gaussian
    /// elimination with partial pivoting.
    fn brute_force(x: &Array2<f64>, s: &Array2<f64>, lambda: f64, y: &Array1<f64>) -> Array1<f64> {
        let mut a = x.t().dot(x);
        a.scaled_add(lambda, s);
        let mut b = x.t().dot(y);
        let n = a.nrows();
        for col in 0..n {
            let mut piv = col;
            for r in (col + 1)..n {
                if a[[r, col]].abs() > a[[piv, col]].abs() {
                    piv = r;
                }
            }
            if piv != col {
                for c in 0..n {
                    a.swap([col, c], [piv, c]);
                }
                b.swap(col, piv);
            }
            for r in (col + 1)..n {
                let f = a[[r, col]] / a[[col, col]];
                for c in col..n {
                    a[[r, c]] -= f * a[[col, c]];
                }
                b[r] -= f * b[col];
            }
        }
        for r in (0..n).rev() {
            for c in (r + 1)..n {
                b[r] -= a[[r, c]] * b[c];
            }
            b[r] /= a[[r, r]];
        }
        b
    }

    fn no_intercept() -> FitOptions {
        FitOptions { intercept: false, ..Default::default() }
    }

    #[test]
    fn lambda_zero_matches_ols() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 80;
        let xs: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 6.0).collect();
        let basis = BSplineBasis::from_data(&xs, 10, KnotPlacement::Quantile).unwrap();
        let y: Array1<f64> =
            Array::from_iter(xs.iter().map(|&x| (x * 0.9).sin() + 0.1 * rng.gen::<f64>()));
        let term = PenalizedTerm::smooth_1d("x", &basis, &xs);
        let fit = fit_penalized_ls(&[term.clone()], &[0.0], y.as_slice().unwrap(), &no_intercept())
            .unwrap();
        let dense = term.to_dense();
        let zero_pen = Array2::zeros((10, 10));
        let oracle = brute_force(&dense, &zero_pen, 0.0, &y);
        for j in 0..10 {
            let rel = (fit.coeffs[0][j] - oracle[j]).abs() / (1.0 + oracle[j].abs());
            assert!(rel < 1e-8, "j={j}: {} vs {}", fit.coeffs[0][j], oracle[j]);
        }
    }

    #[test]
    fn random_instance_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 50;
        let k = 8;
        let lambda = 3.7;
        let xs: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        let basis = BSplineBasis::from_data(&xs, k, KnotPlacement::Quantile).unwrap();
        let y: Array1<f64> = Array::from_iter((0..n).map(|_| rng.gen::<f64>() * 4.0 - 2.0));
        let term = PenalizedTerm::smooth_1d("x", &basis, &xs);
        let fit =
            fit_penalized_ls(&[term.clone()], &[lambda], y.as_slice().unwrap(), &no_intercept())
                .unwrap();
        let dense = term.to_dense();
        let s = crate::spline::second_difference_penalty(k);
        let oracle = brute_force(&dense, &s, lambda, &y);
        for j in 0..k {
            let rel = (fit.coeffs[0][j] - oracle[j]).abs() / (1.0 + oracle[j].abs());
            assert!(rel < 1e-8);
        }
    }

    #[test]
    fn huge_lambda_gives_affine_component_and_edf_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 400;
        let xs: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 10.0).collect();
        let y: Vec<f64> =
            xs.iter().map(|&x| (x * 1.3).sin() * 2.0 + 0.3 * x + rng.gen::<f64>() * 0.1).collect();
        let basis = BSplineBasis::from_data(&xs, 27, KnotPlacement::Quantile).unwrap();
        let term = PenalizedTerm::smooth_1d("x", &basis, &xs);
        let fit = fit_penalized_ls(&[term.clone()], &[1e12], &y, &no_intercept()).unwrap();
        assert!((fit.edf[0] - 2.0).abs() < 0.05, "edf {}", fit.edf[0]);
        // the coefficient vector collapses into the penalty null space:
        // affine in the basis index
        let beta = &fit.coeffs[0];
        let scale = beta.iter().map(|v| v.abs()).fold(1.0, f64::max);
        for j in 1..beta.len() - 1 {
            let dd = beta[j - 1] - 2.0 * beta[j] + beta[j + 1];
            assert!(dd.abs() < 1e-4 * scale, "second difference {dd}");
        }
    }

    #[test]
    fn zero_response_gives_zero_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let xs: Vec<f64> = (0..60).map(|_| rng.gen::<f64>()).collect();
        let basis = BSplineBasis::from_data(&xs, 8, KnotPlacement::Quantile).unwrap();
        let term = PenalizedTerm::smooth_1d_centered("x", &basis, &xs);
        let y = vec![0.0; 60];
        let fit = fit_penalized_ls(&[term], &[1.0], &y, &FitOptions::default()).unwrap();
        assert!(fit.intercept.abs() < 1e-10);
        assert!(fit.coeffs[0].iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn hat_diagonal_in_unit_interval_and_sums_to_edf() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let xs: Vec<f64> = (0..120).map(|_| rng.gen::<f64>() * 3.0).collect();
        let y: Vec<f64> = xs.iter().map(|&x| x.cos() + 0.05 * rng.gen::<f64>()).collect();
        let basis = BSplineBasis::from_data(&xs, 12, KnotPlacement::Quantile).unwrap();
        let term = PenalizedTerm::smooth_1d_centered("x", &basis, &xs);
        let opts = FitOptions { compute_hat: true, ..Default::default() };
        let fit = fit_penalized_ls(&[term], &[0.5], &y, &opts).unwrap();
        let hat = fit.hat_diag.as_ref().unwrap();
        for &h in hat {
            assert!(h >= -1e-8 && h <= 1.0 + 1e-8, "hat {h}");
        }
        let trace: f64 = hat.iter().sum();
        assert!((trace - fit.edf_total).abs() < 1e-6, "tr {trace} vs edf {}", fit.edf_total);
    }

    #[test]
    fn edf_decomposition_is_consistent() {
        // multi-term fit: per-term EDF sums (plus intercept) to the total,
        // and the total matches the hat-trace.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 150;
        let xa: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 4.0).collect();
        let xb: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 2.0).collect();
        let y: Vec<f64> = (0..n)
            .map(|i| (xa[i]).sin() + xb[i] * xb[i] * 0.3 + 0.05 * rng.gen::<f64>())
            .collect();
        let ba = BSplineBasis::from_data(&xa, 9, KnotPlacement::Quantile).unwrap();
        let bb = BSplineBasis::from_data(&xb, 7, KnotPlacement::Quantile).unwrap();
        let terms = vec![
            PenalizedTerm::smooth_1d_centered("a", &ba, &xa),
            PenalizedTerm::smooth_1d_centered("b", &bb, &xb),
        ];
        let opts = FitOptions { compute_hat: true, ..Default::default() };
        let fit = fit_penalized_ls(&terms, &[0.3, 2.0], &y, &opts).unwrap();
        let sum: f64 = fit.edf.iter().sum::<f64>() + 1.0;
        assert!((sum - fit.edf_total).abs() < 1e-10);
        let trace: f64 = fit.hat_diag.as_ref().unwrap().iter().sum();
        assert!((trace - fit.edf_total).abs() < 1e-6);
    }

    #[test]
    fn rescaled_input_with_recomputed_knots_is_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 100;
        let xs: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 5.0).collect();
        let y: Vec<f64> = xs.iter().map(|&x| (x).sin() + 0.1 * rng.gen::<f64>()).collect();
        let fit_on = |xs: &[f64]| -> Vec<f64> {
            let basis = BSplineBasis::from_data(xs, 11, KnotPlacement::Quantile).unwrap();
            let term = PenalizedTerm::smooth_1d_centered("x", &basis, xs);
            let fit = fit_penalized_ls(&[term.clone()], &[0.7], &y, &FitOptions::default()).unwrap();
            fit.predict(&[term])
        };
        let base = fit_on(&xs);
        let scaled: Vec<f64> = xs.iter().map(|&x| 100.0 * x - 40.0).collect();
        let rescaled = fit_on(&scaled);
        for i in 0..n {
            assert!((base[i] - rescaled[i]).abs() < 1e-8, "row {i}");
        }
    }

    #[test]
    fn singular_system_names_offending_term() {
        // two identical unconstrained terms plus intercept are exactly
        // collinear at lambda = 0
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let xs: Vec<f64> = (0..40).map(|_| rng.gen::<f64>()).collect();
        let basis = BSplineBasis::from_data(&xs, 6, KnotPlacement::Quantile).unwrap();
        let t1 = PenalizedTerm::smooth_1d("first", &basis, &xs);
        let t2 = PenalizedTerm::smooth_1d("second", &basis, &xs);
        let y = vec![1.0; 40];
        let err = fit_penalized_ls(&[t1, t2], &[0.0, 0.0], &y, &no_intercept()).unwrap_err();
        match err {
            SplineError::SingularSystem { term, .. } => assert_eq!(term, "second"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn refit_is_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let xs: Vec<f64> = (0..90).map(|_| rng.gen::<f64>() * 2.0).collect();
        let y: Vec<f64> = xs.iter().map(|&x| x * x).collect();
        let basis = BSplineBasis::from_data(&xs, 9, KnotPlacement::Quantile).unwrap();
        let term = PenalizedTerm::smooth_1d_centered("x", &basis, &xs);
        let a = fit_penalized_ls(&[term.clone()], &[0.2], &y, &FitOptions::default()).unwrap();
        let b = fit_penalized_ls(&[term], &[0.2], &y, &FitOptions::default()).unwrap();
        assert_eq!(a.intercept.to_bits(), b.intercept.to_bits());
        for (x, y) in a.coeffs[0].iter().zip(b.coeffs[0].iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}
