//! Design-block representations and the Gram kernels behind the penalized
//! solver. Univariate spline blocks keep only the four nonzero values per
//! row; tensor blocks are stored implicitly as a pair of marginal blocks
//! plus the constraint projection, which keeps the memory footprint flat in
//! the number of interaction terms.

use super::basis::{BSplineBasis, TensorInteractionBasis, SUPPORT};
use ndarray::{Array1, Array2};
use std::sync::Arc;

/// A sparse univariate spline design: per row, the first nonzero column and
/// the `SUPPORT` nonzero basis values.
#[derive(Debug, Clone)]
pub struct Sparse1dDesign {
    pub k: usize,
    pub start: Vec<u32>,
    pub vals: Vec<[f64; SUPPORT]>,
}

impl Sparse1dDesign {
    pub fn evaluate(basis: &BSplineBasis, xs: &[f64]) -> Self {
        let mut start = Vec::with_capacity(xs.len());
        let mut vals = Vec::with_capacity(xs.len());
        for &x in xs {
            let (s, v) = basis.eval_point(x);
            start.push(s as u32);
            vals.push(v);
        }
        Self { k: basis.k, start, vals }
    }

    pub fn n_rows(&self) -> usize {
        self.start.len()
    }

    /// Dense materialization, for small models and tests.
    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.n_rows(), self.k));
        for r in 0..self.n_rows() {
            let s = self.start[r] as usize;
            for j in 0..SUPPORT {
                out[[r, s + j]] = self.vals[r][j];
            }
        }
        out
    }
}

/// One additive term's design block.
#[derive(Debug, Clone)]
pub enum DesignBlock {
    /// Arbitrary dense design (oracle tests, custom terms).
    Dense(Arc<Array2<f64>>),
    /// Univariate spline block, optionally projected by a constraint Z.
    Sparse1d { rows: Arc<Sparse1dDesign>, z: Option<Arc<Array2<f64>>> },
    /// Tensor interaction block: row values are the outer product of the two
    /// marginal rows, projected by the interaction constraint Z.
    Tensor { a: Arc<Sparse1dDesign>, b: Arc<Sparse1dDesign>, z: Arc<Array2<f64>> },
}

/// An additive model term: a design block plus its (coefficient-space)
/// penalty matrix and a label for reporting.
#[derive(Debug, Clone)]
pub struct PenalizedTerm {
    pub label: String,
    pub design: DesignBlock,
    pub penalty: Array2<f64>,
}

impl PenalizedTerm {
    pub fn dense(label: impl Into<String>, x: Array2<f64>, penalty: Array2<f64>) -> Self {
        assert_eq!(x.ncols(), penalty.nrows());
        Self { label: label.into(), design: DesignBlock::Dense(Arc::new(x)), penalty }
    }

    /// Unconstrained univariate spline term with a second-order difference
    /// penalty.
    pub fn smooth_1d(label: impl Into<String>, basis: &BSplineBasis, xs: &[f64]) -> Self {
        let rows = Arc::new(Sparse1dDesign::evaluate(basis, xs));
        let penalty = super::second_difference_penalty(basis.k);
        Self { label: label.into(), design: DesignBlock::Sparse1d { rows, z: None }, penalty }
    }

    /// Sum-to-zero-centered univariate spline term (identifiable next to an
    /// intercept).
    pub fn smooth_1d_centered(
        label: impl Into<String>,
        basis: &BSplineBasis,
        xs: &[f64],
    ) -> Self {
        let rows = Arc::new(Sparse1dDesign::evaluate(basis, xs));
        let sums = basis.column_sums(xs);
        let z = super::basis::row_null_space(&sums);
        let s = super::second_difference_penalty(basis.k);
        let penalty = z.t().dot(&s).dot(&z);
        Self {
            label: label.into(),
            design: DesignBlock::Sparse1d { rows, z: Some(Arc::new(z)) },
            penalty,
        }
    }

    /// Marginal-centered tensor interaction term. The marginal designs are
    /// shared, the projection comes from the fitted interaction basis.
    pub fn tensor(
        label: impl Into<String>,
        basis: &TensorInteractionBasis,
        rows_a: Arc<Sparse1dDesign>,
        rows_b: Arc<Sparse1dDesign>,
    ) -> Self {
        let penalty = basis.penalty();
        Self {
            label: label.into(),
            design: DesignBlock::Tensor {
                a: rows_a,
                b: rows_b,
                z: Arc::new(basis.z.clone()),
            },
            penalty,
        }
    }

    /// Constrained column count of the block.
    pub fn ncols(&self) -> usize {
        match &self.design {
            DesignBlock::Dense(x) => x.ncols(),
            DesignBlock::Sparse1d { rows, z } => z.as_ref().map_or(rows.k, |z| z.ncols()),
            DesignBlock::Tensor { z, .. } => z.ncols(),
        }
    }

    pub fn n_rows(&self) -> usize {
        match &self.design {
            DesignBlock::Dense(x) => x.nrows(),
            DesignBlock::Sparse1d { rows, .. } => rows.n_rows(),
            DesignBlock::Tensor { a, .. } => a.n_rows(),
        }
    }

    /// Raw (pre-projection) dimension.
    fn raw_dim(&self) -> usize {
        match &self.design {
            DesignBlock::Dense(x) => x.ncols(),
            DesignBlock::Sparse1d { rows, .. } => rows.k,
            DesignBlock::Tensor { a, b, .. } => a.k * b.k,
        }
    }

    /// Dense materialization of the constrained block.
    pub fn to_dense(&self) -> Array2<f64> {
        match &self.design {
            DesignBlock::Dense(x) => x.as_ref().clone(),
            DesignBlock::Sparse1d { rows, z } => {
                let raw = rows.to_dense();
                match z {
                    Some(z) => raw.dot(z.as_ref()),
                    None => raw,
                }
            }
            DesignBlock::Tensor { a, b, z } => {
                let n = a.n_rows();
                let (k1, k2) = (a.k, b.k);
                let mut raw = Array2::zeros((n, k1 * k2));
                for r in 0..n {
                    let (sa, sb) = (a.start[r] as usize, b.start[r] as usize);
                    for p in 0..SUPPORT {
                        for q in 0..SUPPORT {
                            raw[[r, (sa + p) * k2 + sb + q]] = a.vals[r][p] * b.vals[r][q];
                        }
                    }
                }
                raw.dot(z.as_ref())
            }
        }
    }

    /// Raw-space cross product with another block over the shared rows.
    fn raw_gram_with(&self, other: &PenalizedTerm) -> Array2<f64> {
        let n = self.n_rows();
        assert_eq!(n, other.n_rows());
        let mut g = Array2::<f64>::zeros((self.raw_dim(), other.raw_dim()));
        match (&self.design, &other.design) {
            (DesignBlock::Sparse1d { rows: ra, .. }, DesignBlock::Sparse1d { rows: rb, .. }) => {
                for r in 0..n {
                    let (sa, sb) = (ra.start[r] as usize, rb.start[r] as usize);
                    let (va, vb) = (&ra.vals[r], &rb.vals[r]);
                    for p in 0..SUPPORT {
                        let f = va[p];
                        for q in 0..SUPPORT {
                            g[[sa + p, sb + q]] += f * vb[q];
                        }
                    }
                }
            }
            (DesignBlock::Sparse1d { rows: ru, .. }, DesignBlock::Tensor { a, b, .. }) => {
                let k2 = b.k;
                for r in 0..n {
                    let (su, sa, sb) =
                        (ru.start[r] as usize, a.start[r] as usize, b.start[r] as usize);
                    let (vu, va, vb) = (&ru.vals[r], &a.vals[r], &b.vals[r]);
                    for p in 0..SUPPORT {
                        let fu = vu[p];
                        for q in 0..SUPPORT {
                            let fq = fu * va[q];
                            let base = (sa + q) * k2 + sb;
                            for s in 0..SUPPORT {
                                g[[su + p, base + s]] += fq * vb[s];
                            }
                        }
                    }
                }
            }
            (DesignBlock::Tensor { .. }, DesignBlock::Sparse1d { .. }) => {
                return other.raw_gram_with(self).t().to_owned();
            }
            (
                DesignBlock::Tensor { a: a1, b: b1, .. },
                DesignBlock::Tensor { a: a2, b: b2, .. },
            ) => {
                let (k2a, k2b) = (b1.k, b2.k);
                let mut v1 = [0.0f64; SUPPORT * SUPPORT];
                let mut v2 = [0.0f64; SUPPORT * SUPPORT];
                for r in 0..n {
                    let (sa1, sb1) = (a1.start[r] as usize, b1.start[r] as usize);
                    let (sa2, sb2) = (a2.start[r] as usize, b2.start[r] as usize);
                    for p in 0..SUPPORT {
                        for q in 0..SUPPORT {
                            v1[p * SUPPORT + q] = a1.vals[r][p] * b1.vals[r][q];
                            v2[p * SUPPORT + q] = a2.vals[r][p] * b2.vals[r][q];
                        }
                    }
                    for p in 0..SUPPORT {
                        for q in 0..SUPPORT {
                            let row = (sa1 + p) * k2a + sb1 + q;
                            let f = v1[p * SUPPORT + q];
                            for u in 0..SUPPORT {
                                let base = (sa2 + u) * k2b + sb2;
                                let fu = f * a2.vals[r][u];
                                for w in 0..SUPPORT {
                                    g[[row, base + w]] += fu * b2.vals[r][w];
                                }
                            }
                        }
                    }
                }
            }
            // Dense blocks fall back to materialization below.
            _ => {
                let da = match &self.design {
                    DesignBlock::Dense(x) => x.as_ref().clone(),
                    DesignBlock::Sparse1d { rows, .. } => rows.to_dense(),
                    DesignBlock::Tensor { .. } => unreachable!(),
                };
                let db = match &other.design {
                    DesignBlock::Dense(x) => x.as_ref().clone(),
                    DesignBlock::Sparse1d { rows, .. } => rows.to_dense(),
                    DesignBlock::Tensor { .. } => unreachable!(),
                };
                return da.t().dot(&db);
            }
        }
        g
    }

    fn projection(&self) -> Option<&Array2<f64>> {
        match &self.design {
            DesignBlock::Dense(_) => None,
            DesignBlock::Sparse1d { z, .. } => z.as_deref(),
            DesignBlock::Tensor { z, .. } => Some(z.as_ref()),
        }
    }

    /// Constrained-space cross product `X_a^T X_b`.
    pub fn gram_with(&self, other: &PenalizedTerm) -> Array2<f64> {
        let raw = match (&self.design, &other.design) {
            // Tensor-vs-dense needs materialization of the tensor side.
            (DesignBlock::Dense(_), DesignBlock::Tensor { .. })
            | (DesignBlock::Tensor { .. }, DesignBlock::Dense(_)) => {
                return self.to_dense().t().dot(&other.to_dense());
            }
            _ => self.raw_gram_with(other),
        };
        let raw = match self.projection() {
            Some(z) => z.t().dot(&raw),
            None => raw,
        };
        match other.projection() {
            Some(z) => raw.dot(z),
            None => raw,
        }
    }

    /// `X^T v` in constrained coordinates.
    pub fn t_vec(&self, v: &[f64]) -> Array1<f64> {
        match &self.design {
            DesignBlock::Dense(x) => {
                let mut out = Array1::zeros(x.ncols());
                for (r, &w) in v.iter().enumerate() {
                    if w != 0.0 {
                        out.scaled_add(w, &x.row(r));
                    }
                }
                out
            }
            DesignBlock::Sparse1d { rows, z } => {
                let mut raw = Array1::<f64>::zeros(rows.k);
                for r in 0..rows.n_rows() {
                    let w = v[r];
                    if w != 0.0 {
                        let s = rows.start[r] as usize;
                        for j in 0..SUPPORT {
                            raw[s + j] += w * rows.vals[r][j];
                        }
                    }
                }
                match z {
                    Some(z) => z.t().dot(&raw),
                    None => raw,
                }
            }
            DesignBlock::Tensor { a, b, z } => {
                let k2 = b.k;
                let mut raw = Array1::<f64>::zeros(a.k * b.k);
                for r in 0..a.n_rows() {
                    let w = v[r];
                    if w != 0.0 {
                        let (sa, sb) = (a.start[r] as usize, b.start[r] as usize);
                        for p in 0..SUPPORT {
                            let f = w * a.vals[r][p];
                            let base = (sa + p) * k2 + sb;
                            for q in 0..SUPPORT {
                                raw[base + q] += f * b.vals[r][q];
                            }
                        }
                    }
                }
                z.t().dot(&raw)
            }
        }
    }

    /// Adds `X beta` into `out`.
    pub fn add_prediction(&self, beta: &Array1<f64>, out: &mut [f64]) {
        match &self.design {
            DesignBlock::Dense(x) => {
                for (r, o) in out.iter_mut().enumerate() {
                    *o += x.row(r).dot(beta);
                }
            }
            DesignBlock::Sparse1d { rows, z } => {
                let raw = match z {
                    Some(z) => z.dot(beta),
                    None => beta.clone(),
                };
                for r in 0..rows.n_rows() {
                    let s = rows.start[r] as usize;
                    let mut acc = 0.0;
                    for j in 0..SUPPORT {
                        acc += rows.vals[r][j] * raw[s + j];
                    }
                    out[r] += acc;
                }
            }
            DesignBlock::Tensor { a, b, z } => {
                let raw = z.dot(beta);
                let k2 = b.k;
                for r in 0..a.n_rows() {
                    let (sa, sb) = (a.start[r] as usize, b.start[r] as usize);
                    let mut acc = 0.0;
                    for p in 0..SUPPORT {
                        let f = a.vals[r][p];
                        let base = (sa + p) * k2 + sb;
                        for q in 0..SUPPORT {
                            acc += f * b.vals[r][q] * raw[base + q];
                        }
                    }
                    out[r] += acc;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spline::KnotPlacement;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen::<f64>() * 4.0).collect()
    }

    fn terms_for_test(n: usize) -> (Vec<PenalizedTerm>, Vec<f64>, Vec<f64>) {
        let xa = sample(n, 1);
        let xb = sample(n, 2);
        let ba = BSplineBasis::from_data(&xa, 8, KnotPlacement::Quantile).unwrap();
        let bb = BSplineBasis::from_data(&xb, 7, KnotPlacement::Quantile).unwrap();
        let t1 = PenalizedTerm::smooth_1d("a", &ba, &xa);
        let t2 = PenalizedTerm::smooth_1d_centered("b", &bb, &xb);
        let tb = TensorInteractionBasis::from_data(&xa, &xb, 6, 6, KnotPlacement::Quantile).unwrap();
        let rows_a = Arc::new(Sparse1dDesign::evaluate(&tb.margin_a, &xa));
        let rows_b = Arc::new(Sparse1dDesign::evaluate(&tb.margin_b, &xb));
        let t3 = PenalizedTerm::tensor("ab", &tb, rows_a, rows_b);
        (vec![t1, t2, t3], xa, xb)
    }

    #[test]
    fn sparse_grams_match_dense() {
        let (terms, _, _) = terms_for_test(120);
        for i in 0..terms.len() {
            for j in 0..terms.len() {
                let fast = terms[i].gram_with(&terms[j]);
                let slow = terms[i].to_dense().t().dot(&terms[j].to_dense());
                let err = (&fast - &slow).iter().map(|v| v.abs()).fold(0.0, f64::max);
                assert!(err < 1e-10, "terms {i},{j}: err {err}");
            }
        }
    }

    #[test]
    fn t_vec_matches_dense() {
        let (terms, _, _) = terms_for_test(90);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v: Vec<f64> = (0..90).map(|_| rng.gen::<f64>() - 0.5).collect();
        for term in &terms {
            let fast = term.t_vec(&v);
            let slow = term.to_dense().t().dot(&Array1::from(v.clone()));
            let err = (&fast - &slow).iter().map(|x| x.abs()).fold(0.0, f64::max);
            assert!(err < 1e-10, "{}: {err}", term.label);
        }
    }

    #[test]
    fn prediction_matches_dense() {
        let (terms, _, _) = terms_for_test(70);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for term in &terms {
            let beta = Array1::from_iter((0..term.ncols()).map(|_| rng.gen::<f64>() - 0.5));
            let mut fast = vec![0.0; 70];
            term.add_prediction(&beta, &mut fast);
            let slow = term.to_dense().dot(&beta);
            for r in 0..70 {
                assert!((fast[r] - slow[r]).abs() < 1e-10);
            }
        }
    }
}
