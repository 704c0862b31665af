//! Cubic B-spline bases with clamped boundary knots, and tensor-product
//! interaction bases constrained to exclude both marginal main effects.

use super::SplineError;
use crate::linalg;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

/// Spline degree used throughout (cubic).
pub const DEGREE: usize = 3;
/// Number of nonzero basis functions at any point.
pub const SUPPORT: usize = DEGREE + 1;

/// Interior knot placement rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum KnotPlacement {
    /// Equally spaced quantiles of the distinct observed values.
    #[default]
    Quantile,
    /// Equally spaced over the observed range.
    Uniform,
}

/// A clamped cubic B-spline basis of dimension `k` over an observed range.
/// Evaluation outside the range clamps to the boundary (constant
/// extrapolation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BSplineBasis {
    pub k: usize,
    /// Full knot vector of length k + DEGREE + 1 with repeated boundary knots.
    pub knots: Vec<f64>,
}

impl BSplineBasis {
    /// Places knots from data: boundary at the observed min/max, interior
    /// knots per the placement rule on the distinct values.
    pub fn from_data(x: &[f64], k: usize, placement: KnotPlacement) -> Result<Self, SplineError> {
        assert!(k > DEGREE, "basis dimension must exceed the degree");
        let mut vals: Vec<f64> = x.iter().copied().filter(|v| v.is_finite()).collect();
        if vals.is_empty() {
            return Err(SplineError::EmptyInput);
        }
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        vals.dedup();
        let interior = k - DEGREE - 1;
        // Strictly increasing interior knots need enough distinct values.
        if vals.len() < interior + 2 {
            return Err(SplineError::InsufficientDistinctValues {
                need: interior + 2,
                k,
                got: vals.len(),
            });
        }
        let (lo, hi) = (vals[0], vals[vals.len() - 1]);
        let mut knots = Vec::with_capacity(k + DEGREE + 1);
        for _ in 0..=DEGREE {
            knots.push(lo);
        }
        match placement {
            KnotPlacement::Quantile => {
                for j in 1..=interior {
                    let q = j as f64 / (interior + 1) as f64;
                    knots.push(linalg::quantile_sorted(&vals, q));
                }
            }
            KnotPlacement::Uniform => {
                for j in 1..=interior {
                    knots.push(lo + (hi - lo) * j as f64 / (interior + 1) as f64);
                }
            }
        }
        for _ in 0..=DEGREE {
            knots.push(hi);
        }
        // Quantiles of heavily tied data can still collide; strictly
        // increasing interior knots are required for a well-formed basis.
        for w in knots[DEGREE..knots.len() - DEGREE].windows(2) {
            if w[1] <= w[0] {
                return Err(SplineError::InsufficientDistinctValues {
                    need: interior + 2,
                    k,
                    got: vals.len(),
                });
            }
        }
        Ok(Self { k, knots })
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.knots[0], self.knots[self.knots.len() - 1])
    }

    /// Evaluates the basis at `x` (clamped to the knot range). Returns the
    /// first nonzero column and the `SUPPORT` nonzero values.
    pub fn eval_point(&self, x: f64) -> (usize, [f64; SUPPORT]) {
        let (lo, hi) = self.domain();
        let u = if x.is_nan() { lo } else { x.clamp(lo, hi) };
        let n = self.k - 1;
        // Locate the knot span [knots[i], knots[i+1]) containing u.
        let span = if u >= self.knots[n + 1] {
            n
        } else if u <= self.knots[DEGREE] {
            DEGREE
        } else {
            let mut lo_i = DEGREE;
            let mut hi_i = n + 1;
            while hi_i - lo_i > 1 {
                let mid = (lo_i + hi_i) / 2;
                if u < self.knots[mid] {
                    hi_i = mid;
                } else {
                    lo_i = mid;
                }
            }
            lo_i
        };
        // Cox-de Boor triangle for the SUPPORT nonzero functions.
        let mut vals = [0.0f64; SUPPORT];
        let mut left = [0.0f64; SUPPORT];
        let mut right = [0.0f64; SUPPORT];
        vals[0] = 1.0;
        for j in 1..=DEGREE {
            left[j] = u - self.knots[span + 1 - j];
            right[j] = self.knots[span + j] - u;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = if denom != 0.0 { vals[r] / denom } else { 0.0 };
                vals[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            vals[j] = saved;
        }
        (span - DEGREE, vals)
    }

    /// Dense design block (n x k).
    pub fn eval_dense(&self, xs: &[f64]) -> Array2<f64> {
        let mut out = Array2::zeros((xs.len(), self.k));
        for (i, &x) in xs.iter().enumerate() {
            let (start, vals) = self.eval_point(x);
            for (j, v) in vals.iter().enumerate() {
                out[[i, start + j]] = *v;
            }
        }
        out
    }

    /// Column sums of the basis over the sample, used for the sum-to-zero
    /// identifiability constraint.
    pub fn column_sums(&self, xs: &[f64]) -> Array1<f64> {
        let mut sums = Array1::zeros(self.k);
        for &x in xs {
            let (start, vals) = self.eval_point(x);
            for (j, v) in vals.iter().enumerate() {
                sums[start + j] += *v;
            }
        }
        sums
    }
}

/// Orthonormal basis of the null space of a single row vector, via one
/// Householder reflection. Returns a k x (k-1) matrix Z with c^T Z = 0.
pub fn row_null_space(c: &Array1<f64>) -> Array2<f64> {
    let k = c.len();
    let norm = c.dot(c).sqrt();
    assert!(norm > 0.0, "constraint vector must be nonzero");
    // Householder v maps c to ||c|| e1; the null-space basis is the matrix of
    // columns 2..k of the reflector H = I - 2 v v^T / (v^T v).
    let mut v = c.clone();
    v[0] += if c[0] >= 0.0 { norm } else { -norm };
    let vtv = v.dot(&v);
    let mut z = Array2::zeros((k, k - 1));
    for col in 1..k {
        for row in 0..k {
            let e = if row == col { 1.0 } else { 0.0 };
            z[[row, col - 1]] = e - 2.0 * v[row] * v[col] / vtv;
        }
    }
    z
}

/// A bivariate tensor-product interaction basis. The raw 81-dimensional
/// product space is projected onto the subspace orthogonal, on the fit
/// sample, to every column of both marginal bases; the projected columns
/// model pure joint interaction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorInteractionBasis {
    pub margin_a: BSplineBasis,
    pub margin_b: BSplineBasis,
    /// Raw-to-constrained projection, (k1*k2) x q.
    pub z: Array2<f64>,
}

impl TensorInteractionBasis {
    /// Builds the constrained basis from the fit sample of the two inputs.
    pub fn from_data(
        xa: &[f64],
        xb: &[f64],
        k1: usize,
        k2: usize,
        placement: KnotPlacement,
    ) -> Result<Self, SplineError> {
        assert_eq!(xa.len(), xb.len());
        let margin_a = BSplineBasis::from_data(xa, k1, placement)?;
        let margin_b = BSplineBasis::from_data(xb, k2, placement)?;
        let rows: Vec<((usize, [f64; SUPPORT]), (usize, [f64; SUPPORT]))> = xa
            .iter()
            .zip(xb)
            .filter(|(a, b)| a.is_finite() && b.is_finite())
            .map(|(&a, &b)| (margin_a.eval_point(a), margin_b.eval_point(b)))
            .collect();
        Self::from_margin_rows(margin_a, margin_b, rows.iter().copied())
    }

    /// Builds the constrained basis from already-evaluated marginal rows,
    /// letting callers share marginal designs across many interaction terms.
    pub fn from_margin_rows(
        margin_a: BSplineBasis,
        margin_b: BSplineBasis,
        rows: impl Iterator<Item = ((usize, [f64; SUPPORT]), (usize, [f64; SUPPORT]))>,
    ) -> Result<Self, SplineError> {
        let (k1, k2) = (margin_a.k, margin_b.k);
        // Constraint matrix C = [B_a^T T; B_b^T T] where T is the row-wise
        // product design: the projected columns must be orthogonal to every
        // marginal basis column evaluated on the data.
        let kk = k1 * k2;
        let mut c = Array2::<f64>::zeros((k1 + k2, kk));
        for ((sa, va), (sb, vb)) in rows {
            for p in 0..SUPPORT {
                for q in 0..SUPPORT {
                    let col = (sa + p) * k2 + (sb + q);
                    let t = va[p] * vb[q];
                    // against margin a columns
                    for m in 0..SUPPORT {
                        c[[sa + m, col]] += va[m] * t;
                    }
                    // against margin b columns
                    for m in 0..SUPPORT {
                        c[[k1 + sb + m, col]] += vb[m] * t;
                    }
                }
            }
        }
        let ctc = c.t().dot(&c);
        let z = linalg::null_space_sym(&ctc, 1e-12)?;
        if z.ncols() == 0 {
            return Err(SplineError::DimensionMismatch(
                "tensor constraint removed every direction".into(),
            ));
        }
        Ok(Self { margin_a, margin_b, z })
    }

    /// Constrained column count.
    pub fn ncols(&self) -> usize {
        self.z.ncols()
    }

    /// Raw (pre-constraint) dimension k1*k2.
    pub fn raw_dim(&self) -> usize {
        self.margin_a.k * self.margin_b.k
    }

    /// Penalty on the constrained coordinates: Z^T (S1 (x) I + I (x) S2) Z.
    pub fn penalty(&self) -> Array2<f64> {
        let (k1, k2) = (self.margin_a.k, self.margin_b.k);
        let s1 = super::second_difference_penalty(k1);
        let s2 = super::second_difference_penalty(k2);
        let mut raw = Array2::<f64>::zeros((k1 * k2, k1 * k2));
        for i1 in 0..k1 {
            for j1 in 0..k1 {
                if s1[[i1, j1]] != 0.0 {
                    for d in 0..k2 {
                        raw[[i1 * k2 + d, j1 * k2 + d]] += s1[[i1, j1]];
                    }
                }
            }
        }
        for i2 in 0..k2 {
            for j2 in 0..k2 {
                if s2[[i2, j2]] != 0.0 {
                    for d in 0..k1 {
                        raw[[d * k2 + i2, d * k2 + j2]] += s2[[i2, j2]];
                    }
                }
            }
        }
        self.z.t().dot(&raw).dot(&self.z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen::<f64>() * 10.0 - 3.0).collect()
    }

    #[test]
    fn basis_has_requested_dimension() {
        let xs = sample(200, 1);
        let basis = BSplineBasis::from_data(&xs, 27, KnotPlacement::Quantile).unwrap();
        assert_eq!(basis.eval_dense(&xs).ncols(), 27);
        assert_eq!(basis.knots.len(), 27 + 4);
    }

    #[test]
    fn partition_of_unity() {
        let xs = sample(300, 2);
        for placement in [KnotPlacement::Quantile, KnotPlacement::Uniform] {
            let basis = BSplineBasis::from_data(&xs, 27, placement).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            for _ in 0..1000 {
                let x = rng.gen::<f64>() * 13.0 - 3.0;
                let (_, vals) = basis.eval_point(x);
                let sum: f64 = vals.iter().sum();
                assert!((sum - 1.0).abs() < 1e-10, "x={x}: sum={sum}");
            }
        }
    }

    #[test]
    fn clamps_outside_range() {
        let xs = sample(100, 3);
        let basis = BSplineBasis::from_data(&xs, 12, KnotPlacement::Quantile).unwrap();
        let (lo, hi) = basis.domain();
        let at_lo = basis.eval_point(lo);
        let below = basis.eval_point(lo - 5.0);
        assert_eq!(at_lo.0, below.0);
        for j in 0..SUPPORT {
            assert!((at_lo.1[j] - below.1[j]).abs() < 1e-15);
        }
        let at_hi = basis.eval_point(hi);
        let above = basis.eval_point(hi + 100.0);
        assert_eq!(at_hi.0, above.0);
        for j in 0..SUPPORT {
            assert!((at_hi.1[j] - above.1[j]).abs() < 1e-15);
        }
        // boundary basis value is 1 at the clamped ends
        assert!((at_hi.1.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_too_few_distinct_values() {
        let xs = vec![1.0, 1.0, 2.0, 2.0, 3.0];
        let err = BSplineBasis::from_data(&xs, 27, KnotPlacement::Quantile).unwrap_err();
        assert!(matches!(err, SplineError::InsufficientDistinctValues { .. }));
    }

    #[test]
    fn handles_heavy_ties_like_night_solar() {
        // Half the sample is exactly zero, like solar irradiance at night.
        let mut xs = vec![0.0; 300];
        xs.extend(sample(300, 4).iter().map(|v| v.abs() * 50.0));
        let basis = BSplineBasis::from_data(&xs, 9, KnotPlacement::Quantile).unwrap();
        let (_, vals) = basis.eval_point(25.0);
        assert!((vals.iter().sum::<f64>() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn penalty_has_affine_null_space() {
        let s = super::super::second_difference_penalty(9);
        // S * affine coefficient vector = 0
        for (a, b) in [(1.0, 0.0), (0.0, 1.0), (2.5, -0.7)] {
            let v = Array1::from_iter((0..9).map(|i| a + b * i as f64));
            let sv = s.dot(&v);
            assert!(sv.iter().all(|x| x.abs() < 1e-12));
        }
    }

    #[test]
    fn row_null_space_is_orthonormal_complement() {
        let c = Array1::from(vec![2.0, -1.0, 0.5, 3.0]);
        let z = row_null_space(&c);
        assert_eq!(z.shape(), &[4, 3]);
        let cz = c.dot(&z);
        assert!(cz.iter().all(|v| v.abs() < 1e-12));
        let ztz = z.t().dot(&z);
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((ztz[[i, j]] - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tensor_basis_dimensions() {
        let xa = sample(400, 5);
        let xb = sample(400, 6);
        let t = TensorInteractionBasis::from_data(&xa, &xb, 9, 9, KnotPlacement::Quantile).unwrap();
        assert_eq!(t.raw_dim(), 81);
        // 81 minus the rank-17 marginal constraint
        assert_eq!(t.ncols(), 64);
    }

    #[test]
    fn tensor_columns_orthogonal_to_marginals() {
        let xa = sample(500, 7);
        let xb: Vec<f64> = sample(500, 8).iter().map(|v| v * 0.3 + 1.0).collect();
        let t = TensorInteractionBasis::from_data(&xa, &xb, 9, 9, KnotPlacement::Quantile).unwrap();
        // materialize constrained design and both marginal designs
        let n = xa.len();
        let mut raw = Array2::<f64>::zeros((n, 81));
        for r in 0..n {
            let (sa, va) = t.margin_a.eval_point(xa[r]);
            let (sb, vb) = t.margin_b.eval_point(xb[r]);
            for p in 0..SUPPORT {
                for q in 0..SUPPORT {
                    raw[[r, (sa + p) * 9 + sb + q]] = va[p] * vb[q];
                }
            }
        }
        let constrained = raw.dot(&t.z);
        let da = t.margin_a.eval_dense(&xa);
        let db = t.margin_b.eval_dense(&xb);
        let ga = da.t().dot(&constrained);
        let gb = db.t().dot(&constrained);
        let worst = ga.iter().chain(gb.iter()).map(|v| v.abs()).fold(0.0, f64::max);
        assert!(worst < 1e-8, "orthogonality violated: {worst}");
    }

    #[test]
    fn tensor_penalty_is_symmetric_psd() {
        let xa = sample(200, 9);
        let xb = sample(200, 10);
        let t = TensorInteractionBasis::from_data(&xa, &xb, 9, 9, KnotPlacement::Quantile).unwrap();
        let s = t.penalty();
        assert_eq!(s.nrows(), t.ncols());
        for i in 0..s.nrows() {
            for j in 0..s.ncols() {
                assert!((s[[i, j]] - s[[j, i]]).abs() < 1e-10);
            }
        }
        let (vals, _) = crate::linalg::jacobi_eigh(&s).unwrap();
        assert!(vals[0] > -1e-8 * vals[vals.len() - 1].max(1.0));
    }
}
