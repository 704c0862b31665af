//! Dense symmetric linear algebra kernels used by the spline engine.
//!
//! Everything here is deliberately deterministic: parallel sections only ever
//! write disjoint memory, so results are bit-identical for any worker count.

use ndarray::linalg::general_mat_mul;
use ndarray::parallel::prelude::*;
use ndarray::{s, Array1, Array2, ArrayView2, ArrayViewMut2, Axis};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("matrix is not positive definite (pivot {0} failed)")]
    NotPositiveDefinite(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("eigendecomposition did not converge")]
    NoConvergence,
}

const BLOCK: usize = 192;

/// Multithreaded gemm `C = beta*C + alpha*A*B`, split over row chunks of C.
/// Each chunk writes disjoint memory so the result does not depend on the
/// worker count.
pub fn par_gemm(
    alpha: f64,
    a: &ArrayView2<f64>,
    b: &ArrayView2<f64>,
    beta: f64,
    c: &mut ArrayViewMut2<f64>,
) {
    let m = c.nrows();
    let threads = rayon::current_num_threads().max(1);
    let chunk = m.div_ceil(threads).max(64);
    if threads == 1 || m <= chunk {
        general_mat_mul(alpha, a, b, beta, c);
        return;
    }
    let a_chunks: Vec<_> = a.axis_chunks_iter(Axis(0), chunk).collect();
    c.axis_chunks_iter_mut(Axis(0), chunk)
        .into_par_iter()
        .zip(a_chunks)
        .for_each(|(mut c_chunk, a_chunk)| {
            general_mat_mul(alpha, &a_chunk, b, beta, &mut c_chunk);
        });
}

/// Unblocked lower Cholesky of the leading block. `a` is overwritten with L.
fn cholesky_unblocked(mut a: ArrayViewMut2<f64>, pivot_offset: usize) -> Result<(), LinalgError> {
    let n = a.nrows();
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= a[[j, k]] * a[[j, k]];
        }
        if d <= 0.0 || !d.is_finite() {
            return Err(LinalgError::NotPositiveDefinite(pivot_offset + j));
        }
        let d = d.sqrt();
        a[[j, j]] = d;
        for i in (j + 1)..n {
            let mut v = a[[i, j]];
            for k in 0..j {
                v -= a[[i, k]] * a[[j, k]];
            }
            a[[i, j]] = v / d;
        }
    }
    Ok(())
}

/// Solves X L^T = B in place where L is lower triangular, i.e. the panel step
/// of the blocked factorization. Row-oriented: each row of B is solved by an
/// independent forward substitution, parallel over row chunks.
fn trsm_right_lower_transpose(l: ArrayView2<f64>, mut b: ArrayViewMut2<f64>) {
    let bs = l.nrows();
    let l = l.as_standard_layout();
    b.axis_chunks_iter_mut(Axis(0), 512)
        .into_par_iter()
        .for_each(|mut chunk| {
            for mut row in chunk.rows_mut() {
                let x = row.as_slice_mut().expect("row-major layout");
                for j in 0..bs {
                    let lj = l.row(j);
                    let lj = lj.as_slice().unwrap();
                    let mut v = x[j];
                    for k in 0..j {
                        v -= x[k] * lj[k];
                    }
                    x[j] = v / lj[j];
                }
            }
        });
}

/// Blocked in-place lower Cholesky factorization: A = L L^T, lower triangle
/// overwritten by L. The strict upper triangle is left untouched.
pub fn cholesky_in_place(a: &mut Array2<f64>) -> Result<(), LinalgError> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(LinalgError::DimensionMismatch("cholesky needs a square matrix".into()));
    }
    let mut k = 0;
    while k < n {
        let bs = BLOCK.min(n - k);
        {
            let diag = a.slice_mut(s![k..k + bs, k..k + bs]);
            cholesky_unblocked(diag, k)?;
        }
        if k + bs < n {
            let (top, mut bottom) = a.view_mut().split_at(Axis(0), k + bs);
            let l11 = top.slice(s![k..k + bs, k..k + bs]);
            let mut panel = bottom.slice_mut(s![.., k..k + bs]);
            trsm_right_lower_transpose(l11, panel.view_mut());

            // Trailing update A22 -= L21 L21^T on the lower triangle only,
            // parallel over row stripes (disjoint writes).
            let (_, mut trail_rows) = a.view_mut().split_at(Axis(0), k + bs);
            let (left, mut trailing) = trail_rows.view_mut().split_at(Axis(1), k + bs);
            let l21 = left.slice(s![.., k..k + bs]).as_standard_layout().into_owned();
            let m = trailing.nrows();
            let stripe = (m / (4 * rayon::current_num_threads()).max(1)).max(BLOCK);
            let starts: Vec<usize> = (0..m).step_by(stripe).collect();
            trailing
                .axis_chunks_iter_mut(Axis(0), stripe)
                .into_par_iter()
                .zip(starts)
                .for_each(|(mut chunk, row0)| {
                    let rows = chunk.nrows();
                    // Only columns up to the stripe's diagonal matter.
                    let cols = (row0 + rows).min(chunk.ncols());
                    let a_block = l21.slice(s![row0..row0 + rows, ..]);
                    let b_block = l21.slice(s![..cols, ..]);
                    let mut c = chunk.slice_mut(s![.., ..cols]);
                    general_mat_mul(-1.0, &a_block, &b_block.t(), 1.0, &mut c);
                });
        }
        k += bs;
    }
    Ok(())
}

/// In-block forward substitution; `xb` holds the RHS rows for this block.
fn forward_block(l11: ArrayView2<f64>, xb: &mut ArrayViewMut2<f64>) {
    let bs = l11.nrows();
    for i in 0..bs {
        let (above, mut rest) = xb.view_mut().split_at(Axis(0), i);
        let mut row_i = rest.row_mut(0);
        let ri = row_i.as_slice_mut().expect("row-major");
        for j in 0..i {
            let f = l11[[i, j]];
            if f != 0.0 {
                let rj = above.row(j);
                let rj = rj.as_slice().unwrap();
                for (x, &y) in ri.iter_mut().zip(rj) {
                    *x -= f * y;
                }
            }
        }
        let d = l11[[i, i]];
        for x in ri.iter_mut() {
            *x /= d;
        }
    }
}

/// Forward substitution: solves L X = B in place for lower-triangular L.
pub fn solve_lower_in_place(l: &Array2<f64>, b: &mut Array2<f64>) {
    let n = l.nrows();
    assert_eq!(b.nrows(), n);
    let mut k = 0;
    while k < n {
        let bs = BLOCK.min(n - k);
        {
            let l11 = l.slice(s![k..k + bs, k..k + bs]);
            let mut xb = b.slice_mut(s![k..k + bs, ..]);
            forward_block(l11, &mut xb);
        }
        if k + bs < n {
            let (solved, mut rest) = b.view_mut().split_at(Axis(0), k + bs);
            let xk = solved.slice(s![k..k + bs, ..]);
            let l21 = l.slice(s![k + bs.., k..k + bs]);
            par_gemm(-1.0, &l21, &xk, 1.0, &mut rest.view_mut());
        }
        k += bs;
    }
}

/// Back substitution: solves L^T X = B in place for lower-triangular L.
pub fn solve_lower_transpose_in_place(l: &Array2<f64>, b: &mut Array2<f64>) {
    let n = l.nrows();
    assert_eq!(b.nrows(), n);
    let mut k = n;
    while k > 0 {
        let bs = BLOCK.min(k);
        let k0 = k - bs;
        {
            let l11 = l.slice(s![k0..k, k0..k]);
            let mut xb = b.slice_mut(s![k0..k, ..]);
            for ii in (0..bs).rev() {
                let (mut upper, below) = xb.view_mut().split_at(Axis(0), ii + 1);
                let mut row_i = upper.row_mut(ii);
                let ri = row_i.as_slice_mut().expect("row-major");
                for j in (ii + 1)..bs {
                    let f = l11[[j, ii]];
                    if f != 0.0 {
                        let rj = below.row(j - ii - 1);
                        let rj = rj.as_slice().unwrap();
                        for (x, &y) in ri.iter_mut().zip(rj) {
                            *x -= f * y;
                        }
                    }
                }
                let d = l11[[ii, ii]];
                for x in ri.iter_mut() {
                    *x /= d;
                }
            }
        }
        if k0 > 0 {
            let (mut rest, solved) = b.view_mut().split_at(Axis(0), k0);
            let xk = solved.slice(s![..bs, ..]);
            let l21 = l.slice(s![k0.., ..k0]);
            par_gemm(-1.0, &l21.t(), &xk, 1.0, &mut rest.view_mut());
        }
        k = k0;
    }
}

/// Solves (L L^T) X = B given the Cholesky factor L.
pub fn cholesky_solve(l: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let mut x = b.clone();
    solve_lower_in_place(l, &mut x);
    solve_lower_transpose_in_place(l, &mut x);
    x
}

pub fn cholesky_solve_vec(l: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let m = b.len();
    let bm = b.view().into_shape_with_order((m, 1)).unwrap().to_owned();
    let x = cholesky_solve(l, &bm);
    x.column(0).to_owned()
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
/// Returns eigenvalues (ascending) and the matching eigenvector columns.
pub fn jacobi_eigh(a: &Array2<f64>) -> Result<(Array1<f64>, Array2<f64>), LinalgError> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(LinalgError::DimensionMismatch("eigh needs a square matrix".into()));
    }
    let mut m = a.clone();
    let mut v = Array2::<f64>::eye(n);
    let off = |m: &Array2<f64>| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                s += m[[i, j]] * m[[i, j]];
            }
        }
        s
    };
    let scale: f64 = (0..n).map(|i| m[[i, i]].abs()).fold(1e-300, f64::max);
    let tol = (scale * 1e-14).powi(2) * (n * n) as f64;
    for _sweep in 0..60 {
        if off(&m) <= tol {
            let mut vals: Vec<(f64, usize)> = (0..n).map(|i| (m[[i, i]], i)).collect();
            vals.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            let eigvals = Array1::from_iter(vals.iter().map(|(v, _)| *v));
            let mut eigvecs = Array2::zeros((n, n));
            for (k, (_, i)) in vals.iter().enumerate() {
                eigvecs.column_mut(k).assign(&v.column(*i));
            }
            return Ok((eigvals, eigvecs));
        }
        for p in 0..n - 1 {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                if apq.abs() <= scale * 1e-300 {
                    continue;
                }
                let app = m[[p, p]];
                let aqq = m[[q, q]];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s_ = t * c;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s_ * mkq;
                    m[[k, q]] = s_ * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s_ * mqk;
                    m[[q, k]] = s_ * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s_ * vkq;
                    v[[k, q]] = s_ * vkp + c * vkq;
                }
            }
        }
    }
    Err(LinalgError::NoConvergence)
}

/// Orthonormal basis of the null space of a symmetric PSD matrix, using a
/// relative eigenvalue cutoff.
pub fn null_space_sym(a: &Array2<f64>, rel_tol: f64) -> Result<Array2<f64>, LinalgError> {
    let (vals, vecs) = jacobi_eigh(a)?;
    let max = vals.iter().copied().fold(0.0, f64::max).max(1e-300);
    let keep: Vec<usize> = (0..vals.len()).filter(|&i| vals[i] <= rel_tol * max).collect();
    let mut out = Array2::zeros((a.nrows(), keep.len()));
    for (k, &i) in keep.iter().enumerate() {
        out.column_mut(k).assign(&vecs.column(i));
    }
    Ok(out)
}

/// Moore-Penrose pseudo-inverse of a symmetric matrix.
pub fn pseudo_inverse_sym(a: &Array2<f64>, rel_tol: f64) -> Result<Array2<f64>, LinalgError> {
    let (vals, vecs) = jacobi_eigh(a)?;
    let max = vals.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-300);
    let n = a.nrows();
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        if vals[i].abs() > rel_tol * max {
            let vi = vecs.column(i);
            let w = 1.0 / vals[i];
            for r in 0..n {
                for c in 0..n {
                    out[[r, c]] += w * vi[r] * vi[c];
                }
            }
        }
    }
    Ok(out)
}

/// Type-7 quantile of an already sorted slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    }
}
