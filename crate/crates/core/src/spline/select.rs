//! Smoothing-parameter selection by coordinate-wise grid search on a global
//! information criterion.

use super::fit::{EdfMode, FitOptions, PenalizedSystem};
use super::design::PenalizedTerm;
use super::SplineError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Criterion {
    #[default]
    Bic,
    Gcv,
}

#[derive(Debug, Clone)]
pub struct SelectOptions {
    pub criterion: Criterion,
    /// Candidate smoothing parameters, ascending.
    pub grid: Vec<f64>,
    /// Optional group id per term; grouped terms share one smoothing
    /// parameter and move together during the search. Default: one group per
    /// term.
    pub groups: Option<Vec<usize>>,
    pub max_sweeps: usize,
    pub edf_mode: EdfMode,
    pub ridge: f64,
}

impl Default for SelectOptions {
    fn default() -> Self {
        Self {
            criterion: Criterion::Bic,
            grid: default_lambda_grid(),
            groups: None,
            max_sweeps: 5,
            edf_mode: EdfMode::Exact,
            ridge: 0.0,
        }
    }
}

/// 12 log-spaced points spanning `[1e-4, 1e6]`.
pub fn default_lambda_grid() -> Vec<f64> {
    let (lo, hi, n) = (1e-4f64, 1e6f64, 12);
    (0..n)
        .map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

#[derive(Debug, Clone)]
pub struct SelectionResult {
    pub lambdas: Vec<f64>,
    pub criterion_value: f64,
    pub sweeps: usize,
    pub edf: Vec<f64>,
    pub edf_total: f64,
}

fn criterion_value(criterion: Criterion, n: usize, rss: f64, edf_total: f64) -> f64 {
    let n = n as f64;
    match criterion {
        Criterion::Bic => {
            let mean_rss = (rss / n).max(f64::MIN_POSITIVE);
            n * mean_rss.ln() + n.ln() * edf_total
        }
        Criterion::Gcv => {
            let denom = n - edf_total;
            if denom <= 0.0 {
                f64::INFINITY
            } else {
                n * rss / (denom * denom)
            }
        }
    }
}

/// Coordinate-wise search: cycle through the term groups, assigning each in
/// turn the grid value minimizing the global criterion with the others held
/// fixed, until a sweep changes nothing or the sweep budget is exhausted.
/// Deterministic; asserts that every group's EDF is non-increasing along the
/// ascending grid scan.
pub fn select_smoothing(
    terms: &[PenalizedTerm],
    y: &[f64],
    opts: &SelectOptions,
) -> Result<SelectionResult, SplineError> {
    let fit_opts = FitOptions {
        intercept: true,
        edf_mode: opts.edf_mode,
        ridge: opts.ridge,
        ..Default::default()
    };
    let system = PenalizedSystem::build(terms, y, &fit_opts)?;
    select_smoothing_with_system(&system, y.len(), opts)
}

/// Selection against a pre-built system (lets callers reuse the Gram matrix
/// for the final fit).
pub fn select_smoothing_with_system(
    system: &PenalizedSystem,
    n: usize,
    opts: &SelectOptions,
) -> Result<SelectionResult, SplineError> {
    let n_terms = system.offsets().len();
    assert!(n > 0 && n_terms > 0);
    let groups: Vec<usize> = match &opts.groups {
        Some(g) => {
            assert_eq!(g.len(), n_terms);
            g.clone()
        }
        None => (0..n_terms).collect(),
    };
    let group_ids: Vec<usize> = {
        let mut ids: Vec<usize> = groups.clone();
        ids.sort_unstable();
        ids.dedup();
        ids
    };
    assert!(!opts.grid.is_empty());
    let mut grid = opts.grid.clone();
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());

    // start from the grid midpoint
    let start = grid[grid.len() / 2];
    let mut lambdas = vec![start; n_terms];
    let mut best = system.solve(&lambdas, opts.edf_mode, opts.ridge)?;
    let mut best_val = criterion_value(opts.criterion, n, best.rss, best.edf_total);

    let mut sweeps = 0;
    for _ in 0..opts.max_sweeps {
        sweeps += 1;
        let mut changed = false;
        for &gid in &group_ids {
            let members: Vec<usize> =
                (0..n_terms).filter(|&i| groups[i] == gid).collect();
            let current = lambdas[members[0]];
            let mut best_lambda = current;
            let mut prev_group_edf = f64::INFINITY;
            for &cand in &grid {
                let mut trial = lambdas.clone();
                for &m in &members {
                    trial[m] = cand;
                }
                let sol = system.solve(&trial, opts.edf_mode, opts.ridge)?;
                let group_edf: f64 = members.iter().map(|&m| sol.edf[m]).sum();
                assert!(
                    group_edf <= prev_group_edf + 1e-6,
                    "EDF must be non-increasing in lambda: {group_edf} after {prev_group_edf}"
                );
                prev_group_edf = group_edf;
                let val = criterion_value(opts.criterion, n, sol.rss, sol.edf_total);
                if val < best_val {
                    best_val = val;
                    best_lambda = cand;
                    best = sol;
                }
            }
            if best_lambda != current {
                for &m in &members {
                    lambdas[m] = best_lambda;
                }
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    Ok(SelectionResult {
        lambdas,
        criterion_value: best_val,
        sweeps,
        edf: best.edf,
        edf_total: best.edf_total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spline::{BSplineBasis, KnotPlacement};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn randn(rng: &mut ChaCha8Rng) -> f64 {
        StandardNormal.sample(rng)
    }

    #[test]
    fn default_grid_is_twelve_log_points() {
        let g = default_lambda_grid();
        assert_eq!(g.len(), 12);
        assert!((g[0] - 1e-4).abs() < 1e-12);
        assert!((g[11] - 1e6).abs() / 1e6 < 1e-12);
        let r0 = g[1] / g[0];
        for w in g.windows(2) {
            assert!((w[1] / w[0] - r0).abs() < 1e-9);
        }
    }

    #[test]
    fn pure_noise_selects_heavy_smoothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 400;
        let xs: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 8.0).collect();
        let y: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let basis = BSplineBasis::from_data(&xs, 15, KnotPlacement::Quantile).unwrap();
        let term = PenalizedTerm::smooth_1d_centered("x", &basis, &xs);
        let sel = select_smoothing(&[term], &y, &SelectOptions::default()).unwrap();
        let grid = default_lambda_grid();
        assert!(
            sel.lambdas[0] >= grid[grid.len() - 3],
            "selected lambda {} too small for pure noise",
            sel.lambdas[0]
        );
        assert!(sel.edf[0] < 4.0, "edf {}", sel.edf[0]);
    }

    #[test]
    fn exact_cubic_selects_light_smoothing_and_matches_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 300;
        let xs: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        let truth = |x: f64| 0.5 * x * x * x - 0.2 * x * x + x;
        let y: Vec<f64> = xs.iter().map(|&x| truth(x)).collect();
        let basis = BSplineBasis::from_data(&xs, 12, KnotPlacement::Quantile).unwrap();
        let term = PenalizedTerm::smooth_1d_centered("x", &basis, &xs);
        let sel = select_smoothing(&[term.clone()], &y, &SelectOptions::default()).unwrap();
        assert!(sel.edf[0] >= 4.0 - 1.0, "edf {}", sel.edf[0]);
        let fit = super::super::fit_penalized_ls(
            &[term.clone()],
            &sel.lambdas,
            &y,
            &crate::spline::FitOptions::default(),
        )
        .unwrap();
        let pred = fit.predict(&[term]);
        let rms = (pred
            .iter()
            .zip(&y)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n as f64)
            .sqrt();
        assert!(rms < 1e-3, "rms {rms}");
    }

    #[test]
    fn single_term_coordinate_equals_exhaustive() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 200;
        let xs: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 5.0).collect();
        let y: Vec<f64> = xs
            .iter()
            .map(|&x| (1.3 * x).sin() + 0.3 * randn(&mut rng))
            .collect();
        let basis = BSplineBasis::from_data(&xs, 10, KnotPlacement::Quantile).unwrap();
        let term = PenalizedTerm::smooth_1d_centered("x", &basis, &xs);
        let opts = SelectOptions::default();
        let sel = select_smoothing(&[term.clone()], &y, &opts).unwrap();

        // exhaustive scan with the same system
        let fit_opts = crate::spline::FitOptions::default();
        let system = PenalizedSystem::build(&[term], &y, &fit_opts).unwrap();
        let mut best = f64::INFINITY;
        let mut best_lambda = f64::NAN;
        for &cand in &opts.grid {
            let sol = system.solve(&[cand], EdfMode::Exact, 0.0).unwrap();
            let val = criterion_value(Criterion::Bic, n, sol.rss, sol.edf_total);
            if val < best {
                best = val;
                best_lambda = cand;
            }
        }
        assert_eq!(sel.lambdas[0], best_lambda);
        assert!((sel.criterion_value - best).abs() < 1e-9);
    }

    #[test]
    fn grouped_terms_share_lambda() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 250;
        let xa: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 3.0).collect();
        let xb: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 3.0).collect();
        let y: Vec<f64> = (0..n)
            .map(|i| xa[i].sin() + (2.0 * xb[i]).cos() + 0.2 * randn(&mut rng))
            .collect();
        let ba = BSplineBasis::from_data(&xa, 9, KnotPlacement::Quantile).unwrap();
        let bb = BSplineBasis::from_data(&xb, 9, KnotPlacement::Quantile).unwrap();
        let terms = vec![
            PenalizedTerm::smooth_1d_centered("a", &ba, &xa),
            PenalizedTerm::smooth_1d_centered("b", &bb, &xb),
        ];
        let opts = SelectOptions { groups: Some(vec![0, 0]), ..Default::default() };
        let sel = select_smoothing(&terms, &y, &opts).unwrap();
        assert_eq!(sel.lambdas[0], sel.lambdas[1]);
    }

    #[test]
    fn selection_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 150;
        let xs: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let y: Vec<f64> = xs
            .iter()
            .map(|&x| x * x + 0.1 * randn(&mut rng))
            .collect();
        let basis = BSplineBasis::from_data(&xs, 8, KnotPlacement::Quantile).unwrap();
        let term = PenalizedTerm::smooth_1d_centered("x", &basis, &xs);
        let a = select_smoothing(&[term.clone()], &y, &SelectOptions::default()).unwrap();
        let b = select_smoothing(&[term], &y, &SelectOptions::default()).unwrap();
        assert_eq!(a.lambdas, b.lambdas);
        assert_eq!(a.criterion_value.to_bits(), b.criterion_value.to_bits());
    }
}
