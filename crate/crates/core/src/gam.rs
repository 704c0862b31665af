//! The four additive-model variants over the 21-column input matrix:
//! all-pairs interactions (`full`), interactions restricted to the three
//! crucial inputs (`red`), the three-term univariate model (`simple`) and
//! the weather-free variant (`noweather`), each fit separately per target.

use crate::features::{FeatureMatrix, COL_LD2_T, COL_NAMES, COL_SOLAR, COL_L_T, N_COLS, WEATHER_COLS};
use crate::spline::{
    fit_with_system, select_smoothing_with_system, BSplineBasis, Criterion, EdfMode, FitOptions,
    KnotPlacement, PenalizedSystem, PenalizedTerm, SelectOptions, Sparse1dDesign, SplineError,
    TensorInteractionBasis,
};
use ndarray::Array1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GamError {
    #[error("unknown variant `{0}` (expected full|red|simple|noweather)")]
    UnknownVariant(String),
    #[error("insufficient data: {0} usable rows")]
    InsufficientData(usize),
    #[error("matrix has {got} columns, expected {expected}")]
    MissingColumn { expected: usize, got: usize },
    #[error("residual scale is zero; term statistics undefined")]
    ZeroScale,
    #[error(transparent)]
    Spline(#[from] SplineError),
    #[error("fit file error: {0}")]
    Persistence(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GamVariant {
    Full,
    Red,
    Simple,
    NoWeather,
}

impl GamVariant {
    pub fn parse(s: &str) -> Result<Self, GamError> {
        match s.trim().to_ascii_lowercase().as_str() {
            "full" | "gam.full" => Ok(Self::Full),
            "red" | "gam.red" => Ok(Self::Red),
            "simple" | "gam.simple" => Ok(Self::Simple),
            "noweather" | "gam.noweather" => Ok(Self::NoWeather),
            other => Err(GamError::UnknownVariant(other.into())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Full => "gam.full",
            Self::Red => "gam.red",
            Self::Simple => "gam.simple",
            Self::NoWeather => "gam.noweather",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Min,
    Max,
}

impl Target {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "min" => Some(Self::Min),
            "max" => Some(Self::Max),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Min => "min",
            Self::Max => "max",
        }
    }
}

/// Term lists of one model variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GamSpec {
    pub variant: GamVariant,
    pub target: Target,
    /// Column indices of the univariate terms.
    pub univariate: Vec<usize>,
    /// Column index pairs of the tensor interaction terms.
    pub pairs: Vec<(usize, usize)>,
    pub k0: usize,
    pub k1: usize,
    pub k2: usize,
}

/// Enumerates the term lists for a variant. The crucial columns for the
/// reduced variant are the load, its adjusted second difference and solar
/// irradiance; duplicate pairs arising from the three sums appear once.
pub fn build_spec(variant: GamVariant, target: Target) -> GamSpec {
    let all: Vec<usize> = (0..N_COLS).collect();
    let weatherless: Vec<usize> = all.iter().copied().filter(|c| !WEATHER_COLS.contains(c)).collect();
    let (univariate, pairs) = match variant {
        GamVariant::Full => (all.clone(), all_pairs(&all)),
        GamVariant::NoWeather => (weatherless.clone(), all_pairs(&weatherless)),
        GamVariant::Simple => (vec![COL_L_T, COL_LD2_T, COL_SOLAR], Vec::new()),
        GamVariant::Red => {
            let crucial = [COL_L_T, COL_LD2_T, COL_SOLAR];
            let mut pairs = Vec::new();
            for &c in &crucial {
                for j in 0..N_COLS {
                    if j == c {
                        continue;
                    }
                    let key = (c.min(j), c.max(j));
                    if !pairs.contains(&key) {
                        pairs.push(key);
                    }
                }
            }
            (all.clone(), pairs)
        }
    };
    GamSpec { variant, target, univariate, pairs, k0: 27, k1: 9, k2: 9 }
}

fn all_pairs(cols: &[usize]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..cols.len() {
        for j in (i + 1)..cols.len() {
            out.push((cols[i], cols[j]));
        }
    }
    out
}

/// How smoothing parameters are organized during selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LambdaMode {
    /// One smoothing parameter per term where the term count is small,
    /// otherwise one per term kind.
    #[default]
    Auto,
    PerTerm,
    /// Univariate terms share one parameter, tensor terms another.
    Grouped,
}

#[derive(Debug, Clone)]
pub struct GamFitOptions {
    pub placement: KnotPlacement,
    pub lambda_mode: LambdaMode,
    pub criterion: Criterion,
    pub grid: Vec<f64>,
    pub max_sweeps: usize,
    /// Skip selection entirely and fit at these per-term values.
    pub fixed_lambdas: Option<Vec<f64>>,
    /// Compute the Wald-style term statistics table (costs extra solves).
    pub term_stats: bool,
    /// Optional per-column discretization into at most this many bins before
    /// basis evaluation.
    pub discretize: Option<usize>,
    /// Number of coefficients above which the exact joint EDF is replaced by
    /// the per-term approximation.
    pub exact_edf_limit: usize,
}

impl Default for GamFitOptions {
    fn default() -> Self {
        Self {
            placement: KnotPlacement::Quantile,
            lambda_mode: LambdaMode::Auto,
            criterion: Criterion::Bic,
            grid: crate::spline::default_lambda_grid(),
            max_sweeps: 5,
            fixed_lambdas: None,
            term_stats: false,
            discretize: None,
            exact_edf_limit: 6000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UnivariateTermFit {
    pub col: usize,
    pub basis: BSplineBasis,
    /// Sum-to-zero projection (k0 x (k0-1)).
    pub z: ndarray::Array2<f64>,
    pub coeffs: Vec<f64>,
    pub lambda: f64,
    pub edf: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorTermFit {
    pub cols: (usize, usize),
    pub basis: TensorInteractionBasis,
    pub coeffs: Vec<f64>,
    pub lambda: f64,
    pub edf: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TermKind {
    Univariate,
    Interaction,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TermStat {
    pub label: String,
    pub kind: TermKind,
    pub edf: f64,
    /// Wald-type approximation; see [`term_stats`].
    pub f_stat: f64,
    pub low_edf: bool,
}

/// A fitted GAM variant for one target.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GamFit {
    pub spec: GamSpec,
    pub intercept: f64,
    pub univariate: Vec<UnivariateTermFit>,
    pub tensor: Vec<TensorTermFit>,
    pub sigma2: f64,
    pub rss: f64,
    pub n_rows: usize,
    pub edf_total: f64,
    pub term_stats: Option<Vec<TermStat>>,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub selection_sweeps: usize,
}

fn column(matrix: &FeatureMatrix, rows: &[usize], col: usize) -> Vec<f64> {
    rows.iter().map(|&r| matrix.x[[r, col]]).collect()
}

fn discretize_column(values: &mut [f64], bins: usize) {
    let mut sorted: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    sorted.dedup();
    if sorted.len() <= bins {
        return;
    }
    let edges: Vec<f64> =
        (1..bins).map(|i| crate::linalg::quantile_sorted(&sorted, i as f64 / bins as f64)).collect();
    let mids: Vec<f64> = {
        let mut m = Vec::with_capacity(bins);
        let lo = sorted[0];
        let hi = sorted[sorted.len() - 1];
        for b in 0..bins {
            let left = if b == 0 { lo } else { edges[b - 1] };
            let right = if b == bins - 1 { hi } else { edges[b] };
            m.push((left + right) / 2.0);
        }
        m
    };
    for v in values.iter_mut() {
        if v.is_finite() {
            let b = edges.partition_point(|e| e < v);
            *v = mids[b];
        }
    }
}

struct AssembledTerms {
    terms: Vec<PenalizedTerm>,
    uni_bases: Vec<BSplineBasis>,
    uni_z: Vec<ndarray::Array2<f64>>,
    tensor_bases: Vec<TensorInteractionBasis>,
}

/// Builds marginal bases, designs and penalized terms on the fit rows.
fn assemble_terms(
    spec: &GamSpec,
    matrix: &FeatureMatrix,
    rows: &[usize],
    opts: &GamFitOptions,
) -> Result<AssembledTerms, GamError> {
    let mut col_values: Vec<Option<Vec<f64>>> = vec![None; N_COLS];
    let mut need: Vec<usize> = spec.univariate.clone();
    for &(a, b) in &spec.pairs {
        need.push(a);
        need.push(b);
    }
    need.sort_unstable();
    need.dedup();
    for &c in &need {
        let mut v = column(matrix, rows, c);
        if let Some(bins) = opts.discretize {
            discretize_column(&mut v, bins.min(256));
        }
        col_values[c] = Some(v);
    }
    let values = |c: usize| col_values[c].as_ref().unwrap().as_slice();

    // univariate terms: k0 basis, sum-to-zero centering
    let mut terms = Vec::with_capacity(spec.univariate.len() + spec.pairs.len());
    let mut uni_bases = Vec::with_capacity(spec.univariate.len());
    let mut uni_z = Vec::with_capacity(spec.univariate.len());
    for &c in &spec.univariate {
        let basis = BSplineBasis::from_data(values(c), spec.k0, opts.placement)
            .map_err(GamError::Spline)?;
        let term = PenalizedTerm::smooth_1d_centered(COL_NAMES[c], &basis, values(c));
        if let crate::spline::DesignBlock::Sparse1d { z: Some(z), .. } = &term.design {
            uni_z.push(z.as_ref().clone());
        } else {
            unreachable!("centered 1d term always has a projection");
        }
        uni_bases.push(basis);
        terms.push(term);
    }

    // shared marginal bases and designs for the interaction pairs
    let mut margin_cols: Vec<usize> = spec.pairs.iter().flat_map(|&(a, b)| [a, b]).collect();
    margin_cols.sort_unstable();
    margin_cols.dedup();
    let mut margins: Vec<Option<(BSplineBasis, Arc<Sparse1dDesign>)>> = vec![None; N_COLS];
    for &c in &margin_cols {
        let basis = BSplineBasis::from_data(values(c), spec.k1, opts.placement)
            .map_err(GamError::Spline)?;
        let design = Arc::new(Sparse1dDesign::evaluate(&basis, values(c)));
        margins[c] = Some((basis, design));
    }

    let tensor_bases: Vec<TensorInteractionBasis> = spec
        .pairs
        .par_iter()
        .map(|&(a, b)| {
            let (ba, da) = margins[a].as_ref().unwrap();
            let (bb, db) = margins[b].as_ref().unwrap();
            let rows_iter = (0..da.n_rows()).map(|r| {
                ((da.start[r] as usize, da.vals[r]), (db.start[r] as usize, db.vals[r]))
            });
            TensorInteractionBasis::from_margin_rows(ba.clone(), bb.clone(), rows_iter)
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(GamError::Spline)?;

    for (i, &(a, b)) in spec.pairs.iter().enumerate() {
        let label = format!("{}:{}", COL_NAMES[a], COL_NAMES[b]);
        let da = margins[a].as_ref().unwrap().1.clone();
        let db = margins[b].as_ref().unwrap().1.clone();
        terms.push(PenalizedTerm::tensor(label, &tensor_bases[i], da, db));
    }

    Ok(AssembledTerms { terms, uni_bases, uni_z, tensor_bases })
}

/// Fits a GAM spec on the matrix's usable rows.
pub fn fit(spec: &GamSpec, matrix: &FeatureMatrix, opts: &GamFitOptions) -> Result<GamFit, GamError> {
    if matrix.x.ncols() != N_COLS {
        return Err(GamError::MissingColumn { expected: N_COLS, got: matrix.x.ncols() });
    }
    let rows = matrix.fit_rows();
    if rows.len() < 10 {
        return Err(GamError::InsufficientData(rows.len()));
    }
    let y: Vec<f64> = rows
        .iter()
        .map(|&r| match spec.target {
            Target::Min => matrix.y_min[r],
            Target::Max => matrix.y_max[r],
        })
        .collect();

    let assembled = assemble_terms(spec, matrix, &rows, opts)?;
    let n_terms = assembled.terms.len();
    let total_cols: usize = assembled.terms.iter().map(|t| t.ncols()).sum();
    let mut warnings = Vec::new();
    if rows.len() < total_cols / 2 {
        warnings.push(format!(
            "only {} rows for {} basis columns; fit is heavily penalty-driven",
            rows.len(),
            total_cols
        ));
    }

    let edf_mode =
        if total_cols <= opts.exact_edf_limit { EdfMode::Exact } else { EdfMode::Local };
    let fit_opts = FitOptions {
        intercept: true,
        edf_mode,
        ridge: 0.0,
        compute_hat: false,
        compute_cov: opts.term_stats,
    };
    let system = PenalizedSystem::build(&assembled.terms, &y, &fit_opts)?;

    let (lambdas, sweeps) = match &opts.fixed_lambdas {
        Some(l) => {
            assert_eq!(l.len(), n_terms, "fixed lambdas must cover every term");
            (l.clone(), 0)
        }
        None => {
            let groups = match opts.lambda_mode {
                LambdaMode::PerTerm => None,
                LambdaMode::Grouped => Some(group_by_kind(spec)),
                LambdaMode::Auto => {
                    if n_terms <= 8 {
                        None
                    } else {
                        Some(group_by_kind(spec))
                    }
                }
            };
            let sel_opts = SelectOptions {
                criterion: opts.criterion,
                grid: opts.grid.clone(),
                groups,
                max_sweeps: opts.max_sweeps,
                // selection always uses the cheap trace; the final fit below
                // reports the exact one where feasible
                edf_mode: if n_terms <= 8 { edf_mode } else { EdfMode::Local },
                ridge: 0.0,
            };
            let sel = select_smoothing_with_system(&system, rows.len(), &sel_opts)?;
            (sel.lambdas, sel.sweeps)
        }
    };

    let fitted = fit_with_retry(&system, &assembled.terms, &lambdas, &y, &fit_opts, &mut warnings)?;

    let n_uni = spec.univariate.len();
    let univariate: Vec<UnivariateTermFit> = (0..n_uni)
        .map(|i| UnivariateTermFit {
            col: spec.univariate[i],
            basis: assembled.uni_bases[i].clone(),
            z: assembled.uni_z[i].clone(),
            coeffs: fitted.coeffs[i].to_vec(),
            lambda: fitted.lambdas[i],
            edf: fitted.edf[i],
        })
        .collect();
    let tensor: Vec<TensorTermFit> = (0..spec.pairs.len())
        .map(|i| TensorTermFit {
            cols: spec.pairs[i],
            basis: assembled.tensor_bases[i].clone(),
            coeffs: fitted.coeffs[n_uni + i].to_vec(),
            lambda: fitted.lambdas[n_uni + i],
            edf: fitted.edf[n_uni + i],
        })
        .collect();

    let mut out = GamFit {
        spec: spec.clone(),
        intercept: fitted.intercept,
        univariate,
        tensor,
        sigma2: fitted.sigma2,
        rss: fitted.rss,
        n_rows: rows.len(),
        edf_total: fitted.edf_total,
        term_stats: None,
        warnings,
        selection_sweeps: sweeps,
    };
    if opts.term_stats {
        let cov = fitted.cov_blocks.as_ref().expect("cov requested");
        out.term_stats = Some(term_stats_from(&out, &fitted.coeffs, cov)?);
    }
    Ok(out)
}

fn group_by_kind(spec: &GamSpec) -> Vec<usize> {
    let mut g = vec![0usize; spec.univariate.len()];
    g.extend(std::iter::repeat(1).take(spec.pairs.len()));
    g
}

/// Cholesky failures at tiny smoothing get one escalating-ridge retry pass.
fn fit_with_retry(
    system: &PenalizedSystem,
    terms: &[PenalizedTerm],
    lambdas: &[f64],
    y: &[f64],
    opts: &FitOptions,
    warnings: &mut Vec<String>,
) -> Result<crate::spline::PenalizedFit, SplineError> {
    match fit_with_system(system, terms, lambdas, y, opts) {
        Ok(f) => Ok(f),
        Err(SplineError::SingularSystem { .. }) => {
            let scale: f64 = y.iter().map(|v| v * v).sum::<f64>().max(1.0);
            for mag in [1e-8, 1e-6] {
                let ridged = FitOptions { ridge: scale * mag, ..opts.clone() };
                if let Ok(f) = fit_with_system(system, terms, lambdas, y, &ridged) {
                    warnings.push(format!("singular system stabilized with ridge {:.1e}", scale * mag));
                    return Ok(f);
                }
            }
            fit_with_system(system, terms, lambdas, y, opts)
        }
        Err(e) => Err(e),
    }
}

/// Per-slot predictions for every row of the matrix; rows with missing
/// inputs predict NaN.
pub fn predict(fit: &GamFit, matrix: &FeatureMatrix) -> Result<Vec<f64>, GamError> {
    if matrix.x.ncols() != N_COLS {
        return Err(GamError::MissingColumn { expected: N_COLS, got: matrix.x.ncols() });
    }
    let n = matrix.n_rows();
    let mut out = vec![fit.intercept; n];
    for term in &fit.univariate {
        let xs = (0..n).map(|r| matrix.x[[r, term.col]]).collect::<Vec<f64>>();
        let rows = Sparse1dDesign::evaluate(&term.basis, &xs);
        let raw = term.z.dot(&Array1::from(term.coeffs.clone()));
        for r in 0..n {
            let s = rows.start[r] as usize;
            let mut acc = 0.0;
            for j in 0..rows.vals[r].len() {
                acc += rows.vals[r][j] * raw[s + j];
            }
            out[r] += acc;
        }
    }
    for term in &fit.tensor {
        let (a, b) = term.cols;
        let raw = term.basis.z.dot(&Array1::from(term.coeffs.clone()));
        let k2 = term.basis.margin_b.k;
        for r in 0..n {
            let xa = matrix.x[[r, a]];
            let xb = matrix.x[[r, b]];
            let (sa, va) = term.basis.margin_a.eval_point(xa);
            let (sb, vb) = term.basis.margin_b.eval_point(xb);
            let mut acc = 0.0;
            for p in 0..va.len() {
                let base = (sa + p) * k2 + sb;
                for q in 0..vb.len() {
                    acc += va[p] * vb[q] * raw[base + q];
                }
            }
            out[r] += acc;
        }
    }
    for r in 0..n {
        if !matrix.row_valid[r] {
            out[r] = f64::NAN;
        }
    }
    Ok(out)
}

fn term_stats_from(
    fit: &GamFit,
    coeffs: &[Array1<f64>],
    cov_blocks: &[ndarray::Array2<f64>],
) -> Result<Vec<TermStat>, GamError> {
    if fit.sigma2 <= 0.0 || !fit.sigma2.is_finite() {
        return Err(GamError::ZeroScale);
    }
    let n_uni = fit.univariate.len();
    let mut stats = Vec::with_capacity(coeffs.len());
    for (i, beta) in coeffs.iter().enumerate() {
        let (label, kind, edf) = if i < n_uni {
            (
                COL_NAMES[fit.univariate[i].col].to_string(),
                TermKind::Univariate,
                fit.univariate[i].edf,
            )
        } else {
            let t = &fit.tensor[i - n_uni];
            (
                format!("{}:{}", COL_NAMES[t.cols.0], COL_NAMES[t.cols.1]),
                TermKind::Interaction,
                t.edf,
            )
        };
        let pinv = crate::linalg::pseudo_inverse_sym(&cov_blocks[i], 1e-10)
            .map_err(SplineError::Linalg)?;
        let wald = beta.dot(&pinv.dot(beta));
        let f_stat = if edf > 1e-8 { (wald / edf) / fit.sigma2 } else { 0.0 };
        stats.push(TermStat { label, kind, edf, f_stat, low_edf: edf < 0.5 });
    }
    // univariate section then interactions, each sorted by EDF descending
    stats.sort_by(|a, b| {
        let ka = matches!(a.kind, TermKind::Interaction) as u8;
        let kb = matches!(b.kind, TermKind::Interaction) as u8;
        ka.cmp(&kb).then(b.edf.partial_cmp(&a.edf).unwrap())
    });
    Ok(stats)
}

/// Recomputes the term-statistics table of a fitted model against a matrix
/// (e.g. after reloading a persisted fit).
pub fn term_stats(
    fit: &GamFit,
    matrix: &FeatureMatrix,
    opts: &GamFitOptions,
) -> Result<Vec<TermStat>, GamError> {
    if fit.sigma2 <= 0.0 || !fit.sigma2.is_finite() {
        return Err(GamError::ZeroScale);
    }
    let refit = self::fit(
        &fit.spec,
        matrix,
        &GamFitOptions {
            term_stats: true,
            fixed_lambdas: Some(all_lambdas(fit)),
            ..opts.clone()
        },
    )?;
    Ok(refit.term_stats.expect("requested"))
}

fn all_lambdas(fit: &GamFit) -> Vec<f64> {
    fit.univariate
        .iter()
        .map(|t| t.lambda)
        .chain(fit.tensor.iter().map(|t| t.lambda))
        .collect()
}

/// Serializes a fit to the self-describing JSON document.
pub fn save_fit<W: std::io::Write>(fit: &GamFit, out: W) -> Result<(), GamError> {
    serde_json::to_writer(out, fit).map_err(|e| GamError::Persistence(e.to_string()))
}

pub fn load_fit<R: std::io::Read>(input: R) -> Result<GamFit, GamError> {
    serde_json::from_reader(input).map_err(|e| GamError::Persistence(e.to_string()))
}

/// Writes the term-statistics table as CSV (`term,kind,edf,f_approx`).
pub fn write_term_stats_csv<W: std::io::Write>(
    stats: &[TermStat],
    mut out: W,
    header_comments: &[String],
) -> std::io::Result<()> {
    for line in header_comments {
        writeln!(out, "# {line}")?;
    }
    writeln!(out, "term,kind,edf,f_approx,low_edf")?;
    for s in stats {
        let kind = match s.kind {
            TermKind::Univariate => "single",
            TermKind::Interaction => "interaction",
        };
        writeln!(out, "{},{},{},{},{}", s.label, kind, s.edf, s.f_stat, s.low_edf as u8)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{build_matrix, BuildOptions};
    use crate::synthgen::{generate, SynthConfig};
    use crate::timeseries::calendar_inputs;

    fn synth_matrix(days: usize, seed: u64) -> FeatureMatrix {
        let out = generate(&SynthConfig { days, seed, ..Default::default() }).unwrap();
        let cal = calendar_inputs(out.frame.timestamps());
        build_matrix(&out.frame, &cal, &BuildOptions::default()).unwrap()
    }

    #[test]
    fn red_spec_has_57_pairs() {
        let spec = build_spec(GamVariant::Red, Target::Min);
        assert_eq!(spec.univariate.len(), 21);
        assert_eq!(spec.pairs.len(), 57);
        // no duplicates, all normalized
        let mut seen = std::collections::HashSet::new();
        for &(a, b) in &spec.pairs {
            assert!(a < b);
            assert!(seen.insert((a, b)));
        }
    }

    #[test]
    fn full_spec_has_210_pairs() {
        let spec = build_spec(GamVariant::Full, Target::Max);
        assert_eq!(spec.univariate.len(), 21);
        assert_eq!(spec.pairs.len(), 210);
    }

    #[test]
    fn simple_spec_is_three_univariate() {
        let spec = build_spec(GamVariant::Simple, Target::Min);
        assert_eq!(spec.univariate, vec![COL_L_T, COL_LD2_T, COL_SOLAR]);
        assert!(spec.pairs.is_empty());
        assert_eq!((spec.k0, spec.k1, spec.k2), (27, 9, 9));
    }

    #[test]
    fn noweather_drops_weather_terms() {
        let spec = build_spec(GamVariant::NoWeather, Target::Min);
        assert_eq!(spec.univariate.len(), 15);
        assert_eq!(spec.pairs.len(), 15 * 14 / 2);
        for &(a, b) in &spec.pairs {
            assert!(!WEATHER_COLS.contains(&a) && !WEATHER_COLS.contains(&b));
        }
    }

    #[test]
    fn unknown_variant_errors() {
        assert!(matches!(GamVariant::parse("gam.medium"), Err(GamError::UnknownVariant(_))));
    }

    #[test]
    fn simple_fit_detects_solar_effect() {
        // Heavy solar coupling and little noise: the within-slot load drift
        // tracks the solar ramp, a clearly nonlinear function of solar level.
        let out = generate(&SynthConfig {
            days: 30,
            seed: 7,
            solar_coupling: 0.02,
            daily_amp: 1.0,
            noise_sd: 0.05,
            spike_rate: 0.0,
            ..Default::default()
        })
        .unwrap();
        let cal = calendar_inputs(out.frame.timestamps());
        let matrix = build_matrix(&out.frame, &cal, &BuildOptions::default()).unwrap();
        let spec = build_spec(GamVariant::Simple, Target::Min);
        let fit = fit(&spec, &matrix, &GamFitOptions::default()).unwrap();
        let solar = fit.univariate.iter().find(|t| t.col == COL_SOLAR).unwrap();
        assert!(solar.edf > 1.5, "solar edf {}", solar.edf);
    }

    #[test]
    fn zero_target_gives_zero_fit() {
        let mut matrix = synth_matrix(10, 3);
        matrix.y_min.fill(0.0);
        let spec = build_spec(GamVariant::Simple, Target::Min);
        let fit = fit(&spec, &matrix, &GamFitOptions::default()).unwrap();
        assert!(fit.intercept.abs() < 1e-10);
        for t in &fit.univariate {
            assert!(t.coeffs.iter().all(|c| c.abs() < 1e-10));
        }
        let pred = predict(&fit, &matrix).unwrap();
        for (i, p) in pred.iter().enumerate() {
            if matrix.row_valid[i] {
                assert!(p.abs() < 1e-9);
            }
        }
    }

    #[test]
    fn refit_is_bit_identical() {
        let matrix = synth_matrix(8, 11);
        let spec = build_spec(GamVariant::Simple, Target::Max);
        let a = fit(&spec, &matrix, &GamFitOptions::default()).unwrap();
        let b = fit(&spec, &matrix, &GamFitOptions::default()).unwrap();
        assert_eq!(a.intercept.to_bits(), b.intercept.to_bits());
        for (ta, tb) in a.univariate.iter().zip(&b.univariate) {
            assert_eq!(ta.lambda, tb.lambda);
            for (x, y) in ta.coeffs.iter().zip(&tb.coeffs) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn training_predictions_match_reported_rss() {
        let matrix = synth_matrix(10, 5);
        let spec = build_spec(GamVariant::Simple, Target::Min);
        let fit = fit(&spec, &matrix, &GamFitOptions::default()).unwrap();
        let pred = predict(&fit, &matrix).unwrap();
        let rows = matrix.fit_rows();
        let rss: f64 = rows.iter().map(|&r| (matrix.y_min[r] - pred[r]).powi(2)).sum();
        let rel = (rss - fit.rss).abs() / fit.rss.max(1e-12);
        assert!(rel < 1e-8, "rss {rss} vs {}", fit.rss);
        // residual mean is ~0 with an intercept present
        let mean_resid: f64 =
            rows.iter().map(|&r| matrix.y_min[r] - pred[r]).sum::<f64>() / rows.len() as f64;
        let sd_y = {
            let m = rows.iter().map(|&r| matrix.y_min[r]).sum::<f64>() / rows.len() as f64;
            (rows.iter().map(|&r| (matrix.y_min[r] - m).powi(2)).sum::<f64>()
                / rows.len() as f64)
                .sqrt()
        };
        assert!(mean_resid.abs() < 1e-8 * sd_y.max(1e-8));
    }

    #[test]
    fn prediction_is_linear_in_coefficients() {
        let matrix = synth_matrix(8, 9);
        let spec = build_spec(GamVariant::Simple, Target::Max);
        let mut fit = fit(&spec, &matrix, &GamFitOptions::default()).unwrap();
        let base = predict(&fit, &matrix).unwrap();
        fit.intercept *= 2.0;
        for t in fit.univariate.iter_mut() {
            for c in t.coeffs.iter_mut() {
                *c *= 2.0;
            }
        }
        let doubled = predict(&fit, &matrix).unwrap();
        for (a, b) in base.iter().zip(&doubled) {
            if a.is_finite() {
                assert!((2.0 * a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn prediction_concatenation_additivity() {
        let matrix = synth_matrix(8, 13);
        let spec = build_spec(GamVariant::Simple, Target::Min);
        let fit = fit(&spec, &matrix, &GamFitOptions::default()).unwrap();
        let all = predict(&fit, &matrix).unwrap();
        let half = matrix.n_rows() / 2;
        let a = predict(&fit, &matrix.slice_rows(0, half)).unwrap();
        let b = predict(&fit, &matrix.slice_rows(half, matrix.n_rows())).unwrap();
        let joined: Vec<f64> = a.into_iter().chain(b).collect();
        for (x, y) in all.iter().zip(&joined) {
            assert!(x.to_bits() == y.to_bits() || (x.is_nan() && y.is_nan()));
        }
    }

    #[test]
    fn serialization_roundtrip_preserves_predictions() {
        let matrix = synth_matrix(8, 21);
        let spec = build_spec(GamVariant::Simple, Target::Min);
        let fit = fit(&spec, &matrix, &GamFitOptions::default()).unwrap();
        let mut buf = Vec::new();
        save_fit(&fit, &mut buf).unwrap();
        let reloaded = load_fit(buf.as_slice()).unwrap();
        let a = predict(&fit, &matrix).unwrap();
        let b = predict(&reloaded, &matrix).unwrap();
        for (x, y) in a.iter().zip(&b) {
            if x.is_finite() {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn term_stats_sorted_and_flagged() {
        let matrix = synth_matrix(20, 2);
        let spec = build_spec(GamVariant::Simple, Target::Min);
        let fit = fit(
            &spec,
            &matrix,
            &GamFitOptions { term_stats: true, ..Default::default() },
        )
        .unwrap();
        let stats = fit.term_stats.as_ref().unwrap();
        assert_eq!(stats.len(), 3);
        for w in stats.windows(2) {
            assert!(w[0].edf >= w[1].edf);
        }
        for s in stats {
            assert!(s.f_stat.is_finite() && s.f_stat >= 0.0);
        }
    }

    #[test]
    fn term_stats_roundtrip_identical() {
        let matrix = synth_matrix(12, 4);
        let spec = build_spec(GamVariant::Simple, Target::Max);
        let opts = GamFitOptions { term_stats: true, ..Default::default() };
        let fit = fit(&spec, &matrix, &opts).unwrap();
        let mut buf = Vec::new();
        save_fit(&fit, &mut buf).unwrap();
        let reloaded = load_fit(buf.as_slice()).unwrap();
        let recomputed = term_stats(&reloaded, &matrix, &opts).unwrap();
        let orig = fit.term_stats.as_ref().unwrap();
        assert_eq!(orig.len(), recomputed.len());
        for (a, b) in orig.iter().zip(&recomputed) {
            assert_eq!(a.label, b.label);
            assert!((a.edf - b.edf).abs() < 1e-6);
            assert!((a.f_stat - b.f_stat).abs() < 1e-6 * (1.0 + a.f_stat));
        }
    }
}
