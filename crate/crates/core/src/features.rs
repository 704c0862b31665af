//! Input matrix construction: second-order central differences of the load,
//! the day-boundary adjustment, lag/lead alignment of all 21 input columns
//! and z-score standardization.

use crate::timeseries::{CalendarInputs, TimeSeriesFrame, SLOTS_PER_DAY};
use chrono::{DateTime, Timelike, Utc};
use ndarray::{Array1, Array2};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("series too short: need at least {need} points, got {got}")]
    SeriesTooShort { need: usize, got: usize },
    #[error("requested range is outside the available data")]
    RangeOutsideData,
    #[error("degenerate column `{0}`: zero variance on the fitting range")]
    DegenerateColumn(String),
    #[error("standardizer expects {expected} columns, matrix has {got}")]
    ColumnMismatch { expected: usize, got: usize },
}

/// Number of input columns.
pub const N_COLS: usize = 21;

/// Canonical column names, fixed order.
pub const COL_NAMES: [&str; N_COLS] = [
    "L_tm1", "L_t", "L_tp1", //
    "Ld2_tm4", "Ld2_tm3", "Ld2_tm2", "Ld2_tm1", "Ld2_t", "Ld2_tp1", "Ld2_tp2", "Ld2_tp3",
    "Ld2_tp4", //
    "Temp", "Solar", "WindN", "WindE", "Press", "Humid", //
    "D_t", "W_t", "A_t",
];

/// Role indices into the canonical column order.
pub const COL_L_TM1: usize = 0;
pub const COL_L_T: usize = 1;
pub const COL_L_TP1: usize = 2;
/// `Ld2_tm4` lives at 3; `Ld2_t` is 7; `Ld2_tp4` is 11.
pub const COL_LD2_T: usize = 7;
pub const COL_TEMP: usize = 12;
pub const COL_SOLAR: usize = 13;
pub const COL_D: usize = 18;
pub const COL_W: usize = 19;
pub const COL_A: usize = 20;

/// Weather column range (Temp..=Humid).
pub const WEATHER_COLS: std::ops::Range<usize> = 12..18;

/// Discrete second-order central difference `L''_t = L_{t-1} - 2 L_t + L_{t+1}`.
/// Endpoints are NaN.
pub fn dsocd(load: &[f64]) -> Result<Vec<f64>, FeatureError> {
    if load.len() < 3 {
        return Err(FeatureError::SeriesTooShort { need: 3, got: load.len() });
    }
    let mut out = vec![f64::NAN; load.len()];
    for t in 1..load.len() - 1 {
        out[t] = load[t - 1] - 2.0 * load[t] + load[t + 1];
    }
    Ok(out)
}

/// How the day-boundary replacement anchors the second of the two replaced
/// slots. `Consistent` interpolates both replaced slots from the nearest two
/// unreplaced values; `PaperLiteral` applies the printed weights verbatim,
/// which anchors on the other replaced slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub enum DsocdMode {
    #[default]
    Consistent,
    PaperLiteral,
}

/// Default slot-phase offset: the slot at wall clock 00:00 has phase 1, so
/// 23:30 has phase 0 and 23:00 has phase 47.
pub const DEFAULT_PHASE_OFFSET: usize = 1;

/// Phase (t mod 48 position) of each timestamp under a configurable offset.
pub fn slot_phases(timestamps: &[DateTime<Utc>], phase_offset: usize) -> Vec<usize> {
    timestamps
        .iter()
        .map(|ts| {
            let slot = ts.hour() as usize * 2 + ts.minute() as usize / 30;
            (slot + phase_offset) % SLOTS_PER_DAY
        })
        .collect()
}

/// Adjusted second-order central difference: phases 1..=46 pass through,
/// phases 0 and 47 are replaced by weighted combinations of neighbouring
/// values. Anchors outside the series (or missing) leave the element NaN.
pub fn adjusted_dsocd(l2: &[f64], phases: &[usize], mode: DsocdMode) -> Vec<f64> {
    assert_eq!(l2.len(), phases.len());
    let n = l2.len();
    let get = |i: isize| -> f64 {
        if i < 0 || i as usize >= n {
            f64::NAN
        } else {
            l2[i as usize]
        }
    };
    let mut out = vec![f64::NAN; n];
    for t in 0..n {
        let ti = t as isize;
        out[t] = match phases[t] {
            0 => get(ti - 2) / 3.0 + 2.0 * get(ti + 1) / 3.0,
            47 => match mode {
                DsocdMode::PaperLiteral => 2.0 * get(ti - 2) / 3.0 + get(ti + 1) / 3.0,
                DsocdMode::Consistent => 2.0 * get(ti - 1) / 3.0 + get(ti + 2) / 3.0,
            },
            _ => l2[t],
        };
    }
    out
}

/// Options for [`build_matrix`].
#[derive(Debug, Clone)]
pub struct BuildOptions {
    pub dsocd_mode: DsocdMode,
    pub phase_offset: usize,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self { dsocd_mode: DsocdMode::Consistent, phase_offset: DEFAULT_PHASE_OFFSET }
    }
}

/// The 21-column input matrix with targets and row metadata.
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    pub x: Array2<f64>,
    /// `load_min - load`, NaN when the extremes are absent.
    pub y_min: Array1<f64>,
    /// `load_max - load`, NaN when the extremes are absent.
    pub y_max: Array1<f64>,
    /// All 21 inputs finite.
    pub row_valid: Vec<bool>,
    /// Row contains at least one end-of-series imputed lead.
    pub imputed: Vec<bool>,
    pub timestamps: Vec<DateTime<Utc>>,
}

impl FeatureMatrix {
    pub fn n_rows(&self) -> usize {
        self.x.nrows()
    }

    /// Rows usable for fitting: valid inputs and both targets present.
    pub fn fit_rows(&self) -> Vec<usize> {
        (0..self.n_rows())
            .filter(|&i| self.row_valid[i] && self.y_min[i].is_finite() && self.y_max[i].is_finite())
            .collect()
    }

    /// Restriction to the given row index range.
    pub fn slice_rows(&self, start: usize, end: usize) -> FeatureMatrix {
        FeatureMatrix {
            x: self.x.slice(ndarray::s![start..end, ..]).to_owned(),
            y_min: self.y_min.slice(ndarray::s![start..end]).to_owned(),
            y_max: self.y_max.slice(ndarray::s![start..end]).to_owned(),
            row_valid: self.row_valid[start..end].to_vec(),
            imputed: self.imputed[start..end].to_vec(),
            timestamps: self.timestamps[start..end].to_vec(),
        }
    }

    /// Writes the matrix as CSV with the canonical header plus targets and
    /// row metadata.
    pub fn write_csv<W: std::io::Write>(
        &self,
        mut out: W,
        header_comments: &[String],
    ) -> std::io::Result<()> {
        for line in header_comments {
            writeln!(out, "# {line}")?;
        }
        let mut header = String::from("timestamp");
        for name in COL_NAMES {
            header.push(',');
            header.push_str(name);
        }
        header.push_str(",y_min,y_max,row_valid,imputed");
        writeln!(out, "{header}")?;
        let fmt = |v: f64| if v.is_finite() { v.to_string() } else { String::new() };
        for i in 0..self.n_rows() {
            let mut line = self.timestamps[i].format("%Y-%m-%dT%H:%M:%SZ").to_string();
            for j in 0..N_COLS {
                line.push(',');
                line.push_str(&fmt(self.x[[i, j]]));
            }
            line.push_str(&format!(
                ",{},{},{},{}",
                fmt(self.y_min[i]),
                fmt(self.y_max[i]),
                self.row_valid[i] as u8,
                self.imputed[i] as u8
            ));
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

/// Index of the last finite value, if any.
fn last_finite(series: &[f64]) -> Option<usize> {
    series.iter().rposition(|v| v.is_finite())
}

/// Value of `series` at `t + shift`. Past the last finite entry the value is
/// carried forward from it and flagged as imputed; before the start or on an
/// interior gap the value stays NaN. `lead_like` marks columns whose value
/// depends on future observations (leads, and the central differences whose
/// definition uses `L_{t+1}`), which are the only ones imputed at the end.
fn shifted(series: &[f64], last: Option<usize>, t: usize, shift: isize, lead_like: bool) -> (f64, bool) {
    let idx = t as isize + shift;
    if idx < 0 {
        return (f64::NAN, false);
    }
    let idx = idx as usize;
    match last {
        Some(last) if idx > last && lead_like => (series[last], true),
        _ if idx >= series.len() => (f64::NAN, false),
        _ => (series[idx], false),
    }
}

/// Assembles the full feature matrix for every slot of the frame.
///
/// Leads that fall past the end of the observed series are imputed by the
/// last available value of the same column and flagged; rows touching an
/// interior gap or the unobservable start margin are marked invalid.
pub fn build_matrix(
    frame: &TimeSeriesFrame,
    calendar: &CalendarInputs,
    options: &BuildOptions,
) -> Result<FeatureMatrix, FeatureError> {
    let n = frame.len();
    if n < 3 {
        return Err(FeatureError::SeriesTooShort { need: 3, got: n });
    }
    let load = frame.load();
    let l2 = dsocd(load)?;
    let phases = slot_phases(frame.timestamps(), options.phase_offset);
    let adj = adjusted_dsocd(&l2, &phases, options.dsocd_mode);

    let load_last = last_finite(load);
    let adj_last = last_finite(&adj);

    let mut x = Array2::<f64>::zeros((n, N_COLS));
    let mut imputed = vec![false; n];
    for t in 0..n {
        let mut imp = false;
        let mut put = |col: usize, val: (f64, bool), imp: &mut bool| {
            x[[t, col]] = val.0;
            *imp |= val.1;
        };
        put(COL_L_TM1, shifted(load, load_last, t, -1, false), &mut imp);
        put(COL_L_T, (load[t], false), &mut imp);
        put(COL_L_TP1, shifted(load, load_last, t, 1, true), &mut imp);
        // Every adjusted-difference value depends on leads (the difference
        // itself uses L_{t+1} and the boundary replacement reaches to t+2),
        // so the whole trailing NaN run of `adj` is end-of-series territory.
        for (j, shift) in (-4..=4).enumerate() {
            put(3 + j, shifted(&adj, adj_last, t, shift, true), &mut imp);
        }
        for (j, col) in WEATHER_COLS.enumerate() {
            put(col, (frame.weather(j)[t], false), &mut imp);
        }
        put(COL_D, (calendar.day_hours[t], false), &mut imp);
        put(COL_W, (calendar.week_hours[t], false), &mut imp);
        put(COL_A, (calendar.year_hours[t], false), &mut imp);
        imputed[t] = imp;
    }

    let row_valid: Vec<bool> =
        (0..n).map(|t| (0..N_COLS).all(|j| x[[t, j]].is_finite())).collect();
    let y_min = Array1::from_iter((0..n).map(|t| frame.load_min()[t] - load[t]));
    let y_max = Array1::from_iter((0..n).map(|t| frame.load_max()[t] - load[t]));

    Ok(FeatureMatrix {
        x,
        y_min,
        y_max,
        row_valid,
        imputed,
        timestamps: frame.timestamps().to_vec(),
    })
}

/// Per-column z-score statistics estimated on a training range. Columns with
/// zero variance are dropped (transformed to 0) and recorded.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    /// Degenerate columns transformed to zero instead of scaled.
    pub dropped: Vec<usize>,
}

impl Standardizer {
    /// Estimates statistics from the valid rows of the matrix (sample
    /// standard deviation, n-1 denominator).
    pub fn fit(matrix: &FeatureMatrix) -> Result<Self, FeatureError> {
        let rows: Vec<usize> =
            (0..matrix.n_rows()).filter(|&i| matrix.row_valid[i]).collect();
        if rows.len() < 2 {
            return Err(FeatureError::SeriesTooShort { need: 2, got: rows.len() });
        }
        let p = matrix.x.ncols();
        let mut mean = vec![0.0; p];
        let mut sd = vec![0.0; p];
        let mut dropped = Vec::new();
        for j in 0..p {
            let m = rows.iter().map(|&i| matrix.x[[i, j]]).sum::<f64>() / rows.len() as f64;
            let ss = rows.iter().map(|&i| (matrix.x[[i, j]] - m).powi(2)).sum::<f64>();
            let var = ss / (rows.len() - 1) as f64;
            mean[j] = m;
            if var > 0.0 {
                sd[j] = var.sqrt();
            } else {
                sd[j] = 1.0;
                dropped.push(j);
            }
        }
        Ok(Self { mean, sd, dropped })
    }

    /// Applies the stored statistics; targets are never standardized.
    pub fn transform(&self, matrix: &FeatureMatrix) -> Result<FeatureMatrix, FeatureError> {
        if matrix.x.ncols() != self.mean.len() {
            return Err(FeatureError::ColumnMismatch {
                expected: self.mean.len(),
                got: matrix.x.ncols(),
            });
        }
        let mut out = matrix.clone();
        for j in 0..self.mean.len() {
            let drop = self.dropped.contains(&j);
            for i in 0..out.n_rows() {
                out.x[[i, j]] = if drop {
                    if out.x[[i, j]].is_finite() {
                        0.0
                    } else {
                        f64::NAN
                    }
                } else {
                    (out.x[[i, j]] - self.mean[j]) / self.sd[j]
                };
            }
        }
        Ok(out)
    }

    /// Inverts [`Standardizer::transform`] (dropped columns are restored to
    /// their mean).
    pub fn inverse(&self, matrix: &FeatureMatrix) -> Result<FeatureMatrix, FeatureError> {
        if matrix.x.ncols() != self.mean.len() {
            return Err(FeatureError::ColumnMismatch {
                expected: self.mean.len(),
                got: matrix.x.ncols(),
            });
        }
        let mut out = matrix.clone();
        for j in 0..self.mean.len() {
            let drop = self.dropped.contains(&j);
            for i in 0..out.n_rows() {
                out.x[[i, j]] = if drop {
                    self.mean[j]
                } else {
                    matrix.x[[i, j]] * self.sd[j] + self.mean[j]
                };
            }
        }
        Ok(out)
    }
}
