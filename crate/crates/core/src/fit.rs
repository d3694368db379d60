//! Least-squares line fits and exponent fits over report tables.

use serde::Serialize;

use crate::error::{LabError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub samples: usize,
}

/// Ordinary least squares `y ≈ slope·x + intercept`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() {
        return Err(LabError::invalid("fit columns differ in length"));
    }
    let n = x.len();
    if n < 2 {
        return Err(LabError::invalid(format!("fit needs at least two samples, got {n}")));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(LabError::NonFinite("fit samples"));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    if sxx == 0.0 {
        return Err(LabError::invalid("fit abscissae are all equal"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x.iter().zip(y).map(|(a, b)| (b - slope * a - intercept).powi(2)).sum();
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - sse / syy };
    Ok(LinearFit { slope, intercept, r2, samples: n })
}

/// Fit of `log y` against `log x`.
pub fn loglog_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.iter().chain(y).any(|&v| !(v > 0.0)) {
        return Err(LabError::invalid("log-log fit needs positive values"));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    linear_fit(&lx, &ly)
}

/// Header plus string cells, as read back from a report CSV.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReportTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl ReportTable {
    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<String> = lines
            .next()
            .ok_or_else(|| LabError::invalid("report is empty"))?
            .split(',')
            .map(|s| s.trim().to_string())
            .collect();
        let mut rows = Vec::new();
        for (k, line) in lines.enumerate() {
            let cells: Vec<String> = line.split(',').map(|s| s.trim().to_string()).collect();
            if cells.len() != header.len() {
                return Err(LabError::invalid(format!(
                    "row {} has {} cells, header has {}",
                    k + 1,
                    cells.len(),
                    header.len()
                )));
            }
            rows.push(cells);
        }
        Ok(ReportTable { header, rows })
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| LabError::invalid(format!("no column named `{name}`")))
    }

    /// Numeric values of a column; unparsable cells become NaN.
    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let j = self.column_index(name)?;
        Ok(self.rows.iter().map(|r| r[j].parse().unwrap_or(f64::NAN)).collect())
    }

    /// Rows whose `column` cell equals `value` exactly.
    pub fn filter_eq(&self, column: &str, value: &str) -> Result<ReportTable> {
        let j = self.column_index(column)?;
        Ok(ReportTable {
            header: self.header.clone(),
            rows: self.rows.iter().filter(|r| r[j] == value).cloned().collect(),
        })
    }
}

/// Minimum number of rows an exponent fit accepts.
pub const MIN_FIT_ROWS: usize = 4;

/// Log-log fit of `y_col` against `x_col` over rows with `x` inside `window` (inclusive).
pub fn fit_exponent(table: &ReportTable, x_col: &str, y_col: &str, window: Option<(f64, f64)>) -> Result<LinearFit> {
    let x = table.column(x_col)?;
    let y = table.column(y_col)?;
    let (lo, hi) = window.unwrap_or((f64::NEG_INFINITY, f64::INFINITY));
    let (xs, ys): (Vec<f64>, Vec<f64>) = x.into_iter().zip(y).filter(|(a, _)| *a >= lo && *a <= hi).unzip();
    if xs.len() < MIN_FIT_ROWS {
        return Err(LabError::invalid(format!(
            "fit window holds {} rows, need at least {MIN_FIT_ROWS}",
            xs.len()
        )));
    }
    if xs.iter().chain(&ys).any(|&v| !(v > 0.0)) {
        return Err(LabError::invalid(format!("columns `{x_col}` and `{y_col}` must be positive in the window")));
    }
    loglog_fit(&xs, &ys)
}
