//! Long-format panel ingestion: one row per (unit, period), pivoted to a
//! balanced N×T panel with canonical unit/period order, so any row shuffle of
//! the same file produces the identical panel.

use crate::csvio::{detect_delimiter, split_line};
use crate::error::{CliError, CliResult};
use ndarray::{Array1, Array2};
use std::collections::BTreeMap;
use twfe::PanelData;

/// Which columns play which role in the long file.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnRoles {
    pub unit: String,
    pub time: String,
    pub outcome: String,
    #[serde(default)]
    pub x: Vec<String>,
    #[serde(default)]
    pub u: Option<String>,
    #[serde(default)]
    pub v: Option<String>,
}

/// Labels sort numerically when every one parses as a number, otherwise
/// lexicographically; either way the order is a property of the label set,
/// not of row order.
fn canonical_sort(labels: &mut Vec<String>) {
    let numeric: Option<Vec<f64>> = labels.iter().map(|s| s.parse::<f64>().ok()).collect();
    match numeric {
        Some(values) => {
            let mut pairs: Vec<(f64, String)> =
                values.into_iter().zip(labels.iter().cloned()).collect();
            pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then_with(|| a.1.cmp(&b.1)));
            *labels = pairs.into_iter().map(|p| p.1).collect();
        }
        None => labels.sort(),
    }
}

struct RawCell {
    line: usize,
    outcome: f64,
    x: Vec<f64>,
    u: Option<f64>,
    v: Option<f64>,
}

/// Parse delimiter-separated long-format text into a balanced panel. With
/// `lag_order = 1` the first period of each unit becomes the initial
/// condition and the outcome panel keeps the remaining T−1 periods.
pub fn ingest_str(text: &str, roles: &ColumnRoles, lag_order: usize) -> CliResult<PanelData> {
    let mut lines = text.lines().enumerate();
    let (_, header_line) = lines
        .next()
        .ok_or_else(|| CliError::Config("data file is empty".into()))?;
    let delim = detect_delimiter(header_line);
    let header: Vec<String> =
        split_line(header_line, delim).iter().map(|h| h.trim().to_string()).collect();

    let col = |name: &str| -> CliResult<usize> {
        header.iter().position(|h| h == name).ok_or_else(|| {
            CliError::Config(format!(
                "column {name:?} not found; file has columns {}",
                header.join(", ")
            ))
        })
    };
    let unit_col = col(&roles.unit)?;
    let time_col = col(&roles.time)?;
    let outcome_col = col(&roles.outcome)?;
    let x_cols: Vec<usize> = roles.x.iter().map(|n| col(n)).collect::<CliResult<_>>()?;
    let u_col = roles.u.as_ref().map(|n| col(n)).transpose()?;
    let v_col = roles.v.as_ref().map(|n| col(n)).transpose()?;

    let mut cells: BTreeMap<(String, String), RawCell> = BTreeMap::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = idx + 1; // 1-based, counting the header as line 1
        let fields = split_line(line, delim);
        if fields.len() != header.len() {
            return Err(CliError::Config(format!(
                "line {line_no} has {} fields, expected {}",
                fields.len(),
                header.len()
            )));
        }
        let numeric = |c: usize| -> CliResult<f64> {
            fields[c].trim().parse::<f64>().map_err(|_| CliError::NonNumericField {
                line: line_no,
                column: header[c].clone(),
                value: fields[c].trim().to_string(),
            })
        };
        let unit = fields[unit_col].trim().to_string();
        let time = fields[time_col].trim().to_string();
        let cell = RawCell {
            line: line_no,
            outcome: numeric(outcome_col)?,
            x: x_cols.iter().map(|&c| numeric(c)).collect::<CliResult<_>>()?,
            u: u_col.map(numeric).transpose()?,
            v: v_col.map(numeric).transpose()?,
        };
        if let Some(previous) = cells.insert((unit.clone(), time.clone()), cell) {
            let _ = previous.line;
            return Err(CliError::DuplicateCell { line: line_no, unit, time });
        }
    }
    if cells.is_empty() {
        return Err(CliError::Config("data file has a header but no rows".into()));
    }

    let mut unit_labels: Vec<String> = Vec::new();
    let mut time_labels: Vec<String> = Vec::new();
    for (unit, time) in cells.keys() {
        if !unit_labels.contains(unit) {
            unit_labels.push(unit.clone());
        }
        if !time_labels.contains(time) {
            time_labels.push(time.clone());
        }
    }
    canonical_sort(&mut unit_labels);
    canonical_sort(&mut time_labels);

    // Balance: every unit needs every period.
    let mut gaps = Vec::new();
    for unit in &unit_labels {
        let missing: Vec<&str> = time_labels
            .iter()
            .filter(|t| !cells.contains_key(&(unit.clone(), (*t).clone())))
            .map(|t| t.as_str())
            .collect();
        if !missing.is_empty() {
            gaps.push(format!("unit {unit} missing periods [{}]", missing.join(", ")));
        }
    }
    if !gaps.is_empty() {
        return Err(CliError::UnbalancedPanel { report: gaps });
    }

    let n = unit_labels.len();
    let t_file = time_labels.len();
    let mut y = Array2::zeros((n, t_file));
    let mut x = vec![Array2::zeros((n, t_file)); x_cols.len()];
    let mut u = u_col.map(|_| Array2::zeros((n, t_file)));
    let mut v = v_col.map(|_| Array2::zeros((n, t_file)));
    for (i, unit) in unit_labels.iter().enumerate() {
        for (s, time) in time_labels.iter().enumerate() {
            let cell = &cells[&(unit.clone(), time.clone())];
            y[(i, s)] = cell.outcome;
            for (k, &val) in cell.x.iter().enumerate() {
                x[k][(i, s)] = val;
            }
            if let Some(m) = u.as_mut() {
                m[(i, s)] = cell.u.unwrap();
            }
            if let Some(m) = v.as_mut() {
                m[(i, s)] = cell.v.unwrap();
            }
        }
    }

    // A dynamic model consumes the first observed period as the initial
    // condition; everything else is aligned to the remaining periods.
    let (y, y_init, x, u, v, kept_times) = if lag_order > 0 {
        if t_file < 2 {
            return Err(CliError::Config(format!(
                "a dynamic model needs at least 2 periods per unit, found {t_file}"
            )));
        }
        let trim = |m: &Array2<f64>| m.slice(ndarray::s![.., 1..]).to_owned();
        let y_init: Array1<f64> = y.column(0).to_owned();
        (
            trim(&y),
            Some(y_init),
            x.iter().map(trim).collect::<Vec<_>>(),
            u.as_ref().map(trim),
            v.as_ref().map(trim),
            time_labels[1..].to_vec(),
        )
    } else {
        (y, None, x, u, v, time_labels.clone())
    };

    let named: Vec<(String, Array2<f64>)> =
        roles.x.iter().cloned().zip(x.into_iter()).collect();
    let mut panel = PanelData::new(y, y_init, named, u, v)?;
    panel.unit_labels = unit_labels;
    panel.time_labels = kept_times;
    Ok(panel)
}

/// Read and parse a long-format panel file.
pub fn ingest(path: &std::path::Path, roles: &ColumnRoles, lag_order: usize) -> CliResult<PanelData> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    ingest_str(&text, roles, lag_order)
}
