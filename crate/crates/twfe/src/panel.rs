//! Balanced rectangular panel container.

use crate::error::Error;
use crate::Result;
use ndarray::{Array1, Array2};

/// A balanced `N×T` outcome panel with named covariate matrices.
///
/// Rows are units, columns are periods. When the model is dynamic the realized
/// lagged outcome is stored explicitly (`y_lag`), built from the initial
/// condition and the outcome path at construction time. Keeping realized lags
/// as data means later row/column subsetting (sanitization) cannot corrupt the
/// lag structure: the lag of a kept period stays whatever was realized before
/// it, even if the preceding period was dropped as an outcome row.
#[derive(Debug, Clone)]
pub struct PanelData {
    pub y: Array2<f64>,
    /// Realized `Y_{i,t−1}` aligned with `y`; present iff the panel carries
    /// initial conditions for a dynamic model.
    pub y_lag: Option<Array2<f64>>,
    /// Covariates entering the slope block, in θ order after the lag.
    pub x: Vec<Array2<f64>>,
    pub x_names: Vec<String>,
    /// Unit-loading covariate for the forms that interact `α_i` with data.
    pub u: Option<Array2<f64>>,
    /// Period-loading covariate for the forms that interact `γ_t` with data.
    pub v: Option<Array2<f64>>,
    pub unit_labels: Vec<String>,
    pub time_labels: Vec<String>,
}

impl PanelData {
    /// Build and shape-check a panel. `y_init` supplies `Y_{i,0}` and turns on
    /// lag bookkeeping.
    pub fn new(
        y: Array2<f64>,
        y_init: Option<Array1<f64>>,
        x: Vec<(String, Array2<f64>)>,
        u: Option<Array2<f64>>,
        v: Option<Array2<f64>>,
    ) -> Result<Self> {
        let (n, t) = y.dim();
        if n == 0 || t == 0 {
            return Err(Error::EmptyPanel);
        }
        let shape_ok = |m: &Array2<f64>| m.dim() == (n, t);
        for (name, m) in &x {
            if !shape_ok(m) {
                return Err(Error::InvalidSpec(format!(
                    "covariate {name} has shape {:?}, expected ({n}, {t})",
                    m.dim()
                )));
            }
        }
        if let Some(m) = &u {
            if !shape_ok(m) {
                return Err(Error::InvalidSpec("U covariate shape mismatch".into()));
            }
        }
        if let Some(m) = &v {
            if !shape_ok(m) {
                return Err(Error::InvalidSpec("V covariate shape mismatch".into()));
            }
        }
        let y_lag = match y_init {
            Some(init) => {
                if init.len() != n {
                    return Err(Error::InvalidSpec(format!(
                        "y_init has length {}, expected {n}",
                        init.len()
                    )));
                }
                let mut lag = Array2::<f64>::zeros((n, t));
                for i in 0..n {
                    lag[(i, 0)] = init[i];
                    for s in 1..t {
                        lag[(i, s)] = y[(i, s - 1)];
                    }
                }
                Some(lag)
            }
            None => None,
        };
        let (x_names, x): (Vec<_>, Vec<_>) = x.into_iter().unzip();
        Ok(Self {
            y,
            y_lag,
            x,
            x_names,
            u,
            v,
            unit_labels: (0..n).map(|i| format!("u{}", i + 1)).collect(),
            time_labels: (0..t).map(|t| format!("t{}", t + 1)).collect(),
        })
    }

    pub fn with_labels(mut self, unit_labels: Vec<String>, time_labels: Vec<String>) -> Result<Self> {
        if unit_labels.len() != self.n_units() || time_labels.len() != self.n_periods() {
            return Err(Error::InvalidSpec("label lengths do not match panel shape".into()));
        }
        self.unit_labels = unit_labels;
        self.time_labels = time_labels;
        Ok(self)
    }

    pub fn n_units(&self) -> usize {
        self.y.nrows()
    }

    pub fn n_periods(&self) -> usize {
        self.y.ncols()
    }

    /// Initial conditions (the lag of the first kept period), when dynamic.
    pub fn y_init(&self) -> Option<Array1<f64>> {
        self.y_lag.as_ref().map(|lag| lag.column(0).to_owned())
    }

    /// Keep the listed units and periods (indices must be strictly increasing).
    pub fn subset(&self, units: &[usize], periods: &[usize]) -> Result<Self> {
        if units.is_empty() || periods.is_empty() {
            return Err(Error::EmptyPanel);
        }
        let take = |m: &Array2<f64>| {
            Array2::from_shape_fn((units.len(), periods.len()), |(a, b)| m[(units[a], periods[b])])
        };
        Ok(Self {
            y: take(&self.y),
            y_lag: self.y_lag.as_ref().map(&take),
            x: self.x.iter().map(&take).collect(),
            x_names: self.x_names.clone(),
            u: self.u.as_ref().map(&take),
            v: self.v.as_ref().map(&take),
            unit_labels: units.iter().map(|&i| self.unit_labels[i].clone()).collect(),
            time_labels: periods.iter().map(|&t| self.time_labels[t].clone()).collect(),
        })
    }
}
