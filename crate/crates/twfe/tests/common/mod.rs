//! Shared fixtures for the integration suites.

#![allow(dead_code)]

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use twfe::model::{IndexForm, ModelSpec};
use twfe::num::sigmoid;
use twfe::panel::PanelData;
use twfe::Family;

/// Lagged-outcome matrix: lag(i, 0) = y_init_i, lag(i, t) = y_{i,t-1}.
pub fn lag_matrix(y: &Array2<f64>, y_init: &Array1<f64>) -> Array2<f64> {
    let (n, t) = y.dim();
    Array2::from_shape_fn((n, t), |(i, s)| if s == 0 { y_init[i] } else { y[(i, s - 1)] })
}

/// Row means, column means, and grand mean of a matrix.
pub fn means(e: &Array2<f64>) -> (Array1<f64>, Array1<f64>, f64) {
    let (n, t) = e.dim();
    let rows = Array1::from_shape_fn(n, |i| e.row(i).mean().unwrap());
    let cols = Array1::from_shape_fn(t, |s| e.column(s).mean().unwrap());
    let grand = e.mean().unwrap();
    (rows, cols, grand)
}

/// Within transformation e_it - e_i. - e_.t + e_.. .
pub fn double_demean(e: &Array2<f64>) -> Array2<f64> {
    let (rows, cols, grand) = means(e);
    Array2::from_shape_fn(e.dim(), |(i, s)| e[(i, s)] - rows[i] - cols[s] + grand)
}

/// Additive binary panel drawn from its own model, with mild effects and a
/// redraw loop that rejects constant outcome rows/columns (those have no
/// finite fixed-effect maximizer). Static draws ignore `rho`.
pub fn binary_additive_panel(
    family: Family,
    dynamic: bool,
    n: usize,
    t: usize,
    seed: u64,
) -> (PanelData, ModelSpec) {
    let link = |x: f64| match family {
        Family::Logit => sigmoid(x),
        Family::Probit => twfe::num::norm_cdf(x),
        Family::Gaussian => unreachable!("binary fixture"),
    };
    let (rho, beta) = (0.3, 0.5);
    for sub in 0..128u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ sub.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let x = Array2::from_shape_fn((n, t), |_| rng.sample::<f64, _>(StandardNormal));
        let alpha0 = Array1::from_shape_fn(n, |_| 0.4 * rng.sample::<f64, _>(StandardNormal));
        let gamma0 = Array1::from_shape_fn(t, |_| 0.4 * rng.sample::<f64, _>(StandardNormal));
        let y_init = Array1::from_shape_fn(n, |_| f64::from(rng.gen::<f64>() < 0.5));
        let mut y = Array2::zeros((n, t));
        for i in 0..n {
            let mut lag = y_init[i];
            for s in 0..t {
                let idx =
                    if dynamic { rho * lag } else { 0.0 } + beta * x[(i, s)] + alpha0[i] + gamma0[s];
                y[(i, s)] = f64::from(rng.gen::<f64>() < link(idx));
                lag = y[(i, s)];
            }
        }
        let varied = |sum: f64, len: usize| sum > 0.5 && sum < len as f64 - 0.5;
        if (0..n).all(|i| varied(y.row(i).sum(), t))
            && (0..t).all(|s| varied(y.column(s).sum(), n))
        {
            let init = if dynamic { Some(y_init) } else { None };
            let data = PanelData::new(y, init, vec![("x".into(), x)], None, None).unwrap();
            let spec =
                ModelSpec::new(family, IndexForm::AdditiveFe, usize::from(dynamic), 1).unwrap();
            return (data, spec);
        }
    }
    panic!("no non-degenerate draw within 128 attempts");
}

/// Unrestricted gaussian AR(1)-shaped panel: arbitrary continuous outcomes
/// and initial values (the profiler contract doesn't require model truth).
pub fn gaussian_ar1_panel(n: usize, t: usize, seed: u64) -> (PanelData, ModelSpec) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y = Array2::from_shape_fn((n, t), |_| rng.sample::<f64, _>(StandardNormal));
    let y_init = Array1::from_shape_fn(n, |_| rng.sample::<f64, _>(StandardNormal));
    let data = PanelData::new(y, Some(y_init), vec![], None, None).unwrap();
    let spec = ModelSpec::new(Family::Gaussian, IndexForm::AdditiveFe, 1, 0).unwrap();
    (data, spec)
}
