//! Growth diagnostics for the fixed-effect Hessian.
//!
//! The correction theory leans on the two Schur complements of the expected
//! incidental-parameter Hessian H at the pseudo-true effects φ(θ),
//!
//! ```text
//!   A = H_γγ' − H_γα' H_αα'⁻¹ H_αγ'     (T×T, unit effects eliminated)
//!   B = H_αα' − H_αγ' H_γγ'⁻¹ H_γα'     (N×N, time effects eliminated)
//! ```
//!
//! staying bounded in the sense that 𝐀_T = ‖A⁻¹‖∞/T is T-invariant and
//! 𝐁_N = ‖B⁻¹‖∞/N is N-invariant. This module checks that numerically: it
//! simulates one panel per grid point, builds the blocks analytically from
//! the expected likelihood, and runs a t-test of zero mean on the first
//! differences of log 𝐀_T (or log 𝐁_N) — a trend-free difference series is
//! what invariance looks like.
//!
//! Index forms whose effects enter additively carry an exact shift
//! redundancy (α_i + c, γ_t − c), which makes A and B singular by
//! construction: their row sums cancel identically. The inverse norm is
//! therefore measured on the identified subspace — the Moore–Penrose inverse
//! restricted to the complement of the constant vector — which is also what
//! the estimation machinery's sum constraints pin down. Forms whose loadings
//! vary across both dimensions need no such projection.

use crate::error::Error;
use crate::linalg::{inf_norm, Lu};
use crate::model::{build_index_ctx, IndexForm, ModelSpec};
use crate::profile::{fe_pass, profile_expected_fixed_effects, EvalTarget, FePass, ProfileOpts};
use crate::sim::{generate, rep_seed, DgpDesign};
use crate::Result;
use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

/// Which effect block survives the elimination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchurSide {
    /// Eliminate unit effects, keep the T×T time-effect complement A; the
    /// panel grid varies T with N fixed.
    TimeEffects,
    /// Eliminate time effects, keep the N×N unit-effect complement B; the
    /// panel grid varies N with T fixed.
    UnitEffects,
}

impl SchurSide {
    pub fn name(self) -> &'static str {
        match self {
            SchurSide::TimeEffects => "A_T",
            SchurSide::UnitEffects => "B_N",
        }
    }
}

/// Settings for one invariance check.
#[derive(Debug, Clone)]
pub struct SchurOpts {
    /// The non-varying panel dimension.
    pub fixed_dim: usize,
    /// Strictly increasing sizes for the varying dimension.
    pub grid: Vec<usize>,
    pub seed: u64,
    /// Upper bound on max(N, T); the complement is dense.
    pub dense_cap: usize,
    pub profile: ProfileOpts,
}

impl Default for SchurOpts {
    fn default() -> Self {
        Self {
            fixed_dim: 100,
            grid: (1..=20).map(|k| 10 * k).collect(),
            seed: 1,
            dense_cap: 1200,
            profile: ProfileOpts { tol: 1e-12, ..Default::default() },
        }
    }
}

/// One scaled-inverse-norm series with its invariance test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchurSeries {
    pub design_tag: String,
    pub side: SchurSide,
    /// Offset applied to every θ₀ coordinate before profiling.
    pub delta: f64,
    pub fixed_dim: usize,
    pub grid: Vec<usize>,
    /// ‖A⁻¹‖∞/T (or ‖B⁻¹‖∞/N) per grid point; positive and finite.
    pub scaled_norms: Vec<f64>,
    /// First differences of the log series.
    pub log_diffs: Vec<f64>,
    /// Mean of the differences (the regression-on-a-constant estimate).
    pub mean_estimate: f64,
    pub t_statistic: f64,
    /// Two-sided p-value of zero mean; NaN when fewer than two differences.
    pub p_value: f64,
}

/// Dense Schur complement from the arrow blocks of one expected-Hessian pass.
/// `diag_a`/`diag_g` are the diagonals of H_αα'/H_γγ' and `cross` is H_αγ';
/// both diagonal blocks are diagonal matrices because each observation
/// touches exactly one α and one γ.
pub(crate) fn schur_matrix(pass: &FePass, side: SchurSide) -> Array2<f64> {
    let n = pass.diag_a.len();
    let t = pass.diag_g.len();
    match side {
        SchurSide::TimeEffects => {
            let mut a = Array2::zeros((t, t));
            for s in 0..t {
                a[(s, s)] = pass.diag_g[s];
            }
            for i in 0..n {
                let inv = 1.0 / pass.diag_a[i];
                for s in 0..t {
                    let cis = pass.cross[(i, s)];
                    if cis == 0.0 {
                        continue;
                    }
                    for r in 0..t {
                        a[(s, r)] -= cis * pass.cross[(i, r)] * inv;
                    }
                }
            }
            a
        }
        SchurSide::UnitEffects => {
            let mut b = Array2::zeros((n, n));
            for i in 0..n {
                b[(i, i)] = pass.diag_a[i];
            }
            for s in 0..t {
                let inv = 1.0 / pass.diag_g[s];
                for i in 0..n {
                    let cis = pass.cross[(i, s)];
                    if cis == 0.0 {
                        continue;
                    }
                    for j in 0..n {
                        b[(i, j)] -= cis * pass.cross[(j, s)] * inv;
                    }
                }
            }
            b
        }
    }
}

fn check_strictly_negative(diag: &Array1<f64>, which: &'static str) -> Result<()> {
    for (index, &value) in diag.iter().enumerate() {
        if value >= 0.0 {
            return Err(Error::NonNegativeHessian { which, index, value });
        }
    }
    Ok(())
}

/// Orthonormal basis of the complement of the constant vector in R^m
/// (Helmert contrasts): column k has k entries 1/√(k(k+1)) followed by
/// −k/√(k(k+1)).
fn helmert_basis(m: usize) -> Array2<f64> {
    let mut q = Array2::zeros((m, m - 1));
    for k in 1..m {
        let norm = (k as f64 * (k as f64 + 1.0)).sqrt();
        for r in 0..k {
            q[(r, k - 1)] = 1.0 / norm;
        }
        q[(k, k - 1)] = -(k as f64) / norm;
    }
    q
}

/// ‖M⁻¹‖∞, with `project` selecting the Moore–Penrose inverse on the
/// complement of the constant vector (for complements that are singular by
/// the shift redundancy) instead of the plain inverse.
pub(crate) fn inverse_inf_norm(m: &Array2<f64>, project: bool) -> Result<f64> {
    let fail = || Error::SingularHessian("Schur complement of the fixed-effect Hessian".into());
    let norm = if project {
        let q = helmert_basis(m.nrows());
        let reduced = q.t().dot(m).dot(&q);
        let lu = Lu::new(&reduced).ok_or_else(fail)?;
        let pinv = q.dot(&lu.inverse()).dot(&q.t());
        inf_norm(pinv.view())
    } else {
        let lu = Lu::new(m).ok_or_else(fail)?;
        inf_norm(lu.inverse().view())
    };
    if !norm.is_finite() || norm <= 0.0 {
        return Err(Error::DegenerateVariance(format!(
            "inverse norm of the Schur complement is {norm}"
        )));
    }
    Ok(norm)
}

/// Scaled inverse norm at one panel size: simulate, profile the pseudo-true
/// effects at θ, assemble the complement from expected second derivatives,
/// and divide the inverse norm by the varying dimension.
fn scaled_norm_at(
    design: &DgpDesign,
    spec: &ModelSpec,
    theta: &Array1<f64>,
    side: SchurSide,
    dim: usize,
    opts: &SchurOpts,
    seed: u64,
) -> Result<f64> {
    let (n, t) = match side {
        SchurSide::TimeEffects => (opts.fixed_dim, dim),
        SchurSide::UnitEffects => (dim, opts.fixed_dim),
    };
    let sized = design.clone().with_size(n, t);
    let (data, truth) = generate(&sized, seed)?;
    // Expected-likelihood curvature is interior for every cell, so no
    // degenerate-cell sanitize step is needed on this path.
    let profile =
        profile_expected_fixed_effects(&data, spec, theta.as_slice().unwrap(), &truth.p, &opts.profile)?;
    if !profile.converged {
        return Err(Error::NoConvergence {
            what: "pseudo-true fixed-effect profile",
            iterations: profile.iterations,
            grad_norm: profile.grad_norm,
        });
    }
    let ctx = build_index_ctx(spec, &data, theta.as_slice().unwrap())?;
    let pass = fe_pass(
        spec,
        &data,
        &ctx,
        EvalTarget::Expected(&truth.p),
        &profile.alpha_hat,
        &profile.gamma_hat,
        true,
    )?;
    match side {
        SchurSide::TimeEffects => check_strictly_negative(&pass.diag_a, "alpha")?,
        SchurSide::UnitEffects => check_strictly_negative(&pass.diag_g, "gamma")?,
    }
    let complement = schur_matrix(&pass, side);
    let project = spec.index_form != IndexForm::CovariateLoadedFe;
    Ok(inverse_inf_norm(&complement, project)? / dim as f64)
}

/// Mean, t-statistic, and two-sided p-value for H₀: E[diff] = 0, from a
/// regression of the differences on a constant (df = #diffs − 1).
fn mean_zero_t_test(diffs: &[f64]) -> (f64, f64, f64) {
    let m = diffs.len();
    if m == 0 {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let mean = diffs.iter().sum::<f64>() / m as f64;
    if m < 2 {
        return (mean, f64::NAN, f64::NAN);
    }
    let ss = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>();
    let df = (m - 1) as f64;
    let se = (ss / df / m as f64).sqrt();
    let t = mean / se;
    let dist = StudentsT::new(0.0, 1.0, df).expect("df >= 1");
    let p = 2.0 * (1.0 - dist.cdf(t.abs()));
    (mean, t, p)
}

/// Run the invariance check for one design, θ offset, and side. Each grid
/// point uses a single freshly simulated panel with a seed derived from
/// (`opts.seed`, grid index), so the series is reproducible and
/// thread-count-independent.
pub fn schur_invariance_check(
    design: &DgpDesign,
    delta: f64,
    side: SchurSide,
    opts: &SchurOpts,
) -> Result<SchurSeries> {
    design.validate()?;
    if opts.grid.is_empty() {
        return Err(Error::InvalidSpec("empty size grid".into()));
    }
    if !opts.grid.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::InvalidSpec("size grid must be strictly increasing".into()));
    }
    if opts.fixed_dim < 2 || opts.grid[0] < 2 {
        return Err(Error::InvalidSpec("panel dimensions must be at least 2".into()));
    }
    let largest = opts.grid.last().copied().unwrap().max(opts.fixed_dim);
    if largest > opts.dense_cap {
        return Err(Error::InvalidSpec(format!(
            "dense Schur complements capped at dimension {}, grid needs {largest}",
            opts.dense_cap
        )));
    }
    let spec = design.spec(usize::from(design.dynamic))?;
    let theta = Array1::from(design.theta0.clone()).mapv(|v| v + delta);

    let norms: Result<Vec<f64>> = opts
        .grid
        .par_iter()
        .enumerate()
        .map(|(g, &dim)| {
            scaled_norm_at(design, &spec, &theta, side, dim, opts, rep_seed(opts.seed, g as u64))
        })
        .collect();
    let scaled_norms = norms?;

    let log_diffs: Vec<f64> = scaled_norms
        .windows(2)
        .map(|w| w[1].ln() - w[0].ln())
        .collect();
    let (mean_estimate, t_statistic, p_value) = mean_zero_t_test(&log_diffs);

    Ok(SchurSeries {
        design_tag: design.tag(),
        side,
        delta,
        fixed_dim: opts.fixed_dim,
        grid: opts.grid.clone(),
        scaled_norms,
        log_diffs,
        mean_estimate,
        t_statistic,
        p_value,
    })
}
