//! Outer estimation of θ and likelihood-based hypothesis tests.
//!
//! The raw objective is the profiled average log-likelihood l̂(θ); the
//! corrected objective is l̃(θ) = l̂(θ) + b̂/T + d̂/N. Unconstrained and
//! linearly constrained maximizers come from BFGS with backtracking; the
//! three classical statistics for a null R(θ₀) = 0 with r restrictions are
//!
//! ```text
//!   ξ_LR   = −2NT [ l(θ_R) − l(θ̂) ],
//!   ξ_LM   = −NT · ∇l(θ_R)' H(θ_R)⁻¹ ∇l(θ_R),
//!   ξ_Wald = −NT · R(θ̂)' [ J(θ̂) H(θ̂)⁻¹ J(θ̂)' ]⁻¹ R(θ̂),
//! ```
//!
//! each referred to a χ²(r) distribution, with H the θ-Hessian of the same
//! objective the statistic tests (finite differences of the corrected score
//! by default; the analytic raw curvature available as a substitute).

use crate::correct::{
    corrected_score_and_hessian, corrected_value_and_score, CorrectedHessianMode, CorrectionOpts,
};
use crate::error::Error;
use crate::model::ModelSpec;
use crate::panel::PanelData;
use crate::profile::{profiled_theta_hessian, profiled_value_and_score, ProfileResult};
use crate::Result;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::Arc;

/// Which likelihood drives estimation and testing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Profiled likelihood l̂(θ), biased by the incidental parameters.
    Raw,
    /// Bias-corrected likelihood l̃(θ).
    Corrected,
}

impl Objective {
    pub fn name(self) -> &'static str {
        match self {
            Objective::Raw => "raw",
            Objective::Corrected => "corrected",
        }
    }
}

/// The classical test trinity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    Lr,
    Lm,
    Wald,
}

impl TestKind {
    pub fn name(self) -> &'static str {
        match self {
            TestKind::Lr => "LR",
            TestKind::Lm => "LM",
            TestKind::Wald => "Wald",
        }
    }
}

/// Null hypothesis R(θ) = 0.
#[derive(Clone)]
pub enum Constraint {
    /// θ = θ*: every coordinate pinned, r = theta_dim.
    Point(Array1<f64>),
    /// Cθ = c with C of full row rank r.
    Linear { mat: Array2<f64>, rhs: Array1<f64> },
    /// Smooth R(θ) = 0 with r components; the Jacobian comes from central
    /// finite differences. Usable in Wald tests, not in constrained
    /// maximization.
    General {
        r: Arc<dyn Fn(&[f64]) -> Array1<f64> + Send + Sync>,
        n_restrictions: usize,
    },
}

impl fmt::Debug for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.describe())
    }
}

impl Constraint {
    /// A single pinned coordinate θ_j = v, as a 1-row linear constraint.
    pub fn pin(theta_dim: usize, j: usize, v: f64) -> Self {
        let mut mat = Array2::zeros((1, theta_dim));
        mat[(0, j)] = 1.0;
        Constraint::Linear { mat, rhs: ndarray::arr1(&[v]) }
    }

    /// Number of restrictions r.
    pub fn n_restrictions(&self) -> usize {
        match self {
            Constraint::Point(t) => t.len(),
            Constraint::Linear { mat, .. } => mat.nrows(),
            Constraint::General { n_restrictions, .. } => *n_restrictions,
        }
    }

    /// R(θ): the residual whose zero set is the null.
    pub fn residual(&self, theta: &[f64]) -> Array1<f64> {
        match self {
            Constraint::Point(t) => {
                Array1::from_iter(theta.iter().zip(t.iter()).map(|(a, b)| a - b))
            }
            Constraint::Linear { mat, rhs } => {
                let th = Array1::from_iter(theta.iter().copied());
                mat.dot(&th) - rhs
            }
            Constraint::General { r, .. } => r(theta),
        }
    }

    /// J(θ) = ∂R/∂θ', an r×p matrix.
    pub fn jacobian(&self, theta: &[f64]) -> Array2<f64> {
        let p = theta.len();
        match self {
            Constraint::Point(_) => Array2::eye(p),
            Constraint::Linear { mat, .. } => mat.clone(),
            Constraint::General { r, n_restrictions } => {
                let mut j = Array2::zeros((*n_restrictions, p));
                for k in 0..p {
                    let h = 1e-6 * theta[k].abs().max(1.0);
                    let mut up = theta.to_vec();
                    let mut dn = theta.to_vec();
                    up[k] += h;
                    dn[k] -= h;
                    let d = (r(&up) - r(&dn)) / (2.0 * h);
                    for row in 0..*n_restrictions {
                        j[(row, k)] = d[row];
                    }
                }
                j
            }
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Constraint::Point(t) => format!("point {:?}", t.to_vec()),
            Constraint::Linear { mat, .. } => {
                format!("linear ({} restrictions)", mat.nrows())
            }
            Constraint::General { n_restrictions, .. } => {
                format!("general ({n_restrictions} restrictions)")
            }
        }
    }

    /// Particular solution θ_p and orthonormal null-space basis Z (p×(p−r))
    /// of a linear constraint, so that the feasible set is {θ_p + Zψ}.
    fn null_space(&self, p: usize) -> Result<(Array1<f64>, Array2<f64>)> {
        let (mat, rhs) = match self {
            Constraint::Point(t) => {
                if t.len() != p {
                    return Err(Error::InvalidSpec(format!(
                        "point constraint has length {}, expected {p}",
                        t.len()
                    )));
                }
                return Ok((t.clone(), Array2::zeros((p, 0))));
            }
            Constraint::Linear { mat, rhs } => (mat, rhs),
            Constraint::General { .. } => {
                return Err(Error::InvalidSpec(
                    "general constraints support Wald tests only; constrained \
                     estimation needs a point or linear constraint"
                        .into(),
                ));
            }
        };
        let r = mat.nrows();
        if mat.ncols() != p || rhs.len() != r {
            return Err(Error::InvalidSpec("constraint dimensions do not match theta".into()));
        }
        if r == 0 || r > p {
            return Err(Error::RankDeficientConstraint(format!(
                "{r} restrictions on {p} parameters"
            )));
        }
        // Orthonormalize the rows of C; a residual collapsing to zero means
        // the restrictions are linearly dependent.
        let mut q: Vec<Array1<f64>> = Vec::with_capacity(r);
        for row in mat.rows() {
            let mut v = row.to_owned();
            let scale = v.dot(&v).sqrt().max(1.0);
            for prev in &q {
                let proj = v.dot(prev);
                v.scaled_add(-proj, prev);
            }
            let norm = v.dot(&v).sqrt();
            if norm < 1e-10 * scale {
                return Err(Error::RankDeficientConstraint(
                    "restriction rows are linearly dependent".into(),
                ));
            }
            q.push(v / norm);
        }
        // Minimum-norm particular solution θ_p = C'(CC')⁻¹c.
        let mut gram = Array2::zeros((r, r));
        for i in 0..r {
            for j in 0..r {
                gram[(i, j)] = mat.row(i).dot(&mat.row(j));
            }
        }
        let lu = crate::linalg::Lu::new(&gram).ok_or_else(|| {
            Error::RankDeficientConstraint("restriction Gram matrix is singular".into())
        })?;
        let w = lu.solve(rhs.as_slice().unwrap());
        let mut theta_p = Array1::zeros(p);
        for i in 0..r {
            theta_p.scaled_add(w[i], &mat.row(i).to_owned());
        }
        // Null-space basis: Gram-Schmidt the coordinate directions against
        // the row space and each other.
        let mut z_cols: Vec<Array1<f64>> = Vec::with_capacity(p - r);
        for k in 0..p {
            if z_cols.len() == p - r {
                break;
            }
            let mut v = Array1::zeros(p);
            v[k] = 1.0;
            for prev in q.iter().chain(z_cols.iter()) {
                let proj = v.dot(prev);
                v.scaled_add(-proj, prev);
            }
            let norm = v.dot(&v).sqrt();
            if norm > 1e-8 {
                z_cols.push(v / norm);
            }
        }
        if z_cols.len() != p - r {
            return Err(Error::RankDeficientConstraint(
                "could not build a null-space basis".into(),
            ));
        }
        let mut z = Array2::zeros((p, p - r));
        for (j, col) in z_cols.iter().enumerate() {
            for i in 0..p {
                z[(i, j)] = col[i];
            }
        }
        Ok((theta_p, z))
    }
}

/// Settings for the outer maximization and downstream tests.
#[derive(Debug, Clone)]
pub struct MaximizeOpts {
    /// Starting θ; default is zeros for the raw objective, and the raw MLE
    /// for the corrected objective (a consistent warm start).
    pub start: Option<Array1<f64>>,
    pub max_iter: usize,
    /// Converged when ‖score‖∞ over the free directions drops below this.
    pub score_tol: f64,
    /// ... or when the relative objective change does.
    pub rel_obj_tol: f64,
    pub correction: CorrectionOpts,
    /// How corrected-objective Hessians are produced for SEs and tests.
    pub hessian_mode: CorrectedHessianMode,
}

impl Default for MaximizeOpts {
    fn default() -> Self {
        Self {
            start: None,
            max_iter: 300,
            score_tol: 1e-7,
            rel_obj_tol: 1e-12,
            correction: CorrectionOpts::default(),
            hessian_mode: CorrectedHessianMode::FdOfScore,
        }
    }
}

/// A fitted θ with its curvature, standard errors, and inner profile.
#[derive(Debug, Clone)]
pub struct EstimateResult {
    pub theta_hat: Array1<f64>,
    pub objective_kind: Objective,
    /// Per-observation average of the chosen objective at `theta_hat`.
    pub loglik: f64,
    /// se_j = sqrt([−NT ∇²l]⁻¹_jj); NaN when the Hessian is indefinite.
    pub se: Array1<f64>,
    /// Set when the Hessian at the optimum was not negative definite.
    pub se_indefinite: bool,
    pub hessian_theta: Array2<f64>,
    pub profile: ProfileResult,
    pub converged: bool,
    pub iterations: usize,
    /// ‖score‖∞ over the free directions at the accepted point (0 when the
    /// constraint leaves no free direction).
    pub score_norm: f64,
    pub constrained_to: Option<Constraint>,
    pub n_units: usize,
    pub n_periods: usize,
}

/// One test statistic with its reference distribution.
#[derive(Debug, Clone)]
pub struct TestResult {
    pub kind: TestKind,
    pub objective_kind: Objective,
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    pub constraint: String,
}

/// p = 1 − χ²_df CDF(stat) for a clipped statistic.
pub(crate) fn chi2_p_value(statistic: f64, df: usize) -> f64 {
    crate::num::chi2_sf(statistic.max(0.0), df)
}

/// Tiny negatives from numerical noise are clipped to zero; anything beyond
/// the tolerance is left alone so a broken optimization stays visible.
fn clip_statistic(stat: f64) -> f64 {
    if stat < 0.0 && stat >= -1e-8 {
        0.0
    } else {
        stat
    }
}

/// Value, analytic-or-FD score, and profile of one objective at θ, with the
/// inner profiler warm-started along the optimizer's path.
struct Evaluator<'a> {
    data: &'a PanelData,
    spec: &'a ModelSpec,
    objective: Objective,
    copts: CorrectionOpts,
    warm: Option<(Array1<f64>, Array1<f64>)>,
}

impl<'a> Evaluator<'a> {
    fn new(
        data: &'a PanelData,
        spec: &'a ModelSpec,
        objective: Objective,
        copts: &CorrectionOpts,
    ) -> Self {
        Self { data, spec, objective, copts: copts.clone(), warm: None }
    }

    fn eval(&mut self, theta: &[f64]) -> Result<(f64, Array1<f64>, ProfileResult)> {
        let mut copts = self.copts.clone();
        copts.profile.warm_start = self.warm.clone();
        let (value, score, profile) = match self.objective {
            Objective::Raw => {
                let pv = profiled_value_and_score(self.data, self.spec, theta, &copts.profile)?;
                (pv.value, pv.score, pv.profile)
            }
            Objective::Corrected => {
                corrected_value_and_score(self.data, self.spec, theta, &copts)?
            }
        };
        self.warm = Some((profile.alpha_hat.clone(), profile.gamma_hat.clone()));
        Ok((value, score, profile))
    }

    /// Value without a score: line-search probes of the corrected objective
    /// skip its 2p finite-difference evaluations this way.
    fn eval_value(&mut self, theta: &[f64]) -> Result<f64> {
        let mut copts = self.copts.clone();
        copts.profile.warm_start = self.warm.clone();
        match self.objective {
            Objective::Raw => {
                let profile =
                    crate::profile::profile_fixed_effects(self.data, self.spec, theta, &copts.profile)?;
                let value = profile.loglik_hat;
                self.warm = Some((profile.alpha_hat.clone(), profile.gamma_hat.clone()));
                Ok(value)
            }
            Objective::Corrected => {
                let out = crate::correct::corrected_loglik(self.data, self.spec, theta, &copts)?;
                self.warm =
                    Some((out.profile.alpha_hat.clone(), out.profile.gamma_hat.clone()));
                Ok(out.value)
            }
        }
    }

    fn hessian(
        &mut self,
        theta: &[f64],
        profile: &ProfileResult,
        mode: CorrectedHessianMode,
    ) -> Result<Array2<f64>> {
        match self.objective {
            Objective::Raw => profiled_theta_hessian(self.data, self.spec, theta, profile),
            Objective::Corrected => {
                let mut copts = self.copts.clone();
                copts.profile.warm_start =
                    Some((profile.alpha_hat.clone(), profile.gamma_hat.clone()));
                let (_, h) =
                    corrected_score_and_hessian(self.data, self.spec, theta, &copts, mode)?;
                Ok(h)
            }
        }
    }
}

fn inf_norm1(v: &Array1<f64>) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Terminal state of the quasi-Newton ascent.
pub(crate) struct AscentFit {
    pub psi: Array1<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// BFGS with Armijo backtracking, maximizing a callback objective. The
/// callback returns a gradient only when asked, so line-search probes stay
/// cheap for objectives whose score needs finite differences. Shared by
/// [`maximize`] and the simulator's infeasible-likelihood fit.
pub(crate) fn bfgs_ascent<F>(
    f: &mut F,
    start: Array1<f64>,
    max_iter: usize,
    score_tol: f64,
    rel_obj_tol: f64,
) -> Result<AscentFit>
where
    F: FnMut(&Array1<f64>, bool) -> Result<(f64, Option<Array1<f64>>)>,
{
    let free = start.len();
    let mut psi = start;
    let (mut value, g) = f(&psi, true)?;
    let mut grad = g.expect("gradient requested");
    let mut binv = Array2::<f64>::eye(free);
    let mut iterations = 0;
    let mut converged = inf_norm1(&grad) < score_tol;
    while !converged && iterations < max_iter {
        let mut dir = binv.dot(&grad);
        if dir.dot(&grad) <= 0.0 {
            // Curvature approximation got corrupted; restart from steepest
            // ascent.
            binv = Array2::eye(free);
            dir = grad.clone();
        }
        let slope = dir.dot(&grad);
        let mut step = 1.0_f64;
        let mut accepted = None;
        for _ in 0..60 {
            let psi_new = &psi + &(step * &dir);
            match f(&psi_new, false) {
                Ok((v, _)) if v.is_finite() && v >= value + 1e-4 * step * slope => {
                    accepted = Some(psi_new);
                    break;
                }
                _ => step *= 0.5,
            }
        }
        let Some(psi_new) = accepted else {
            break; // line search exhausted: report the best iterate
        };
        let (v_new, g_new) = f(&psi_new, true)?;
        let grad_new = g_new.expect("gradient requested");
        // Inverse-BFGS update for the equivalent minimization of −value:
        // with s = Δψ and y = −Δgrad, B ← (I−ρsy')B(I−ρys') + ρss'.
        let s_vec = &psi_new - &psi;
        let y_vec = &grad - &grad_new;
        let sy = s_vec.dot(&y_vec);
        if sy > 1e-12 * s_vec.dot(&s_vec).sqrt() * y_vec.dot(&y_vec).sqrt() {
            let rho = 1.0 / sy;
            let by = binv.dot(&y_vec);
            let yby = y_vec.dot(&by);
            for i in 0..free {
                for j in 0..free {
                    binv[(i, j)] += -rho * (s_vec[i] * by[j] + by[i] * s_vec[j])
                        + (rho * rho * yby + rho) * s_vec[i] * s_vec[j];
                }
            }
        }
        let rel_change = (v_new - value).abs() / (1.0 + value.abs());
        psi = psi_new;
        value = v_new;
        grad = grad_new;
        iterations += 1;
        if inf_norm1(&grad) < score_tol || rel_change < rel_obj_tol {
            converged = true;
        }
    }
    Ok(AscentFit { psi, value, grad_norm: inf_norm1(&grad), iterations, converged })
}

/// se_j = sqrt([−NT H]⁻¹_jj); all-NaN with a raised flag when −H is not
/// positive definite.
fn se_from_hessian(h: &Array2<f64>, n: usize, t: usize) -> (Array1<f64>, bool) {
    let p = h.nrows();
    let nt = (n * t) as f64;
    let info = h.mapv(|v| -nt * v);
    match crate::linalg::Cholesky::new(&info) {
        Some(ch) => {
            let mut se = Array1::zeros(p);
            for j in 0..p {
                let mut e = Array1::zeros(p);
                e[j] = 1.0;
                se[j] = ch.solve(&e)[j].sqrt();
            }
            (se, false)
        }
        None => (Array1::from_elem(p, f64::NAN), true),
    }
}

/// Standard errors recomputed from a stored estimate (the same vector that
/// `maximize` already placed in `result.se`).
pub fn standard_errors(result: &EstimateResult) -> Array1<f64> {
    se_from_hessian(&result.hessian_theta, result.n_units, result.n_periods).0
}

/// Maximize the chosen objective over θ, optionally under a point or linear
/// constraint. Non-convergence is reported on the result, not as an error.
pub fn maximize(
    data: &PanelData,
    spec: &ModelSpec,
    objective: Objective,
    constraint: Option<&Constraint>,
    opts: &MaximizeOpts,
) -> Result<EstimateResult> {
    spec.check_data(data)?;
    let p = spec.theta_dim;
    let (n, t) = data.y.dim();

    let start = match (&opts.start, objective) {
        (Some(s), _) => {
            if s.len() != p {
                return Err(Error::InvalidSpec(format!(
                    "start has length {}, expected {p}",
                    s.len()
                )));
            }
            s.clone()
        }
        (None, Objective::Raw) => Array1::zeros(p),
        (None, Objective::Corrected) => {
            // The raw MLE is consistent, so it warm-starts the corrected fit.
            let raw_opts = MaximizeOpts { start: None, ..opts.clone() };
            let raw = maximize(data, spec, Objective::Raw, constraint, &raw_opts)?;
            raw.theta_hat
        }
    };

    let mut ev = Evaluator::new(data, spec, objective, &opts.correction);
    let finish = |ev: &mut Evaluator,
                  theta: Array1<f64>,
                  value: f64,
                  profile: ProfileResult,
                  converged: bool,
                  iterations: usize,
                  score_norm: f64|
     -> Result<EstimateResult> {
        let hess = ev.hessian(theta.as_slice().unwrap(), &profile, opts.hessian_mode)?;
        let (se, se_indefinite) = se_from_hessian(&hess, n, t);
        Ok(EstimateResult {
            theta_hat: theta,
            objective_kind: objective,
            loglik: value,
            se,
            se_indefinite,
            hessian_theta: hess,
            profile,
            converged,
            iterations,
            score_norm,
            constrained_to: constraint.cloned(),
            n_units: n,
            n_periods: t,
        })
    };

    // Point constraints (and full-rank linear systems) need no optimization.
    let (theta_p, z) = match constraint {
        None => (Array1::zeros(p), Array2::eye(p)),
        Some(c) => c.null_space(p)?,
    };
    let free = z.ncols();
    if free == 0 {
        let theta = theta_p;
        let (value, _, profile) = ev.eval(theta.as_slice().unwrap())?;
        return finish(&mut ev, theta, value, profile, true, 0, 0.0);
    }

    // ψ coordinates: θ = θ_p + Zψ; start from the projection of `start`.
    let psi0 = z.t().dot(&(&start - &theta_p));
    let fit = {
        let mut fcall = |psi: &Array1<f64>, need_grad: bool| {
            let theta = &theta_p + &z.dot(psi);
            let ts = theta.as_slice().unwrap();
            if need_grad {
                let (v, s, _) = ev.eval(ts)?;
                Ok((v, Some(z.t().dot(&s))))
            } else {
                Ok((ev.eval_value(ts)?, None))
            }
        };
        bfgs_ascent(&mut fcall, psi0, opts.max_iter, opts.score_tol, opts.rel_obj_tol)?
    };
    // One consistent evaluation at the accepted optimum (warm-started, so the
    // inner profiler converges immediately) refreshes value and profile.
    let theta = &theta_p + &z.dot(&fit.psi);
    let (value, _, profile) = ev.eval(theta.as_slice().unwrap())?;
    finish(&mut ev, theta, value, profile, fit.converged, fit.iterations, fit.grad_norm)
}

/// Run one LR, LM, or Wald test of `constraint` under the chosen objective.
pub fn test(
    data: &PanelData,
    spec: &ModelSpec,
    constraint: &Constraint,
    objective: Objective,
    kind: TestKind,
    opts: &MaximizeOpts,
) -> Result<TestResult> {
    Ok(test_battery(data, spec, constraint, objective, &[kind], opts)?.remove(0))
}

/// Compute several statistics for the same null while sharing the constrained
/// and unconstrained fits between them.
pub fn test_battery(
    data: &PanelData,
    spec: &ModelSpec,
    constraint: &Constraint,
    objective: Objective,
    kinds: &[TestKind],
    opts: &MaximizeOpts,
) -> Result<Vec<TestResult>> {
    let (n, t) = data.y.dim();
    let nt = (n * t) as f64;
    let df = constraint.n_restrictions();
    if df > spec.theta_dim {
        return Err(Error::RankDeficientConstraint(format!(
            "{df} restrictions on {} parameters",
            spec.theta_dim
        )));
    }
    let needs_unconstrained =
        kinds.iter().any(|k| matches!(k, TestKind::Lr | TestKind::Wald));
    let needs_constrained = kinds.iter().any(|k| matches!(k, TestKind::Lr | TestKind::Lm));

    let unconstrained = if needs_unconstrained {
        Some(maximize(data, spec, objective, None, opts)?)
    } else {
        None
    };
    let constrained = if needs_constrained {
        let mut c_opts = opts.clone();
        if let Some(u) = &unconstrained {
            // The unconstrained optimum is as good a start as any feasible
            // projection of it.
            c_opts.start = Some(u.theta_hat.clone());
        }
        Some(maximize(data, spec, objective, Some(constraint), &c_opts)?)
    } else {
        None
    };

    let mut out = Vec::with_capacity(kinds.len());
    for &kind in kinds {
        let statistic = match kind {
            TestKind::Lr => {
                let u = unconstrained.as_ref().unwrap();
                let c = constrained.as_ref().unwrap();
                -2.0 * nt * (c.loglik - u.loglik)
            }
            TestKind::Lm => {
                let c = constrained.as_ref().unwrap();
                let mut ev = Evaluator::new(data, spec, objective, &opts.correction);
                let (_, score, profile) = ev.eval(c.theta_hat.as_slice().unwrap())?;
                let h = ev.hessian(c.theta_hat.as_slice().unwrap(), &profile, opts.hessian_mode)?;
                let lu = crate::linalg::Lu::new(&h).ok_or_else(|| {
                    Error::SingularHessian("theta-Hessian at the constrained point".into())
                })?;
                let w = lu.solve(score.as_slice().unwrap());
                let quad: f64 = score.iter().zip(&w).map(|(a, b)| a * b).sum();
                -nt * quad
            }
            TestKind::Wald => {
                let u = unconstrained.as_ref().unwrap();
                let theta = u.theta_hat.as_slice().unwrap();
                let r_val = constraint.residual(theta);
                let j = constraint.jacobian(theta);
                let lu_h = crate::linalg::Lu::new(&u.hessian_theta).ok_or_else(|| {
                    Error::SingularHessian("theta-Hessian at the optimum".into())
                })?;
                // V = J H⁻¹ J'
                let mut hinv_jt = Array2::zeros((spec.theta_dim, df));
                for row in 0..df {
                    let sol = lu_h.solve(j.row(row).to_owned().as_slice().unwrap());
                    for k in 0..spec.theta_dim {
                        hinv_jt[(k, row)] = sol[k];
                    }
                }
                let v = j.dot(&hinv_jt);
                let lu_v = crate::linalg::Lu::new(&v).ok_or_else(|| {
                    Error::DegenerateVariance(
                        "restriction variance J H^-1 J' is singular".into(),
                    )
                })?;
                let w = lu_v.solve(r_val.as_slice().unwrap());
                let quad: f64 = r_val.iter().zip(&w).map(|(a, b)| a * b).sum();
                -nt * quad
            }
        };
        let statistic = clip_statistic(statistic);
        out.push(TestResult {
            kind,
            objective_kind: objective,
            statistic,
            df,
            p_value: chi2_p_value(statistic, df),
            constraint: constraint.describe(),
        });
    }
    Ok(out)
}
