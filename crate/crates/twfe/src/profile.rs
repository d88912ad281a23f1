//! Fixed-effect profiling: for fixed θ, maximize the average log-likelihood
//! over the N+T fixed effects subject to the identification constraint,
//!
//! ```text
//!   l̂(θ) = max_{φ feasible} (1/NT) Σ_it log f(Y_it | θ, α_i, γ_t),
//! ```
//!
//! returning φ̂(θ) = (α̂(θ), γ̂(θ)) and the profiled value. The constraint is
//! eliminated by the null-space reparametrization in [`crate::solver`], and
//! the inner iteration is damped Newton: the arrow-structured Hessian is
//! factored per step, the damping parameter λ grows tenfold on a rejected
//! step and shrinks tenfold on an accepted one.
//!
//! The same machinery profiles the expected log-likelihood when the true
//! conditional means are known (simulation and diagnostic paths), and the
//! envelope theorem turns the profiled value into an analytic θ-score:
//! ∇_θ l̂(θ) = (1/NT) Σ ∂_θ l_it(θ, φ̂(θ)).

use crate::error::Error;
use crate::model::{build_index_ctx, IndexCtx, ModelSpec};
use crate::panel::PanelData;
use crate::solver::{ArrowFactor, Reduction};
use crate::Result;
use ndarray::{Array1, Array2};

/// What the likelihood passes evaluate against.
#[derive(Clone, Copy)]
pub(crate) enum EvalTarget<'a> {
    /// The realized outcomes in the panel.
    Data,
    /// Expected log-likelihood under known truth: entry (i,t) is the true
    /// conditional success probability (binary) or conditional mean (gaussian).
    Expected(&'a Array2<f64>),
}

/// Accumulated value, gradient, and arrow-Hessian pieces of the average
/// log-likelihood with respect to the fixed effects.
pub(crate) struct FePass {
    pub value: f64,
    pub grad_a: Array1<f64>,
    pub grad_g: Array1<f64>,
    pub diag_a: Array1<f64>,
    pub diag_g: Array1<f64>,
    pub cross: Array2<f64>,
    pub clamp_hits: usize,
}

pub(crate) fn fe_pass(
    spec: &ModelSpec,
    data: &PanelData,
    ctx: &IndexCtx,
    target: EvalTarget,
    alpha: &Array1<f64>,
    gamma: &Array1<f64>,
    second: bool,
) -> Result<FePass> {
    let (n, t) = data.y.dim();
    let nt = (n * t) as f64;
    let mut pass = FePass {
        value: 0.0,
        grad_a: Array1::zeros(n),
        grad_g: Array1::zeros(t),
        diag_a: Array1::zeros(n),
        diag_g: Array1::zeros(t),
        cross: Array2::zeros((n, t)),
        clamp_hits: 0,
    };
    for i in 0..n {
        for s in 0..t {
            let raw = ctx.raw_index(i, s, alpha[i], gamma[s]);
            if !raw.is_finite() {
                return Err(Error::NonFiniteIndex { unit: i, period: s });
            }
            let (pi, clamped) = crate::model::clamp_index(raw);
            pass.clamp_hits += usize::from(clamped);
            let ld = match target {
                EvalTarget::Data => spec.family.derivs(pi, data.y[(i, s)]),
                EvalTarget::Expected(p) => spec.family.expected_derivs(pi, p[(i, s)]),
            };
            let a = ctx.a.get(i, s);
            let g = ctx.g.get(i, s);
            pass.value += ld.value / nt;
            pass.grad_a[i] += ld.d1 * a / nt;
            pass.grad_g[s] += ld.d1 * g / nt;
            if second {
                pass.diag_a[i] += ld.d2 * a * a / nt;
                pass.diag_g[s] += ld.d2 * g * g / nt;
                pass.cross[(i, s)] = ld.d2 * a * g / nt;
            }
        }
    }
    Ok(pass)
}

/// Value, θ-gradient, and (optionally) the θθ / θφ Hessian blocks of the
/// average log-likelihood at fixed (θ, φ).
pub(crate) struct ThetaPass {
    pub value: f64,
    pub grad: Array1<f64>,
    pub h_tt: Array2<f64>,
    /// p × N block of ∂²/∂θ∂α.
    pub h_ta: Array2<f64>,
    /// p × T block of ∂²/∂θ∂γ.
    pub h_tg: Array2<f64>,
    pub clamp_hits: usize,
}

pub(crate) fn theta_pass(
    spec: &ModelSpec,
    data: &PanelData,
    ctx: &IndexCtx,
    target: EvalTarget,
    theta: &[f64],
    alpha: &Array1<f64>,
    gamma: &Array1<f64>,
    second: bool,
) -> Result<ThetaPass> {
    let (n, t) = data.y.dim();
    let nt = (n * t) as f64;
    let p = spec.theta_dim;
    let z = spec.z_mats(data);
    let scale_form = spec.index_form == crate::model::IndexForm::SlopeScaleFe;
    let mut out = ThetaPass {
        value: 0.0,
        grad: Array1::zeros(p),
        h_tt: Array2::zeros((p, p)),
        h_ta: Array2::zeros((p, n)),
        h_tg: Array2::zeros((p, t)),
        clamp_hits: 0,
    };
    let _ = theta;
    let mut dpi = vec![0.0; p];
    for i in 0..n {
        for s in 0..t {
            let raw = ctx.raw_index(i, s, alpha[i], gamma[s]);
            if !raw.is_finite() {
                return Err(Error::NonFiniteIndex { unit: i, period: s });
            }
            let (pi, clamped) = crate::model::clamp_index(raw);
            out.clamp_hits += usize::from(clamped);
            let ld = match target {
                EvalTarget::Data => spec.family.derivs(pi, data.y[(i, s)]),
                EvalTarget::Expected(pm) => spec.family.expected_derivs(pi, pm[(i, s)]),
            };
            let fe_sum = alpha[i] + gamma[s];
            for (j, zj) in z.iter().enumerate() {
                dpi[j] = if scale_form { zj[(i, s)] * fe_sum } else { zj[(i, s)] };
            }
            out.value += ld.value / nt;
            for j in 0..p {
                out.grad[j] += ld.d1 * dpi[j] / nt;
            }
            if second {
                let a = ctx.a.get(i, s);
                let g = ctx.g.get(i, s);
                for j in 0..p {
                    for k in 0..p {
                        out.h_tt[(j, k)] += ld.d2 * dpi[j] * dpi[k] / nt;
                    }
                    let extra = if scale_form { ld.d1 * z[j][(i, s)] } else { 0.0 };
                    out.h_ta[(j, i)] += (ld.d2 * dpi[j] * a + extra) / nt;
                    out.h_tg[(j, s)] += (ld.d2 * dpi[j] * g + extra) / nt;
                }
            }
        }
    }
    Ok(out)
}

/// Record of what [`sanitize_panel`] removed.
#[derive(Debug, Clone, Default)]
pub struct SanitizeReport {
    /// Original indices of removed units.
    pub dropped_units: Vec<usize>,
    /// Original indices of removed periods.
    pub dropped_periods: Vec<usize>,
    /// One human-readable line per drop, in drop order.
    pub reasons: Vec<String>,
}

impl SanitizeReport {
    pub fn n_dropped(&self) -> usize {
        self.dropped_units.len() + self.dropped_periods.len()
    }

    pub fn is_clean(&self) -> bool {
        self.n_dropped() == 0
    }
}

/// Remove units and periods whose outcomes never vary (their fixed-effect
/// estimate diverges for binary families), iterating to a fixed point.
/// Gaussian panels pass through unchanged.
pub fn sanitize_panel(data: &PanelData, spec: &ModelSpec) -> Result<(PanelData, SanitizeReport)> {
    let mut report = SanitizeReport::default();
    if !spec.family.is_binary() {
        return Ok((data.clone(), report));
    }
    let (n, t) = data.y.dim();
    let mut unit_alive = vec![true; n];
    let mut period_alive = vec![true; t];
    loop {
        let mut changed = false;
        for i in 0..n {
            if !unit_alive[i] {
                continue;
            }
            let mut first: Option<f64> = None;
            let mut constant = true;
            for s in 0..t {
                if !period_alive[s] {
                    continue;
                }
                let y = data.y[(i, s)];
                match first {
                    None => first = Some(y),
                    Some(v) if v != y => {
                        constant = false;
                        break;
                    }
                    _ => {}
                }
            }
            if constant {
                if let Some(v) = first {
                    unit_alive[i] = false;
                    report.dropped_units.push(i);
                    report
                        .reasons
                        .push(format!("unit {}: no outcome variation (all {v})", data.unit_labels[i]));
                    changed = true;
                }
            }
        }
        for s in 0..t {
            if !period_alive[s] {
                continue;
            }
            let mut first: Option<f64> = None;
            let mut constant = true;
            for i in 0..n {
                if !unit_alive[i] {
                    continue;
                }
                let y = data.y[(i, s)];
                match first {
                    None => first = Some(y),
                    Some(v) if v != y => {
                        constant = false;
                        break;
                    }
                    _ => {}
                }
            }
            if constant {
                if let Some(v) = first {
                    period_alive[s] = false;
                    report.dropped_periods.push(s);
                    report.reasons.push(format!(
                        "period {}: no outcome variation (all {v})",
                        data.time_labels[s]
                    ));
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let units: Vec<usize> = (0..n).filter(|&i| unit_alive[i]).collect();
    let periods: Vec<usize> = (0..t).filter(|&s| period_alive[s]).collect();
    if units.is_empty() || periods.is_empty() {
        return Err(Error::EmptyPanel);
    }
    let sub = data.subset(&units, &periods)?;
    Ok((sub, report))
}

/// Inner-solver options.
#[derive(Debug, Clone)]
pub struct ProfileOpts {
    /// Convergence threshold on the ∞-norm of the projected fixed-effect
    /// gradient of the average log-likelihood.
    pub tol: f64,
    pub max_iter: usize,
    /// Start from a previous φ̂ instead of the cold start.
    pub warm_start: Option<(Array1<f64>, Array1<f64>)>,
}

impl Default for ProfileOpts {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 200, warm_start: None }
    }
}

impl ProfileOpts {
    pub fn with_warm_start(mut self, alpha: Array1<f64>, gamma: Array1<f64>) -> Self {
        self.warm_start = Some((alpha, gamma));
        self
    }
}

/// Quality flags carried alongside a profiled solution.
#[derive(Debug, Clone, Default)]
pub struct ProfileFlags {
    /// Cells whose index was clamped at the returned φ̂.
    pub clamp_hits: usize,
    /// Units removed by sanitization before this fit (filled by callers that
    /// own the sanitize step).
    pub dropped_units: usize,
    /// Periods removed by sanitization before this fit.
    pub dropped_periods: usize,
}

/// Profiled fixed effects at one θ.
#[derive(Debug, Clone)]
pub struct ProfileResult {
    pub alpha_hat: Array1<f64>,
    pub gamma_hat: Array1<f64>,
    /// l̂(θ): per-observation average log-likelihood at φ̂(θ).
    pub loglik_hat: f64,
    /// ∞-norm of the projected fixed-effect gradient at φ̂(θ).
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub flags: ProfileFlags,
}

fn inf_norm1(v: &Array1<f64>) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

const FLAT_CURVATURE: f64 = -1e-12;
const LEVENBERG_START: f64 = 1e-6;
const LEVENBERG_MAX: f64 = 1e12;

fn check_flat(pass: &FePass) -> Result<()> {
    for (i, &d) in pass.diag_a.iter().enumerate() {
        if d >= FLAT_CURVATURE {
            return Err(Error::SingularHessian(format!(
                "fixed-effect curvature for unit {i} is {d:.3e} (flat direction)"
            )));
        }
    }
    for (s, &d) in pass.diag_g.iter().enumerate() {
        if d >= FLAT_CURVATURE {
            return Err(Error::SingularHessian(format!(
                "fixed-effect curvature for period {s} is {d:.3e} (flat direction)"
            )));
        }
    }
    Ok(())
}

fn newton_profile(
    spec: &ModelSpec,
    data: &PanelData,
    target: EvalTarget,
    theta: &[f64],
    opts: &ProfileOpts,
) -> Result<ProfileResult> {
    let (n, t) = data.y.dim();
    if n == 0 || t == 0 {
        return Err(Error::EmptyPanel);
    }
    let ctx = build_index_ctx(spec, data, theta)?;
    let red = Reduction::new(spec.identification, n, t);
    let mut alpha = Array1::zeros(n);
    let mut gamma = Array1::zeros(t);
    let mut psi = match &opts.warm_start {
        Some((a, g)) if a.len() == n && g.len() == t => red.extract(a, g),
        Some(_) => {
            return Err(Error::InvalidSpec("warm start has wrong dimensions".into()));
        }
        None => red.cold_start(),
    };
    red.recover(&psi, &mut alpha, &mut gamma);
    let mut pass = fe_pass(spec, data, &ctx, target, &alpha, &gamma, true)?;

    let dim = red.dim();
    let mut grad = Array1::zeros(dim);
    let mut iterations = 0;
    let mut converged = dim == 0;
    let mut lambda = LEVENBERG_START;
    if dim > 0 {
        for _ in 0..opts.max_iter {
            check_flat(&pass)?;
            red.reduce_grad(&pass.grad_a, &pass.grad_g, &mut grad);
            let gnorm = inf_norm1(&grad);
            if gnorm < opts.tol {
                converged = true;
                break;
            }
            let rh = red.reduce_hessian(&pass.diag_a, &pass.diag_g, &pass.cross);
            let mut accepted = false;
            while lambda <= LEVENBERG_MAX {
                let Some(fac) = ArrowFactor::new(&rh, lambda) else {
                    lambda *= 10.0;
                    continue;
                };
                let step = fac.solve(&grad);
                let psi_new = &psi + &step;
                let mut a_new = alpha.clone();
                let mut g_new = gamma.clone();
                red.recover(&psi_new, &mut a_new, &mut g_new);
                match fe_pass(spec, data, &ctx, target, &a_new, &g_new, true) {
                    Ok(trial) if trial.value.is_finite() => {
                        let improved = trial.value > pass.value;
                        let endgame = !improved
                            && trial.value >= pass.value - 1e-15 * (1.0 + pass.value.abs())
                            && {
                                let mut g2 = Array1::zeros(dim);
                                red.reduce_grad(&trial.grad_a, &trial.grad_g, &mut g2);
                                inf_norm1(&g2) < gnorm
                            };
                        if improved || endgame {
                            psi = psi_new;
                            alpha = a_new;
                            gamma = g_new;
                            pass = trial;
                            lambda = (lambda / 10.0).max(1e-12);
                            accepted = true;
                            break;
                        }
                        lambda *= 10.0;
                    }
                    _ => lambda *= 10.0,
                }
            }
            if !accepted {
                break;
            }
            iterations += 1;
        }
        red.reduce_grad(&pass.grad_a, &pass.grad_g, &mut grad);
        if inf_norm1(&grad) < opts.tol {
            converged = true;
        }
    }
    Ok(ProfileResult {
        alpha_hat: alpha,
        gamma_hat: gamma,
        loglik_hat: pass.value,
        grad_norm: inf_norm1(&grad),
        iterations,
        converged,
        flags: ProfileFlags { clamp_hits: pass.clamp_hits, ..Default::default() },
    })
}

/// Constrained maximizer of the realized average log-likelihood over the
/// fixed effects at fixed θ.
pub fn profile_fixed_effects(
    data: &PanelData,
    spec: &ModelSpec,
    theta: &[f64],
    opts: &ProfileOpts,
) -> Result<ProfileResult> {
    spec.check_data(data)?;
    newton_profile(spec, data, EvalTarget::Data, theta, opts)
}

/// Constrained maximizer of the expected average log-likelihood when the true
/// conditional means `truth` (N×T) are known. Used by the infeasible-likelihood
/// and diagnostic paths.
pub fn profile_expected_fixed_effects(
    data: &PanelData,
    spec: &ModelSpec,
    theta: &[f64],
    truth: &Array2<f64>,
    opts: &ProfileOpts,
) -> Result<ProfileResult> {
    spec.check_data(data)?;
    if truth.dim() != data.y.dim() {
        return Err(Error::InvalidSpec("truth matrix does not match panel shape".into()));
    }
    newton_profile(spec, data, EvalTarget::Expected(truth), theta, opts)
}

/// Realized average log-likelihood at a given (θ, φ), plus clamp count.
pub fn average_loglik(
    data: &PanelData,
    spec: &ModelSpec,
    theta: &[f64],
    alpha: &Array1<f64>,
    gamma: &Array1<f64>,
) -> Result<(f64, usize)> {
    spec.check_data(data)?;
    let ctx = build_index_ctx(spec, data, theta)?;
    let pass = fe_pass(spec, data, &ctx, EvalTarget::Data, alpha, gamma, false)?;
    Ok((pass.value, pass.clamp_hits))
}

/// Profiled value plus the analytic θ-score via the envelope theorem.
#[derive(Debug, Clone)]
pub struct ProfiledValue {
    pub value: f64,
    pub score: Array1<f64>,
    pub profile: ProfileResult,
}

/// l̂(θ) and ∇_θ l̂(θ) = (1/NT) Σ ∂_θ l_it(θ, φ̂(θ)): because ∂_φ l̂ vanishes
/// at the inner optimum, the partial θ-derivative is the total derivative.
pub fn profiled_value_and_score(
    data: &PanelData,
    spec: &ModelSpec,
    theta: &[f64],
    opts: &ProfileOpts,
) -> Result<ProfiledValue> {
    let profile = profile_fixed_effects(data, spec, theta, opts)?;
    let ctx = build_index_ctx(spec, data, theta)?;
    let tp = theta_pass(
        spec,
        data,
        &ctx,
        EvalTarget::Data,
        theta,
        &profile.alpha_hat,
        &profile.gamma_hat,
        false,
    )?;
    Ok(ProfiledValue { value: profile.loglik_hat, score: tp.grad, profile })
}

/// Analytic Hessian of the profiled likelihood,
///
/// ```text
///   ∇²_θθ' l̂ = H_θθ − H_θφ Z (Z'H_φφ Z)⁻¹ Z'H_φθ,
/// ```
///
/// evaluated at φ̂(θ) on the constraint-reduced coordinates.
pub fn profiled_theta_hessian(
    data: &PanelData,
    spec: &ModelSpec,
    theta: &[f64],
    profile: &ProfileResult,
) -> Result<Array2<f64>> {
    profiled_theta_hessian_for(data, spec, theta, profile, EvalTarget::Data)
}

pub(crate) fn profiled_theta_hessian_for(
    data: &PanelData,
    spec: &ModelSpec,
    theta: &[f64],
    profile: &ProfileResult,
    target: EvalTarget,
) -> Result<Array2<f64>> {
    let (n, t) = data.y.dim();
    let p = spec.theta_dim;
    let ctx = build_index_ctx(spec, data, theta)?;
    let tp = theta_pass(spec, data, &ctx, target, theta, &profile.alpha_hat, &profile.gamma_hat, true)?;
    let fp = fe_pass(spec, data, &ctx, target, &profile.alpha_hat, &profile.gamma_hat, true)?;
    let red = Reduction::new(spec.identification, n, t);
    let dim = red.dim();
    if dim == 0 {
        return Ok(tp.h_tt);
    }
    let rh = red.reduce_hessian(&fp.diag_a, &fp.diag_g, &fp.cross);
    // B = Z'H_φθ, one reduced column per θ coordinate.
    let mut b = Array2::zeros((dim, p));
    let mut col = Array1::zeros(dim);
    for j in 0..p {
        let ga = tp.h_ta.row(j).to_owned();
        let gg = tp.h_tg.row(j).to_owned();
        red.reduce_grad(&ga, &gg, &mut col);
        for k in 0..dim {
            b[(k, j)] = col[k];
        }
    }
    // X = (Z'H_φφZ)⁻¹ B: structured solve when the damped factor exists at
    // λ = 0 (negative definite inner Hessian), dense LU otherwise.
    let x = match ArrowFactor::new(&rh, 0.0) {
        Some(fac) => {
            let mut x = Array2::zeros((dim, p));
            for j in 0..p {
                let sol = fac.solve(&b.column(j).to_owned());
                for k in 0..dim {
                    // (−H̃)⁻¹ b = −H̃⁻¹ b.
                    x[(k, j)] = -sol[k];
                }
            }
            x
        }
        None => rh
            .solve_dense(&b)
            .ok_or_else(|| Error::SingularHessian("fixed-effect Hessian is singular".into()))?,
    };
    let mut h = tp.h_tt - b.t().dot(&x);
    // Enforce exact symmetry against accumulated roundoff.
    for j in 0..p {
        for k in 0..j {
            let avg = 0.5 * (h[(j, k)] + h[(k, j)]);
            h[(j, k)] = avg;
            h[(k, j)] = avg;
        }
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Identification, IndexForm};
    use crate::Family;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian_panel(n: usize, t: usize, seed: u64) -> PanelData {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y = Array2::from_shape_fn((n, t), |_| rng.sample::<f64, _>(StandardNormal));
        let x = Array2::from_shape_fn((n, t), |_| rng.sample::<f64, _>(StandardNormal));
        PanelData::new(y, None, vec![("x".into(), x)], None, None).unwrap()
    }

    fn binary_panel(n: usize, t: usize, seed: u64, family: Family) -> (PanelData, ModelSpec) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((n, t), |_| rng.sample::<f64, _>(StandardNormal));
        let y = Array2::from_shape_fn((n, t), |(i, s)| {
            // Deterministic checkerboard core plus noise keeps every row and
            // column varying, so sanitization is a no-op.
            if (i + s) % 2 == 0 {
                f64::from(rng.gen::<f64>() < 0.9)
            } else {
                f64::from(rng.gen::<f64>() < 0.1)
            }
        });
        let data = PanelData::new(y, None, vec![("x".into(), x)], None, None).unwrap();
        let spec = ModelSpec::new(family, IndexForm::AdditiveFe, 0, 1).unwrap();
        (data, spec)
    }

    #[test]
    fn sanitize_drops_constant_unit_with_reason() {
        let y = array![[1.0, 1.0, 1.0], [0.0, 1.0, 0.0], [1.0, 0.0, 1.0]];
        let x = Array2::zeros((3, 3));
        let data = PanelData::new(y, None, vec![("x".into(), x)], None, None).unwrap();
        let spec = ModelSpec::new(Family::Logit, IndexForm::AdditiveFe, 0, 1).unwrap();
        let (clean, report) = sanitize_panel(&data, &spec).unwrap();
        assert_eq!(report.dropped_units, vec![0]);
        assert!(report.reasons[0].contains("no outcome variation"));
        assert_eq!(clean.n_units(), 2);
        assert_eq!(clean.n_periods(), 3);
    }

    #[test]
    fn sanitize_passes_gaussian_through() {
        let data = gaussian_panel(3, 3, 1);
        let spec = ModelSpec::new(Family::Gaussian, IndexForm::AdditiveFe, 0, 1).unwrap();
        let (clean, report) = sanitize_panel(&data, &spec).unwrap();
        assert!(report.is_clean());
        assert_eq!(clean.y, data.y);
    }

    #[test]
    fn sanitize_cascades_to_fixed_point() {
        // Dropping the all-ones unit leaves period 2 constant, which then
        // also falls.
        let y = array![[1.0, 0.0, 1.0], [1.0, 1.0, 1.0], [0.0, 1.0, 1.0]];
        let x = Array2::zeros((3, 3));
        let data = PanelData::new(y, None, vec![("x".into(), x)], None, None).unwrap();
        let spec = ModelSpec::new(Family::Logit, IndexForm::AdditiveFe, 0, 1).unwrap();
        let (clean, report) = sanitize_panel(&data, &spec).unwrap();
        assert_eq!(report.dropped_units, vec![1]);
        assert_eq!(report.dropped_periods, vec![2]);
        assert_eq!(clean.y.dim(), (2, 2));
        // Every surviving row and column varies.
        assert_eq!(clean.y, array![[1.0, 0.0], [0.0, 1.0]]);
    }

    #[test]
    fn sanitize_rejects_fully_degenerate_panel() {
        let x = Array2::zeros((1, 1));
        let data =
            PanelData::new(array![[1.0]], None, vec![("x".into(), x)], None, None).unwrap();
        let spec = ModelSpec::new(Family::Logit, IndexForm::AdditiveFe, 0, 1).unwrap();
        assert!(matches!(sanitize_panel(&data, &spec), Err(Error::EmptyPanel)));
        let _ = data;
    }

    #[test]
    fn gaussian_profile_matches_double_demeaning() {
        // Under Σα = Σγ = 0 the gaussian optimum is α̂_i = ε̄_i· − ε̄··,
        // γ̂_t = ε̄·t − ε̄·· with the grand mean left in the residual.
        let data = gaussian_panel(4, 5, 7);
        let spec = ModelSpec::new(Family::Gaussian, IndexForm::AdditiveFe, 0, 1)
            .unwrap()
            .with_identification(Identification::SumZeroBoth)
            .unwrap();
        let theta = [0.63];
        let res = profile_fixed_effects(&data, &spec, &theta, &ProfileOpts::default()).unwrap();
        assert!(res.converged);
        assert!(res.grad_norm < 1e-10);
        let eps = &data.y - &(&data.x[0] * theta[0]);
        let grand = eps.mean().unwrap();
        for i in 0..4 {
            let want = eps.row(i).mean().unwrap() - grand;
            assert_abs_diff_eq!(res.alpha_hat[i], want, epsilon = 1e-9);
        }
        for s in 0..5 {
            let want = eps.column(s).mean().unwrap() - grand;
            assert_abs_diff_eq!(res.gamma_hat[s], want, epsilon = 1e-9);
        }
        // Value agrees with the residual quadratic form.
        let mut ss = 0.0;
        for i in 0..4 {
            for s in 0..5 {
                let r = eps[(i, s)] - res.alpha_hat[i] - res.gamma_hat[s];
                ss += r * r;
            }
        }
        let want = -0.918_938_533_204_672_74 - ss / (2.0 * 20.0);
        assert_abs_diff_eq!(res.loglik_hat, want, epsilon = 1e-12);
    }

    #[test]
    fn sum_equal_attains_at_least_the_sum_zero_value() {
        // {Σα = 0, Σγ = 0} is a subset of {Σα = Σγ}, so the weaker constraint
        // profiles at least as high.
        let (data, spec) = binary_panel(5, 4, 3, Family::Logit);
        let theta = [0.4];
        let spec_se = spec.clone().with_identification(Identification::SumEqual).unwrap();
        let spec_szb = spec.with_identification(Identification::SumZeroBoth).unwrap();
        let r_se = profile_fixed_effects(&data, &spec_se, &theta, &ProfileOpts::default()).unwrap();
        let r_szb =
            profile_fixed_effects(&data, &spec_szb, &theta, &ProfileOpts::default()).unwrap();
        assert!(r_se.converged && r_szb.converged);
        assert!(r_se.loglik_hat >= r_szb.loglik_hat - 1e-12);
        // Both normalizations hold exactly.
        assert_abs_diff_eq!(r_se.alpha_hat.sum(), r_se.gamma_hat.sum(), epsilon = 1e-10);
        assert_abs_diff_eq!(r_szb.alpha_hat.sum(), 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(r_szb.gamma_hat.sum(), 0.0, epsilon = 1e-10);
    }

    #[test]
    fn flat_direction_is_a_singular_hessian_error() {
        // Slope-scale form with an all-zero covariate row: that unit's α
        // never enters the likelihood.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut x = Array2::from_shape_fn((3, 4), |_| rng.sample::<f64, _>(StandardNormal));
        for s in 0..4 {
            x[(0, s)] = 0.0;
        }
        let y = Array2::from_shape_fn((3, 4), |_| rng.sample::<f64, _>(StandardNormal));
        let data = PanelData::new(y, None, vec![("x".into(), x)], None, None).unwrap();
        let spec = ModelSpec::new(Family::Gaussian, IndexForm::SlopeScaleFe, 0, 1).unwrap();
        let err = profile_fixed_effects(&data, &spec, &[0.8], &ProfileOpts::default());
        assert!(matches!(err, Err(Error::SingularHessian(_))));
    }

    #[test]
    fn warm_start_converges_to_same_point_faster() {
        let (data, spec) = binary_panel(6, 5, 11, Family::Probit);
        let spec = spec.with_identification(Identification::SumZeroBoth).unwrap();
        let cold = profile_fixed_effects(&data, &spec, &[0.3], &ProfileOpts::default()).unwrap();
        let warm_opts = ProfileOpts::default()
            .with_warm_start(cold.alpha_hat.clone(), cold.gamma_hat.clone());
        let warm = profile_fixed_effects(&data, &spec, &[0.31], &warm_opts).unwrap();
        let cold2 = profile_fixed_effects(&data, &spec, &[0.31], &ProfileOpts::default()).unwrap();
        assert!(warm.converged && cold2.converged);
        assert!(warm.iterations <= cold2.iterations);
        for i in 0..6 {
            assert_abs_diff_eq!(warm.alpha_hat[i], cold2.alpha_hat[i], epsilon = 1e-8);
        }
    }

    #[test]
    fn profiled_score_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = Array2::from_shape_fn((4, 6), |_| rng.sample::<f64, _>(StandardNormal));
        let mut y = Array2::zeros((4, 6));
        for i in 0..4 {
            for s in 0..6 {
                y[(i, s)] = f64::from((i + s) % 2 == usize::from(rng.gen::<f64>() < 0.8));
            }
        }
        let y_init = array![1.0, 0.0, 1.0, 0.0];
        let data = PanelData::new(y, Some(y_init), vec![("x".into(), x)], None, None).unwrap();
        let spec = ModelSpec::new(Family::Logit, IndexForm::AdditiveFe, 1, 1).unwrap();
        let theta = [0.4, 0.8];
        let opts = ProfileOpts { tol: 1e-12, ..Default::default() };
        let pv = profiled_value_and_score(&data, &spec, &theta, &opts).unwrap();
        for j in 0..2 {
            let h = 1e-5;
            let mut tp = theta;
            let mut tm = theta;
            tp[j] += h;
            tm[j] -= h;
            let up = profile_fixed_effects(&data, &spec, &tp, &opts).unwrap().loglik_hat;
            let dn = profile_fixed_effects(&data, &spec, &tm, &opts).unwrap().loglik_hat;
            assert_abs_diff_eq!(pv.score[j], (up - dn) / (2.0 * h), epsilon = 5e-6);
        }
    }

    #[test]
    fn profiled_hessian_matches_gaussian_closed_form() {
        // Static gaussian, Σα=Σγ=0: l̂(β) is quadratic with curvature
        // −(1/NT)Σ x̃², x̃ the double-demeaned covariate keeping the grand mean.
        let data = gaussian_panel(5, 7, 13);
        let spec = ModelSpec::new(Family::Gaussian, IndexForm::AdditiveFe, 0, 1)
            .unwrap()
            .with_identification(Identification::SumZeroBoth)
            .unwrap();
        let prof = profile_fixed_effects(&data, &spec, &[0.2], &ProfileOpts::default()).unwrap();
        let h = profiled_theta_hessian(&data, &spec, &[0.2], &prof).unwrap();
        let x = &data.x[0];
        let grand = x.mean().unwrap();
        let mut ss = 0.0;
        for i in 0..5 {
            for s in 0..7 {
                let xt = x[(i, s)] - x.row(i).mean().unwrap() - x.column(s).mean().unwrap()
                    + 2.0 * grand;
                ss += xt * xt;
            }
        }
        assert_abs_diff_eq!(h[(0, 0)], -ss / 35.0, epsilon = 1e-10);
    }

    #[test]
    fn profiled_hessian_matches_fd_of_score() {
        let (data, spec) = binary_panel(5, 6, 17, Family::Logit);
        let theta = [0.25];
        let opts = ProfileOpts { tol: 1e-12, ..Default::default() };
        let prof = profile_fixed_effects(&data, &spec, &theta, &opts).unwrap();
        let h = profiled_theta_hessian(&data, &spec, &theta, &prof).unwrap();
        let step = 1e-5;
        let up = profiled_value_and_score(&data, &spec, &[theta[0] + step], &opts).unwrap();
        let dn = profiled_value_and_score(&data, &spec, &[theta[0] - step], &opts).unwrap();
        let fd = (up.score[0] - dn.score[0]) / (2.0 * step);
        assert_abs_diff_eq!(h[(0, 0)], fd, epsilon = 1e-5);
    }

    #[test]
    fn expected_profile_recovers_truth_effects() {
        // At θ₀ with truth generated from feasible effects, the expected
        // score vanishes exactly at φ₀, so the profiler must return it.
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let n = 5;
        let t = 6;
        let x = Array2::from_shape_fn((n, t), |_| rng.sample::<f64, _>(StandardNormal));
        let mut alpha0 = Array1::from_shape_fn(n, |_| rng.sample::<f64, _>(StandardNormal) * 0.3);
        let mut gamma0 = Array1::from_shape_fn(t, |_| rng.sample::<f64, _>(StandardNormal) * 0.3);
        alpha0 -= alpha0.mean().unwrap();
        gamma0 -= gamma0.mean().unwrap();
        let theta0 = [0.7];
        let truth = Array2::from_shape_fn((n, t), |(i, s)| {
            crate::num::sigmoid(theta0[0] * x[(i, s)] + alpha0[i] + gamma0[s])
        });
        // Outcomes are irrelevant for the expected profile but must be valid.
        let y = Array2::from_shape_fn((n, t), |(i, s)| f64::from((i + s) % 2 == 0));
        let data = PanelData::new(y, None, vec![("x".into(), x)], None, None).unwrap();
        let spec = ModelSpec::new(Family::Logit, IndexForm::AdditiveFe, 0, 1)
            .unwrap()
            .with_identification(Identification::SumZeroBoth)
            .unwrap();
        let opts = ProfileOpts { tol: 1e-12, ..Default::default() };
        let res = profile_expected_fixed_effects(&data, &spec, &theta0, &truth, &opts).unwrap();
        assert!(res.converged);
        for i in 0..n {
            assert_abs_diff_eq!(res.alpha_hat[i], alpha0[i], epsilon = 1e-6);
        }
        for s in 0..t {
            assert_abs_diff_eq!(res.gamma_hat[s], gamma0[s], epsilon = 1e-6);
        }
    }

    #[test]
    fn average_loglik_agrees_with_profile_value() {
        let (data, spec) = binary_panel(4, 4, 31, Family::Logit);
        let res = profile_fixed_effects(&data, &spec, &[0.1], &ProfileOpts::default()).unwrap();
        let (v, _) =
            average_loglik(&data, &spec, &[0.1], &res.alpha_hat, &res.gamma_hat).unwrap();
        assert_abs_diff_eq!(v, res.loglik_hat, epsilon = 1e-14);
    }
}
