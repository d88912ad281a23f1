//! Simulation designs, the infeasible likelihood, and the Monte Carlo harness.
//!
//! The catalog covers binary-choice panels with additive effects
//! (π = x'θ + α_i + γ_t), doubly scaled loadings (π = x'θ + α_iU + γ_tV),
//! a shared slope (π = x'θ + (λ + α_i + γ_t)U with λ the last θ entry), and
//! the gaussian autoregression used by closed-form oracles. Outcomes follow
//!
//! ```text
//!   Y_it = 1(π_it + ε_it > 0)          (binary families)
//!   Y_it = π_it + ε_it                 (gaussian)
//! ```
//!
//! with logistic or standard-normal ε. Because the simulator knows the true
//! conditional means P_it, it can profile the pseudo-true fixed effects φ(θ)
//! from the expected likelihood and evaluate the infeasible objective
//! l(θ) = (1/NT) Σ l_it(θ, φ(θ)) on the realized data — the benchmark that
//! removes incidental-parameter noise without removing sampling noise.
//!
//! Monte Carlo runs are reproducible: each replication derives its own
//! counter-based RNG stream from (master_seed, replication index), so results
//! are bit-identical across thread counts and scheduling orders.

use crate::correct::{corrected_loglik, corrected_score_and_hessian, CorrectedHessianMode, FD_STEP_REL};
use crate::error::Error;
use crate::infer::{bfgs_ascent, chi2_p_value, maximize, MaximizeOpts, Objective, TestKind};
use crate::model::{IndexForm, ModelSpec};
use crate::panel::PanelData;
use crate::profile::{
    profile_expected_fixed_effects, profile_fixed_effects, profiled_theta_hessian,
    profiled_value_and_score, sanitize_panel, ProfileOpts, ProfileResult, SanitizeReport,
};
use crate::{Family, Result};
use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// How the true fixed effects are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectLaw {
    /// α_i0, γ_t0 ~ N(0, 1/16).
    NormalSixteenth,
    /// All effects exactly zero (still estimated).
    Zeros,
}

/// How the covariates are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateLaw {
    /// Z_it = Z_{it−1}/2 + α_i0 + γ_t0 + ν_it with ν ~ N(0, 1/2) and
    /// Z_i0 ~ N(0, 1): covariates load on the same effects as the outcome.
    ArLoaded,
    /// Every cell (initial values included) iid N(0, 1/2).
    IidHalf,
}

/// One simulation design: model shape plus all distributional choices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DgpDesign {
    pub family: Family,
    pub index_form: IndexForm,
    pub dynamic: bool,
    pub n: usize,
    pub t: usize,
    pub effect_law: EffectLaw,
    pub covariate_law: CovariateLaw,
    /// True parameter, laid out [ρ₀?, β₀…, λ₀?].
    pub theta0: Vec<f64>,
}

impl DgpDesign {
    /// Look up a named catalog entry (panel size defaults to 56×14).
    ///
    /// Tags compose `{logit,probit}-{additive,ds,shared}-{dynamic,static}`
    /// where `ds` is the doubly scaled form α_iU_it + γ_tV_it, plus
    /// `gaussian-ar1` for the linear autoregression.
    pub fn named(tag: &str) -> Result<Self> {
        let (family, rest) = if let Some(r) = tag.strip_prefix("logit-") {
            (Family::Logit, r)
        } else if let Some(r) = tag.strip_prefix("probit-") {
            (Family::Probit, r)
        } else if tag == "gaussian-ar1" {
            return Ok(Self {
                family: Family::Gaussian,
                index_form: IndexForm::AdditiveFe,
                dynamic: true,
                n: 56,
                t: 14,
                effect_law: EffectLaw::Zeros,
                covariate_law: CovariateLaw::IidHalf,
                theta0: vec![0.5],
            });
        } else {
            return Err(Error::InvalidSpec(format!("unknown design tag {tag}")));
        };
        let (index_form, rest) = if let Some(r) = rest.strip_prefix("additive-") {
            (IndexForm::AdditiveFe, r)
        } else if let Some(r) = rest.strip_prefix("ds-") {
            (IndexForm::CovariateLoadedFe, r)
        } else if let Some(r) = rest.strip_prefix("shared-") {
            (IndexForm::SharedSlopeFe, r)
        } else {
            return Err(Error::InvalidSpec(format!("unknown design tag {tag}")));
        };
        let dynamic = match rest {
            "dynamic" => true,
            "static" => false,
            _ => return Err(Error::InvalidSpec(format!("unknown design tag {tag}"))),
        };
        // The shared-slope design zeroes the effects and draws iid covariates;
        // the others load N(0,1/16) effects into autoregressive covariates.
        let (effect_law, covariate_law) = match index_form {
            IndexForm::SharedSlopeFe => (EffectLaw::Zeros, CovariateLaw::IidHalf),
            _ => (EffectLaw::NormalSixteenth, CovariateLaw::ArLoaded),
        };
        let mut theta0 = Vec::new();
        if dynamic {
            theta0.push(0.5);
        }
        theta0.push(1.0);
        if index_form == IndexForm::SharedSlopeFe {
            theta0.push(1.0);
        }
        Ok(Self { family, index_form, dynamic, n: 56, t: 14, effect_law, covariate_law, theta0 })
    }

    pub fn with_size(mut self, n: usize, t: usize) -> Self {
        self.n = n;
        self.t = t;
        self
    }

    /// Short identifier used in reports.
    pub fn tag(&self) -> String {
        let form = match self.index_form {
            IndexForm::AdditiveFe => "additive",
            IndexForm::CovariateLoadedFe => "ds",
            IndexForm::SharedSlopeFe => "shared",
            IndexForm::SlopeShiftFe => "slope-shift",
            IndexForm::SlopeScaleFe => "slope-scale",
        };
        format!(
            "{}-{}-{}",
            self.family.name(),
            form,
            if self.dynamic { "dynamic" } else { "static" }
        )
    }

    fn lag_order(&self) -> usize {
        usize::from(self.dynamic)
    }

    fn n_shared(&self) -> usize {
        usize::from(self.index_form == IndexForm::SharedSlopeFe)
    }

    /// Number of slope covariates implied by the θ₀ layout.
    pub fn n_x(&self) -> usize {
        self.theta0.len().saturating_sub(self.lag_order() + self.n_shared())
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.t < 2 {
            return Err(Error::InvalidSpec("designs need N ≥ 2 and T ≥ 2".into()));
        }
        if self.theta0.len() < self.lag_order() + self.n_shared()
            || self.theta0.is_empty()
        {
            return Err(Error::InvalidSpec(
                "theta0 is shorter than the index form requires".into(),
            ));
        }
        match self.index_form {
            IndexForm::AdditiveFe | IndexForm::CovariateLoadedFe | IndexForm::SharedSlopeFe => {}
            _ => {
                return Err(Error::InvalidSpec(format!(
                    "no simulation design for index form {:?}",
                    self.index_form
                )));
            }
        }
        if self.family == Family::Gaussian && !matches!(self.index_form, IndexForm::AdditiveFe) {
            return Err(Error::InvalidSpec(
                "gaussian designs are supported with additive effects only".into(),
            ));
        }
        Ok(())
    }

    /// The estimation spec matching this design.
    pub fn spec(&self, tau: usize) -> Result<ModelSpec> {
        self.validate()?;
        Ok(ModelSpec::new(self.family, self.index_form, self.lag_order(), self.n_x())?
            .with_tau(tau))
    }

    /// Parameter names in θ order.
    pub fn theta_labels(&self) -> Vec<String> {
        let mut labels = Vec::with_capacity(self.theta0.len());
        if self.dynamic {
            labels.push("rho".to_string());
        }
        let n_x = self.n_x();
        if n_x == 1 {
            labels.push("x".to_string());
        } else {
            for k in 1..=n_x {
                labels.push(format!("x{k}"));
            }
        }
        if self.n_shared() == 1 {
            labels.push("lambda".to_string());
        }
        labels
    }
}

/// Everything the simulator knows that an analyst would not.
#[derive(Debug, Clone)]
pub struct Truth {
    pub theta0: Array1<f64>,
    pub alpha0: Array1<f64>,
    pub gamma0: Array1<f64>,
    /// True conditional means given realized covariates and realized lagged
    /// outcomes: F(π_it(θ₀, φ₀)) for binary families, the index itself for
    /// gaussian.
    pub p: Array2<f64>,
}

impl Truth {
    /// Restrict the truth to the units and periods a sanitize step kept.
    pub fn subset(&self, report: &SanitizeReport) -> Truth {
        let n = self.alpha0.len();
        let t = self.gamma0.len();
        let units: Vec<usize> =
            (0..n).filter(|i| !report.dropped_units.contains(i)).collect();
        let periods: Vec<usize> =
            (0..t).filter(|s| !report.dropped_periods.contains(s)).collect();
        let p = Array2::from_shape_fn((units.len(), periods.len()), |(a, b)| {
            self.p[(units[a], periods[b])]
        });
        Truth {
            theta0: self.theta0.clone(),
            alpha0: units.iter().map(|&i| self.alpha0[i]).collect(),
            gamma0: periods.iter().map(|&s| self.gamma0[s]).collect(),
            p,
        }
    }
}

/// SplitMix64 finalizer: decorrelates consecutive counters into seeds.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic per-replication seed, independent of scheduling.
pub fn rep_seed(master_seed: u64, rep: u64) -> u64 {
    splitmix64(master_seed ^ splitmix64(rep.wrapping_add(0x51A5_17E5)))
}

fn noise(family: Family, rng: &mut ChaCha8Rng) -> f64 {
    match family {
        // Inverse-CDF logistic draw; u ∈ [0,1) makes −∞ possible but never NaN.
        Family::Logit => {
            let u: f64 = rng.gen();
            (u / (1.0 - u)).ln()
        }
        Family::Probit | Family::Gaussian => rng.sample(StandardNormal),
    }
}

/// Simulate one panel plus its truth record.
///
/// The RNG draw order is part of the reproducibility contract:
/// 1. unit effects α₀ (i ascending), period effects γ₀ (t ascending), then
///    the initial-period effect (normal law only; the zeros law draws none);
/// 2. covariate series in x₁…x_k, U, V order, each as: per unit, the initial
///    value followed by that unit's T innovations (or iid cells);
/// 3. the N initial-outcome disturbances (dynamic binary designs only);
/// 4. outcome disturbances in time-major order.
pub fn generate(design: &DgpDesign, seed: u64) -> Result<(PanelData, Truth)> {
    design.validate()?;
    let (n, t) = (design.n, design.t);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let (alpha0, gamma0, gamma_init) = match design.effect_law {
        EffectLaw::NormalSixteenth => {
            let a = Array1::from_shape_fn(n, |_| rng.sample::<f64, _>(StandardNormal) * 0.25);
            let g = Array1::from_shape_fn(t, |_| rng.sample::<f64, _>(StandardNormal) * 0.25);
            let g0 = rng.sample::<f64, _>(StandardNormal) * 0.25;
            (a, g, g0)
        }
        EffectLaw::Zeros => (Array1::zeros(n), Array1::zeros(t), 0.0),
    };

    // Covariate series: panel matrix plus the pre-sample initial column that
    // dynamic initial conditions use.
    let draw_series = |rng: &mut ChaCha8Rng| -> (Array2<f64>, Array1<f64>) {
        let mut mat = Array2::zeros((n, t));
        let mut init = Array1::zeros(n);
        for i in 0..n {
            match design.covariate_law {
                CovariateLaw::ArLoaded => {
                    let z0: f64 = rng.sample(StandardNormal);
                    init[i] = z0;
                    let mut prev = z0;
                    for s in 0..t {
                        let nu = rng.sample::<f64, _>(StandardNormal) * (0.5f64).sqrt();
                        let z = prev / 2.0 + alpha0[i] + gamma0[s] + nu;
                        mat[(i, s)] = z;
                        prev = z;
                    }
                }
                CovariateLaw::IidHalf => {
                    init[i] = rng.sample::<f64, _>(StandardNormal) * (0.5f64).sqrt();
                    for s in 0..t {
                        mat[(i, s)] = rng.sample::<f64, _>(StandardNormal) * (0.5f64).sqrt();
                    }
                }
            }
        }
        (mat, init)
    };

    let n_x = design.n_x();
    let mut xs = Vec::with_capacity(n_x);
    let mut x_inits = Vec::with_capacity(n_x);
    for _ in 0..n_x {
        let (m, i0) = draw_series(&mut rng);
        xs.push(m);
        x_inits.push(i0);
    }
    let needs_u = matches!(
        design.index_form,
        IndexForm::CovariateLoadedFe | IndexForm::SharedSlopeFe
    );
    let needs_v = design.index_form == IndexForm::CovariateLoadedFe;
    let (u_mat, u_init) = if needs_u {
        let (m, i0) = draw_series(&mut rng);
        (Some(m), Some(i0))
    } else {
        (None, None)
    };
    let (v_mat, v_init) = if needs_v {
        let (m, i0) = draw_series(&mut rng);
        (Some(m), Some(i0))
    } else {
        (None, None)
    };

    let lag = design.lag_order();
    let rho = if design.dynamic { design.theta0[0] } else { 0.0 };
    let beta = &design.theta0[lag..lag + n_x];
    let lambda = if design.n_shared() == 1 { *design.theta0.last().unwrap() } else { 0.0 };

    // π_it at the truth given a realized lag; `s == usize::MAX` addresses the
    // pre-sample initial condition (which has no lag term by construction).
    let index_at = |i: usize, s: usize, ylag: f64| -> f64 {
        let initial = s == usize::MAX;
        let mut pi = if initial { 0.0 } else { rho * ylag };
        for (k, b) in beta.iter().enumerate() {
            pi += b * if initial { x_inits[k][i] } else { xs[k][(i, s)] };
        }
        let gamma_s = if initial { gamma_init } else { gamma0[s] };
        match design.index_form {
            IndexForm::AdditiveFe => pi + alpha0[i] + gamma_s,
            IndexForm::CovariateLoadedFe => {
                let u = if initial { u_init.as_ref().unwrap()[i] } else { u_mat.as_ref().unwrap()[(i, s)] };
                let v = if initial { v_init.as_ref().unwrap()[i] } else { v_mat.as_ref().unwrap()[(i, s)] };
                pi + alpha0[i] * u + gamma_s * v
            }
            IndexForm::SharedSlopeFe => {
                let u = if initial { u_init.as_ref().unwrap()[i] } else { u_mat.as_ref().unwrap()[(i, s)] };
                // λ sits in θ, so the remaining effect loading is α + γ.
                pi + (lambda + alpha0[i] + gamma_s) * u
            }
            _ => unreachable!("validated index forms only"),
        }
    };

    let y_init = if design.dynamic {
        if design.family == Family::Gaussian {
            // The linear autoregression starts from rest.
            Some(Array1::zeros(n))
        } else {
            let mut y0 = Array1::zeros(n);
            for i in 0..n {
                let eps = noise(design.family, &mut rng);
                y0[i] = f64::from(index_at(i, usize::MAX, 0.0) + eps > 0.0);
            }
            Some(y0)
        }
    } else {
        None
    };

    let mut y = Array2::zeros((n, t));
    let mut pi_true = Array2::zeros((n, t));
    for s in 0..t {
        for i in 0..n {
            let ylag = if design.dynamic {
                if s == 0 { y_init.as_ref().unwrap()[i] } else { y[(i, s - 1)] }
            } else {
                0.0
            };
            let pi = index_at(i, s, ylag);
            pi_true[(i, s)] = pi;
            let eps = noise(design.family, &mut rng);
            y[(i, s)] = if design.family == Family::Gaussian {
                pi + eps
            } else {
                f64::from(pi + eps > 0.0)
            };
        }
    }

    let labels = design.theta_labels();
    let x_named: Vec<(String, Array2<f64>)> = labels
        .iter()
        .skip(lag)
        .take(n_x)
        .cloned()
        .zip(xs)
        .collect();
    let data = PanelData::new(y, y_init, x_named, u_mat, v_mat)?;
    let p = if design.family == Family::Gaussian {
        pi_true
    } else {
        pi_true.mapv(|pi| design.family.prob(pi))
    };
    let truth = Truth {
        theta0: Array1::from(design.theta0.clone()),
        alpha0,
        gamma0,
        p,
    };
    Ok((data, truth))
}

/// Realized average log-likelihood at the pseudo-true fixed effects φ(θ),
/// which maximize the expected likelihood the simulator can compute exactly.
/// The returned profile's `loglik_hat` is the expected value at φ(θ); the
/// first element is the realized l(θ) used by infeasible test statistics.
pub fn infeasible_loglik(
    truth: &Truth,
    data: &PanelData,
    spec: &ModelSpec,
    theta: &[f64],
    opts: &ProfileOpts,
) -> Result<(f64, ProfileResult)> {
    let profile = profile_expected_fixed_effects(data, spec, theta, &truth.p, opts)?;
    if !profile.converged {
        return Err(Error::NoConvergence {
            what: "pseudo-true fixed-effect profile",
            iterations: profile.iterations,
            grad_norm: profile.grad_norm,
        });
    }
    let (value, _) =
        crate::profile::average_loglik(data, spec, theta, &profile.alpha_hat, &profile.gamma_hat)?;
    Ok((value, profile))
}

/// Which likelihood a Monte Carlo pass evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MCObjective {
    /// Truth-using benchmark l(θ).
    Infeasible,
    /// Profiled likelihood l̂(θ).
    Raw,
    /// Bias-corrected likelihood l̃(θ).
    Corrected,
}

impl MCObjective {
    pub fn name(self) -> &'static str {
        match self {
            MCObjective::Infeasible => "infeasible",
            MCObjective::Raw => "raw",
            MCObjective::Corrected => "corrected",
        }
    }
}

/// The full δ grid −0.30, −0.28, …, 0.30.
pub fn default_delta_grid() -> Vec<f64> {
    (-15..=15).map(|k| f64::from(k) * 0.02).collect()
}

/// Monte Carlo experiment settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MCConfig {
    pub design: DgpDesign,
    pub replications: usize,
    /// Offsets: each replication tests the point null θ = θ₀ + δ·ι for every
    /// δ here (δ = 0 gives size, δ ≠ 0 power).
    pub delta_grid: Vec<f64>,
    pub tau: usize,
    pub kinds: Vec<TestKind>,
    pub objectives: Vec<MCObjective>,
    pub master_seed: u64,
    pub nominal_level: f64,
}

impl MCConfig {
    pub fn new(design: DgpDesign) -> Self {
        Self {
            design,
            replications: 1000,
            delta_grid: default_delta_grid(),
            tau: 1,
            kinds: vec![TestKind::Lr],
            objectives: vec![MCObjective::Infeasible, MCObjective::Raw, MCObjective::Corrected],
            master_seed: 1,
            nominal_level: 0.05,
        }
    }

    fn validate(&self) -> Result<()> {
        self.design.validate()?;
        if self.replications == 0 {
            return Err(Error::InvalidSpec("at least one replication required".into()));
        }
        if !self.delta_grid.iter().any(|d| d.abs() < 1e-12) {
            return Err(Error::InvalidSpec("delta grid must contain 0".into()));
        }
        if self.kinds.is_empty() || self.objectives.is_empty() {
            return Err(Error::InvalidSpec("kinds and objectives must be nonempty".into()));
        }
        if !(0.0..1.0).contains(&self.nominal_level) || self.nominal_level <= 0.0 {
            return Err(Error::InvalidSpec("nominal level must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// One rejection-curve point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionPoint {
    pub objective: MCObjective,
    pub kind: TestKind,
    pub delta: f64,
    pub rejection_rate: f64,
    /// Binomial Monte Carlo standard error sqrt(r(1−r)/n).
    pub mc_se: f64,
    pub n_effective: usize,
}

/// Monte Carlo summary of one unconstrained estimator coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub objective: MCObjective,
    pub parameter: String,
    pub true_value: f64,
    pub mean: f64,
    /// 100·(mean − truth)/truth; NaN when the truth is zero.
    pub percent_bias: f64,
    pub rmse: f64,
}

/// Per-replication bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub rep: usize,
    pub included: bool,
    pub dropped_units: usize,
    pub dropped_periods: usize,
    /// Empty for included replications, otherwise the exclusion reason.
    pub note: String,
}

/// Aggregated Monte Carlo output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MCReport {
    pub design_tag: String,
    pub n: usize,
    pub t: usize,
    pub tau: usize,
    pub master_seed: u64,
    pub nominal_level: f64,
    pub replications_requested: usize,
    pub replications_included: usize,
    pub excluded: usize,
    pub curves: Vec<RejectionPoint>,
    pub estimators: Vec<EstimatorSummary>,
    pub replication_log: Vec<RepRecord>,
}

impl MCReport {
    /// The curve point for one (objective, kind, δ), matching δ loosely.
    pub fn rejection_at(
        &self,
        objective: MCObjective,
        kind: TestKind,
        delta: f64,
    ) -> Option<&RejectionPoint> {
        self.curves.iter().find(|c| {
            c.objective == objective && c.kind == kind && (c.delta - delta).abs() < 1e-9
        })
    }

    pub fn estimator(&self, objective: MCObjective, parameter: &str) -> Option<&EstimatorSummary> {
        self.estimators
            .iter()
            .find(|e| e.objective == objective && e.parameter == parameter)
    }
}

struct RepOutcome {
    /// Row-major over (objective, kind, δ).
    rejected: Vec<bool>,
    /// (objective index, unconstrained estimate).
    estimates: Vec<(usize, Vec<f64>)>,
    dropped_units: usize,
    dropped_periods: usize,
}

/// Infeasible-objective evaluations with finite-difference derivatives and a
/// warm-started inner profiler.
struct InfeasibleEval<'a> {
    truth: &'a Truth,
    data: &'a PanelData,
    spec: &'a ModelSpec,
    warm: Option<(Array1<f64>, Array1<f64>)>,
}

impl InfeasibleEval<'_> {
    fn value(&mut self, theta: &[f64]) -> Result<f64> {
        let opts = ProfileOpts { tol: 1e-12, max_iter: 200, warm_start: self.warm.take() };
        let (v, prof) = infeasible_loglik(self.truth, self.data, self.spec, theta, &opts)?;
        self.warm = Some((prof.alpha_hat, prof.gamma_hat));
        Ok(v)
    }

    fn score(&mut self, theta: &[f64]) -> Result<Array1<f64>> {
        let p = theta.len();
        let mut score = Array1::zeros(p);
        for j in 0..p {
            let h = FD_STEP_REL * theta[j].abs().max(1.0);
            let mut up = theta.to_vec();
            let mut dn = theta.to_vec();
            up[j] += h;
            dn[j] -= h;
            score[j] = (self.value(&up)? - self.value(&dn)?) / (2.0 * h);
        }
        Ok(score)
    }

    /// Second central differences of the value.
    fn hessian(&mut self, theta: &[f64]) -> Result<Array2<f64>> {
        let p = theta.len();
        let f0 = self.value(theta)?;
        let step: Vec<f64> =
            (0..p).map(|j| FD_STEP_REL * theta[j].abs().max(1.0)).collect();
        let mut h = Array2::zeros((p, p));
        for j in 0..p {
            let mut up = theta.to_vec();
            let mut dn = theta.to_vec();
            up[j] += step[j];
            dn[j] -= step[j];
            h[(j, j)] =
                (self.value(&up)? - 2.0 * f0 + self.value(&dn)?) / (step[j] * step[j]);
        }
        for j in 0..p {
            for k in 0..j {
                let mut pp = theta.to_vec();
                let mut pm = theta.to_vec();
                let mut mp = theta.to_vec();
                let mut mm = theta.to_vec();
                pp[j] += step[j];
                pp[k] += step[k];
                pm[j] += step[j];
                pm[k] -= step[k];
                mp[j] -= step[j];
                mp[k] += step[k];
                mm[j] -= step[j];
                mm[k] -= step[k];
                let v = (self.value(&pp)? - self.value(&pm)? - self.value(&mp)?
                    + self.value(&mm)?)
                    / (4.0 * step[j] * step[k]);
                h[(j, k)] = v;
                h[(k, j)] = v;
            }
        }
        Ok(h)
    }
}

fn quad_form_stat(
    nt: f64,
    score: &Array1<f64>,
    hessian: &Array2<f64>,
) -> Result<f64> {
    let lu = crate::linalg::Lu::new(hessian).ok_or_else(|| {
        Error::SingularHessian("theta-Hessian in the score statistic".into())
    })?;
    let w = lu.solve(score.as_slice().unwrap());
    let quad: f64 = score.iter().zip(&w).map(|(a, b)| a * b).sum();
    Ok(-nt * quad)
}

fn run_rep(cfg: &MCConfig, spec: &ModelSpec, rep: usize) -> Result<RepOutcome> {
    let seed = rep_seed(cfg.master_seed, rep as u64);
    let (data_full, truth_full) = generate(&cfg.design, seed)?;
    let (data, san) = sanitize_panel(&data_full, spec)?;
    let shrink = 1.0 - data.y.len() as f64 / data_full.y.len() as f64;
    if shrink > 0.2 {
        return Err(Error::InvalidSpec(format!(
            "excluded: sanitize removed {:.1}% of cells",
            100.0 * shrink
        )));
    }
    let truth = truth_full.subset(&san);
    let (n, t) = data.y.dim();
    let nt = (n * t) as f64;
    let p = spec.theta_dim;
    let theta0 = truth.theta0.clone();

    let needs_fd_hessian =
        cfg.kinds.iter().any(|k| matches!(k, TestKind::Wald | TestKind::Lm));
    let m_opts = MaximizeOpts {
        // LR-only runs never read the stored Hessian, so the cheap analytic
        // raw curvature stands in; Wald/LM runs pay for the honest one.
        hessian_mode: if needs_fd_hessian {
            CorrectedHessianMode::FdOfScore
        } else {
            CorrectedHessianMode::RawAnalytic
        },
        ..Default::default()
    };

    let n_kinds = cfg.kinds.len();
    let n_deltas = cfg.delta_grid.len();
    let mut rejected = vec![false; cfg.objectives.len() * n_kinds * n_deltas];
    let mut estimates = Vec::with_capacity(cfg.objectives.len());
    let mut raw_theta: Option<Array1<f64>> = None;

    for (oi, obj) in cfg.objectives.iter().enumerate() {
        match obj {
            MCObjective::Raw | MCObjective::Corrected => {
                let objective = match obj {
                    MCObjective::Raw => Objective::Raw,
                    _ => Objective::Corrected,
                };
                let mut fit_opts = m_opts.clone();
                if matches!(obj, MCObjective::Corrected) {
                    fit_opts.start = raw_theta.clone();
                }
                let fit = maximize(&data, spec, objective, None, &fit_opts)?;
                if !fit.converged {
                    return Err(Error::NoConvergence {
                        what: "outer theta maximization",
                        iterations: fit.iterations,
                        grad_norm: fit.score_norm,
                    });
                }
                if matches!(obj, MCObjective::Raw) {
                    raw_theta = Some(fit.theta_hat.clone());
                }
                estimates.push((oi, fit.theta_hat.to_vec()));

                let mut warm =
                    Some((fit.profile.alpha_hat.clone(), fit.profile.gamma_hat.clone()));
                for (di, &delta) in cfg.delta_grid.iter().enumerate() {
                    let theta_r = theta0.mapv(|v| v + delta);
                    let tr = theta_r.as_slice().unwrap();
                    for (ki, &kind) in cfg.kinds.iter().enumerate() {
                        let stat = match kind {
                            TestKind::Lr => {
                                let value_r = match objective {
                                    Objective::Raw => {
                                        let opts = ProfileOpts {
                                            warm_start: warm.take(),
                                            ..Default::default()
                                        };
                                        let prof =
                                            profile_fixed_effects(&data, spec, tr, &opts)?;
                                        let v = prof.loglik_hat;
                                        warm = Some((prof.alpha_hat, prof.gamma_hat));
                                        v
                                    }
                                    Objective::Corrected => {
                                        let mut copts = m_opts.correction.clone();
                                        copts.profile.warm_start = warm.take();
                                        let out = corrected_loglik(&data, spec, tr, &copts)?;
                                        warm = Some((
                                            out.profile.alpha_hat,
                                            out.profile.gamma_hat,
                                        ));
                                        out.value
                                    }
                                };
                                -2.0 * nt * (value_r - fit.loglik)
                            }
                            TestKind::Wald => {
                                // Full point null: J = I, so the variance
                                // inverse is the Hessian itself.
                                let r = &fit.theta_hat - &theta_r;
                                let hr = fit.hessian_theta.dot(&r);
                                -nt * r.dot(&hr)
                            }
                            TestKind::Lm => match objective {
                                Objective::Raw => {
                                    let opts = ProfileOpts {
                                        warm_start: warm.take(),
                                        ..Default::default()
                                    };
                                    let pv = profiled_value_and_score(&data, spec, tr, &opts)?;
                                    let h =
                                        profiled_theta_hessian(&data, spec, tr, &pv.profile)?;
                                    warm = Some((
                                        pv.profile.alpha_hat.clone(),
                                        pv.profile.gamma_hat.clone(),
                                    ));
                                    quad_form_stat(nt, &pv.score, &h)?
                                }
                                Objective::Corrected => {
                                    let mut copts = m_opts.correction.clone();
                                    copts.profile.warm_start = warm.clone();
                                    let (s, h) = corrected_score_and_hessian(
                                        &data,
                                        spec,
                                        tr,
                                        &copts,
                                        CorrectedHessianMode::FdOfScore,
                                    )?;
                                    quad_form_stat(nt, &s, &h)?
                                }
                            },
                        };
                        let pv = chi2_p_value(stat.max(0.0), p);
                        rejected[(oi * n_kinds + ki) * n_deltas + di] =
                            pv < cfg.nominal_level;
                    }
                }
            }
            MCObjective::Infeasible => {
                let mut ev = InfeasibleEval { truth: &truth, data: &data, spec, warm: None };
                let fit = {
                    let mut fcall = |th: &Array1<f64>, need_grad: bool| {
                        let ts = th.as_slice().unwrap();
                        let v = ev.value(ts)?;
                        if need_grad {
                            Ok((v, Some(ev.score(ts)?)))
                        } else {
                            Ok((v, None))
                        }
                    };
                    bfgs_ascent(&mut fcall, theta0.clone(), 300, 1e-7, 1e-12)?
                };
                if !fit.converged {
                    return Err(Error::NoConvergence {
                        what: "infeasible-likelihood maximization",
                        iterations: fit.iterations,
                        grad_norm: fit.grad_norm,
                    });
                }
                estimates.push((oi, fit.psi.to_vec()));
                let hess_opt = if cfg.kinds.contains(&TestKind::Wald) {
                    Some(ev.hessian(fit.psi.as_slice().unwrap())?)
                } else {
                    None
                };
                for (di, &delta) in cfg.delta_grid.iter().enumerate() {
                    let theta_r = theta0.mapv(|v| v + delta);
                    let tr = theta_r.as_slice().unwrap();
                    for (ki, &kind) in cfg.kinds.iter().enumerate() {
                        let stat = match kind {
                            TestKind::Lr => {
                                let value_r = ev.value(tr)?;
                                -2.0 * nt * (value_r - fit.value)
                            }
                            TestKind::Wald => {
                                let r = &fit.psi - &theta_r;
                                let hr = hess_opt.as_ref().unwrap().dot(&r);
                                -nt * r.dot(&hr)
                            }
                            TestKind::Lm => {
                                let s = ev.score(tr)?;
                                let h = ev.hessian(tr)?;
                                quad_form_stat(nt, &s, &h)?
                            }
                        };
                        let pv = chi2_p_value(stat.max(0.0), p);
                        rejected[(oi * n_kinds + ki) * n_deltas + di] =
                            pv < cfg.nominal_level;
                    }
                }
            }
        }
    }

    Ok(RepOutcome {
        rejected,
        estimates,
        dropped_units: san.dropped_units.len(),
        dropped_periods: san.dropped_periods.len(),
    })
}

/// Run the full experiment. Per-replication failures are recorded and
/// excluded; only configuration errors abort the run. Output is identical
/// across thread counts for a fixed master seed.
pub fn monte_carlo(cfg: &MCConfig) -> Result<MCReport> {
    cfg.validate()?;
    let spec = cfg.design.spec(cfg.tau)?;
    let outcomes: Vec<Result<RepOutcome>> = (0..cfg.replications)
        .into_par_iter()
        .map(|rep| run_rep(cfg, &spec, rep))
        .collect();

    let n_kinds = cfg.kinds.len();
    let n_deltas = cfg.delta_grid.len();
    let mut counts = vec![0usize; cfg.objectives.len() * n_kinds * n_deltas];
    let mut estimates: Vec<Vec<Vec<f64>>> = vec![Vec::new(); cfg.objectives.len()];
    let mut replication_log = Vec::with_capacity(cfg.replications);
    let mut included = 0usize;
    for (rep, res) in outcomes.into_iter().enumerate() {
        match res {
            Ok(out) => {
                included += 1;
                for (slot, hit) in counts.iter_mut().zip(&out.rejected) {
                    *slot += usize::from(*hit);
                }
                for (oi, est) in out.estimates {
                    estimates[oi].push(est);
                }
                replication_log.push(RepRecord {
                    rep,
                    included: true,
                    dropped_units: out.dropped_units,
                    dropped_periods: out.dropped_periods,
                    note: String::new(),
                });
            }
            Err(e) => replication_log.push(RepRecord {
                rep,
                included: false,
                dropped_units: 0,
                dropped_periods: 0,
                note: e.to_string(),
            }),
        }
    }

    let mut curves = Vec::with_capacity(counts.len());
    for (oi, obj) in cfg.objectives.iter().enumerate() {
        for (ki, kind) in cfg.kinds.iter().enumerate() {
            for (di, &delta) in cfg.delta_grid.iter().enumerate() {
                let c = counts[(oi * n_kinds + ki) * n_deltas + di];
                let (rate, se) = if included > 0 {
                    let r = c as f64 / included as f64;
                    (r, (r * (1.0 - r) / included as f64).sqrt())
                } else {
                    (f64::NAN, f64::NAN)
                };
                curves.push(RejectionPoint {
                    objective: *obj,
                    kind: *kind,
                    delta,
                    rejection_rate: rate,
                    mc_se: se,
                    n_effective: included,
                });
            }
        }
    }

    let labels = cfg.design.theta_labels();
    let mut estimators = Vec::new();
    for (oi, obj) in cfg.objectives.iter().enumerate() {
        let reps = &estimates[oi];
        if reps.is_empty() {
            continue;
        }
        for (j, label) in labels.iter().enumerate() {
            let truth = cfg.design.theta0[j];
            let mean = reps.iter().map(|v| v[j]).sum::<f64>() / reps.len() as f64;
            let mse = reps.iter().map(|v| (v[j] - truth).powi(2)).sum::<f64>()
                / reps.len() as f64;
            estimators.push(EstimatorSummary {
                objective: *obj,
                parameter: label.clone(),
                true_value: truth,
                mean,
                percent_bias: if truth == 0.0 {
                    f64::NAN
                } else {
                    100.0 * (mean - truth) / truth
                },
                rmse: mse.sqrt(),
            });
        }
    }

    Ok(MCReport {
        design_tag: cfg.design.tag(),
        n: cfg.design.n,
        t: cfg.design.t,
        tau: cfg.tau,
        master_seed: cfg.master_seed,
        nominal_level: cfg.nominal_level,
        replications_requested: cfg.replications,
        replications_included: included,
        excluded: cfg.replications - included,
        curves,
        estimators,
        replication_log,
    })
}
