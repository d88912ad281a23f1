//! Model specification: likelihood family, linear-index form, identification
//! constraints, and observation-level derivatives.
//!
//! Every supported index form is affine in the fixed effects at fixed θ:
//!
//! ```text
//!   π_it = base_it(θ) + a_it(θ)·α_i + g_it(θ)·γ_t
//! ```
//!
//! with form-specific base and loadings. That affine structure is what makes
//! the fixed-effect Hessian an arrow matrix (diagonal blocks plus a dense
//! cross block) and is relied on throughout the profiler.

pub use crate::family::Family;
use crate::error::Error;
use crate::num::INDEX_CLAMP;
use crate::panel::PanelData;
use crate::Result;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

/// How the fixed effects enter the linear index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexForm {
    /// `π = Z'θ + α_i + γ_t`
    AdditiveFe,
    /// `π = Z'(θ + α_i + γ_t)`: the effects shift every slope.
    SlopeShiftFe,
    /// `π = Z'θ · (α_i + γ_t)`: the effects scale the whole index.
    SlopeScaleFe,
    /// `π = Z'θ + α_i·U_it + γ_t·V_it`
    CovariateLoadedFe,
    /// `π = Z'θ + (α_i + γ_t)·U_it` with `U` also carrying a common slope in θ.
    SharedSlopeFe,
}

/// Normalization pinning down the fixed-effect level/scale left free by the
/// index form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Identification {
    /// `Σα = 0` and `Σγ = 0`.
    SumZeroBoth,
    /// `Σα = Σγ` (one constraint; the additive level stays in the effects).
    SumEqual,
    /// `mean(α) = ½` and `mean(γ) = ½` (scale-form normalization).
    MeanHalf,
    /// No constraint; the loadings vary enough to identify the effects.
    NoneNeeded,
}

impl IndexForm {
    /// Default identification per form.
    pub fn default_identification(self) -> Identification {
        match self {
            IndexForm::AdditiveFe => Identification::SumEqual,
            IndexForm::SlopeShiftFe | IndexForm::SharedSlopeFe => Identification::SumZeroBoth,
            IndexForm::SlopeScaleFe => Identification::MeanHalf,
            IndexForm::CovariateLoadedFe => Identification::NoneNeeded,
        }
    }

    fn allows(self, id: Identification) -> bool {
        match self {
            IndexForm::AdditiveFe => {
                matches!(id, Identification::SumEqual | Identification::SumZeroBoth)
            }
            IndexForm::SlopeShiftFe | IndexForm::SharedSlopeFe => {
                matches!(id, Identification::SumZeroBoth)
            }
            IndexForm::SlopeScaleFe => matches!(id, Identification::MeanHalf),
            IndexForm::CovariateLoadedFe => matches!(id, Identification::NoneNeeded),
        }
    }
}

/// Full model specification. θ is laid out as `[ρ (lag coefficient, if
/// dynamic), β's (one per x covariate), λ (shared slope on U, shared form
/// only)]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    pub index_form: IndexForm,
    /// 0 for static models, 1 when the lagged outcome enters the θ block.
    pub lag_order: usize,
    pub identification: Identification,
    /// Truncation lag for the score-autocovariance window. Forced to 0 in
    /// correction code when `lag_order == 0` (strictly exogenous model).
    pub tau: usize,
    pub theta_dim: usize,
}

impl ModelSpec {
    /// Build a spec with the form's default identification and τ = 0.
    pub fn new(family: Family, index_form: IndexForm, lag_order: usize, n_x: usize) -> Result<Self> {
        if lag_order > 1 {
            return Err(Error::InvalidSpec(
                "only first-order outcome dynamics are supported".into(),
            ));
        }
        let theta_dim =
            lag_order + n_x + if index_form == IndexForm::SharedSlopeFe { 1 } else { 0 };
        if theta_dim == 0 {
            return Err(Error::InvalidSpec("θ must have at least one component".into()));
        }
        Ok(Self {
            family,
            index_form,
            lag_order,
            identification: index_form.default_identification(),
            tau: 0,
            theta_dim,
        })
    }

    pub fn with_tau(mut self, tau: usize) -> Self {
        self.tau = tau;
        self
    }

    pub fn with_identification(mut self, id: Identification) -> Result<Self> {
        if !self.index_form.allows(id) {
            return Err(Error::InvalidSpec(format!(
                "identification {id:?} is not valid for {:?}",
                self.index_form
            )));
        }
        self.identification = id;
        Ok(self)
    }

    pub fn is_dynamic(&self) -> bool {
        self.lag_order > 0
    }

    /// Number of x covariates implied by the θ layout.
    pub fn n_x(&self) -> usize {
        self.theta_dim
            - self.lag_order
            - if self.index_form == IndexForm::SharedSlopeFe { 1 } else { 0 }
    }

    /// Check the panel satisfies this spec's structural requirements.
    pub fn check_data(&self, data: &PanelData) -> Result<()> {
        if self.family.is_binary() {
            for ((i, t), &y) in data.y.indexed_iter() {
                if !self.family.supports_outcome(y) {
                    return Err(Error::BadFamilyData {
                        family: self.family.name(),
                        value: y,
                        unit: i,
                        period: t,
                    });
                }
            }
        }
        if self.is_dynamic() && data.y_lag.is_none() {
            return Err(Error::InvalidSpec(
                "dynamic model needs initial conditions (y_init)".into(),
            ));
        }
        if data.x.len() != self.n_x() {
            return Err(Error::InvalidSpec(format!(
                "θ layout expects {} x covariates, panel has {}",
                self.n_x(),
                data.x.len()
            )));
        }
        match self.index_form {
            IndexForm::CovariateLoadedFe => {
                if data.u.is_none() || data.v.is_none() {
                    return Err(Error::InvalidSpec(
                        "covariate-loaded form needs distinct U and V covariates".into(),
                    ));
                }
            }
            IndexForm::SharedSlopeFe => {
                if data.u.is_none() {
                    return Err(Error::InvalidSpec("shared-slope form needs a U covariate".into()));
                }
            }
            _ => {}
        }
        if !self.index_form.allows(self.identification) {
            return Err(Error::InvalidSpec(format!(
                "identification {:?} is not valid for {:?}",
                self.identification, self.index_form
            )));
        }
        Ok(())
    }

    /// θ-block covariate matrices in layout order: lag, x's, then U for the
    /// shared-slope form.
    pub(crate) fn z_mats<'a>(&self, data: &'a PanelData) -> Vec<&'a Array2<f64>> {
        let mut z: Vec<&Array2<f64>> = Vec::with_capacity(self.theta_dim);
        if self.is_dynamic() {
            z.push(data.y_lag.as_ref().expect("checked dynamic data"));
        }
        for m in &data.x {
            z.push(m);
        }
        if self.index_form == IndexForm::SharedSlopeFe {
            z.push(data.u.as_ref().expect("checked shared-slope data"));
        }
        z
    }
}

/// Fixed-effect loading of the linear index: `∂π/∂α_i` or `∂π/∂γ_t`.
pub(crate) enum Loading {
    Unit,
    Mat(Array2<f64>),
}

impl Loading {
    #[inline]
    pub(crate) fn get(&self, i: usize, t: usize) -> f64 {
        match self {
            Loading::Unit => 1.0,
            Loading::Mat(m) => m[(i, t)],
        }
    }
}

/// Per-θ evaluation context: `π_it = base_it + a_it·α_i + g_it·γ_t`.
pub(crate) struct IndexCtx {
    pub base: Array2<f64>,
    pub a: Loading,
    pub g: Loading,
}

impl IndexCtx {
    #[inline]
    pub(crate) fn raw_index(&self, i: usize, t: usize, alpha: f64, gamma: f64) -> f64 {
        self.base[(i, t)] + self.a.get(i, t) * alpha + self.g.get(i, t) * gamma
    }
}

/// Clamp an index into the numerically safe range, reporting whether the
/// clamp was active.
#[inline]
pub(crate) fn clamp_index(raw: f64) -> (f64, bool) {
    if raw > INDEX_CLAMP {
        (INDEX_CLAMP, true)
    } else if raw < -INDEX_CLAMP {
        (-INDEX_CLAMP, true)
    } else {
        (raw, false)
    }
}

pub(crate) fn build_index_ctx(spec: &ModelSpec, data: &PanelData, theta: &[f64]) -> Result<IndexCtx> {
    if theta.len() != spec.theta_dim {
        return Err(Error::InvalidSpec(format!(
            "θ has length {}, spec says {}",
            theta.len(),
            spec.theta_dim
        )));
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidSpec("θ contains non-finite entries".into()));
    }
    let (n, t) = data.y.dim();
    let z = spec.z_mats(data);
    let mut core = Array2::<f64>::zeros((n, t));
    for (j, zj) in z.iter().enumerate() {
        core.scaled_add(theta[j], zj);
    }
    Ok(match spec.index_form {
        IndexForm::AdditiveFe => IndexCtx { base: core, a: Loading::Unit, g: Loading::Unit },
        IndexForm::CovariateLoadedFe => IndexCtx {
            base: core,
            a: Loading::Mat(data.u.as_ref().unwrap().clone()),
            g: Loading::Mat(data.v.as_ref().unwrap().clone()),
        },
        IndexForm::SlopeShiftFe => {
            let mut s = Array2::<f64>::zeros((n, t));
            for zj in &z {
                s += *zj;
            }
            IndexCtx { base: core, a: Loading::Mat(s.clone()), g: Loading::Mat(s) }
        }
        IndexForm::SlopeScaleFe => {
            // The whole index is core·(α+γ): base 0, both loadings = core.
            IndexCtx {
                base: Array2::zeros((n, t)),
                a: Loading::Mat(core.clone()),
                g: Loading::Mat(core),
            }
        }
        IndexForm::SharedSlopeFe => {
            let u = data.u.as_ref().unwrap().clone();
            IndexCtx { base: core, a: Loading::Mat(u.clone()), g: Loading::Mat(u) }
        }
    })
}

/// Observation-level log-likelihood and partials with respect to θ, `α_i`,
/// and `γ_t`.
#[derive(Debug, Clone)]
pub struct DerivBundle {
    pub value: f64,
    pub grad_theta: Array1<f64>,
    pub grad_alpha: f64,
    pub grad_gamma: f64,
    pub d2_alpha: f64,
    pub d2_gamma: f64,
    pub d2_alpha_gamma: f64,
    pub d2_theta_alpha: Array1<f64>,
    pub d2_theta_gamma: Array1<f64>,
    pub d2_theta: Array2<f64>,
    /// Index was clamped to ±[`INDEX_CLAMP`] before link evaluation.
    pub clamped: bool,
}

fn checked_index(
    spec: &ModelSpec,
    data: &PanelData,
    i: usize,
    t: usize,
    theta: &[f64],
    alpha: f64,
    gamma: f64,
) -> Result<(f64, bool, Vec<f64>)> {
    let (n, tt) = data.y.dim();
    if i >= n || t >= tt {
        return Err(Error::InvalidSpec(format!("observation ({i},{t}) outside {n}×{tt} panel")));
    }
    let z = spec.z_mats(data);
    let zv: Vec<f64> = z.iter().map(|m| m[(i, t)]).collect();
    let core: f64 = zv.iter().zip(theta).map(|(z, th)| z * th).sum();
    let raw = match spec.index_form {
        IndexForm::AdditiveFe => core + alpha + gamma,
        IndexForm::CovariateLoadedFe => {
            core + alpha * data.u.as_ref().unwrap()[(i, t)] + gamma * data.v.as_ref().unwrap()[(i, t)]
        }
        IndexForm::SlopeShiftFe => core + (alpha + gamma) * zv.iter().sum::<f64>(),
        IndexForm::SlopeScaleFe => core * (alpha + gamma),
        IndexForm::SharedSlopeFe => core + (alpha + gamma) * data.u.as_ref().unwrap()[(i, t)],
    };
    if !raw.is_finite() {
        return Err(Error::NonFiniteIndex { unit: i, period: t });
    }
    let (pi, clamped) = clamp_index(raw);
    Ok((pi, clamped, zv))
}

/// `log f(Y_it | θ, α_i, γ_t)`.
pub fn obs_loglik(
    spec: &ModelSpec,
    data: &PanelData,
    i: usize,
    t: usize,
    theta: &[f64],
    alpha: f64,
    gamma: f64,
) -> Result<f64> {
    let y = data.y[(i, t)];
    if !spec.family.supports_outcome(y) {
        return Err(Error::BadFamilyData { family: spec.family.name(), value: y, unit: i, period: t });
    }
    let (pi, _, _) = checked_index(spec, data, i, t, theta, alpha, gamma)?;
    Ok(spec.family.loglik(pi, y))
}

/// Analytic first and (optionally) second partials of [`obs_loglik`].
pub fn obs_derivs(
    spec: &ModelSpec,
    data: &PanelData,
    i: usize,
    t: usize,
    theta: &[f64],
    alpha: f64,
    gamma: f64,
    second_order: bool,
) -> Result<DerivBundle> {
    let y = data.y[(i, t)];
    if !spec.family.supports_outcome(y) {
        return Err(Error::BadFamilyData { family: spec.family.name(), value: y, unit: i, period: t });
    }
    let (pi, clamped, zv) = checked_index(spec, data, i, t, theta, alpha, gamma)?;
    let ld = spec.family.derivs(pi, y);
    let p = spec.theta_dim;

    // ∂π pieces for the active form. π is affine in (α, γ) everywhere and the
    // only θ–effect curvature lives in the scale form.
    let (dpi_alpha, dpi_gamma) = match spec.index_form {
        IndexForm::AdditiveFe => (1.0, 1.0),
        IndexForm::CovariateLoadedFe => {
            (data.u.as_ref().unwrap()[(i, t)], data.v.as_ref().unwrap()[(i, t)])
        }
        IndexForm::SlopeShiftFe => {
            let s = zv.iter().sum::<f64>();
            (s, s)
        }
        IndexForm::SlopeScaleFe => {
            let core: f64 = zv.iter().zip(theta).map(|(z, th)| z * th).sum();
            (core, core)
        }
        IndexForm::SharedSlopeFe => {
            let u = data.u.as_ref().unwrap()[(i, t)];
            (u, u)
        }
    };
    let dpi_theta: Vec<f64> = match spec.index_form {
        IndexForm::SlopeScaleFe => zv.iter().map(|z| z * (alpha + gamma)).collect(),
        _ => zv.clone(),
    };
    // ∂²π/∂θ_j∂α = ∂²π/∂θ_j∂γ = z_j in the scale form, zero otherwise.
    let cross_curvature = spec.index_form == IndexForm::SlopeScaleFe;

    let grad_theta = Array1::from_iter(dpi_theta.iter().map(|d| ld.d1 * d));
    let mut bundle = DerivBundle {
        value: ld.value,
        grad_theta,
        grad_alpha: ld.d1 * dpi_alpha,
        grad_gamma: ld.d1 * dpi_gamma,
        d2_alpha: 0.0,
        d2_gamma: 0.0,
        d2_alpha_gamma: 0.0,
        d2_theta_alpha: Array1::zeros(p),
        d2_theta_gamma: Array1::zeros(p),
        d2_theta: Array2::zeros((p, p)),
        clamped,
    };
    if second_order {
        bundle.d2_alpha = ld.d2 * dpi_alpha * dpi_alpha;
        bundle.d2_gamma = ld.d2 * dpi_gamma * dpi_gamma;
        bundle.d2_alpha_gamma = ld.d2 * dpi_alpha * dpi_gamma;
        for j in 0..p {
            let extra = if cross_curvature { ld.d1 * zv[j] } else { 0.0 };
            bundle.d2_theta_alpha[j] = ld.d2 * dpi_theta[j] * dpi_alpha + extra;
            bundle.d2_theta_gamma[j] = ld.d2 * dpi_theta[j] * dpi_gamma + extra;
            for k in 0..p {
                bundle.d2_theta[(j, k)] = ld.d2 * dpi_theta[j] * dpi_theta[k];
            }
        }
    }
    Ok(bundle)
}
