//! Error taxonomy shared by the estimation, correction, and simulation layers.

use thiserror::Error;

/// Failures surfaced by the numerical layers.
///
/// Validation problems (`InvalidSpec`, `BadFamilyData`, `TauTooLarge`, ...)
/// mean the request can never succeed as posed; the remaining variants are
/// numerical conditions encountered while solving.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// A linear index evaluated to NaN/inf even after clamping, typically from
    /// non-finite parameters or data.
    #[error("non-finite linear index at unit {unit}, period {period}")]
    NonFiniteIndex { unit: usize, period: usize },

    /// Outcome outside the support of the likelihood family.
    #[error("family {family} cannot model outcome {value} at unit {unit}, period {period}")]
    BadFamilyData {
        family: &'static str,
        value: f64,
        unit: usize,
        period: usize,
    },

    /// Model specification is internally inconsistent or incompatible with the
    /// data (dimensions, missing covariate roles, identification choice).
    #[error("invalid model specification: {0}")]
    InvalidSpec(String),

    /// Sanitization removed every unit or every period.
    #[error("no usable observations remain after sanitization")]
    EmptyPanel,

    /// A fixed-effect curvature hit a flat direction: some diagonal entry of
    /// the fixed-effect Hessian is not strictly negative.
    #[error("singular fixed-effect Hessian: {0}")]
    SingularHessian(String),

    /// An optimizer exhausted its iteration budget without meeting tolerance.
    #[error("{what} did not converge in {iterations} iterations (grad norm {grad_norm:.3e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        grad_norm: f64,
    },

    /// A per-unit or per-period curvature summary `ĥ` was not strictly
    /// negative, so the correction ratio is undefined.
    #[error("non-negative curvature {value:.3e} for {which} {index}; correction undefined")]
    NonNegativeHessian {
        which: &'static str,
        index: usize,
        value: f64,
    },

    /// Truncation lag must satisfy `τ < T`.
    #[error("truncation lag {tau} must be smaller than the panel length {t}")]
    TauTooLarge { tau: usize, t: usize },

    /// A constraint Jacobian lost rank at the evaluation point.
    #[error("constraint Jacobian is rank-deficient: {0}")]
    RankDeficientConstraint(String),

    /// The parameter Hessian was not negative definite where one was required.
    #[error("indefinite parameter Hessian: {0}")]
    IndefiniteHessian(String),

    /// The Wald quadratic-form matrix `J H⁻¹ J'` is numerically singular.
    #[error("degenerate variance of the restriction: {0}")]
    DegenerateVariance(String),
}
