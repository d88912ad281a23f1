//! Likelihood families: the observation log-density as a function of the
//! linear index, together with its first two index derivatives and their
//! expectations under a known truth.

use crate::num;
use serde::{Deserialize, Serialize};

/// Distribution of the outcome given the linear index `π_it`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// Binary outcome, `P(Y=1|π) = Φ(π)`.
    Probit,
    /// Binary outcome, `P(Y=1|π) = σ(π)`.
    Logit,
    /// Continuous outcome with unit error variance, `Y = π + ε`, `ε ~ N(0,1)`.
    Gaussian,
}

/// Log-likelihood value and its first two derivatives in the linear index.
#[derive(Debug, Clone, Copy)]
pub struct LinkDerivs {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Probit => "probit",
            Family::Logit => "logit",
            Family::Gaussian => "gaussian",
        }
    }

    pub fn is_binary(self) -> bool {
        !matches!(self, Family::Gaussian)
    }

    /// Whether `y` lies in the family's support.
    pub fn supports_outcome(self, y: f64) -> bool {
        if self.is_binary() {
            y == 0.0 || y == 1.0
        } else {
            y.is_finite()
        }
    }

    /// `P(Y=1|π)` for the binary families.
    pub fn prob(self, pi: f64) -> f64 {
        match self {
            Family::Probit => num::norm_cdf(pi),
            Family::Logit => num::sigmoid(pi),
            Family::Gaussian => panic!("prob() is defined for binary families only"),
        }
    }

    /// `log f(y | π)`.
    pub fn loglik(self, pi: f64, y: f64) -> f64 {
        match self {
            Family::Probit => {
                if y > 0.5 {
                    num::norm_log_cdf(pi)
                } else {
                    num::norm_log_cdf(-pi)
                }
            }
            Family::Logit => {
                // log σ(π) for successes, log σ(−π) for failures; branching
                // keeps the y ↔ 1−y, π ↔ −π symmetry exact.
                if y > 0.5 {
                    -num::softplus(-pi)
                } else {
                    -num::softplus(pi)
                }
            }
            Family::Gaussian => {
                let r = y - pi;
                -0.918_938_533_204_672_74 - 0.5 * r * r
            }
        }
    }

    /// Log-likelihood with first and second index derivatives.
    pub fn derivs(self, pi: f64, y: f64) -> LinkDerivs {
        match self {
            Family::Probit => {
                // d logΦ(x)/dx = m(x) (inverse Mills), m'(x) = −m(x)(x + m(x)).
                if y > 0.5 {
                    let m = num::norm_mills(pi);
                    LinkDerivs {
                        value: num::norm_log_cdf(pi),
                        d1: m,
                        d2: -m * (pi + m),
                    }
                } else {
                    let m = num::norm_mills(-pi);
                    LinkDerivs {
                        value: num::norm_log_cdf(-pi),
                        d1: -m,
                        d2: -m * (-pi + m),
                    }
                }
            }
            Family::Logit => {
                let s = num::sigmoid(pi);
                LinkDerivs {
                    value: self.loglik(pi, y),
                    d1: y - s,
                    d2: -s * (1.0 - s),
                }
            }
            Family::Gaussian => {
                let r = y - pi;
                LinkDerivs {
                    value: -0.918_938_533_204_672_74 - 0.5 * r * r,
                    d1: r,
                    d2: -1.0,
                }
            }
        }
    }

    /// Expectation of [`Family::derivs`] over the outcome at a known truth.
    ///
    /// `truth` is the conditional success probability `P(Y=1|history)` for the
    /// binary families and the conditional mean of `Y` for the gaussian one.
    /// Binary expectations are the `p`-mixture of the two outcome branches.
    pub fn expected_derivs(self, pi: f64, truth: f64) -> LinkDerivs {
        match self {
            Family::Probit | Family::Logit => {
                let one = self.derivs(pi, 1.0);
                let zero = self.derivs(pi, 0.0);
                LinkDerivs {
                    value: truth * one.value + (1.0 - truth) * zero.value,
                    d1: truth * one.d1 + (1.0 - truth) * zero.d1,
                    d2: truth * one.d2 + (1.0 - truth) * zero.d2,
                }
            }
            Family::Gaussian => {
                // E(Y−π)² = (μ−π)² + 1 under unit error variance.
                let r = truth - pi;
                LinkDerivs {
                    value: -0.918_938_533_204_672_74 - 0.5 * (r * r + 1.0),
                    d1: r,
                    d2: -1.0,
                }
            }
        }
    }
}
