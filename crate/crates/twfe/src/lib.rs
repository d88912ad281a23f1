//! Estimation and inference for dynamic nonlinear panel models with two-way
//! fixed effects.
//!
//! The incidental-parameter problem: with unit effects `α_1..α_N` and period
//! effects `γ_1..γ_T` estimated jointly with a low-dimensional parameter `θ`,
//! the profiled log-likelihood
//!
//! ```text
//!   l̂(θ) = (1/NT) Σ_it l_it(θ, φ̂(θ)),   φ̂(θ) = argmax_φ (1/NT) Σ_it l_it(θ, φ)
//! ```
//!
//! carries an O(1/T) + O(1/N) bias that distorts likelihood-based tests. This
//! crate profiles the fixed effects ([`profile`]), computes the analytical
//! correction `l̃(θ) = l̂(θ) + b̂(θ)/T + d̂(θ)/N` built from truncated score
//! autocovariances ([`correct`]), maximizes either objective and forms
//! LR/LM/Wald statistics from it ([`infer`]), reproduces the simulation
//! designs behind the method's calibration evidence ([`sim`]), and runs the
//! Schur-complement diagnostic for the fixed-effect Hessian ([`diag`]).

pub mod correct;
pub mod diag;
pub mod error;
pub mod family;
pub mod infer;
pub mod linalg;
pub mod model;
pub mod num;
pub mod panel;
pub mod profile;
pub mod sim;

mod solver;

pub use error::Error;
pub use model::{Family, Identification, IndexForm, ModelSpec};
pub use panel::PanelData;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
