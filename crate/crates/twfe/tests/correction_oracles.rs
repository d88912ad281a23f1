//! Oracle tests for the likelihood correction: dense-matrix recomputations of
//! the banded variance terms, a from-scratch trace corrector, centering
//! behavior, and agreement between the additive and trace forms.

mod common;

use approx::assert_abs_diff_eq;
use common::{binary_additive_panel, gaussian_ar1_panel};
use ndarray::{Array1, Array2};
use twfe::correct::{
    corrected_loglik, corrected_loglik_trace, corrected_value_and_score, correction_terms,
    Centering, CorrectionOpts, CorrectionTerms, TraceHessianMode,
};
use twfe::model::{obs_derivs, ModelSpec};
use twfe::panel::PanelData;
use twfe::profile::{profile_fixed_effects, ProfileOpts, ProfileResult};
use twfe::sim::{generate, DgpDesign};
use twfe::{Family, Identification};

fn tight_profile() -> ProfileOpts {
    ProfileOpts { tol: 1e-12, ..Default::default() }
}

/// Per-cell fixed-effect scores and curvature averages, recomputed from the
/// observation-level derivative bundles rather than the correction internals.
fn scratch_ingredients(
    data: &PanelData,
    spec: &ModelSpec,
    theta: &[f64],
    prof: &ProfileResult,
) -> (Array2<f64>, Array2<f64>, Array1<f64>, Array1<f64>) {
    let (n, t) = data.y.dim();
    let mut s_alpha = Array2::zeros((n, t));
    let mut s_gamma = Array2::zeros((n, t));
    let mut h_alpha = Array1::zeros(n);
    let mut h_gamma = Array1::zeros(t);
    for i in 0..n {
        for s in 0..t {
            let d = obs_derivs(spec, data, i, s, theta, prof.alpha_hat[i], prof.gamma_hat[s], true)
                .unwrap();
            s_alpha[(i, s)] = d.grad_alpha;
            s_gamma[(i, s)] = d.grad_gamma;
            h_alpha[i] += d.d2_alpha / t as f64;
            h_gamma[s] += d.d2_gamma / n as f64;
        }
    }
    (s_alpha, s_gamma, h_alpha, h_gamma)
}

/// Assemble b̂ and d̂ from scratch ingredients with an explicit band test.
fn scratch_b_d(
    s_alpha: &Array2<f64>,
    s_gamma: &Array2<f64>,
    h_alpha: &Array1<f64>,
    h_gamma: &Array1<f64>,
    tau: usize,
) -> (f64, f64) {
    let (n, t) = s_alpha.dim();
    let mut b = 0.0;
    for i in 0..n {
        let mut qf = 0.0;
        for a in 0..t {
            for c in 0..t {
                if a.abs_diff(c) <= tau {
                    qf += s_alpha[(i, a)] * s_alpha[(i, c)];
                }
            }
        }
        b += 0.5 * (qf / t as f64) / h_alpha[i] / n as f64;
    }
    let mut d = 0.0;
    for s in 0..t {
        let mut qf = 0.0;
        for i in 0..n {
            qf += s_gamma[(i, s)] * s_gamma[(i, s)];
        }
        d += 0.5 * (qf / n as f64) / h_gamma[s] / t as f64;
    }
    (b, d)
}

fn terms_at(
    data: &PanelData,
    spec: &ModelSpec,
    theta: &[f64],
) -> (CorrectionTerms, ProfileResult) {
    let prof = profile_fixed_effects(data, spec, theta, &tight_profile()).unwrap();
    assert!(prof.converged);
    let terms = correction_terms(data, spec, theta, &prof, None).unwrap();
    (terms, prof)
}

#[test]
fn dense_ones_sandwich_matches_b_term_at_max_window() {
    // At τ = T−1 the band covers every pair, so the windowed quadratic form
    // equals Ŝ_i′ (ι ι′) Ŝ_i with an explicit all-ones T×T matrix.
    let (data, spec) = gaussian_ar1_panel(4, 4, 88);
    let spec = spec.with_tau(3);
    let theta = [0.4];
    let (terms, prof) = terms_at(&data, &spec, &theta);
    assert_eq!(terms.tau_used, 3);

    let (s_alpha, s_gamma, h_alpha, h_gamma) = scratch_ingredients(&data, &spec, &theta, &prof);
    let ones = Array2::<f64>::ones((4, 4));
    let mut b_oracle = 0.0;
    for i in 0..4 {
        let v = s_alpha.row(i).to_owned();
        let qf = v.dot(&ones.dot(&v));
        b_oracle += 0.5 * (qf / 4.0) / h_alpha[i] / 4.0;
    }
    assert_abs_diff_eq!(terms.b_hat, b_oracle, epsilon = 1e-12);

    let (_, d_oracle) = scratch_b_d(&s_alpha, &s_gamma, &h_alpha, &h_gamma, 3);
    assert_abs_diff_eq!(terms.d_hat, d_oracle, epsilon = 1e-12);
}

#[test]
fn explicit_band_loop_matches_terms_at_tau_one() {
    let (data, spec) = binary_additive_panel(Family::Logit, true, 4, 4, 207);
    let spec = spec.with_tau(1);
    let theta = [0.3, 0.5];
    let (terms, prof) = terms_at(&data, &spec, &theta);
    assert_eq!(terms.tau_used, 1);
    assert!(terms.expectations_dropped);

    let (s_alpha, s_gamma, h_alpha, h_gamma) = scratch_ingredients(&data, &spec, &theta, &prof);
    let (b_oracle, d_oracle) = scratch_b_d(&s_alpha, &s_gamma, &h_alpha, &h_gamma, 1);
    assert_abs_diff_eq!(terms.b_hat, b_oracle, epsilon = 1e-12);
    assert_abs_diff_eq!(terms.d_hat, d_oracle, epsilon = 1e-12);

    // The ingredient matrices agree with the observation-level bundles too.
    for i in 0..4 {
        assert_abs_diff_eq!(terms.h_alpha[i], h_alpha[i], epsilon = 1e-12);
        for s in 0..4 {
            assert_abs_diff_eq!(terms.s_alpha[(i, s)], s_alpha[(i, s)], epsilon = 1e-12);
            assert_abs_diff_eq!(terms.s_gamma[(i, s)], s_gamma[(i, s)], epsilon = 1e-12);
        }
    }
}

#[test]
fn full_trace_matches_dense_from_scratch_oracle() {
    // Rebuild the whole trace corrector with independent machinery: scores
    // from the observation bundles, dense Ĝ and Ĥ assembled by hand, a
    // hand-written difference basis for the constraint null space, and an
    // LU inverse from a different linear-algebra library. The half-trace is
    // invariant to the choice of null-space basis (Z → ZM conjugates
    // Ĥ⁻¹Ĝ by M⁻¹), so the basis need not match the library's.
    let (data, spec) = gaussian_ar1_panel(3, 3, 41);
    let spec = spec.with_identification(Identification::SumZeroBoth).unwrap().with_tau(1);
    let theta = [0.3];
    let opts = CorrectionOpts::default();
    let ours = corrected_loglik_trace(&data, &spec, &theta, &opts, TraceHessianMode::Full).unwrap();

    let prof = profile_fixed_effects(&data, &spec, &theta, &opts.profile).unwrap();
    assert!(prof.converged);
    let (n, t) = (3usize, 3usize);
    let nt = (n * t) as f64;
    let nt2 = nt * nt;
    let (s_alpha, s_gamma, _, _) = scratch_ingredients(&data, &spec, &theta, &prof);

    // Ĝ in full (α, γ) coordinates.
    let full = n + t;
    let mut g_full = Array2::<f64>::zeros((full, full));
    for i in 0..n {
        let mut qf = 0.0;
        for a in 0..t {
            for c in 0..t {
                if a.abs_diff(c) <= spec.tau {
                    qf += s_alpha[(i, a)] * s_alpha[(i, c)];
                }
            }
        }
        g_full[(i, i)] = qf / nt2;
    }
    for s in 0..t {
        for r in 0..t {
            let mut acc = 0.0;
            for i in 0..n {
                acc += s_gamma[(i, s)] * s_gamma[(i, r)];
            }
            g_full[(n + s, n + r)] = acc / nt2;
        }
    }
    for i in 0..n {
        let row_sum: f64 = s_alpha.row(i).sum();
        for s in 0..t {
            let v = row_sum * s_gamma[(i, s)] / nt2;
            g_full[(i, n + s)] = v;
            g_full[(n + s, i)] = v;
        }
    }

    // Ĥ of the average log-likelihood in full coordinates.
    let mut h_full = Array2::<f64>::zeros((full, full));
    for i in 0..n {
        for s in 0..t {
            let d = obs_derivs(&spec, &data, i, s, &theta, prof.alpha_hat[i], prof.gamma_hat[s], true)
                .unwrap();
            h_full[(i, i)] += d.d2_alpha / nt;
            h_full[(n + s, n + s)] += d.d2_gamma / nt;
            h_full[(i, n + s)] += d.d2_alpha_gamma / nt;
            h_full[(n + s, i)] += d.d2_alpha_gamma / nt;
        }
    }

    // Difference basis for {Σδα = 0, Σδγ = 0}.
    let cols: Vec<[f64; 6]> = vec![
        [1.0, -1.0, 0.0, 0.0, 0.0, 0.0],
        [0.0, 1.0, -1.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 1.0, -1.0, 0.0],
        [0.0, 0.0, 0.0, 0.0, 1.0, -1.0],
    ];
    let z = nalgebra::DMatrix::from_fn(full, 4, |r, c| cols[c][r]);
    let h_na = nalgebra::DMatrix::from_fn(full, full, |r, c| h_full[(r, c)]);
    let g_na = nalgebra::DMatrix::from_fn(full, full, |r, c| g_full[(r, c)]);
    let h_red = z.transpose() * &h_na * &z;
    let g_red = z.transpose() * &g_na * &z;
    let h_inv = h_red.try_inverse().expect("reduced Hessian invertible");
    let half_trace = 0.5 * (h_inv * g_red).trace();
    let oracle = prof.loglik_hat + half_trace;
    assert_abs_diff_eq!(ours, oracle, epsilon = 1e-10);
}

#[test]
fn diagonal_surrogate_reproduces_additive_form_on_design_fixtures() {
    let tags = [
        "gaussian-ar1",
        "logit-additive-static",
        "logit-additive-dynamic",
        "probit-additive-dynamic",
        "logit-ds-dynamic",
    ];
    for tag in tags {
        let design = DgpDesign::named(tag).unwrap().with_size(10, 8);
        let tau = usize::from(design.dynamic);
        let spec = design.spec(tau).unwrap();
        let theta = design.theta0.clone();
        let opts = CorrectionOpts::default();
        // Skip quasi-separable draws the way a study run would exclude them.
        let (data, additive) = (3..40u64)
            .find_map(|seed| {
                let (raw, _) = generate(&design, seed).unwrap();
                let (data, _) = twfe::profile::sanitize_panel(&raw, &spec).ok()?;
                let add = corrected_loglik(&data, &spec, &theta, &opts).ok()?;
                Some((data, add))
            })
            .unwrap_or_else(|| panic!("no usable draw for {tag}"));
        let surrogate =
            corrected_loglik_trace(&data, &spec, &theta, &opts, TraceHessianMode::DiagonalSurrogate)
                .unwrap();
        assert_abs_diff_eq!(surrogate, additive.value, epsilon = 1e-12);

        let (n, t) = data.y.dim();
        let reassembled = additive.profile.loglik_hat
            + additive.terms.b_hat / t as f64
            + additive.terms.d_hat / n as f64;
        assert_abs_diff_eq!(additive.value, reassembled, epsilon = 1e-12);
    }
}

#[test]
fn static_correction_terms_are_nonpositive() {
    for (family, seed) in [(Family::Logit, 5u64), (Family::Probit, 6u64)] {
        let (data, spec) = binary_additive_panel(family, false, 8, 7, seed);
        let (terms, _) = terms_at(&data, &spec, &[0.4]);
        assert_eq!(terms.tau_used, 0, "static models force a zero window");
        assert!(terms.b_hat <= 0.0, "b̂ = {} should be ≤ 0 at τ = 0", terms.b_hat);
        assert!(terms.d_hat <= 0.0, "d̂ = {} should be ≤ 0", terms.d_hat);
        assert!(terms.h_alpha.iter().all(|&h| h < 0.0));
        assert!(terms.h_gamma.iter().all(|&h| h < 0.0));
    }
    // Dynamic window: the band can flip the sign of b̂, but both terms stay
    // finite and the requested window is honored.
    let (data, spec) = binary_additive_panel(Family::Logit, true, 8, 7, 9);
    let spec = spec.with_tau(2);
    let (terms, _) = terms_at(&data, &spec, &[0.3, 0.5]);
    assert_eq!(terms.tau_used, 2);
    assert!(terms.b_hat.is_finite() && terms.d_hat.is_finite());
}

#[test]
fn truth_centering_gap_shrinks_with_t() {
    // With expectations dropped, the corrected value differs from the
    // truth-centered one by a term that vanishes as the panel grows. The
    // median absolute gap over 20 draws must fall as T doubles.
    let mut medians = Vec::new();
    for t in [14usize, 28, 56] {
        let design = DgpDesign::named("logit-additive-dynamic").unwrap().with_size(28, t);
        let spec = design.spec(1).unwrap();
        let mut gaps = Vec::new();
        let mut seed = 0u64;
        while gaps.len() < 20 {
            assert!(seed < 60, "too many excluded draws at T = {t}");
            let (raw, truth) = generate(&design, seed).unwrap();
            seed += 1;
            let Ok((data, report)) = twfe::profile::sanitize_panel(&raw, &spec) else { continue };
            let truth = truth.subset(&report);
            let dropped = corrected_loglik(&data, &spec, &design.theta0, &CorrectionOpts::default());
            let centered_opts =
                CorrectionOpts { centering: Centering::Truth(truth.p.clone()), ..Default::default() };
            let centered = corrected_loglik(&data, &spec, &design.theta0, &centered_opts);
            match (dropped, centered) {
                (Ok(a), Ok(b)) => gaps.push((a.value - b.value).abs()),
                _ => continue,
            }
        }
        gaps.sort_by(|a, b| a.partial_cmp(b).unwrap());
        medians.push(0.5 * (gaps[9] + gaps[10]));
    }
    assert!(
        medians[0] > medians[1] && medians[1] > medians[2],
        "centering gap medians should fall with T: {medians:?}"
    );
}

#[test]
fn corrected_score_matches_richardson_extrapolation() {
    let (data, spec) = binary_additive_panel(Family::Probit, true, 10, 8, 71);
    let spec = spec.with_tau(1);
    let theta = [0.3, 0.6];
    let opts = CorrectionOpts::default();
    let (_, score, _) = corrected_value_and_score(&data, &spec, &theta, &opts).unwrap();

    let value_at = |th: &[f64]| corrected_loglik(&data, &spec, th, &opts).unwrap().value;
    for j in 0..2 {
        let diff = |h: f64| {
            let mut tp = theta;
            let mut tm = theta;
            tp[j] += h;
            tm[j] -= h;
            (value_at(&tp) - value_at(&tm)) / (2.0 * h)
        };
        let h = 1e-3;
        let richardson = (4.0 * diff(h / 2.0) - diff(h)) / 3.0;
        assert_abs_diff_eq!(score[j], richardson, epsilon = 1e-6);
    }
}

#[test]
fn trace_and_additive_corrections_agree_at_scale() {
    // The diagonal surrogate drops the off-diagonal Ĥ structure; at N = T =
    // 56 the two corrections must agree to within 5% of the correction size.
    let design = DgpDesign::named("logit-additive-static").unwrap().with_size(56, 56);
    let spec = design.spec(0).unwrap();
    let opts = CorrectionOpts::default();
    for seed in 0..10u64 {
        let (raw, _) = generate(&design, seed).unwrap();
        let (data, _) = twfe::profile::sanitize_panel(&raw, &spec).unwrap();
        let additive = corrected_loglik(&data, &spec, &design.theta0, &opts).unwrap();
        let full =
            corrected_loglik_trace(&data, &spec, &design.theta0, &opts, TraceHessianMode::Full)
                .unwrap();
        let (n, t) = data.y.dim();
        let size = (additive.terms.b_hat / t as f64).abs() + (additive.terms.d_hat / n as f64).abs();
        let gap = (full - additive.value).abs();
        assert!(
            gap < 0.05 * size,
            "seed {seed}: |trace − additive| = {gap:.3e} vs 5% of correction {size:.3e}"
        );
    }
}
