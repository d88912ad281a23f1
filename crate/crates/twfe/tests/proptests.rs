//! Property-based invariants: envelope differentiation, link symmetry,
//! shift invariance of the additive index, and normalization pinning.

mod common;

use common::{binary_additive_panel, gaussian_ar1_panel};
use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use twfe::model::{IndexForm, ModelSpec};
use twfe::panel::PanelData;
use twfe::profile::{average_loglik, profile_fixed_effects, profiled_value_and_score, ProfileOpts};
use twfe::{Family, Identification};

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn profiled_score_matches_central_differences(
        n in 3usize..=8,
        t in 3usize..=8,
        seed in 0u64..1000,
        rho in -0.8f64..0.8,
    ) {
        let (data, spec) = gaussian_ar1_panel(n, t, seed);
        let opts = ProfileOpts { tol: 1e-12, ..Default::default() };
        let pv = profiled_value_and_score(&data, &spec, &[rho], &opts).unwrap();
        prop_assert!(pv.profile.converged);
        let h = 1e-6;
        let up = profiled_value_and_score(&data, &spec, &[rho + h], &opts).unwrap().value;
        let dn = profiled_value_and_score(&data, &spec, &[rho - h], &opts).unwrap().value;
        let fd = (up - dn) / (2.0 * h);
        prop_assert!(
            (pv.score[0] - fd).abs() < 1e-6 * pv.score[0].abs().max(1.0),
            "score {} vs fd {}", pv.score[0], fd
        );
    }

    #[test]
    fn binary_links_are_symmetric(pi in -30.0f64..30.0) {
        prop_assert!((twfe::num::sigmoid(-pi) - (1.0 - twfe::num::sigmoid(pi))).abs() < 1e-15);
        prop_assert!((twfe::num::norm_cdf(-pi) - (1.0 - twfe::num::norm_cdf(pi))).abs() < 1e-15);
        // Swapping y ↔ 1−y and π ↔ −π routes through the identical
        // expression, so the log-likelihoods agree bit for bit.
        for family in [Family::Logit, Family::Probit] {
            prop_assert_eq!(
                family.loglik(pi, 1.0).to_bits(),
                family.loglik(-pi, 0.0).to_bits()
            );
        }
    }

    #[test]
    fn additive_index_is_shift_invariant(c in -2.0f64..2.0, seed in 0u64..50) {
        let (data, spec) = binary_additive_panel(Family::Logit, false, 6, 5, 1000 + seed);
        let theta = [0.4];
        let prof = profile_fixed_effects(&data, &spec, &theta, &ProfileOpts::default()).unwrap();
        let (base, _) =
            average_loglik(&data, &spec, &theta, &prof.alpha_hat, &prof.gamma_hat).unwrap();
        let shifted_a = &prof.alpha_hat + c;
        let shifted_g = &prof.gamma_hat - c;
        let (moved, _) = average_loglik(&data, &spec, &theta, &shifted_a, &shifted_g).unwrap();
        prop_assert!((base - moved).abs() < 1e-12, "base {base} vs shifted {moved}");
    }

    #[test]
    fn scale_form_profile_is_pinned_at_mean_half(seed in 0u64..40, theta in 0.4f64..1.2) {
        // The multiplicative form keeps its block means pinned at ½ so the
        // scale of (α + γ) cannot drift against θ.
        let mut rng = ChaCha8Rng::seed_from_u64(7000 + seed);
        let n = 6;
        let t = 5;
        let x = Array2::from_shape_fn((n, t), |_| {
            let v: f64 = rng.sample(StandardNormal);
            v + if v >= 0.0 { 0.5 } else { -0.5 }
        });
        let y = Array2::from_shape_fn((n, t), |(i, s)| {
            x[(i, s)] + 0.1 * rng.gen_range(-1.0..1.0) + 0.02 * (i as f64 - s as f64)
        });
        let data = PanelData::new(y, None, vec![("x".into(), x)], None, None).unwrap();
        let spec = ModelSpec::new(Family::Gaussian, IndexForm::SlopeScaleFe, 0, 1).unwrap();
        prop_assert_eq!(spec.identification, Identification::MeanHalf);

        let prof = profile_fixed_effects(&data, &spec, &[theta], &ProfileOpts::default()).unwrap();
        prop_assert!(prof.converged);
        prop_assert!((prof.alpha_hat.mean().unwrap() - 0.5).abs() < 1e-9);
        prop_assert!((prof.gamma_hat.mean().unwrap() - 0.5).abs() < 1e-9);

        // A feasible warm start away from the solution lands on the same φ̂.
        let mut a0 = Array1::from_shape_fn(n, |i| 0.5 + 0.3 * ((i as f64).sin()));
        let g0 = Array1::from_shape_fn(t, |s| 0.5 + 0.2 * ((s as f64).cos()));
        let adj = 0.5 - a0.mean().unwrap();
        a0 += adj;
        let warm_opts = ProfileOpts::default().with_warm_start(a0, g0);
        let warm = profile_fixed_effects(&data, &spec, &[theta], &warm_opts).unwrap();
        prop_assert!(warm.converged);
        for i in 0..n {
            prop_assert!((warm.alpha_hat[i] - prof.alpha_hat[i]).abs() < 1e-7);
        }
    }
}
