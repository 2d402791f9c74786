use advfeat_core::data::{gen_dataset, ortho_stats, OrthoStats, Source};
use advfeat_core::theory::{
    check_natural_condition, check_theorem1, check_uniform_condition, uniform_noise, verify_concentration, verify_uniform_vector_lemma,
    ConditionReport,
};
use ndarray::Array1;
use proptest::prelude::*;

fn stats() -> impl Strategy<Value = OrthoStats> {
    (0.5f64..10.0, 1.0f64..1.5, 0.0f64..1.0).prop_map(|(r_min, ratio, p)| OrthoStats {
        r_min,
        r_max: r_min * ratio,
        p_max: p * r_min * r_min * 0.01,
    })
}

fn scaled(s: &OrthoStats, c: f64) -> OrthoStats {
    OrthoStats {
        r_max: s.r_max * c,
        r_min: s.r_min * c,
        p_max: s.p_max * c * c,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn raising_rhs_past_lhs_flips_pass(lhs in -1e3f64..1e3, gap in 1e-6f64..10.0, strict in any::<bool>()) {
        let mut r = ConditionReport::new("probe", lhs, lhs - gap, strict);
        prop_assert!(r.pass);
        r.rhs = lhs + gap;
        r.recompute();
        prop_assert!(!r.pass);
    }

    #[test]
    fn pass_is_lhs_against_rhs(s in stats(), n in 1usize..2000, gamma in 0.05f64..0.95, eps in 0.0f64..3.0) {
        for r in [check_theorem1(&s, n, gamma), check_natural_condition(&s, n, gamma, eps)] {
            prop_assert_eq!(r.pass, r.lhs >= r.rhs);
        }
    }

    #[test]
    fn natural_condition_never_recovers_as_eps_grows(s in stats(), extra in 0usize..5000, gamma in 0.05f64..0.95) {
        let probe = check_natural_condition(&s, 1, gamma, 0.0);
        let c = probe.constants["C"];
        let n = (c * c / (s.r_min * s.r_min)).floor() as usize + 1 + extra;
        let mut failed = false;
        for k in 0..=200 {
            let eps = s.r_min * k as f64 / 200.0;
            let r = check_natural_condition(&s, n, gamma, eps);
            prop_assert_eq!(r.case, Some(3));
            prop_assert!(!(failed && r.pass), "FAIL turned into PASS at eps {}", eps);
            failed |= !r.pass;
        }
    }

    #[test]
    fn rescaling_samples_scales_both_sides_quadratically(s in stats(), n in 1usize..200, gamma in 0.05f64..0.95, c in 0.1f64..10.0, eps in 0.0f64..0.5) {
        let a = check_theorem1(&s, n, gamma);
        let b = check_theorem1(&scaled(&s, c), n, gamma);
        prop_assert_eq!(a.pass, b.pass);
        prop_assert!((b.lhs - c * c * a.lhs).abs() <= 1e-12 * b.lhs.abs());
        prop_assert!((b.rhs - c * c * a.rhs).abs() <= 1e-12 * b.rhs.abs().max(1e-300));

        let eps = eps * s.r_min;
        let a = check_natural_condition(&s, n, gamma, eps);
        let b = check_natural_condition(&scaled(&s, c), n, gamma, eps * c);
        prop_assert_eq!(a.case, b.case);
        prop_assert!((b.lhs - c * c * a.lhs).abs() <= 1e-9 * (c * c * a.lhs).abs().max(b.rhs));
    }

    #[test]
    fn natural_condition_at_zero_eps_is_theorem1(s in stats(), n in 1usize..5000, gamma in 0.05f64..0.95) {
        let a = check_theorem1(&s, n, gamma);
        let b = check_natural_condition(&s, n, gamma, 0.0);
        prop_assert_eq!(a.pass, b.pass);
        prop_assert!((a.lhs - b.lhs).abs() <= 1e-12 * a.lhs);
    }
}

#[test]
fn dataset_rescaling_keeps_theorem1_verdict() {
    for seed in 0..20 {
        let ds = gen_dataset(Source::Gaussian, 200, 3 + seed as usize % 5, seed, 1.0).unwrap();
        let s = ortho_stats(&ds);
        let big = gen_dataset(Source::Gaussian, 200, ds.n(), seed, 7.0).unwrap();
        assert_eq!(check_theorem1(&s, ds.n(), 0.5).pass, check_theorem1(&ortho_stats(&big), ds.n(), 0.5).pass);
    }
}

#[test]
fn uniform_condition_parts_pass_iff_composite_passes() {
    for seed in 0..10 {
        let noise = uniform_noise(4096, 4, seed).unwrap();
        let mut q = Array1::zeros(4096);
        q[seed as usize] = 1.0;
        for eps in [0.0, 1.0, 10.0, 1e4] {
            let r = check_uniform_condition(&noise, q.view(), 4, eps, 0.5).unwrap();
            assert_eq!(r.pass, r.parts.iter().all(|p| p.pass), "seed {seed} eps {eps}");
        }
    }
}

#[test]
fn monte_carlo_tables_are_reproducible() {
    assert_eq!(
        verify_uniform_vector_lemma(512, 4, 100.0, 100, 9).unwrap(),
        verify_uniform_vector_lemma(512, 4, 100.0, 100, 9).unwrap()
    );
    assert_eq!(
        verify_concentration(&[-1.0, -2.0], &[1.0, 2.0], 1.0, 500, 3).unwrap(),
        verify_concentration(&[-1.0, -2.0], &[1.0, 2.0], 1.0, 500, 3).unwrap()
    );
}
