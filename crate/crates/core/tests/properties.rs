use proptest::prelude::*;
use qmcr::channels::invariant_states;
use qmcr::densela::{max_abs, trace_norm, unvec, vec};
use qmcr::model::mixed_on;
use qmcr::random;
use qmcr::recurrence::{expected_return_time, kac_correction, LimitPolicy, MonitoredSystem, SubspaceSpec};
use qmcr::report::{num, parse_num, Report};
use qmcr::ComplexMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn in_subspace(r: &mut ChaCha8Rng, iso: &ComplexMatrix) -> ComplexMatrix {
    let s = random::density(r, iso.ncols());
    iso * s * iso.adjoint()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn vec_round_trip(seed: u64, r in 1usize..5, c in 1usize..5) {
        let a = random::matrix(&mut rng(seed), r, c);
        prop_assert_eq!(unvec(&vec(&a), r, c).unwrap(), a);
    }

    #[test]
    fn channels_preserve_trace_and_positivity(seed: u64, d in 1usize..5, k in 1usize..4) {
        let mut g = rng(seed);
        let phi = random::cptp(&mut g, d, k);
        let rho = random::density(&mut g, d);
        let out = phi.apply(&rho);
        prop_assert!((out.trace().re - 1.0).abs() < 1e-10);
        prop_assert!((trace_norm(&out) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn embedded_tom_is_trace_preserving(seed: u64, n in 1usize..5, d in 1usize..4) {
        let t = random::tom_with_pattern(&mut rng(seed), n, d, 2, |_, _| true);
        prop_assert!(t.validate().column_residuals.iter().all(|&r| r < 1e-10));
        prop_assert!(t.embed_cptp().is_trace_preserving());
    }

    #[test]
    fn return_probabilities_are_probabilities(seed: u64, d in 2usize..5) {
        let mut g = rng(seed);
        let phi = random::cptp(&mut g, d, 2);
        let k = g.random_range(1..d);
        let iso = random::isometry(&mut g, d, k);
        let rho = in_subspace(&mut g, &iso);
        let sys = MonitoredSystem::for_channel(&phi, &SubspaceSpec::General { isometry: iso }).unwrap();
        let r = sys.state_vector(&rho).unwrap();
        let pis = sys.first_return_series(&r, 30);
        prop_assert!(pis.iter().all(|&p| p > -1e-12));
        prop_assert!(pis.iter().sum::<f64>() <= 1.0 + 1e-10);
        let survival = sys.survival_series(&r, 30);
        prop_assert!(survival.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn reduced_schur_function_is_contractive(seed: u64, d in 2usize..5) {
        let mut g = rng(seed);
        let phi = random::cptp(&mut g, d, 2);
        let k = g.random_range(1..d);
        let iso = random::isometry(&mut g, d, k);
        let rho = in_subspace(&mut g, &iso);
        let sys = MonitoredSystem::for_channel(&phi, &SubspaceSpec::General { isometry: iso }).unwrap();
        let z = qmcr::c64::from_polar(g.random_range(0.0..0.99), g.random_range(0.0..6.3));
        let out = sys.devectorize(&(sys.reduced_schur_eval(z).unwrap() * sys.vectorize(&rho)));
        prop_assert!(trace_norm(&out) <= 1.0 + 1e-9);
    }

    #[test]
    fn kac_factorization_matches_direct_return_time(seed: u64, d in 2usize..4) {
        let mut g = rng(seed);
        // full Kraus rank makes the channel primitive
        let phi = random::cptp(&mut g, d, d * d);
        let chi = invariant_states(&phi).unwrap().remove(0);
        let psi = random::unit_vector(&mut g, d);
        let kac = kac_correction(&phi, chi.matrix(), &psi).unwrap();
        let sys = MonitoredSystem::for_channel(&phi, &SubspaceSpec::pure(&psi)).unwrap();
        let direct = expected_return_time(&sys, &(&psi * psi.adjoint())).unwrap();
        prop_assert!((kac.tau - direct).abs() < 1e-8 * direct.max(1.0));
        prop_assert!((kac.ideal * kac.correction - kac.tau).abs() < 1e-8 * kac.tau);
    }

    #[test]
    fn irreducible_toms_are_positive_recurrent_from_sites(seed: u64, n in 2usize..5, d in 1usize..3) {
        let mut g = rng(seed);
        let t = random::tom_with_pattern(&mut g, n, d, 2, |i, j| i == (j + 1) % n || g_free(i, j));
        prop_assume!(t.is_irreducible());
        let site = g.random_range(0..n);
        let h0 = SubspaceSpec::sites(n, d, &[site]);
        let r = MonitoredSystem::for_tom(&t, &h0).unwrap().report(&mixed_on(&h0), 0, LimitPolicy::Auto).unwrap();
        prop_assert!(r.positive_recurrent);
        prop_assert!((r.pi - 1.0).abs() < 1e-7);
    }

    #[test]
    fn report_numbers_round_trip(x in prop_oneof![any::<f64>(), Just(f64::INFINITY), Just(f64::NEG_INFINITY), Just(f64::NAN)]) {
        let back = parse_num(&num(x)).unwrap();
        prop_assert!(back == x || (back.is_nan() && x.is_nan()));
        let rep = Report::new(vec!["recur".into()], "00".into(), serde_json::json!({ "tau": num(x) }));
        let again = Report::from_json(&rep.to_json()).unwrap();
        prop_assert_eq!(again.to_json(), rep.to_json());
    }
}

/// A fixed sparse background pattern on top of the cycle.
fn g_free(i: usize, j: usize) -> bool {
    (i * 7 + j * 3).is_multiple_of(4)
}

#[test]
fn mixed_state_on_sites_has_unit_trace() {
    let h0 = SubspaceSpec::sites(3, 2, &[0, 2]);
    let rho = mixed_on(&h0);
    assert!((rho.trace().re - 1.0).abs() < 1e-14);
    assert!(max_abs(&(&rho - rho.adjoint())) < 1e-15);
}
