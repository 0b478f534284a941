//! End-to-end runs through the public API.

use ek_core::dynamics::{IntegratorConfig, Scheme};
use ek_core::hitting::{estimate_mean_hitting_time, EnsembleConfig};
use ek_core::landscape::{analyze, well_membership, Well};
use ek_core::lyapunov::{
    build_global_lyapunov, build_local_lyapunov, exit_envelope, exterior_samples, verify_global_lyapunov, ExitProbeSpec,
};
use ek_core::rates::{build_saddle_frame, compute_mu, ek_prediction, Regime};
use ek_core::{PhaseState, PotentialModel};
use proptest::prelude::*;

#[test]
fn separable_landscape_matches_closed_form() {
    let w2 = [0.5, 2.0];
    let m = PotentialModel::separable(&w2).unwrap();
    let r = analyze(&m, Some(&[1.0, 0.0, 0.0])).unwrap();
    assert!(r.is_valid_double_well);
    assert!((r.m.location[0] - 1.0).abs() < 1e-8);
    assert!((r.s.location[0] + 1.0).abs() < 1e-8);
    assert!(r.saddle.location.iter().all(|x| x.abs() < 1e-8));
    assert!((r.barrier_from_m - 0.25).abs() < 1e-10);
    assert!((r.lambda_sigma - 1.0).abs() < 1e-8);
    // transverse directions cancel in the determinant ratio
    let f = build_saddle_frame(&m, &r, 1.0).unwrap();
    let p3 = ek_prediction(&r, &f, 0.1, Regime::Underdamped).unwrap();
    let q = PotentialModel::quartic_1d();
    let rq = analyze(&q, None).unwrap();
    let fq = build_saddle_frame(&q, &rq, 1.0).unwrap();
    let p1 = ek_prediction(&rq, &fq, 0.1, Regime::Underdamped).unwrap();
    assert!((p3.prefactor / p1.prefactor - 1.0).abs() < 1e-8);
}

#[test]
fn wells_are_labelled_by_the_flow() {
    let m = PotentialModel::quartic_1d();
    let r = analyze(&m, None).unwrap();
    let at = |q: f64, p: f64| well_membership(&m, &r, &PhaseState::new(vec![q], vec![p]).unwrap()).unwrap();
    let mq = r.m.location[0];
    assert_eq!(at(mq * 0.9, 0.0), Well::Wm);
    assert_eq!(at(-mq * 0.9, 0.0), Well::Ws);
    assert_eq!(at(0.0, 2.0), Well::Outside);
}

#[test]
fn global_lyapunov_holds_on_separable_2d() {
    let m = PotentialModel::separable(&[1.0]).unwrap();
    let g = build_global_lyapunov(&m, 1.0).unwrap();
    let xs = exterior_samples(&g, 2, 3000, 11);
    for eps in [1.0, 0.1] {
        let v = verify_global_lyapunov(&g, &m, eps, &xs).unwrap();
        assert!(v.violations.is_empty(), "eps {eps}: {} violations", v.violations.len());
        assert!(v.identity_residual < 1e-8, "{}", v.identity_residual);
    }
}

#[test]
fn exit_probability_decays_with_epsilon() {
    let m = PotentialModel::quartic_1d();
    let r = analyze(&m, None).unwrap();
    let l = build_local_lyapunov(&m, &r.m, 1.0).unwrap();
    let spec = ExitProbeSpec {
        a: 0.02,
        b: 0.08,
        t: 10.0,
        n_traj: 4000,
        dt: 1e-2,
        seed: 5,
    };
    let env = exit_envelope(&l, &m, &[0.05, 0.035, 0.025], &spec).unwrap();
    let p: Vec<f64> = env.probes.iter().map(|x| x.probability).collect();
    assert!(p[0] > p[1] && p[1] > p[2], "{p:?}");
    assert!(env.slope.unwrap() < 0.0);
}

#[test]
fn monte_carlo_tracks_prediction_at_moderate_noise() {
    // loose: ε = 0.2 is far from the limit, ±60% band
    let m = PotentialModel::quartic_1d();
    let r = analyze(&m, None).unwrap();
    let f = build_saddle_frame(&m, &r, 1.0).unwrap();
    let pred = ek_prediction(&r, &f, 0.2, Regime::Underdamped).unwrap();
    let ic = IntegratorConfig::new(Scheme::SplittingObabo, 2e-3, 1.0, 3, 0).unwrap();
    let cfg = EnsembleConfig::standard(&r, 0.2, 1.0, 400, pred.predicted_mean_time, ic, 3).unwrap();
    let s = estimate_mean_hitting_time(&m, &cfg).unwrap();
    let ratio = s.mean / pred.predicted_mean_time;
    assert!((0.6..1.6).contains(&ratio), "{ratio}");
    assert_eq!(s.n_timeout, 0);
}

proptest! {
    #[test]
    fn mu_solves_its_quadratic(gamma in 0.01f64..50.0, l1 in 0.01f64..50.0) {
        let mu = compute_mu(gamma, l1).unwrap();
        prop_assert!(mu > 0.0);
        prop_assert!((mu * mu + gamma * mu - l1).abs() <= 1e-10 * (l1 + gamma * gamma));
    }

    #[test]
    fn prediction_is_monotone_in_noise(e1 in 0.02f64..0.5, e2 in 0.02f64..0.5, gamma in 0.1f64..10.0) {
        let m = PotentialModel::quartic_1d();
        let r = analyze(&m, None).unwrap();
        let f = build_saddle_frame(&m, &r, gamma).unwrap();
        let a = ek_prediction(&r, &f, e1, Regime::Underdamped).unwrap().predicted_mean_time;
        let b = ek_prediction(&r, &f, e2, Regime::Underdamped).unwrap().predicted_mean_time;
        prop_assert_eq!(e1 < e2, a > b);
    }

    #[test]
    fn offset_shifts_energies_only(c in -5.0f64..5.0) {
        let base = analyze(&PotentialModel::quartic_1d(), None).unwrap();
        let m = PotentialModel::new(ek_core::Family::QuarticDoubleWell1d, 1, vec![], c).unwrap();
        let r = analyze(&m, None).unwrap();
        prop_assert!((r.barrier_from_m - base.barrier_from_m).abs() < 1e-12);
        prop_assert!((r.saddle.energy - base.saddle.energy - c).abs() < 1e-12);
    }
}
