use std::f64::consts::PI;

use lorentz_core::datum::BoundedDatum;
use lorentz_core::geometry::{build_field, ParticleState};
use lorentz_core::heat::exit_split;
use lorentz_core::micro::{estimate_f, estimate_f_stationary, estimate_f_stationary_with_horizon, flow_backward, StationaryMode};
use lorentz_core::{LabError, Side, SlabConfig, Vec2};
use proptest::prelude::*;

fn desk(eps: f64, seed: u64) -> SlabConfig {
    SlabConfig::new(1.0, 1.0, 2.0, 1.0, eps, 2.0, seed).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn backward_flow_is_time_reversible(realization in 0u64..10_000, x1 in 0.05f64..0.95, phi in -PI..PI, horizon in 0.05f64..1.0) {
        // Each collision amplifies rounding by about 2 * (free path) / eps,
        // so a large radius keeps the round trip at the 1e-8 level.
        let c = desk(0.05, 17);
        let s = ParticleState::from_angle(Vec2::new(x1, 0.0), phi);
        let field = build_field(&c, realization).conditioned_at(s.x);
        let tr = flow_backward(s, horizon, &field, &c).unwrap();
        for ev in &tr.events {
            prop_assert!((ev.v_out.norm() - 1.0).abs() <= 1e-15);
        }
        // Reverse the final velocity and flow again for the elapsed time.
        let end = tr.exit.final_state();
        let back_state = ParticleState::new(end.x, -end.v);
        let back = flow_backward(back_state, tr.exit.tau_elapsed, &field, &c).unwrap();
        prop_assert_eq!(back.events.len(), tr.events.len());
        prop_assert!((back.exit.position - s.x).norm() < 1e-8, "returned to {:?}, started at {:?}", back.exit.position, s.x);
        prop_assert!((back.exit.direction - s.v).norm() < 1e-8);
    }
}

#[test]
fn free_flight_exits_through_the_side_the_ray_meets() {
    let c = SlabConfig::new(1.0, 1.0, 2.0, 0.0, 0.01, 2.0, 0).unwrap();
    let f = build_field(&c, 0);
    let s = ParticleState::new(Vec2::new(0.3, 0.0), Vec2::new(1.0, 0.0));
    let tr = flow_backward(s, 1.0, &f, &c).unwrap();
    assert_eq!(tr.exit.side, Side::Left);
    assert!((tr.exit.tau_elapsed - 0.3).abs() < 1e-15);
    let f0 = BoundedDatum::constant(0.0);
    let e = estimate_f(s, 1.0, &c, &f0, 100).unwrap();
    assert_eq!((e.value.estimate.mean, e.value.estimate.stderr), (1.0, 0.0));
    let e = estimate_f_stationary(ParticleState::new(s.x, Vec2::new(-1.0, 0.0)), &c, 100, StationaryMode::Fresh).unwrap();
    assert_eq!(e.value.estimate.mean, 2.0);
    assert_eq!(e.value.n_capped, 0);
}

#[test]
fn unbounded_initial_data_are_rejected() {
    assert!(matches!(BoundedDatum::new(f64::NAN, |_, _| 0.0), Err(LabError::UnboundedDatum(_))));
    assert!(matches!(BoundedDatum::new(1.0, |x: Vec2, _| x.y * x.y), Err(LabError::UnboundedDatum(_))));
}

#[test]
fn desk_parameters_exit_almost_surely() {
    let c = desk(0.01, 4);
    let s = ParticleState::from_angle(Vec2::new(0.5, 0.0), 0.7);
    let e = estimate_f_stationary(s, &c, 2000, StationaryMode::Fresh).unwrap();
    assert_eq!(e.value.n_capped, 0);
    assert!(e.reliable());
}

#[test]
fn stationary_value_does_not_depend_on_the_horizon() {
    let c = desk(0.01, 6);
    let s = ParticleState::from_angle(Vec2::new(0.3, 0.0), 2.5);
    let a = estimate_f_stationary_with_horizon(s, &c, 4000, StationaryMode::Fresh, 100.0 * c.eta).unwrap();
    let b = estimate_f_stationary_with_horizon(s, &c, 4000, StationaryMode::Fresh, 1000.0 * c.eta).unwrap();
    // Same streams: once nothing is capped the two runs coincide.
    assert_eq!(a.value.n_capped, 0);
    assert_eq!(a.value.estimate.mean, b.value.estimate.mean);
}

#[test]
fn stationary_value_is_the_right_exit_probability() {
    // With rho1 = 1 and rho2 = 2 the value minus one is P(exit right); its
    // velocity average approaches the diffusion exit split x1/L. At eta = 2
    // the kinetic boundary layer still shifts it, so the tolerance reflects
    // that O(1/eta) offset rather than Monte Carlo noise.
    let c = SlabConfig::new(1.0, 1.0, 2.0, 1.0, 0.003, 6.0, 12).unwrap();
    for x1 in [0.25, 0.5, 0.75] {
        let mut total = 0.0;
        for j in 0..16 {
            let phi = -std::f64::consts::PI + j as f64 * std::f64::consts::TAU / 16.0;
            let s = ParticleState::from_angle(Vec2::new(x1, 0.0), phi);
            total += estimate_f_stationary(s, &c, 400, StationaryMode::Fresh).unwrap().value.estimate.mean - 1.0;
        }
        let p_right = total / 16.0;
        let split = exit_split(x1, 1.0).unwrap();
        assert!((p_right - split).abs() < 0.05, "x1={x1}: {p_right} vs {split}");
    }
}

#[test]
fn fresh_and_rerandomized_modes_agree() {
    let c = desk(0.003, 8);
    for (x1, phi) in [(0.2, 0.4), (0.5, 2.0), (0.8, -1.0)] {
        let s = ParticleState::from_angle(Vec2::new(x1, 0.0), phi);
        let a = estimate_f_stationary(s, &c, 3000, StationaryMode::Fresh).unwrap();
        let b = estimate_f_stationary(s, &c, 3000, StationaryMode::Rerandomized { t0: c.eta }).unwrap();
        let z = a.value.estimate.z_score(&b.value.estimate);
        assert!(z.abs() < 3.0, "({x1}, {phi}): z = {z}");
    }
}

#[test]
fn estimates_are_bit_identical_for_any_worker_count() {
    let c = desk(0.01, 9);
    let s = ParticleState::from_angle(Vec2::new(0.4, 0.0), 1.1);
    let f0 = BoundedDatum::new(3.0, |x, v| 1.0 + x.x + 0.5 * v.x).unwrap();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| {
            (estimate_f(s, 1.0, &c, &f0, 1500).unwrap(), estimate_f_stationary(s, &c, 1500, StationaryMode::Fresh).unwrap())
        })
    };
    let (a1, b1) = run(1);
    let (a4, b4) = run(4);
    assert_eq!(a1.value.estimate.mean.to_bits(), a4.value.estimate.mean.to_bits());
    assert_eq!(a1.value.estimate.stderr.to_bits(), a4.value.estimate.stderr.to_bits());
    assert_eq!(b1.value.estimate.mean.to_bits(), b4.value.estimate.mean.to_bits());
    assert_eq!(a1.conditioned_fraction, a4.conditioned_fraction);
}

#[test]
fn conditioning_fraction_matches_the_poisson_void_probability() {
    // P(some center within eps of x) = 1 - exp(-mu_eps pi eps^2) = 1 - exp(-pi eta mu eps).
    let c = SlabConfig::new(1.0, 1.0, 2.0, 1.0, 0.01, 10.0, 3).unwrap();
    let s = ParticleState::from_angle(Vec2::new(0.5, 0.0), 0.0);
    let e = estimate_f(s, 0.01, &c, &BoundedDatum::constant(1.0), 20_000).unwrap();
    let p = 1.0 - (-std::f64::consts::PI * 10.0 * 0.01f64).exp();
    let se = (p * (1.0 - p) / 20_000.0).sqrt();
    assert!((e.conditioned_fraction - p).abs() < 4.0 * se, "{} vs {p}", e.conditioned_fraction);
}
