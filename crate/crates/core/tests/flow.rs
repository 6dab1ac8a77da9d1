use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wander_core::flow::{
    detect_collision, flow_jacobian, hit_surface, integrate, time_t_map, Direction, FlowOptions,
    Termination,
};
use wander_core::{HamiltonianSystem, PhasePoint, PotentialSpec};

fn kepler(alpha: f64) -> HamiltonianSystem {
    HamiltonianSystem::new(2, PotentialSpec::radial(alpha, 1.0).unwrap()).unwrap()
}

fn pt(q: &[f64], p: &[f64]) -> PhasePoint {
    PhasePoint::new(q.to_vec(), p.to_vec()).unwrap()
}

/// Composite Simpson rule.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// Time to fall from rest at r = 1 to radius `r` under V = -1/r, computed
/// as ∫ dr / sqrt(2(1/r - 1)) with r = sin²θ to remove the endpoint
/// singularity: dr / sqrt(2(1/r - 1)) = sqrt(2) sin²θ dθ.
fn radial_fall_time(r: f64) -> f64 {
    let theta_lo = r.sqrt().asin();
    simpson(
        |th| 2f64.sqrt() * th.sin().powi(2),
        theta_lo,
        std::f64::consts::FRAC_PI_2,
        2000,
    )
}

#[test]
fn radial_collision_time_matches_quadrature() {
    let tr = integrate(&kepler(1.0), &pt(&[1.0, 0.0], &[0.0, 0.0]), 5.0, &FlowOptions::default())
        .unwrap();
    let (t, x) = detect_collision(&tr).unwrap();
    assert_abs_diff_eq!(t, radial_fall_time(1e-6), epsilon = 1e-6);
    assert!(x.radius() <= 1e-6);
    assert!(x.radial_action() < 0.0);
}

#[test]
fn radial_hit_time_matches_quadrature() {
    let sys = kepler(1.0);
    let hit = hit_surface(
        &sys,
        &pt(&[1.0, 0.0], &[0.0, 0.0]),
        -1.0,
        2,
        Direction::Forward,
        5.0,
        &FlowOptions::default(),
    )
    .unwrap();
    assert_abs_diff_eq!(hit.time, radial_fall_time(0.5), epsilon = 1e-6);
    assert!((hit.point.radius() - 0.5).abs() <= 1e-10);
    assert!(hit.margin < 0.0);
}

#[test]
fn circular_orbit_conserves_energy() {
    let tr = integrate(&kepler(1.0), &pt(&[1.0, 0.0], &[0.0, 1.0]), 100.0, &FlowOptions::default())
        .unwrap();
    assert_eq!(tr.termination, Termination::TimeLimit);
    assert!(detect_collision(&tr).is_none());
    // E = -1/2
    assert!(tr.energy_drift <= 1e-8 * 1.5, "drift {}", tr.energy_drift);
    assert_abs_diff_eq!(tr.final_point.radius(), 1.0, epsilon = 1e-8);
}

#[test]
fn times_increase_along_segments() {
    let tr = integrate(&kepler(1.0), &pt(&[1.0, 0.0], &[0.1, 0.8]), 20.0, &FlowOptions::default())
        .unwrap();
    for w in tr.segments.windows(2) {
        assert!(w[0].t0 < w[0].t_end);
        assert_eq!(w[0].t_end, w[1].t0);
    }
}

#[test]
fn time_t_map_preserves_volume() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let sys = kepler(1.0);
    let opts = FlowOptions::tight();
    for _ in 0..5 {
        let r: f64 = rng.random_range(0.8..1.5);
        let th: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let x = pt(
            &[r * th.cos(), r * th.sin()],
            &[rng.random_range(-0.5..0.5), rng.random_range(0.6..1.0)],
        );
        let jac = flow_jacobian(&sys, &x, 1.5, 1e-5, &opts).unwrap();
        assert_abs_diff_eq!(jac.determinant(), 1.0, epsilon = 1e-5);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn forward_then_backward_returns(
        r in 0.6f64..2.0,
        th in 0.0f64..std::f64::consts::TAU,
        pr in -0.6f64..0.6,
        pt_ in 0.5f64..1.2,
        t in 0.5f64..4.0,
    ) {
        let sys = kepler(1.0);
        let q = [r * th.cos(), r * th.sin()];
        let p = [pr * th.cos() - pt_ * th.sin(), pr * th.sin() + pt_ * th.cos()];
        let x0 = pt(&q, &p);
        let opts = FlowOptions::default();
        let tr = integrate(&sys, &x0, t, &opts).unwrap();
        prop_assume!(tr.termination == Termination::TimeLimit);
        let back = time_t_map(&sys, &tr.final_point, -t, &opts).unwrap();
        let scale = 1.0 + x0.to_vec().iter().map(|v| v * v).sum::<f64>().sqrt();
        for (a, b) in back.to_vec().iter().zip(x0.to_vec()) {
            prop_assert!((a - b).abs() <= 1e-7 * scale);
        }
        let e = sys.eval_h(&x0).unwrap();
        prop_assert!(tr.energy_drift <= 1e-8 * (1.0 + e.abs()));
    }

    #[test]
    fn hits_lie_on_the_sphere(
        b in 0.05f64..0.4,
        speed in 0.5f64..2.0,
        alpha in 0.5f64..1.8,
    ) {
        let sys = kepler(alpha);
        let x0 = pt(&[2.0, b], &[-speed, 0.0]);
        let e = sys.eval_h(&x0).unwrap();
        let hit = hit_surface(&sys, &x0, e, 2, Direction::Forward, 50.0, &FlowOptions::default());
        if let Ok(hit) = hit {
            prop_assert!((hit.point.radius() - 0.5).abs() <= 1e-10);
            prop_assert!(hit.margin <= 0.0);
            prop_assert!(hit.time > 0.0);
        }
    }
}
