use approx::assert_abs_diff_eq;
use lorentz_core::heat::*;
use lorentz_core::rng::stream;
use lorentz_core::{SlabConfig, Vec2};
use proptest::prelude::*;
use rand::Rng;
use statrs::function::erf::erf;

const D: f64 = 3.0 / 16.0;

/// Survival by the method of images: initial datum 1 on (0, L), absorbing walls.
fn survival_by_images(x: f64, t: f64, d: f64, l: f64) -> f64 {
    let s = (4.0 * d * t).sqrt();
    let mut u = 0.0;
    for k in -20i32..=20 {
        let o = 2.0 * k as f64 * l;
        u += 0.5 * (erf((x + o) / s) - erf((x - l + o) / s));
        u -= 0.5 * (erf((x + l + o) / s) - erf((x + o) / s));
    }
    u
}

fn thomas(a: f64, b: f64, rhs: &mut [f64]) {
    // Constant tridiagonal (a, b, a) solve in place.
    let n = rhs.len();
    let mut c = vec![0.0; n];
    c[0] = a / b;
    rhs[0] /= b;
    for i in 1..n {
        let m = b - a * c[i - 1];
        c[i] = a / m;
        rhs[i] = (rhs[i] - a * rhs[i - 1]) / m;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= c[i] * rhs[i + 1];
    }
}

/// Crank–Nicolson for `u_t = d u_xx` on (0, l) with Dirichlet data, started
/// with implicit Euler half-steps to damp the corner discontinuity.
#[allow(clippy::too_many_arguments)]
fn crank_nicolson(u0: f64, left: f64, right: f64, d: f64, l: f64, t: f64, nx: usize, nt: usize) -> Vec<f64> {
    let h = l / nx as f64;
    let mut u = vec![u0; nx - 1];
    let step = |u: &mut Vec<f64>, dt: f64, theta: f64| {
        let r = d * dt / (h * h);
        let n = u.len();
        let mut rhs: Vec<f64> = (0..n)
            .map(|i| {
                let lo = if i == 0 { left } else { u[i - 1] };
                let hi = if i == n - 1 { right } else { u[i + 1] };
                u[i] + (1.0 - theta) * r * (lo - 2.0 * u[i] + hi)
            })
            .collect();
        rhs[0] += theta * r * left;
        rhs[n - 1] += theta * r * right;
        thomas(-theta * r, 1.0 + 2.0 * theta * r, &mut rhs);
        *u = rhs;
    };
    let dt = t / nt as f64;
    for _ in 0..4 {
        step(&mut u, dt / 2.0, 1.0);
    }
    for _ in 2..nt {
        step(&mut u, dt, 0.5);
    }
    u
}

#[test]
fn survival_matches_image_series() {
    let p = HeatParams::new(D, 1.0).unwrap();
    for &(x, t) in &[(0.5, 1.0), (0.1, 0.05), (0.3, 0.4), (0.9, 3.0), (0.5, 1e-3)] {
        assert_abs_diff_eq!(slab_survival(x, t, &p).unwrap(), survival_by_images(x, t, D, 1.0), epsilon = 1e-10);
    }
    // Frozen from the image series.
    assert_abs_diff_eq!(slab_survival(0.5, 1.0, &p).unwrap(), 0.20009030808366357, epsilon = 1e-12);
}

#[test]
fn survival_matches_finite_differences() {
    let p = HeatParams::new(D, 1.0).unwrap();
    let coarse = crank_nicolson(1.0, 0.0, 0.0, D, 1.0, 1.0, 200, 2000);
    let fine = crank_nicolson(1.0, 0.0, 0.0, D, 1.0, 1.0, 400, 4000);
    // Second-order Richardson step.
    let fd = (4.0 * fine[199] - coarse[99]) / 3.0;
    assert_abs_diff_eq!(slab_survival(0.5, 1.0, &p).unwrap(), fd, epsilon = 1e-6);
}

#[test]
fn heat_flow_relaxes_to_the_linear_profile() {
    let c = SlabConfig::new(2.0, 1.0, 3.0, 1.0, 0.01, 5.0, 0).unwrap();
    let nx = 100;
    let u = crank_nicolson(1.0, 1.0, 3.0, D, 2.0, 60.0, nx, 6000);
    for (i, v) in u.iter().enumerate() {
        let x = 2.0 * (i + 1) as f64 / nx as f64;
        assert_abs_diff_eq!(*v, stationary_profile(&c, x), epsilon = 1e-6);
    }
}

#[test]
fn exit_split_matches_gamblers_ruin() {
    // Symmetric walk on 0..=40 started at 10.
    let n = 100_000u64;
    let mut right = 0u64;
    for i in 0..n {
        let mut rng = stream(3, &[i]);
        let mut k = 10i32;
        while k > 0 && k < 40 {
            k += if rng.random::<bool>() { 1 } else { -1 };
        }
        right += (k == 40) as u64;
    }
    let p = exit_split(0.25, 1.0).unwrap();
    let se = (p * (1.0 - p) / n as f64).sqrt();
    assert!((right as f64 / n as f64 - p).abs() < 3.0 * se);
    assert!(exit_split(1.5, 1.0).is_err());
}

#[test]
fn gaussian_mass_is_conserved() {
    let b = GaussianBump { amplitude: 1.3, center: Vec2::new(0.2, -0.4), sigma: 0.3 };
    let e = b.evolved(2.0, D);
    // Trapezoid on a wide box is spectrally accurate for Gaussians.
    let (n, half) = (400, 12.0 * e.sigma);
    let h = 2.0 * half / n as f64;
    let grid: Vec<Vec2> = (0..=n)
        .flat_map(|i| (0..=n).map(move |j| Vec2::new(-half + i as f64 * h, -half + j as f64 * h)))
        .map(|p| p + e.center)
        .collect();
    let vals = heat_evolve_free(&b, 2.0, D, &grid).unwrap();
    let mass: f64 = vals.iter().sum::<f64>() * h * h;
    assert_abs_diff_eq!(mass, b.mass(), epsilon = 1e-10);
}

proptest! {
    #[test]
    fn survival_is_a_symmetric_decreasing_probability(x in 0.01f64..0.99, t in 0.0f64..5.0, dt in 0.01f64..2.0) {
        let p = HeatParams::new(D, 1.0).unwrap();
        let s = slab_survival(x, t, &p).unwrap();
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert!((s - slab_survival(1.0 - x, t, &p).unwrap()).abs() < 1e-12);
        prop_assert!(slab_survival(x, t + dt, &p).unwrap() <= s + 1e-12);
    }
}
