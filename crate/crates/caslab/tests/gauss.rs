mod common;

use caslab::cmetric::{bers_metric_jets, ComplexMetric, CubicPair};
use caslab::gauss::{continue_ray, linearize, newton_solve, residual, NewtonSettings, RaySchedule};
use caslab::grid::{c, make_field};
use caslab::{Backend, ComplexField, GridDomain, C64};
use common::{manufactured_triples, relative_error};
use proptest::prelude::*;

fn flat(n: usize) -> ComplexMetric {
    let d = GridDomain::square(n, 1.0).unwrap();
    ComplexMetric::conformal(ComplexField::constant(&d, c(1.0, 0.0)), Backend::Spectral).unwrap()
}

/// Real root of `x³ - x² - s` above 2/3, by bisection.
fn cubic_root(s: f64) -> f64 {
    let (mut lo, mut hi) = (2.0 / 3.0, 10.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid * mid * mid - mid * mid - s > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn constant_solution_from_complex_guesses() {
    let h = flat(16);
    let q = CubicPair::constant(&h.domain(), c(2.0, 0.0), c(1.0, 0.0));
    let target = c(0.5 * 2f64.ln(), 0.0);
    for guess in [c(0.6, 0.1), c(0.2, -0.15), c(0.45, 0.3)] {
        let u0 = make_field(&h.domain(), |z| guess + 0.02 * (std::f64::consts::TAU * z.re).cos()).unwrap();
        let sol = newton_solve(&h, &q, &u0, &NewtonSettings::default()).unwrap();
        assert!(sol.residual_norm <= 1e-12);
        assert!(sol.u.data.iter().all(|v| (v - target).norm() < 1e-12), "{guess}");
        let k = sol.quadratic_constant(3, 1e-11).expect("three terminal steps");
        assert!(k < 10.0, "{:?}", sol.newton_trace);
    }
}

#[test]
fn real_data_stays_real() {
    let h = flat(16);
    let s = 0.1;
    let q = CubicPair::constant(&h.domain(), c(0.05, 0.0), c(1.0, 0.0));
    let u0 = make_field(&h.domain(), |z| c(0.1 + 0.05 * (std::f64::consts::TAU * z.im).sin(), 0.0)).unwrap();
    let sol = newton_solve(&h, &q, &u0, &NewtonSettings::default()).unwrap();
    let want = 0.5 * cubic_root(s).ln();
    for v in &sol.u.data {
        assert!(v.im.abs() <= 1e-12);
        assert!((v.re - want).abs() < 1e-12);
    }
}

#[test]
fn linearization_matches_central_differences() {
    for m in manufactured_triples() {
        let d = GridDomain::square(32, 1.0).unwrap();
        let h = m.metric(&d, Backend::Spectral);
        let phi = make_field(&d, |z| c(0.3, 0.1) + 0.1 * (std::f64::consts::TAU * z.re).cos()).unwrap();
        let psibar = make_field(&d, |z| c(0.5, -0.2) * (1.0 + 0.2 * (std::f64::consts::TAU * z.im).sin())).unwrap();
        let q = CubicPair::new(phi, psibar, &h).unwrap();
        let u = m.u(&d).scale(c(0.2, 0.0));
        let v = make_field(&d, |z| c((std::f64::consts::TAU * (z.re + 2.0 * z.im)).sin(), 0.3)).unwrap();
        let eps = 1e-5;
        let plus = residual(&h, &q, &u.add(&v.scale(c(eps, 0.0))).unwrap()).unwrap();
        let minus = residual(&h, &q, &u.add(&v.scale(c(-eps, 0.0))).unwrap()).unwrap();
        let fd = plus.add(&minus.scale(c(-1.0, 0.0))).unwrap().scale(c(0.5 / eps, 0.0));
        let lin = linearize(&h, &q, &u).unwrap().apply_field(&v).unwrap();
        let err = relative_error(&lin, &fd);
        assert!(err < 1e-6, "{}: {err}", m.name);
    }
}

#[test]
fn zero_data_reduces_to_the_shifted_laplacian() {
    let d = GridDomain::square(16, 1.0).unwrap();
    let h = manufactured_triples()[3].metric(&d, Backend::Spectral);
    let v = make_field(&d, |z| (std::f64::consts::TAU * c(0.0, 1.0) * z.im).exp() + z.re).unwrap();
    let lin = linearize(&h, &CubicPair::zero(&d), &ComplexField::zeros(&d)).unwrap().apply_field(&v).unwrap();
    let want = h.laplacian(&v).unwrap().add(&v.scale(c(-2.0, 0.0))).unwrap();
    assert!(lin.max_diff(&want).unwrap() < 1e-12);
}

#[test]
fn hyperbolic_window_with_zero_cubic_returns_zero() {
    let d = GridDomain::window(32, -0.5, 0.5, 1.0, 2.0).unwrap();
    let h = bers_metric_jets(&d, |z| [z, c(1.0, 0.0)], |z| [z.conj(), c(0.0, 0.0), c(1.0, 0.0)], Backend::Fd6Window)
        .unwrap();
    let settings = NewtonSettings { boundary: Some(ComplexField::zeros(&d)), tol: 1e-11, ..Default::default() };
    let sol = newton_solve(&h, &CubicPair::zero(&d), &ComplexField::constant(&d, c(0.1, 0.0)), &settings).unwrap();
    // u carries only the curvature discretization error of the background.
    assert!(sol.u.max_abs() < 1e-6, "{}", sol.u.max_abs());
}

#[test]
fn hll_ray_reproduces_the_fold() {
    let h = flat(8);
    let q = CubicPair::constant(&h.domain(), c(1.0, 0.0), c(0.5, 0.0));
    let ray = continue_ray(&h, &q, &ComplexField::zeros(&h.domain()), &RaySchedule::hll()).unwrap();
    let fold = ray.fold.clone().expect("fold");
    assert!((fold.s - c(-4.0 / 27.0, 0.0)).norm() < 1e-6, "{fold:?}");
    assert!((fold.x - c(2.0 / 3.0, 0.0)).norm() < 1e-6);
    assert!(fold.smallest_eigenvalue.norm() < 1e-4);
    assert!(fold.kernel_alignment > 0.999);
    assert!(fold.agree);
    let t_star = (4.0f64 / 27.0).sqrt();
    assert_eq!(ray.solutions_at(0.5 * t_star), 2);
    assert_eq!(ray.solutions_at(1.2 * t_star), 0);
    // Both branches are constant roots of x³ - x² = s.
    for p in &ray.points {
        let x = p.x_mean;
        assert!((x * x * x - x * x - p.s_mean).norm() < 1e-9);
    }
}

#[test]
fn twistor_ray_keeps_the_solution() {
    let h = flat(8);
    let q = CubicPair::constant(&h.domain(), c(2.0, 0.0), c(1.0, 0.0));
    let u0 = ComplexField::constant(&h.domain(), c(0.5 * 2f64.ln(), 0.0));
    let ray = continue_ray(&h, &q, &u0, &RaySchedule::twistor(c(0.0, 1.0), 1.0)).unwrap();
    assert!(ray.fold.is_none());
    assert!(ray.points.len() > 2);
    for p in &ray.points {
        assert!((p.u_mean - u0.data[0]).norm() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn twistor_action_leaves_the_residual(r in 0.1f64..4.0, arg in -3.0f64..3.0, a in -0.5f64..0.5) {
        let d = GridDomain::square(8, 1.0).unwrap();
        let h = manufactured_triples()[2].metric(&d, Backend::Spectral);
        let q = CubicPair::constant(&d, c(0.4, 0.2), c(-0.3, 0.1));
        let u = make_field(&d, |z: C64| c(a, 0.1) * (std::f64::consts::TAU * z.re).sin()).unwrap();
        let base = residual(&h, &q, &u).unwrap();
        let twisted = residual(&h, &q.twist(C64::from_polar(r, arg)), &u).unwrap();
        // Identical up to the rounding of ζ ζ⁻¹.
        prop_assert!(twisted.max_diff(&base).unwrap() < 1e-14 * (1.0 + base.max_abs()));
    }
}
