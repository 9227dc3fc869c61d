use caslab::cas::{
    assemble_connection, difference_tensor, flatness_residual, gauss_identity_residual, pick_defects,
    structural_report, FrameConnection,
};
use caslab::cmetric::{bers_metric_jets, ComplexMetric, CubicPair};
use caslab::grid::{c, make_field};
use caslab::{Backend, ComplexField, GridDomain, C64};
use nalgebra::Matrix3;

fn hyperbolic(n: usize) -> ComplexMetric {
    let d = GridDomain::window(n, -0.5, 0.5, 1.0, 2.0).unwrap();
    bers_metric_jets(&d, |z| [z, c(1.0, 0.0)], |z| [z.conj(), c(0.0, 0.0), c(1.0, 0.0)], Backend::Fd6Window).unwrap()
}

/// `g = 2 dp dq` with `p = e^z`, `q = z̄ + ε z²`, cubic form `-2 dp³ - 2 dq³`.
/// Flat with `K = 0 = -1 + 2φψ̄/λ³`, so the pair integrates exactly.
fn flat_pair(n: usize, eps: C64) -> (ComplexMetric, CubicPair) {
    let d = GridDomain::window(n, -0.4, 0.4, -0.4, 0.4).unwrap();
    let lambda = make_field(&d, |z| 2.0 * z.exp()).unwrap();
    // w̄ = q: ∂_z̄ w̄ = 1, μ = conj(∂_z w̄ / ∂_z̄ w̄) = conj(2 ε z).
    let mu = make_field(&d, |z| (2.0 * eps * z).conj()).unwrap();
    let wz = ComplexField::constant(&d, c(1.0, 0.0));
    let g = ComplexMetric::new(lambda, mu, wz, Backend::Fd6Window).unwrap();
    let phi = make_field(&d, |z| -2.0 * (3.0 * z).exp()).unwrap();
    let psibar = ComplexField::constant(&d, c(-2.0, 0.0));
    let q = CubicPair::new(phi, psibar, &g).unwrap();
    (g, q)
}

fn flatness(g: &ComplexMetric, q: &CubicPair) -> f64 {
    flatness_residual(&assemble_connection(g, q).unwrap()).unwrap().max_abs()
}

#[test]
fn zero_cubic_gives_zero_difference_tensor() {
    let g = hyperbolic(16);
    let k = difference_tensor(&g, &CubicPair::zero(&g.domain())).unwrap();
    assert_eq!(k.k_w.max_abs(), 0.0);
    assert_eq!(k.k_zbar.max_abs(), 0.0);
}

#[test]
fn apolarity_and_symmetry_on_complex_data() {
    let (g, q) = flat_pair(24, c(0.1, 0.05));
    let (apo, sym) = pick_defects(&g, &difference_tensor(&g, &q).unwrap());
    assert!(apo < 1e-10 && sym < 1e-10, "{apo} {sym}");
}

#[test]
fn gauss_identity_on_hyperbolic_and_flat_metrics() {
    let g = hyperbolic(128);
    let r = gauss_identity_residual(&g, &CubicPair::zero(&g.domain())).unwrap();
    assert!(r.max_abs() < 1e-6, "{}", r.max_abs());
    let d = GridDomain::square(8, 1.0).unwrap();
    let flat = ComplexMetric::conformal(ComplexField::constant(&d, c(1.0, 0.0)), Backend::Spectral).unwrap();
    let r = gauss_identity_residual(&flat, &CubicPair::zero(&d)).unwrap();
    assert!(r.data.iter().all(|v| (v - c(1.0, 0.0)).norm() < 1e-14));
}

#[test]
fn gauss_identity_through_conformal_change() {
    // u = ½ log(2y²) solves the Gauss equation over h = |dz|²/y² with φ = ψ̄ = -2.
    let h = hyperbolic(48);
    let d = h.domain();
    let u = make_field(&d, |z| c(0.5 * (2.0 * z.im * z.im).ln(), 0.0)).unwrap();
    let g = h.conformal_exp(&u).unwrap();
    let q = CubicPair::constant(&d, c(-2.0, 0.0), c(-2.0, 0.0));
    assert!(gauss_identity_residual(&g, &q).unwrap().max_abs() < 1e-8);
}

#[test]
fn bers_connection_flattens_under_refinement() {
    let r: Vec<f64> = [16, 32, 64]
        .iter()
        .map(|&n| {
            let g = hyperbolic(n);
            flatness(&g, &CubicPair::zero(&g.domain()))
        })
        .collect();
    assert!(r[2] < 1e-4, "{r:?}");
    assert!((r[0] / r[1]).log2() >= 2.0 && (r[1] / r[2]).log2() >= 2.0, "{r:?}");
}

#[test]
fn bers_connection_preserves_the_form() {
    let g = hyperbolic(32);
    let conn = assemble_connection(&g, &CubicPair::zero(&g.domain())).unwrap();
    assert!(conn.form_defect() < 1e-12);
    assert!(conn.trace_defect() < 1e-12);
}

#[test]
fn complex_flat_pair_integrates() {
    let r: Vec<f64> = [16, 32, 64]
        .iter()
        .map(|&n| {
            let (g, q) = flat_pair(n, c(0.1, 0.05));
            flatness(&g, &q)
        })
        .collect();
    assert!(r[2] < 1e-6, "{r:?}");
    assert!((r[0] / r[1]).log2() >= 2.0 && (r[1] / r[2]).log2() >= 2.0, "{r:?}");
    let (g, q) = flat_pair(32, c(0.1, 0.05));
    let report = structural_report(&g, &q, 1e-5, 0).unwrap();
    assert!(report.passed, "{report:?}");
}

#[test]
fn constant_connections() {
    let d = GridDomain::square(8, 1.0).unwrap();
    let zero = Matrix3::zeros();
    let conn = FrameConnection::constant(&d, zero, zero, Backend::Spectral);
    assert_eq!(flatness_residual(&conn).unwrap().max_abs(), 0.0);
    let a = Matrix3::from_diagonal(&nalgebra::Vector3::new(c(1.0, 0.0), c(2.0, 1.0), c(-3.0, 0.0)));
    let conn = FrameConnection::constant(&d, a, a * c(0.5, 0.2), Backend::Spectral);
    assert!(flatness_residual(&conn).unwrap().max_abs() < 1e-14);
    let x = Matrix3::new(0.0, 1.0, 0.0, 0.0, 0.0, 2.0, 1.0, 0.0, 0.0).map(|v| c(v, 0.0));
    let y = Matrix3::new(0.0, 0.0, 1.0, 3.0, 0.0, 0.0, 0.0, 1.0, 0.0).map(|v| c(0.0, v));
    let conn = FrameConnection::constant(&d, x, y, Backend::Spectral);
    let expected = (x * y - y * x).norm();
    let f = flatness_residual(&conn).unwrap();
    assert!(f.data.iter().all(|v| (v.re - expected).abs() < 1e-12));
}
