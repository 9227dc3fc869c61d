mod common;

use caslab::cmetric::{bers_metric, bers_metric_jets, ComplexMetric};
use caslab::grid::{c, make_field};
use caslab::{Backend, ComplexField, GridDomain, C64};
use common::{manufactured_triples, relative_error};
use proptest::prelude::*;

fn bers_window(n: usize, eps: C64) -> ComplexMetric {
    let d = GridDomain::window(n, -0.5, 0.5, 1.0, 2.0).unwrap();
    bers_metric_jets(
        &d,
        |z| [z + 0.1 * z * z, 1.0 + 0.2 * z],
        move |z| [z.conj() + eps * z, eps, c(1.0, 0.0)],
        Backend::Fd6Window,
    )
    .unwrap()
}

fn curvature_error(g: &ComplexMetric) -> f64 {
    let k = g.gauss_curvature().unwrap();
    k.max_diff(&ComplexField::constant(&g.domain(), c(-1.0, 0.0))).unwrap()
}

#[test]
fn laplacian_matches_manufactured_oracles() {
    let d = GridDomain::square(64, 1.0).unwrap();
    for m in manufactured_triples() {
        let g = m.metric(&d, Backend::Spectral);
        let err = relative_error(&g.laplacian(&m.u(&d)).unwrap(), &m.laplacian(&d));
        assert!(err < 1e-10, "{}: {err}", m.name);
    }
}

#[test]
fn fourth_order_laplacian_converges() {
    let m = &manufactured_triples()[3];
    let errs: Vec<f64> = [32, 64]
        .iter()
        .map(|&n| {
            let d = GridDomain::square(n, 1.0).unwrap();
            relative_error(&m.metric(&d, Backend::Fd4Periodic).laplacian(&m.u(&d)).unwrap(), &m.laplacian(&d))
        })
        .collect();
    let rate = (errs[0] / errs[1]).log2();
    assert!(rate > 3.5, "{errs:?}");
}

#[test]
fn bers_windows_have_curvature_minus_one() {
    let errs: Vec<f64> = [32, 64, 128].iter().map(|&n| curvature_error(&bers_window(n, c(0.05, 0.02)))).collect();
    assert!(errs[2] < 1e-6, "{errs:?}");
    for w in errs.windows(2) {
        assert!((w[0] / w[1]).log2() >= 2.0, "{errs:?}");
    }
    let g = bers_window(64, c(0.05, 0.02));
    let closed = g.gauss_curvature_closed().unwrap();
    assert!(closed.max_diff(&g.gauss_curvature().unwrap()).unwrap() < 1e-6);
}

#[test]
fn sampled_and_jet_bers_metrics_agree() {
    let d = GridDomain::window(64, -0.5, 0.5, 1.0, 2.0).unwrap();
    let eps = c(0.05, 0.02);
    let f1 = make_field(&d, |z| z + 0.1 * z * z).unwrap();
    let f2 = make_field(&d, move |z| z.conj() + eps * z).unwrap();
    let sampled = bers_metric(&f1, &f2, Backend::Fd6Window).unwrap();
    let jets = bers_window(64, eps);
    assert!(sampled.lambda.max_diff(&jets.lambda).unwrap() < 1e-9);
    assert!(sampled.mu.max_diff(&jets.mu).unwrap() < 1e-9);
}

#[test]
fn conformal_change_of_curvature() {
    // K(e^{2u} g) = e^{-2u} (K(g) - Δ_g u).
    let g = bers_window(96, c(0.05, 0.02));
    let d = g.domain();
    let u = make_field(&d, |z| 0.3 * (z * c(0.5, 0.2)).sin() + c(0.0, 0.1) * z.conj()).unwrap();
    let lhs = g.conformal_exp(&u).unwrap().gauss_curvature().unwrap();
    let k = g.gauss_curvature().unwrap();
    let lap = g.laplacian(&u).unwrap();
    let rhs = ComplexField::new(d, (0..d.len()).map(|i| (-2.0 * u.data[i]).exp() * (k.data[i] - lap.data[i])).collect(), "")
        .unwrap();
    assert!(lhs.max_diff(&rhs).unwrap() < 1e-6);
}

#[test]
fn positive_metrics_reject_large_beltrami() {
    let d = GridDomain::square(8, 1.0).unwrap();
    let g = ComplexMetric::new(
        ComplexField::constant(&d, c(1.0, 0.0)),
        ComplexField::constant(&d, c(0.0, 1.0)),
        ComplexField::constant(&d, c(1.0, 0.0)),
        Backend::Spectral,
    )
    .unwrap();
    assert!(g.laplacian(&ComplexField::zeros(&d)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn laplacian_is_linear_and_kills_constants(
        a in -1.0f64..1.0, b in -1.0f64..1.0, k in -1.0f64..1.0, m in 0.0f64..0.6,
    ) {
        let d = GridDomain::square(16, 1.0).unwrap();
        let g = ComplexMetric::new(
            make_field(&d, |z| c(1.5 + (std::f64::consts::TAU * z.im).cos(), 0.2)).unwrap(),
            ComplexField::constant(&d, C64::from_polar(m, k)),
            ComplexField::constant(&d, c(1.0, 0.0)),
            Backend::Spectral,
        )
        .unwrap();
        let u = make_field(&d, |z| (std::f64::consts::TAU * c(0.0, 1.0) * z.re).exp()).unwrap();
        let v = make_field(&d, |z| c((std::f64::consts::TAU * (z.re + z.im)).sin(), 0.0)).unwrap();
        let combo = u.scale(c(a, b)).add(&v.scale(c(k, 0.0))).unwrap();
        let lhs = g.laplacian(&combo).unwrap();
        let rhs = g.laplacian(&u).unwrap().scale(c(a, b)).add(&g.laplacian(&v).unwrap().scale(c(k, 0.0))).unwrap();
        prop_assert!(lhs.max_diff(&rhs).unwrap() < 1e-10);
        prop_assert!(g.laplacian(&ComplexField::constant(&d, c(a, b))).unwrap().max_abs() < 1e-12);
    }
}
