use caslab::grid::c;
use caslab::transport::{
    commute_check, solve_transport, transport_metric, Generator, MetricSeries, PowerSeries2D,
};
use caslab::{CasError, C64};
use proptest::prelude::*;

const O: C64 = C64::new(0.0, 0.0);

fn exp_zbar(order: usize) -> PowerSeries2D {
    let mut fact = vec![1.0f64; order + 1];
    for k in 1..=order {
        fact[k] = fact[k - 1] * k as f64;
    }
    PowerSeries2D::from_fn(order, O, |j, k| if j == 0 { c(1.0 / fact[k], 0.0) } else { O })
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn sample_metric(order: usize) -> MetricSeries {
    // λ = 1 + 0.3 z z̄ + 0.1 z² - 0.05 i z̄², w̄ = z̄ + 0.1 z²: a = 0.2 z, b = 1.
    let lambda = PowerSeries2D::from_fn(order, O, |j, k| match (j, k) {
        (0, 0) => c(1.0, 0.0),
        (1, 1) => c(0.3, 0.0),
        (2, 0) => c(0.1, 0.0),
        (0, 2) => c(0.0, -0.05),
        _ => O,
    });
    MetricSeries {
        lambda,
        a: PowerSeries2D::monomial(order, O, 1, 0, c(0.2, 0.0)),
        b: PowerSeries2D::constant(order, O, c(1.0, 0.0)),
    }
}

#[test]
fn zero_generator_is_stationary() {
    let f0 = exp_zbar(8).mul(&PowerSeries2D::z(8, O)).unwrap();
    let g = Generator::steady(PowerSeries2D::zeros(8, O));
    let out = solve_transport(&f0, &g, 1.0, 0.1).unwrap();
    assert_eq!(out.series[0], f0);
}

#[test]
fn translation_flow() {
    // g ≡ 1: f_t = (z̄ + t)².
    let f0 = PowerSeries2D::monomial(6, O, 0, 2, c(1.0, 0.0));
    let g = Generator::steady(PowerSeries2D::constant(6, O, c(1.0, 0.0)));
    let t = 0.7;
    let f = &solve_transport(&f0, &g, t, 0.05).unwrap().series[0];
    for (k, want) in [t * t, 2.0 * t, 1.0].iter().enumerate() {
        assert!((f.coeff(0, k) - c(*want, 0.0)).norm() < 1e-13);
    }
}

#[test]
fn shear_flow_by_characteristics() {
    // g = z: f_t = (z̄ + t z)², so c_{11} = 2t and c_{20} = t².
    let f0 = PowerSeries2D::monomial(6, O, 0, 2, c(1.0, 0.0));
    let g = Generator::steady(PowerSeries2D::z(6, O));
    let f = &solve_transport(&f0, &g, 0.5, 0.01).unwrap().series[0];
    assert!((f.coeff(1, 1) - c(1.0, 0.0)).norm() < 1e-10);
    assert!((f.coeff(2, 0) - c(0.25, 0.0)).norm() < 1e-10);
    assert!((f.coeff(0, 2) - c(1.0, 0.0)).norm() < 1e-10);
}

#[test]
fn exponential_data_matches_characteristics() {
    // g ≡ 1 on e^{z̄}: the truncated system is solved by c_k(t) = Σ_m t^m / (k! m!) (k + m ≤ N).
    let n = 12;
    let g = Generator::steady(PowerSeries2D::constant(n, O, c(1.0, 0.0)));
    let f = &solve_transport(&exp_zbar(n), &g, 0.5, 0.005).unwrap().series[0];
    let fact = |m: usize| (1..=m).fold(1.0, |a, i| a * i as f64);
    for k in 0..=n {
        let want: f64 = (0..=(n - k)).map(|m| 0.5f64.powi(m as i32) * binomial(k + m, m) / fact(k + m)).sum();
        assert!((f.coeff(0, k).re - want).abs() < 1e-10, "k = {k}");
    }
}

fn richardson(g: &Generator) -> f64 {
    let f0 = exp_zbar(12);
    let run = |dt: f64| solve_transport(&f0, g, 1.0, dt).unwrap().series.remove(0);
    let (a, b, cc) = (run(0.2), run(0.1), run(0.05));
    a.sub(&b).unwrap().norm() / b.sub(&cc).unwrap().norm()
}

#[test]
fn rk4_richardson_ratio() {
    for g in [PowerSeries2D::constant(12, O, c(1.0, 0.0)), PowerSeries2D::z(12, O)] {
        let ratio = richardson(&Generator::steady(g));
        assert!((ratio - 16.0).abs() < 2.0, "{ratio}");
    }
}

#[test]
fn breakdown_is_reported() {
    let g = Generator::steady(PowerSeries2D::constant(12, O, c(200.0, 0.0)));
    match solve_transport(&exp_zbar(12), &g, 1.0, 0.1) {
        Err(CasError::Breakdown { ratio, .. }) => assert!(ratio > 10.0),
        other => panic!("expected breakdown, got {other:?}"),
    }
}

#[test]
fn metric_transport_with_zero_field() {
    let m = sample_metric(8);
    let g = Generator::steady(PowerSeries2D::zeros(8, O));
    assert_eq!(transport_metric(&m, &g, 0.3, 0.05).unwrap(), m);
    let d = commute_check(&m, &exp_zbar(8), &g, 0.3, 0.05, 0.2).unwrap();
    assert_eq!(d.curvature, 0.0);
    assert_eq!(d.laplacian, 0.0);
}

#[test]
fn flat_metric_stays_flat_under_translation() {
    let m = MetricSeries::conformal(PowerSeries2D::constant(8, O, c(2.0, 0.5)));
    let g = Generator::steady(PowerSeries2D::constant(8, O, c(0.3, -0.2)));
    let mt = transport_metric(&m, &g, 0.5, 0.05).unwrap();
    assert!(mt.curvature().unwrap().norm() < 1e-14);
}

#[test]
fn commutation_defects_at_order_eight() {
    let m = sample_metric(8);
    let f = PowerSeries2D::from_fn(8, O, |j, k| c(1.0 / (1 + j + 2 * k) as f64, 0.1 * j as f64));
    let g = Generator::steady(PowerSeries2D::z(8, O));
    let d = commute_check(&m, &f, &g, 0.1, 0.01, 0.1).unwrap();
    assert!(d.curvature < 1e-7 && d.laplacian < 1e-7, "{d:?}");
}

#[test]
fn commutation_defects_decay_with_order() {
    // A constant part in g lowers degrees, so the truncation tail reaches the ball.
    let defects: Vec<f64> = [6, 8, 10]
        .iter()
        .map(|&n| {
            let f = PowerSeries2D::from_fn(n, O, |j, k| {
                if j + k <= 3 {
                    c(1.0 / (1 + j + 2 * k) as f64, 0.1 * j as f64)
                } else {
                    O
                }
            });
            let g = PowerSeries2D::z(n, O)
                .add(&PowerSeries2D::constant(n, O, c(0.5, 0.0)))
                .and_then(|g| g.add(&PowerSeries2D::zbar(n, O).scale(c(0.3, 0.0))))
                .unwrap();
            let d = commute_check(&sample_metric(n), &f, &Generator::steady(g), 0.1, 0.001, 0.3).unwrap();
            d.curvature.max(d.laplacian)
        })
        .collect();
    assert!(defects[0] > 5.0 * defects[1] && defects[1] > 5.0 * defects[2], "{defects:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn transport_is_multiplicative(
        a in prop::collection::vec(-1.0f64..1.0, 6),
        b in prop::collection::vec(-1.0f64..1.0, 6),
    ) {
        let n = 10;
        let low = |v: &Vec<f64>| PowerSeries2D::from_fn(n, O, |j, k| match (j, k) {
            (0, 0) => c(v[0], v[1]),
            (1, 0) => c(v[2], 0.0),
            (0, 1) => c(v[3], 0.0),
            (1, 1) => c(v[4], v[5]),
            _ => O,
        });
        let (fa, fb) = (low(&a), low(&b));
        let g = Generator::steady(PowerSeries2D::z(n, O).add(&PowerSeries2D::constant(n, O, c(0.5, 0.0))).unwrap());
        let t = |f: &PowerSeries2D| solve_transport(f, &g, 0.2, 0.02).unwrap().series.remove(0);
        let lhs = t(&fa.mul(&fb).unwrap());
        let rhs = t(&fa).mul(&t(&fb)).unwrap();
        prop_assert!(lhs.ball_distance(&rhs, 0.1, 16).unwrap() < 1e-8);
    }
}
