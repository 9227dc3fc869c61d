//! Manufactured metrics with hand-differentiated oracles, shared by the
//! integration tests and the acceptance harness.
#![allow(dead_code)]

use caslab::cmetric::ComplexMetric;
use caslab::grid::{c, make_field};
use caslab::{Backend, ComplexField, GridDomain, C64};
use std::f64::consts::TAU;

/// `amp · exp(2πi (kx x + ky y))`.
#[derive(Clone, Copy, Debug)]
pub struct Wave {
    pub amp: C64,
    pub kx: f64,
    pub ky: f64,
}

pub fn wave(amp: C64, kx: f64, ky: f64) -> Wave {
    Wave { amp, kx, ky }
}

/// `cos(2π(kx x + ky y))` and `sin(...)` as pairs of waves.
pub fn cos_wave(a: f64, kx: f64, ky: f64) -> [Wave; 2] {
    [wave(c(0.5 * a, 0.0), kx, ky), wave(c(0.5 * a, 0.0), -kx, -ky)]
}

pub fn sin_wave(a: f64, kx: f64, ky: f64) -> [Wave; 2] {
    [wave(c(0.0, -0.5 * a), kx, ky), wave(c(0.0, 0.5 * a), -kx, -ky)]
}

/// Value, `∂_z`, `∂_z̄`, `∂_z∂_z̄`, `∂_z̄²` of a trigonometric polynomial.
pub fn jets(ws: &[Wave], z: C64) -> [C64; 5] {
    let mut out = [C64::new(0.0, 0.0); 5];
    for w in ws {
        let (al, be) = (TAU * w.kx, TAU * w.ky);
        let e = w.amp * C64::new(0.0, al * z.re + be * z.im).exp();
        let dz = 0.5 * C64::new(be, al);
        let dzb = 0.5 * C64::new(-be, al);
        out[0] += e;
        out[1] += dz * e;
        out[2] += dzb * e;
        out[3] += dz * dzb * e;
        out[4] += dzb * dzb * e;
    }
    out
}

/// A metric `(λ, ν, ∂_z̄w̄)` with a test function `u`. The oracle
/// `Δu = 4/(λ b) · (u_zz̄ - ν_z̄ u_z̄ - ν u_z̄z̄)` is evaluated from the jets.
pub struct Manufactured {
    pub name: &'static str,
    pub lambda: fn(C64) -> C64,
    pub b: fn(C64) -> C64,
    pub nu: Vec<Wave>,
    pub u: Vec<Wave>,
}

impl Manufactured {
    pub fn metric(&self, d: &GridDomain, backend: Backend) -> ComplexMetric {
        let nu = self.nu.clone();
        ComplexMetric::new(
            make_field(d, self.lambda).unwrap(),
            make_field(d, move |z| jets(&nu, z)[0].conj()).unwrap(),
            make_field(d, self.b).unwrap(),
            backend,
        )
        .unwrap()
    }

    pub fn u(&self, d: &GridDomain) -> ComplexField {
        let u = self.u.clone();
        make_field(d, move |z| jets(&u, z)[0]).unwrap()
    }

    pub fn laplacian(&self, d: &GridDomain) -> ComplexField {
        let (u, nu, lambda, b) = (self.u.clone(), self.nu.clone(), self.lambda, self.b);
        make_field(d, move |z| {
            let uj = jets(&u, z);
            let nj = jets(&nu, z);
            4.0 / (lambda(z) * b(z)) * (uj[3] - nj[2] * uj[2] - nj[0] * uj[4])
        })
        .unwrap()
    }
}

pub fn manufactured_triples() -> Vec<Manufactured> {
    let mut out = vec![
        Manufactured {
            name: "flat, single mode",
            lambda: |_| c(1.0, 0.0),
            b: |_| c(1.0, 0.0),
            nu: vec![],
            u: vec![wave(c(1.0, 0.0), 1.0, 2.0)],
        },
        Manufactured {
            name: "conformal, complex factor",
            lambda: |z| (0.3 * (TAU * z.re).cos()).exp() * c(1.0, 0.2),
            b: |_| c(1.0, 0.0),
            nu: vec![],
            u: [cos_wave(1.0, 1.0, 0.0), sin_wave(1.0, 0.0, 1.0)].concat(),
        },
        Manufactured {
            name: "constant beltrami",
            lambda: |z| c(2.0 + (TAU * z.im).sin(), 0.0),
            b: |_| c(1.0, 0.0),
            nu: vec![wave(c(0.2, 0.1), 0.0, 0.0)],
            u: vec![wave(c(1.0, 0.0), 2.0, -1.0)],
        },
        Manufactured {
            name: "varying beltrami",
            lambda: |z| c(1.0 + 0.5 * (TAU * (z.re + z.im)).cos(), 0.0),
            b: |_| c(1.0, 0.0),
            nu: [cos_wave(0.2, 1.0, 0.0), sin_wave(0.1, 0.0, 1.0).map(|w| wave(w.amp * c(0.0, 1.0), w.kx, w.ky))]
                .concat(),
            u: [sin_wave(1.0, 1.0, 0.0).map(|w| wave(w.amp, w.kx, w.ky + 1.0))].concat(),
        },
        Manufactured {
            name: "varying beltrami and isotropic scale",
            lambda: |z| c((0.2 * (TAU * z.re).sin()).exp(), 0.0),
            b: |z| c(1.0, 0.3 * (TAU * z.re).cos()),
            nu: vec![wave(c(0.25, 0.0), 0.0, 1.0)],
            u: [cos_wave(1.0, 2.0, 1.0), sin_wave(0.5, 0.0, 1.0)].concat(),
        },
    ];
    out.shrink_to_fit();
    out
}

/// Max-norm relative error.
pub fn relative_error(a: &ComplexField, b: &ComplexField) -> f64 {
    a.max_diff(b).unwrap() / b.max_abs()
}

/// One-dimensional quadrature oracle for radial Beltrami coefficients.
pub mod radial {
    /// Gauss–Legendre nodes on [-1, 1] (20 points), for the radial oracle.
    pub fn gauss_legendre_20() -> Vec<(f64, f64)> {
        let n = 20;
        let mut out = Vec::new();
        for i in 0..n {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    let w = 2.0 / ((1.0 - x * x) * dp * dp);
                    out.push((x, w));
                    break;
                }
            }
        }
        out
    }

    pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, pieces: usize) -> f64 {
        let gl = gauss_legendre_20();
        let h = (b - a) / pieces as f64;
        (0..pieces)
            .map(|p| {
                let lo = a + p as f64 * h;
                gl.iter().map(|(x, w)| w * f(lo + 0.5 * h * (x + 1.0))).sum::<f64>() * 0.5 * h
            })
            .sum()
    }

    /// Radial profile `ν(r) = k (r/σ)² e^{1 - r²/σ²}`; `μ = ν(r) z/z̄`.
    pub fn nu(k: f64, sigma: f64, r: f64) -> f64 {
        let t = r * r / (sigma * sigma);
        k * t * (1.0 - t).exp()
    }

    /// `f = z p(|z|)` with `p'/p = 2ν / (r(1-ν))`, `p(∞) = 1`.
    pub fn radial_p(k: f64, sigma: f64, r: f64) -> f64 {
        let rmax = 8.0 * sigma;
        if r >= rmax {
            return 1.0;
        }
        let integrand = |s: f64| 2.0 * nu(k, sigma, s) / (s * (1.0 - nu(k, sigma, s)));
        (-integrate(integrand, r.max(1e-12), rmax, 64)).exp()
    }
}
