//! Parallel transport of flat connections along chart loops.
//!
//! Coefficients `c` of a parallel section in the connection frame satisfy
//! `c' = -A(γ') c`, so the holonomy of a loop solves `M' = -A(γ') M`,
//! `M(0) = I`. Concatenation follows `M(γ1 then γ2) = M(γ2) · M(γ1)`.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::cas::FrameConnection;
use crate::error::{CasError, Result};
use crate::grid::C64;

/// Points per axis of the Lagrange interpolation used along loops (bicubic).
pub const INTERPOLATION_ORDER: usize = 4;

/// Closed polyline in the chart.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopPath {
    pub points: Vec<C64>,
}

impl LoopPath {
    /// Closes the polyline if needed.
    pub fn new(mut points: Vec<C64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(CasError::Invalid("a loop needs at least two points".into()));
        }
        if points.first() != points.last() {
            points.push(points[0]);
        }
        Ok(LoopPath { points })
    }

    /// Counter-clockwise rectangle with lower-left corner `z0`.
    pub fn rectangle(z0: C64, width: f64, height: f64) -> Self {
        let pts = vec![
            z0,
            z0 + C64::new(width, 0.0),
            z0 + C64::new(width, height),
            z0 + C64::new(0.0, height),
            z0,
        ];
        LoopPath { points: pts }
    }

    /// Counter-clockwise regular polygon with `sides` vertices on a circle.
    pub fn circle(center: C64, radius: f64, sides: usize) -> Self {
        let mut pts: Vec<C64> = (0..sides)
            .map(|k| center + C64::from_polar(radius, 2.0 * std::f64::consts::PI * k as f64 / sides as f64))
            .collect();
        pts.push(pts[0]);
        LoopPath { points: pts }
    }

    pub fn reversed(&self) -> Self {
        LoopPath { points: self.points.iter().rev().copied().collect() }
    }

    /// `self` followed by `other`; both must start at the same point.
    pub fn then(&self, other: &LoopPath) -> Result<Self> {
        if (self.points[0] - other.points[0]).norm() > 1e-14 {
            return Err(CasError::Invalid("concatenated loops must share their base point".into()));
        }
        let mut pts = self.points.clone();
        pts.extend_from_slice(&other.points[1..]);
        Ok(LoopPath { points: pts })
    }

    pub fn length(&self) -> f64 {
        self.points.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
    }

    /// Signed enclosed area (shoelace).
    pub fn area(&self) -> f64 {
        0.5 * self.points.windows(2).map(|w| w[0].re * w[1].im - w[1].re * w[0].im).sum::<f64>()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HolonomyMatrix {
    pub m: Matrix3<C64>,
    /// Classical Runge-Kutta: order 4.
    pub order: usize,
    pub steps: usize,
    pub det_defect: f64,
}

impl HolonomyMatrix {
    fn from_matrix(m: Matrix3<C64>, steps: usize) -> Self {
        let det_defect = (m.determinant() - C64::new(1.0, 0.0)).norm();
        HolonomyMatrix { m, order: 4, steps, det_defect }
    }

    /// `‖M - I‖` (Frobenius).
    pub fn identity_defect(&self) -> f64 {
        (self.m - Matrix3::identity()).norm()
    }
}

/// Integrates `M' = -A(γ') M` with `steps` RK4 steps per polyline segment.
pub fn integrate_loop(conn: &FrameConnection, path: &LoopPath, steps: usize) -> Result<HolonomyMatrix> {
    integrate_with(path, steps, |z| conn.sample(z, INTERPOLATION_ORDER))
}

/// Same integrator for a connection given pointwise by a closure.
pub fn integrate_with<F>(path: &LoopPath, steps: usize, a: F) -> Result<HolonomyMatrix>
where
    F: Fn(C64) -> Option<(Matrix3<C64>, Matrix3<C64>)>,
{
    if steps == 0 {
        return Err(CasError::Invalid("step count must be positive".into()));
    }
    let mut m = Matrix3::<C64>::identity();
    for seg in path.points.windows(2) {
        let (p, q) = (seg[0], seg[1]);
        let v = q - p;
        let h = 1.0 / steps as f64;
        let gen = |t: f64| -> Result<Matrix3<C64>> {
            let z = p + v * t;
            let (ax, ay) = a(z).ok_or(CasError::LoopOutside(z))?;
            Ok(-(ax * C64::from(v.re) + ay * C64::from(v.im)))
        };
        for s in 0..steps {
            let t = s as f64 * h;
            let b0 = gen(t)?;
            let b1 = gen(t + 0.5 * h)?;
            let b2 = gen(t + h)?;
            let k1 = b0 * m;
            let half = C64::from(0.5 * h);
            let k2 = b1 * (m + k1 * half);
            let k3 = b1 * (m + k2 * half);
            let k4 = b2 * (m + k3 * C64::from(h));
            let two = C64::from(2.0);
            m += (k1 + k2 * two + k3 * two + k4) * C64::from(h / 6.0);
        }
    }
    Ok(HolonomyMatrix::from_matrix(m, steps * (path.points.len() - 1)))
}

/// `M / det(M)^{1/3}`. The cube root is principal unless `previous` is
/// given, in which case the root closest to it is chosen.
pub fn unimodular_project(m: &Matrix3<C64>, previous: Option<C64>) -> Result<(HolonomyMatrix, C64)> {
    let det = m.determinant();
    let scale = m.norm().powi(3).max(f64::MIN_POSITIVE);
    if det.norm() <= 1e-14 * scale {
        return Err(CasError::SingularMatrix(det.norm()));
    }
    let principal = det.powf(1.0 / 3.0);
    let root = match previous {
        None => principal,
        Some(prev) => (0..3)
            .map(|k| principal * C64::from_polar(1.0, 2.0 * std::f64::consts::PI * k as f64 / 3.0))
            .min_by(|a, b| (a - prev).norm().total_cmp(&(b - prev).norm()))
            .expect("three roots"),
    };
    Ok((HolonomyMatrix::from_matrix(m / root, 0), root))
}

/// Conjugation invariants of a `3 × 3` matrix.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Invariants {
    pub trace: C64,
    pub trace_inverse: C64,
    pub determinant: C64,
    /// Eigenvalues sorted by modulus, then argument.
    pub eigenvalues: Vec<C64>,
}

pub fn invariants(m: &Matrix3<C64>) -> Result<Invariants> {
    let det = m.determinant();
    let inv = m.try_inverse().ok_or(CasError::SingularMatrix(det.norm()))?;
    let mut eigenvalues = eigenvalues(m)?;
    eigenvalues.sort_by(|a, b| a.norm().total_cmp(&b.norm()).then(a.arg().total_cmp(&b.arg())));
    Ok(Invariants { trace: m.trace(), trace_inverse: inv.trace(), determinant: det, eigenvalues })
}

/// Eigenvalues of `m`, computed for the trace-free part `a = m - (tr m / 3) I`
/// so that clustered spectra (holonomies near the identity) stay resolved.
/// Falls back to the roots of the depressed characteristic polynomial
/// when the Schur iteration stalls.
fn eigenvalues(m: &Matrix3<C64>) -> Result<Vec<C64>> {
    let shift = m.trace() / 3.0;
    let a = m - Matrix3::identity() * shift;
    if let Some(ev) = nalgebra::Schur::try_new(a, 4.0 * f64::EPSILON, 10_000).and_then(|s| s.eigenvalues()) {
        return Ok(ev.iter().map(|v| v + shift).collect());
    }
    // λ³ + p λ + q with p = -tr(a²)/2, q = -det a.
    let p = -(a * a).trace() / 2.0;
    let q = -a.determinant();
    let roots = depressed_cubic_roots(p, q);
    if roots.iter().all(|r| r.re.is_finite() && r.im.is_finite()) {
        Ok(roots.iter().map(|v| v + shift).collect())
    } else {
        Err(CasError::Eigen("3x3 eigenvalues did not converge".into()))
    }
}

/// Cardano roots of `x³ + p x + q`, each polished by two Newton steps.
fn depressed_cubic_roots(p: C64, q: C64) -> [C64; 3] {
    let zero = C64::new(0.0, 0.0);
    let disc = (q * q / 4.0 + p * p * p / 27.0).sqrt();
    let mut u3 = -q / 2.0 + disc;
    if u3.norm() < (-q / 2.0 - disc).norm() {
        u3 = -q / 2.0 - disc;
    }
    let omega = C64::from_polar(1.0, 2.0 * std::f64::consts::PI / 3.0);
    let u = if u3 == zero { zero } else { u3.powf(1.0 / 3.0) };
    let mut out = [zero; 3];
    for (k, r) in out.iter_mut().enumerate() {
        let uk = u * omega.powi(k as i32);
        let mut x = if uk == zero { zero } else { uk - p / (3.0 * uk) };
        for _ in 0..2 {
            let d = 3.0 * x * x + p;
            if d.norm() > 0.0 {
                x -= (x * x * x + p * x + q) / d;
            }
        }
        *r = x;
    }
    out
}

/// `‖Mᵀ J M - J‖` (Frobenius).
pub fn preserves_form(m: &Matrix3<C64>, j: &Matrix3<C64>) -> f64 {
    (m.transpose() * j * m - j).norm()
}

/// `diag(1, 1, -1)`.
pub fn minkowski_form() -> Matrix3<C64> {
    Matrix3::from_diagonal(&nalgebra::Vector3::new(1.0, 1.0, -1.0).map(|v| C64::new(v, 0.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::c;

    #[test]
    fn cubic_roots_of_known_polynomials() {
        // (x - 1)(x - 2)(x + 3) = x³ - 7x + 6.
        let mut r = depressed_cubic_roots(c(-7.0, 0.0), c(6.0, 0.0)).map(|v| v.re);
        r.sort_by(f64::total_cmp);
        assert!((r[0] + 3.0).abs() < 1e-12 && (r[1] - 1.0).abs() < 1e-12 && (r[2] - 2.0).abs() < 1e-12);
        assert!(depressed_cubic_roots(c(0.0, 0.0), c(0.0, 0.0)).iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn near_identity_spectra() {
        let e = Matrix3::new(0.0, 1.0, 0.0, -1.0, 0.0, 0.3, 0.2, 0.0, 0.0).map(|v| c(v * 1e-7, v * 3e-8));
        let m = Matrix3::identity() + e;
        let inv = invariants(&m).unwrap();
        let sum: C64 = inv.eigenvalues.iter().sum();
        let prod: C64 = inv.eigenvalues.iter().product();
        assert!((sum - m.trace()).norm() < 1e-13);
        assert!((prod - m.determinant()).norm() < 1e-13);
    }

    #[test]
    fn projection_of_scalar_matrices() {
        let (h, root) = unimodular_project(&(Matrix3::identity() * c(2.0, 0.0)), None).unwrap();
        assert!((root - c(2.0, 0.0)).norm() < 1e-15);
        assert!(h.identity_defect() < 1e-15);
        assert!(unimodular_project(&Matrix3::zeros(), None).is_err());
    }

    #[test]
    fn identity_invariants() {
        let inv = invariants(&Matrix3::identity()).unwrap();
        assert_eq!(inv.trace, c(3.0, 0.0));
        assert!(inv.eigenvalues.iter().all(|e| (e - c(1.0, 0.0)).norm() < 1e-12));
        assert_eq!(preserves_form(&Matrix3::identity(), &minkowski_form()), 0.0);
    }

    #[test]
    fn loop_geometry() {
        let r = LoopPath::rectangle(c(0.0, 0.0), 2.0, 1.0);
        assert!((r.area() - 2.0).abs() < 1e-15 && (r.length() - 6.0).abs() < 1e-15);
        assert!((r.reversed().area() + 2.0).abs() < 1e-15);
    }
}
