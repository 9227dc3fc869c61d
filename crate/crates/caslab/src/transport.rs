//! Transport along complex vector fields `Z_t = g(z, t) ∂_z̄` for real
//! analytic data, as truncated power series in `(z - c, z̄ - c̄)`.
//!
//! A scalar evolves by `df/dt = g ∂_z̄ f`. A metric `λ dz dw̄` is carried as
//! `(λ, a, b)` with `a = ∂_z w̄`, `b = ∂_z̄ w̄`: the coordinate `z` is
//! invariant, `w̄` is transported as a scalar, and the differentials follow.

use serde::{Deserialize, Serialize};

use crate::error::{CasError, Result};
use crate::grid::C64;

/// Default truncation order.
pub const DEFAULT_ORDER: usize = 12;
/// Per-step growth of the coefficient norm treated as breakdown.
pub const BREAKDOWN_RATIO: f64 = 10.0;

/// `Σ c_{jk} (z - c)^j (z̄ - c̄)^k` over `j + k ≤ order`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerSeries2D {
    pub order: usize,
    pub center: C64,
    /// Degree-major: degree `d` occupies `d(d+1)/2 ..`, ordered by `k`.
    pub coeffs: Vec<C64>,
}

fn tri(j: usize, k: usize) -> usize {
    let d = j + k;
    d * (d + 1) / 2 + k
}

fn zero() -> C64 {
    C64::new(0.0, 0.0)
}

impl PowerSeries2D {
    pub fn zeros(order: usize, center: C64) -> Self {
        PowerSeries2D { order, center, coeffs: vec![zero(); (order + 1) * (order + 2) / 2] }
    }

    pub fn constant(order: usize, center: C64, value: C64) -> Self {
        let mut s = Self::zeros(order, center);
        s.coeffs[0] = value;
        s
    }

    pub fn monomial(order: usize, center: C64, j: usize, k: usize, value: C64) -> Self {
        let mut s = Self::zeros(order, center);
        if j + k <= order {
            s.coeffs[tri(j, k)] = value;
        }
        s
    }

    /// The coordinate `z` (including the center).
    pub fn z(order: usize, center: C64) -> Self {
        let mut s = Self::constant(order, center, center);
        if order >= 1 {
            s.coeffs[tri(1, 0)] = C64::new(1.0, 0.0);
        }
        s
    }

    pub fn zbar(order: usize, center: C64) -> Self {
        let mut s = Self::constant(order, center, center.conj());
        if order >= 1 {
            s.coeffs[tri(0, 1)] = C64::new(1.0, 0.0);
        }
        s
    }

    /// Builds a series from a coefficient rule `(j, k) ↦ c_{jk}`.
    pub fn from_fn<F: Fn(usize, usize) -> C64>(order: usize, center: C64, f: F) -> Self {
        let mut s = Self::zeros(order, center);
        for d in 0..=order {
            for k in 0..=d {
                s.coeffs[tri(d - k, k)] = f(d - k, k);
            }
        }
        s
    }

    pub fn coeff(&self, j: usize, k: usize) -> C64 {
        if j + k <= self.order {
            self.coeffs[tri(j, k)]
        } else {
            zero()
        }
    }

    fn check(&self, other: &Self) -> Result<()> {
        if self.order != other.order {
            return Err(CasError::OrderMismatch(self.order, other.order));
        }
        if self.center != other.center {
            return Err(CasError::Invalid("series expanded at different centers".into()));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check(other)?;
        let mut s = self.clone();
        s.coeffs.iter_mut().zip(&other.coeffs).for_each(|(a, b)| *a += b);
        Ok(s)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.scale(C64::new(-1.0, 0.0)))
    }

    pub fn scale(&self, s: C64) -> Self {
        let mut out = self.clone();
        out.coeffs.iter_mut().for_each(|a| *a *= s);
        out
    }

    /// Product truncated at the common order.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.check(other)?;
        let n = self.order;
        let mut out = Self::zeros(n, self.center);
        for d1 in 0..=n {
            for k1 in 0..=d1 {
                let a = self.coeffs[tri(d1 - k1, k1)];
                if a == zero() {
                    continue;
                }
                for d2 in 0..=(n - d1) {
                    for k2 in 0..=d2 {
                        out.coeffs[tri(d1 - k1 + d2 - k2, k1 + k2)] += a * other.coeffs[tri(d2 - k2, k2)];
                    }
                }
            }
        }
        Ok(out)
    }

    /// `1 / f`, degree by degree; needs a nonzero constant term.
    pub fn inv(&self) -> Result<Self> {
        let c0 = self.coeffs[0];
        if c0.norm() == 0.0 {
            return Err(CasError::Invalid("series with zero constant term has no inverse".into()));
        }
        let n = self.order;
        let mut out = Self::zeros(n, self.center);
        out.coeffs[0] = 1.0 / c0;
        for d in 1..=n {
            for k in 0..=d {
                let j = d - k;
                // Σ over splits with the (0,0) term of `self` excluded.
                let mut acc = zero();
                for j1 in 0..=j {
                    for k1 in 0..=k {
                        if j1 + k1 == 0 {
                            continue;
                        }
                        acc += self.coeff(j1, k1) * out.coeffs[tri(j - j1, k - k1)];
                    }
                }
                out.coeffs[tri(j, k)] = -acc / c0;
            }
        }
        Ok(out)
    }

    pub fn div(&self, other: &Self) -> Result<Self> {
        self.mul(&other.inv()?)
    }

    /// `∂_z`; the top degree of the result is zero.
    pub fn d_z(&self) -> Self {
        let mut out = Self::zeros(self.order, self.center);
        for d in 1..=self.order {
            for k in 0..d {
                let j = d - k;
                out.coeffs[tri(j - 1, k)] = self.coeffs[tri(j, k)] * j as f64;
            }
        }
        out
    }

    pub fn d_zbar(&self) -> Self {
        let mut out = Self::zeros(self.order, self.center);
        for d in 1..=self.order {
            for k in 1..=d {
                let j = d - k;
                out.coeffs[tri(j, k - 1)] = self.coeffs[tri(j, k)] * k as f64;
            }
        }
        out
    }

    pub fn eval(&self, z: C64) -> C64 {
        let w = z - self.center;
        let wb = w.conj();
        let mut zp = vec![C64::new(1.0, 0.0); self.order + 1];
        let mut zbp = zp.clone();
        for i in 1..=self.order {
            zp[i] = zp[i - 1] * w;
            zbp[i] = zbp[i - 1] * wb;
        }
        let mut acc = zero();
        for d in 0..=self.order {
            for k in 0..=d {
                acc += self.coeffs[tri(d - k, k)] * zp[d - k] * zbp[k];
            }
        }
        acc
    }

    /// `Σ |c_{jk}|`.
    pub fn norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm()).sum()
    }

    /// Largest `|f(z) - g(z)|` on `samples` points of each of four circles
    /// of radius up to `radius` about the center, plus the center itself.
    pub fn ball_distance(&self, other: &Self, radius: f64, samples: usize) -> Result<f64> {
        self.check(other)?;
        let diff = self.sub(other)?;
        let mut worst = diff.coeffs[0].norm();
        for ring in 1..=4 {
            let r = radius * ring as f64 / 4.0;
            for s in 0..samples {
                let z = self.center + C64::from_polar(r, 2.0 * std::f64::consts::PI * s as f64 / samples as f64);
                worst = worst.max(diff.eval(z).norm());
            }
        }
        Ok(worst)
    }
}

/// `g(z, t) = Σ_m t^m g_m(z)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub terms: Vec<PowerSeries2D>,
}

impl Generator {
    pub fn steady(g: PowerSeries2D) -> Self {
        Generator { terms: vec![g] }
    }

    pub fn at(&self, t: f64) -> PowerSeries2D {
        let mut out = PowerSeries2D::zeros(self.terms[0].order, self.terms[0].center);
        let mut tm = 1.0;
        for g in &self.terms {
            out = out.add(&g.scale(C64::new(tm, 0.0))).expect("generator terms share order and center");
            tm *= t;
        }
        out
    }

    fn check(&self, f: &PowerSeries2D) -> Result<()> {
        if self.terms.is_empty() {
            return Err(CasError::Invalid("generator has no terms".into()));
        }
        self.terms.iter().try_for_each(|g| g.check(f))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub norm: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransportState {
    pub series: Vec<PowerSeries2D>,
    pub t: f64,
    pub history: Vec<StepRecord>,
}

/// RK4 on a system of series with right-hand side `rhs(t, state)`.
/// Stops with [`CasError::Breakdown`] when the total coefficient norm grows
/// by more than [`BREAKDOWN_RATIO`] in one step.
pub fn integrate_system<F>(state0: Vec<PowerSeries2D>, t_end: f64, dt: f64, rhs: F) -> Result<TransportState>
where
    F: Fn(f64, &[PowerSeries2D]) -> Result<Vec<PowerSeries2D>>,
{
    if !(dt > 0.0) || !(t_end >= 0.0) {
        return Err(CasError::Invalid(format!("need dt > 0 and T >= 0, got dt = {dt}, T = {t_end}")));
    }
    let steps = (t_end / dt - 1e-9).ceil().max(0.0) as usize;
    let h = if steps == 0 { 0.0 } else { t_end / steps as f64 };
    let total = |s: &[PowerSeries2D]| s.iter().map(|x| x.norm()).sum::<f64>();
    let axpy = |a: &[PowerSeries2D], b: &[PowerSeries2D], s: f64| -> Result<Vec<PowerSeries2D>> {
        a.iter().zip(b).map(|(x, y)| x.add(&y.scale(C64::new(s, 0.0)))).collect()
    };
    let mut state = state0;
    let mut history = Vec::with_capacity(steps);
    let mut t = 0.0;
    for step in 0..steps {
        let before = total(&state);
        let k1 = rhs(t, &state)?;
        let k2 = rhs(t + 0.5 * h, &axpy(&state, &k1, 0.5 * h)?)?;
        let k3 = rhs(t + 0.5 * h, &axpy(&state, &k2, 0.5 * h)?)?;
        let k4 = rhs(t + h, &axpy(&state, &k3, h)?)?;
        let mut next = axpy(&state, &k1, h / 6.0)?;
        next = axpy(&next, &k2, h / 3.0)?;
        next = axpy(&next, &k3, h / 3.0)?;
        next = axpy(&next, &k4, h / 6.0)?;
        t = (step + 1) as f64 * h;
        let after = total(&next);
        let ratio = if before > 0.0 { after / before } else { 1.0 };
        if !after.is_finite() || ratio > BREAKDOWN_RATIO {
            return Err(CasError::Breakdown { t, ratio });
        }
        history.push(StepRecord { t, norm: after, ratio });
        state = next;
    }
    Ok(TransportState { series: state, t, history })
}

/// Transports the scalar `f0` to time `t_end`.
pub fn solve_transport(f0: &PowerSeries2D, g: &Generator, t_end: f64, dt: f64) -> Result<TransportState> {
    g.check(f0)?;
    integrate_system(vec![f0.clone()], t_end, dt, |t, s| Ok(vec![g.at(t).mul(&s[0].d_zbar())?]))
}

/// Metric `λ dz dw̄` as series `(λ, ∂_z w̄, ∂_z̄ w̄)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub lambda: PowerSeries2D,
    pub a: PowerSeries2D,
    pub b: PowerSeries2D,
}

impl MetricSeries {
    /// `λ dz dz̄`.
    pub fn conformal(lambda: PowerSeries2D) -> Self {
        let a = PowerSeries2D::zeros(lambda.order, lambda.center);
        let b = PowerSeries2D::constant(lambda.order, lambda.center, C64::new(1.0, 0.0));
        MetricSeries { lambda, a, b }
    }

    fn nu(&self) -> Result<PowerSeries2D> {
        self.a.div(&self.b)
    }

    /// `K = (2 / (λb)) [ -∂_z̄((∂_z L - ν ∂_z̄ L) / L) + ∂_z̄² ν ]`, `L = λb`.
    pub fn curvature(&self) -> Result<PowerSeries2D> {
        let l = self.lambda.mul(&self.b)?;
        let nu = self.nu()?;
        let inner = l.d_z().sub(&nu.mul(&l.d_zbar())?)?.div(&l)?;
        let bracket = nu.d_zbar().d_zbar().sub(&inner.d_zbar())?;
        bracket.scale(C64::new(2.0, 0.0)).div(&l)
    }

    /// `Δ f = (4 / (λb)) ∂_z̄(∂_z f - ν ∂_z̄ f)`.
    pub fn laplacian(&self, f: &PowerSeries2D) -> Result<PowerSeries2D> {
        let l = self.lambda.mul(&self.b)?;
        let nu = self.nu()?;
        let inner = f.d_z().sub(&nu.mul(&f.d_zbar())?)?;
        inner.d_zbar().scale(C64::new(4.0, 0.0)).div(&l)
    }
}

fn metric_rhs(g: &PowerSeries2D, s: &[PowerSeries2D]) -> Result<Vec<PowerSeries2D>> {
    let gb = g.mul(&s[2])?;
    Ok(vec![g.mul(&s[0].d_zbar())?, gb.d_z(), gb.d_zbar()])
}

/// Transports a metric to time `t_end`.
pub fn transport_metric(m: &MetricSeries, g: &Generator, t_end: f64, dt: f64) -> Result<MetricSeries> {
    g.check(&m.lambda)?;
    let state = vec![m.lambda.clone(), m.a.clone(), m.b.clone()];
    let out = integrate_system(state, t_end, dt, |t, s| metric_rhs(&g.at(t), s))?;
    let mut it = out.series.into_iter();
    Ok(MetricSeries { lambda: it.next().unwrap(), a: it.next().unwrap(), b: it.next().unwrap() })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CommuteDefects {
    /// `‖𝒯_t(K_g) - K_{𝒯_t g}‖` on the ball.
    pub curvature: f64,
    /// `‖𝒯_t(Δ_g f) - Δ_{𝒯_t g}(𝒯_t f)‖` on the ball.
    pub laplacian: f64,
    pub radius: f64,
}

/// Transports `(λ, a, b, f, K_g, Δ_g f)` together, so that both sides of
/// each identity see identical time steps, and compares them on the ball.
pub fn commute_check(
    m: &MetricSeries,
    f: &PowerSeries2D,
    g: &Generator,
    t_end: f64,
    dt: f64,
    radius: f64,
) -> Result<CommuteDefects> {
    g.check(f)?;
    let k0 = m.curvature()?;
    let lap0 = m.laplacian(f)?;
    let state = vec![m.lambda.clone(), m.a.clone(), m.b.clone(), f.clone(), k0, lap0];
    let out = integrate_system(state, t_end, dt, |t, s| {
        let gt = g.at(t);
        let mut r = metric_rhs(&gt, &s[..3])?;
        for x in &s[3..] {
            r.push(gt.mul(&x.d_zbar())?);
        }
        Ok(r)
    })?;
    let s = out.series;
    let mt = MetricSeries { lambda: s[0].clone(), a: s[1].clone(), b: s[2].clone() };
    let curvature = s[4].ball_distance(&mt.curvature()?, radius, 32)?;
    let laplacian = s[5].ball_distance(&mt.laplacian(&s[3])?, radius, 32)?;
    Ok(CommuteDefects { curvature, laplacian, radius })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::c;

    #[test]
    fn arithmetic_basics() {
        let o = c(0.0, 0.0);
        let zb = PowerSeries2D::zbar(4, o);
        assert_eq!(zb.mul(&zb).unwrap().d_zbar(), zb.scale(c(2.0, 0.0)));
        let p = PowerSeries2D::z(4, o).mul(&zb).unwrap();
        assert_eq!(p, PowerSeries2D::monomial(4, o, 1, 1, c(1.0, 0.0)));
        let one_plus = zb.add(&PowerSeries2D::constant(4, o, c(1.0, 0.0))).unwrap();
        let cube = one_plus.mul(&one_plus).unwrap().mul(&one_plus).unwrap();
        let want = [1.0, 3.0, 3.0, 1.0];
        for (k, w) in want.iter().enumerate() {
            assert_eq!(cube.coeff(0, k), c(*w, 0.0));
        }
        assert_eq!(cube.coeff(0, 4), c(0.0, 0.0));
        assert!(PowerSeries2D::zeros(3, o).add(&PowerSeries2D::zeros(4, o)).is_err());
    }

    #[test]
    fn inverse_of_geometric_series() {
        let o = c(0.0, 0.0);
        let f = PowerSeries2D::constant(6, o, c(1.0, 0.0)).sub(&PowerSeries2D::z(6, o)).unwrap();
        let inv = f.inv().unwrap();
        for j in 0..=6 {
            assert_eq!(inv.coeff(j, 0), c(1.0, 0.0));
        }
        assert!(PowerSeries2D::z(3, o).inv().is_err());
    }
}
