//! Cauchy and Beurling transforms and the measurable Riemann mapping solver.
//!
//! Both transforms are Fourier multipliers on a window enlarged by
//! [`PAD`] in each direction. The lattice is shifted by half a frequency step
//! (samples are modulated by `e^{-iπ(j/N + k/N)}`), so `ξ = kx + i ky` never
//! vanishes: `C` has symbol `-2i/ξ` and `T` has symbol `ξ̄/ξ`, which is exactly
//! unitary on the lattice.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{CasError, Result};
use crate::grid::{ComplexField, Fft2Plan, GridDomain, C64, I};

/// Window enlargement factor.
pub const PAD: usize = 4;

/// Compactly supported Beltrami coefficient on a chart window.
#[derive(Clone, Debug)]
pub struct BeltramiCoefficient {
    pub mu: ComplexField,
    pub center: C64,
    pub support_radius: f64,
}

impl BeltramiCoefficient {
    /// Validates `sup|μ| < 1` and `μ = 0` outside the disc of `support_radius`.
    pub fn new(mu: ComplexField, center: C64, support_radius: f64) -> Result<Self> {
        let d = mu.domain;
        for (i, v) in mu.data.iter().enumerate() {
            if (d.node_at(i) - center).norm() > support_radius && v.norm() != 0.0 {
                return Err(CasError::Invalid(format!(
                    "μ = {v} outside the declared support at {}",
                    d.node_at(i)
                )));
            }
        }
        let sup = mu.max_abs();
        if sup >= 1.0 {
            return Err(CasError::NotPositive(format!("sup|μ| = {sup} >= 1")));
        }
        Ok(BeltramiCoefficient { mu, center, support_radius })
    }

    /// Samples `f` and multiplies by a smooth cutoff equal to 1 inside
    /// `0.8 * radius` and 0 beyond `radius`.
    pub fn from_fn<F>(domain: &GridDomain, center: C64, radius: f64, f: F) -> Result<Self>
    where
        F: Fn(C64) -> C64,
    {
        let data = (0..domain.len())
            .map(|i| {
                let z = domain.node_at(i);
                let cut = smooth_cutoff((z - center).norm(), 0.8 * radius, radius);
                if cut == 0.0 {
                    C64::new(0.0, 0.0)
                } else {
                    f(z) * cut
                }
            })
            .collect();
        Self::new(ComplexField::new(*domain, data, "mu")?, center, radius)
    }

    pub fn sup(&self) -> f64 {
        self.mu.max_abs()
    }
}

/// C-infinity step: 1 for `r <= r0`, 0 for `r >= r1`.
pub fn smooth_cutoff(r: f64, r0: f64, r1: f64) -> f64 {
    if r <= r0 {
        return 1.0;
    }
    if r >= r1 {
        return 0.0;
    }
    let t = (r - r0) / (r1 - r0);
    let a = (-1.0 / (1.0 - t)).exp();
    let b = (-1.0 / t).exp();
    a / (a + b)
}

/// Quasiconformal map produced by [`solve_beltrami`].
#[derive(Clone, Debug)]
pub struct QcMap {
    pub f: ComplexField,
    pub mu: ComplexField,
    /// `∂_z f = 1 + T h` on the window.
    pub fz: ComplexField,
    /// `‖∂_z̄ f - μ ∂_z f‖_{L²}` on the padded window.
    pub residual: f64,
    pub iterations: usize,
    /// Ratios of successive Neumann increments.
    pub contraction: Vec<f64>,
}

impl QcMap {
    /// Largest observed increment ratio after the first `skip` iterations.
    pub fn max_contraction(&self, skip: usize) -> f64 {
        self.contraction.iter().skip(skip).fold(0.0, |m, &r| m.max(r))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BeltramiSettings {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for BeltramiSettings {
    fn default() -> Self {
        BeltramiSettings { tol: 1e-10, max_iter: 500 }
    }
}

/// Multiplier machinery on the padded window of a chart window.
pub struct PaddedWindow {
    pub window: GridDomain,
    pub padded: GridDomain,
    off_x: usize,
    off_y: usize,
    plan: Fft2Plan,
    modulation: Vec<C64>,
    xi: Vec<C64>,
}

impl PaddedWindow {
    pub fn new(window: &GridDomain) -> Result<Self> {
        let (nx, ny) = (window.nx * PAD, window.ny * PAD);
        let off_x = (PAD - 1) * window.nx / 2;
        let off_y = (PAD - 1) * window.ny / 2;
        let origin = window.origin - C64::new(off_x as f64 * window.hx(), off_y as f64 * window.hy());
        let padded = GridDomain::new(nx, ny, window.hx() * nx as f64, window.hy() * ny as f64, origin)?;
        let modulation = (0..nx * ny)
            .map(|i| {
                let (j, k) = (i % nx, i / nx);
                (-I * PI * (j as f64 / nx as f64 + k as f64 / ny as f64)).exp()
            })
            .collect();
        let xi = (0..nx * ny)
            .map(|i| {
                let (j, k) = (i % nx, i / nx);
                let half = |m: usize, n: usize| if m < n / 2 { m as f64 + 0.5 } else { m as f64 - n as f64 + 0.5 };
                let kx = 2.0 * PI * half(j, nx) / padded.lx;
                let ky = 2.0 * PI * half(k, ny) / padded.ly;
                C64::new(kx, ky)
            })
            .collect();
        Ok(PaddedWindow { window: *window, padded, off_x, off_y, plan: Fft2Plan::new(nx, ny), modulation, xi })
    }

    /// Zero-extends a window field.
    pub fn embed(&self, f: &ComplexField) -> Result<Vec<C64>> {
        if !f.domain.same_grid(&self.window) {
            return Err(CasError::GridMismatch("field is not on the padded window's chart".into()));
        }
        let mut out = vec![C64::new(0.0, 0.0); self.padded.len()];
        for k in 0..self.window.ny {
            for j in 0..self.window.nx {
                out[(k + self.off_y) * self.padded.nx + j + self.off_x] = f.at(j, k);
            }
        }
        Ok(out)
    }

    /// Restricts padded data to the window.
    pub fn extract(&self, data: &[C64]) -> ComplexField {
        let w = &self.window;
        let mut out = Vec::with_capacity(w.len());
        for k in 0..w.ny {
            for j in 0..w.nx {
                out.push(data[(k + self.off_y) * self.padded.nx + j + self.off_x]);
            }
        }
        ComplexField { domain: *w, data: out, label: String::new() }
    }

    fn apply<F: Fn(C64) -> C64>(&self, data: &[C64], symbol: F) -> Vec<C64> {
        let mut buf: Vec<C64> = data.iter().zip(&self.modulation).map(|(a, m)| a * m).collect();
        self.plan.process(&mut buf, false);
        let scale = 1.0 / self.padded.len() as f64;
        for (b, xi) in buf.iter_mut().zip(&self.xi) {
            *b *= symbol(*xi) * scale;
        }
        self.plan.process(&mut buf, true);
        buf.iter().zip(&self.modulation).map(|(a, m)| a * m.conj()).collect()
    }

    /// Cauchy transform of padded data.
    pub fn cauchy(&self, data: &[C64]) -> Vec<C64> {
        self.apply(data, |xi| -2.0 * I / xi)
    }

    /// Beurling transform of padded data.
    pub fn beurling(&self, data: &[C64]) -> Vec<C64> {
        self.apply(data, |xi| xi.conj() / xi)
    }

    pub fn l2(&self, data: &[C64]) -> f64 {
        (data.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.padded.hx() * self.padded.hy()).sqrt()
    }
}

fn check_support(h: &ComplexField) -> Result<()> {
    let d = h.domain;
    let scale = h.max_abs();
    let mut edge: f64 = 0.0;
    for j in 0..d.nx {
        edge = edge.max(h.at(j, 0).norm()).max(h.at(j, d.ny - 1).norm());
    }
    for k in 0..d.ny {
        edge = edge.max(h.at(0, k).norm()).max(h.at(d.nx - 1, k).norm());
    }
    if edge > 1e-12 * scale.max(1e-300) && edge > 0.0 {
        return Err(CasError::SupportTouchesBoundary(edge));
    }
    Ok(())
}

/// `u` with `∂_z̄ u = h` and `u → 0` at infinity, on the window of `h`.
pub fn cauchy_transform(h: &ComplexField) -> Result<ComplexField> {
    check_support(h)?;
    let pw = PaddedWindow::new(&h.domain)?;
    Ok(pw.extract(&pw.cauchy(&pw.embed(h)?)))
}

/// `T h = ∂_z C h`, restricted to the window of `h`.
pub fn beurling_transform(h: &ComplexField) -> Result<ComplexField> {
    check_support(h)?;
    let pw = PaddedWindow::new(&h.domain)?;
    Ok(pw.extract(&pw.beurling(&pw.embed(h)?)))
}

/// Beurling transform on the full padded window, where it is an L² isometry.
pub fn beurling_transform_padded(h: &ComplexField) -> Result<(PaddedWindow, Vec<C64>)> {
    check_support(h)?;
    let pw = PaddedWindow::new(&h.domain)?;
    let out = pw.beurling(&pw.embed(h)?);
    Ok((pw, out))
}

/// Normalized solution `f = z + C h` of `∂_z̄ f = μ ∂_z f`, where `h = μ(1 + T h)`
/// is found by Neumann iteration.
pub fn solve_beltrami(mu: &BeltramiCoefficient, settings: &BeltramiSettings) -> Result<QcMap> {
    let pw = PaddedWindow::new(&mu.mu.domain)?;
    let m = pw.embed(&mu.mu)?;
    let sup = mu.sup();
    let mut h = m.clone();
    let mut prev_inc = f64::NAN;
    let mut contraction = Vec::new();
    let mut residual = f64::INFINITY;
    for it in 0..settings.max_iter {
        let th = pw.beurling(&h);
        let next: Vec<C64> = (0..h.len()).map(|i| m[i] * (1.0 + th[i])).collect();
        let inc: Vec<C64> = next.iter().zip(&h).map(|(a, b)| a - b).collect();
        residual = pw.l2(&inc);
        if prev_inc.is_finite() && prev_inc > 0.0 {
            contraction.push(residual / prev_inc);
        }
        prev_inc = residual;
        if residual <= settings.tol {
            let ch = pw.extract(&pw.cauchy(&h));
            let fz = pw.extract(&th).map(|v| 1.0 + v);
            let d = mu.mu.domain;
            let data = (0..d.len()).map(|i| d.node_at(i) + ch.data[i]).collect();
            return Ok(QcMap {
                f: ComplexField::new(d, data, "qc map")?,
                mu: mu.mu.clone(),
                fz: fz.validate()?,
                residual,
                iterations: it,
                contraction,
            });
        }
        h = next;
    }
    Err(CasError::NoConvergence { iterations: settings.max_iter, residual, contraction: sup })
}

/// Least-squares fit of `a f + b` to `target` over the nodes selected by
/// `mask`; returns `(a, b, max residual)`.
pub fn affine_fit(f: &[C64], target: &[C64], mask: &[bool]) -> (C64, C64, f64) {
    let idx: Vec<usize> = (0..f.len()).filter(|&i| mask[i]).collect();
    let n = idx.len() as f64;
    let mf: C64 = idx.iter().map(|&i| f[i]).sum::<C64>() / n;
    let mt: C64 = idx.iter().map(|&i| target[i]).sum::<C64>() / n;
    let mut sxx = 0.0;
    let mut sxy = C64::new(0.0, 0.0);
    for &i in &idx {
        let df = f[i] - mf;
        sxx += df.norm_sqr();
        sxy += df.conj() * (target[i] - mt);
    }
    let a = sxy / sxx;
    let b = mt - a * mf;
    let err = idx.iter().fold(0.0f64, |m, &i| m.max((a * f[i] + b - target[i]).norm()));
    (a, b, err)
}

/// Beltrami coefficient of the inverse map, sampled on the window of `f`.
///
/// Uses `μ_{f⁻¹}(f(z)) = -μ(z) f_z / conj(f_z)`: each node `w` is pulled back by
/// Newton iteration on `f(z) = w` with Lagrange interpolation of `f` and its
/// `z`-derivative. Nodes whose preimage leaves the window get `μ = 0`, which
/// is exact when the support of `μ` is well inside the window.
pub fn inverse_coefficient(map: &QcMap, order: usize) -> Result<ComplexField> {
    let d = map.f.domain;
    let fz = &map.fz;
    let fzb = map.mu.mul(fz)?;
    let data = (0..d.len())
        .map(|i| {
            let w = d.node_at(i);
            let mut z = w;
            for _ in 0..60 {
                let (Some(fv), Some(a), Some(b)) = (
                    map.f.interpolate(z, order, false),
                    fz.interpolate(z, order, false),
                    fzb.interpolate(z, order, false),
                ) else {
                    return C64::new(0.0, 0.0);
                };
                // Solve a dz + b conj(dz) = w - f for the real-linear step.
                let r = w - fv;
                let det = a.norm_sqr() - b.norm_sqr();
                let dz = (a.conj() * r - b * r.conj()) / det;
                z += dz;
                if dz.norm() < 1e-14 {
                    break;
                }
            }
            match (map.mu.interpolate(z, order, false), fz.interpolate(z, order, false)) {
                (Some(m), Some(a)) => -m * a / a.conj(),
                _ => C64::new(0.0, 0.0),
            }
        })
        .collect();
    ComplexField::new(d, data, "inverse mu")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{c, make_field};

    #[test]
    fn zero_coefficient_gives_identity() {
        let d = GridDomain::new(32, 32, 4.0, 4.0, c(-2.0, -2.0)).unwrap();
        let mu = BeltramiCoefficient::new(ComplexField::zeros(&d), c(0.0, 0.0), 1.0).unwrap();
        let f = solve_beltrami(&mu, &BeltramiSettings::default()).unwrap();
        let id = make_field(&d, |z| z).unwrap();
        assert_eq!(f.f.max_diff(&id).unwrap(), 0.0);
    }

    #[test]
    fn cauchy_is_linear() {
        let d = GridDomain::new(32, 32, 4.0, 4.0, c(-2.0, -2.0)).unwrap();
        let h1 = make_field(&d, |z| (-(z.norm_sqr()) * 12.0).exp() * c(1.0, 0.0)).unwrap();
        let h2 = make_field(&d, |z| (-(z - 0.3).norm_sqr() * 12.0).exp() * z).unwrap();
        let a = c(0.3, -1.2);
        let lhs = cauchy_transform(&h1.scale(a).add(&h2).unwrap()).unwrap();
        let rhs = cauchy_transform(&h1).unwrap().scale(a).add(&cauchy_transform(&h2).unwrap()).unwrap();
        assert!(lhs.max_diff(&rhs).unwrap() < 1e-13);
        assert!(cauchy_transform(&ComplexField::zeros(&d)).unwrap().max_abs() == 0.0);
    }

    #[test]
    fn support_on_boundary_is_rejected() {
        let d = GridDomain::new(16, 16, 2.0, 2.0, c(-1.0, -1.0)).unwrap();
        let h = ComplexField::constant(&d, c(1.0, 0.0));
        assert!(matches!(cauchy_transform(&h), Err(CasError::SupportTouchesBoundary(_))));
    }

    #[test]
    fn near_unit_coefficient_does_not_converge() {
        let d = GridDomain::new(32, 32, 4.0, 4.0, c(-2.0, -2.0)).unwrap();
        let mu = BeltramiCoefficient::from_fn(&d, c(0.0, 0.0), 1.2, |_| c(0.999, 0.0)).unwrap();
        let err = solve_beltrami(&mu, &BeltramiSettings { tol: 1e-14, max_iter: 40 }).unwrap_err();
        match err {
            CasError::NoConvergence { iterations, contraction, .. } => {
                assert_eq!(iterations, 40);
                assert!((contraction - 0.999).abs() < 1e-12);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn cutoff_is_smooth_step() {
        assert_eq!(smooth_cutoff(0.5, 1.0, 2.0), 1.0);
        assert_eq!(smooth_cutoff(2.5, 1.0, 2.0), 0.0);
        assert!((smooth_cutoff(1.5, 1.0, 2.0) - 0.5).abs() < 1e-15);
    }
}
