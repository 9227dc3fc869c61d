//! Positive complex metrics `g = λ dz dw̄` in a local chart.
//!
//! A metric is stored through three fields: `λ`, the Beltrami coefficient
//! `μ = ∂_z̄w / ∂_z w` and `∂_z̄ w̄`. Writing `ν = conj(μ) = ∂_z w̄ / ∂_z̄ w̄`,
//! the frame `e1 = ∂_z̄`, `e2 = ∂_z - ν ∂_z̄` spans the two isotropic lines and
//! `∂_w = (∂_w z) e2` with `∂_w z = 1 / (conj(∂_z̄ w̄) (1 - |μ|²))`.

use serde::{Deserialize, Serialize};

use crate::error::{CasError, Result};
use crate::grid::{unwrapped_log, Backend, ComplexField, GridDomain, C64};

#[derive(Clone, Debug)]
pub struct ComplexMetric {
    pub lambda: ComplexField,
    pub mu: ComplexField,
    pub wbar_dzbar: ComplexField,
    pub backend: Backend,
}

/// Outcome of [`ComplexMetric::check_positive`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositivityCertificate {
    pub passed: bool,
    pub max_mu: f64,
    pub max_mu_at: C64,
    pub min_lambda: f64,
    pub min_lambda_at: C64,
    pub min_wbar_dzbar: f64,
    pub min_wbar_dzbar_at: C64,
    /// Number of nodes violating at least one bound.
    pub failing_nodes: usize,
}

/// Coefficients of the isotropic connection forms in the `(∂_z̄, ∂_w)` frame:
/// `∇∂_z̄ = α ⊗ ∂_z̄`, `∇∂_w = β ⊗ ∂_w`.
#[derive(Clone, Debug)]
pub struct FrameForms {
    pub alpha_zbar: ComplexField,
    pub alpha_w: ComplexField,
    pub beta_zbar: ComplexField,
    pub beta_w: ComplexField,
    /// `G = g(∂_z̄, ∂_w)`.
    pub g: ComplexField,
}

/// Cubic differentials `Q1 = φ dz³` and `Q̄2 = ψ̄ dw̄³`.
#[derive(Clone, Debug)]
pub struct CubicPair {
    pub phi: ComplexField,
    pub psibar: ComplexField,
    /// RMS of `∂_z̄ φ` and of `∂_w ψ̄`.
    pub holo_residuals: (f64, f64),
}

impl CubicPair {
    /// Builds the pair and measures holomorphy with respect to `g`.
    pub fn new(phi: ComplexField, psibar: ComplexField, g: &ComplexMetric) -> Result<Self> {
        let r1 = phi.d_zbar(g.backend)?.rms();
        let e2 = g.e2(&psibar)?;
        let r2 = e2.mul(&g.dwz())?.rms();
        Ok(CubicPair { phi, psibar, holo_residuals: (r1, r2) })
    }

    pub fn constant(domain: &GridDomain, phi: C64, psibar: C64) -> Self {
        CubicPair {
            phi: ComplexField::constant(domain, phi),
            psibar: ComplexField::constant(domain, psibar),
            holo_residuals: (0.0, 0.0),
        }
    }

    pub fn zero(domain: &GridDomain) -> Self {
        Self::constant(domain, C64::new(0.0, 0.0), C64::new(0.0, 0.0))
    }

    pub fn is_holomorphic(&self, tol: f64) -> bool {
        self.holo_residuals.0 <= tol && self.holo_residuals.1 <= tol
    }

    /// The twistor image `(ζ Q1, ζ⁻¹ Q̄2)`.
    pub fn twist(&self, zeta: C64) -> CubicPair {
        CubicPair {
            phi: self.phi.scale(zeta),
            psibar: self.psibar.scale(zeta.inv()),
            holo_residuals: self.holo_residuals,
        }
    }

    /// `(a Q1, b Q̄2)`.
    pub fn scaled(&self, a: C64, b: C64) -> CubicPair {
        CubicPair { phi: self.phi.scale(a), psibar: self.psibar.scale(b), holo_residuals: self.holo_residuals }
    }
}

impl ComplexMetric {
    pub fn new(
        lambda: ComplexField,
        mu: ComplexField,
        wbar_dzbar: ComplexField,
        backend: Backend,
    ) -> Result<Self> {
        if !lambda.domain.same_grid(&mu.domain) || !lambda.domain.same_grid(&wbar_dzbar.domain) {
            return Err(CasError::GridMismatch("metric fields live on different grids".into()));
        }
        if backend == Backend::Spectral && !lambda.domain.spectral_ok() {
            return Err(CasError::InvalidGrid("spectral backend needs a power-of-two grid".into()));
        }
        Ok(ComplexMetric { lambda, mu, wbar_dzbar, backend })
    }

    /// `λ dz dz̄` with `w = z`.
    pub fn conformal(lambda: ComplexField, backend: Backend) -> Result<Self> {
        let d = lambda.domain;
        Self::new(
            lambda,
            ComplexField::zeros(&d),
            ComplexField::constant(&d, C64::new(1.0, 0.0)),
            backend,
        )
    }

    pub fn domain(&self) -> GridDomain {
        self.lambda.domain
    }

    pub fn nu(&self) -> ComplexField {
        self.mu.conj()
    }

    /// `∂_w z = 1 / (conj(∂_z̄w̄)(1 - |μ|²))`.
    pub fn dwz(&self) -> ComplexField {
        self.wbar_dzbar
            .zip_map(&self.mu, |wz, m| 1.0 / (wz.conj() * (1.0 - m.norm_sqr())))
            .expect("metric fields share a grid")
    }

    /// `G = g(∂_z̄, ∂_w) = (λ/2)(∂_w z)(∂_z̄ w̄)`.
    pub fn big_g(&self) -> ComplexField {
        let lw = self.lambda_w();
        lw.zip_map(&self.dwz(), |a, b| 0.5 * a * b).expect("metric fields share a grid")
    }

    /// `λ ∂_z̄ w̄`, twice `g(∂_z̄, e2)`.
    pub fn lambda_w(&self) -> ComplexField {
        self.lambda.mul(&self.wbar_dzbar).expect("metric fields share a grid")
    }

    /// `e2 f = ∂_z f - ν ∂_z̄ f`.
    pub fn e2(&self, f: &ComplexField) -> Result<ComplexField> {
        let fz = f.d_z(self.backend)?;
        let fzb = f.d_zbar(self.backend)?;
        let nu = self.nu();
        Ok(ComplexField {
            domain: f.domain,
            data: (0..f.len()).map(|i| fz.data[i] - nu.data[i] * fzb.data[i]).collect(),
            label: String::new(),
        })
    }

    pub fn check_positive(&self) -> PositivityCertificate {
        let d = self.domain();
        let (imu, max_mu) = self.mu.argmax_abs();
        let (il, min_l) = self.lambda.argmin_abs();
        let (iw, min_w) = self.wbar_dzbar.argmin_abs();
        let failing_nodes = (0..d.len())
            .filter(|&i| {
                !(self.mu.data[i].norm() < 1.0
                    && self.lambda.data[i].norm() > 0.0
                    && self.wbar_dzbar.data[i].norm() > 0.0)
            })
            .count();
        PositivityCertificate {
            passed: failing_nodes == 0,
            max_mu,
            max_mu_at: d.node_at(imu),
            min_lambda: min_l,
            min_lambda_at: d.node_at(il),
            min_wbar_dzbar: min_w,
            min_wbar_dzbar_at: d.node_at(iw),
            failing_nodes,
        }
    }

    pub(crate) fn require_positive(&self) -> Result<()> {
        let c = self.check_positive();
        if c.passed {
            Ok(())
        } else {
            Err(CasError::NotPositive(format!(
                "{} failing nodes; max|μ| = {:.4} at {}, min|λ| = {:.3e}, min|∂_z̄w̄| = {:.3e}",
                c.failing_nodes, c.max_mu, c.max_mu_at, c.min_lambda, c.min_wbar_dzbar
            )))
        }
    }

    /// `Δ_g u = (4 / (λ ∂_z̄w̄)) ∂_z̄(∂_z u - μ̄ ∂_z̄ u)`.
    pub fn laplacian(&self, u: &ComplexField) -> Result<ComplexField> {
        self.require_positive()?;
        self.laplacian_unchecked(u)
    }

    /// Laplacian without the positivity scan, for inner loops of solvers.
    pub fn laplacian_unchecked(&self, u: &ComplexField) -> Result<ComplexField> {
        if !u.domain.same_grid(&self.domain()) {
            return Err(CasError::GridMismatch("laplacian argument".into()));
        }
        // ∂_z̄(∂_z u - ν ∂_z̄ u) with the flat part taken from direct stencils.
        let mut outer = u.d_zzbar(self.backend)?;
        if self.mu.data.iter().any(|m| *m != C64::new(0.0, 0.0)) {
            let nu = self.nu();
            let tail = nu.mul(&u.d_zbar(self.backend)?)?.d_zbar(self.backend)?;
            outer = outer.sub(&tail)?;
        }
        let lw = self.lambda_w();
        Ok(ComplexField {
            domain: u.domain,
            data: (0..u.len()).map(|i| 4.0 * outer.data[i] / lw.data[i]).collect(),
            label: "laplacian".into(),
        })
    }

    pub fn frame_connection_forms(&self) -> Result<FrameForms> {
        self.require_positive()?;
        let b = self.backend;
        let g = self.big_g();
        let dwz = self.dwz();
        let lw = self.lambda_w();
        let nu = self.nu();
        let nu_zb = nu.d_zbar(b)?;
        let alpha_zbar = lw.d_zbar(b)?.div(&lw)?;
        let alpha_w = dwz.mul(&nu_zb)?;
        let dlog_g_zbar = g.d_zbar(b)?.div(&g)?;
        let beta_zbar = dlog_g_zbar.sub(&alpha_zbar)?;
        let dlog_g_w = self.e2(&g)?.div(&g)?.mul(&dwz)?;
        let beta_w = dlog_g_w.sub(&alpha_w)?;
        Ok(FrameForms { alpha_zbar, alpha_w, beta_zbar, beta_w, g })
    }

    /// Gauss curvature `K = dα(e1, e2) / g(e1, e2)`.
    pub fn gauss_curvature(&self) -> Result<ComplexField> {
        let forms = self.frame_connection_forms()?;
        let b = self.backend;
        let dwz = self.dwz();
        // α in the (e1, e2) frame: α(e2) = α(∂_w) / ∂_w z.
        let a1 = &forms.alpha_zbar;
        let a2 = forms.alpha_w.div(&dwz)?;
        let e1a2 = a2.d_zbar(b)?;
        let e2a1 = self.e2(a1)?;
        let nu_zb = self.nu().d_zbar(b)?;
        let lw = self.lambda_w();
        let n = a1.len();
        let data = (0..n)
            .map(|i| {
                // [e1, e2] = -(∂_z̄ν) e1
                let d_alpha = e1a2.data[i] - e2a1.data[i] + nu_zb.data[i] * a1.data[i];
                d_alpha / (0.5 * lw.data[i])
            })
            .collect();
        ComplexField::new(self.domain(), data, "gauss curvature")
    }

    /// `K = -½ Δ_g log(λ ∂_z̄w̄) + (2 / (λ ∂_z̄w̄)) ∂_z̄² μ̄`.
    ///
    /// Equivalent to [`Self::gauss_curvature`]; the logarithm is never formed,
    /// only its derivatives `∂f / f`.
    pub fn gauss_curvature_closed(&self) -> Result<ComplexField> {
        self.require_positive()?;
        let b = self.backend;
        let lw = self.lambda_w();
        let nu = self.nu();
        let lz = lw.d_z(b)?.div(&lw)?;
        let lzb = lw.d_zbar(b)?.div(&lw)?;
        let inner = lz.zip_map(&nu.zip_map(&lzb, |n, l| n * l)?, |a, bb| a - bb)?;
        let outer = inner.d_zbar(b)?;
        let nu2 = nu.d_zbar(b)?.d_zbar(b)?;
        let data = (0..lw.len())
            .map(|i| (-2.0 * outer.data[i] + 2.0 * nu2.data[i]) / lw.data[i])
            .collect();
        ComplexField::new(self.domain(), data, "gauss curvature")
    }

    /// `ϱ g`; fails if `ϱ` vanishes or has no continuous logarithm.
    pub fn conformal_scale(&self, rho: &ComplexField) -> Result<ComplexMetric> {
        unwrapped_log(rho, self.backend.periodic())?;
        let lambda = self.lambda.mul(rho)?;
        ComplexMetric::new(lambda, self.mu.clone(), self.wbar_dzbar.clone(), self.backend)
    }

    /// `e^{2u} g`, which never meets a branch problem.
    pub fn conformal_exp(&self, u: &ComplexField) -> Result<ComplexMetric> {
        let lambda = self.lambda.zip_map(u, |l, v| l * (2.0 * v).exp())?;
        ComplexMetric::new(lambda, self.mu.clone(), self.wbar_dzbar.clone(), self.backend)
    }
}

/// Bers metric `-4 df1 df̄2 / (f1 - f̄2)²` with `w̄ = f̄2`.
///
/// Stored as `λ = -4 ∂_z f1 / (f1 - f̄2)²`, `∂_z̄ w̄ = ∂_z̄ f̄2` and
/// `μ = conj(∂_z f̄2 / ∂_z̄ f̄2)`, so that `λ ∂_z̄w̄` is the coefficient of
/// `dz dz̄` in the classical notation.
pub fn bers_metric(f1: &ComplexField, f2bar: &ComplexField, backend: Backend) -> Result<ComplexMetric> {
    let d = f1.domain;
    if !d.same_grid(&f2bar.domain) {
        return Err(CasError::GridMismatch("bers pair".into()));
    }
    for i in 0..d.len() {
        let gap = (f1.data[i] - f2bar.data[i]).norm();
        let scale = 1.0 + f1.data[i].norm().max(f2bar.data[i].norm());
        if gap <= 1e-8 * scale {
            return Err(CasError::SingularMetric { j: i % d.nx, k: i / d.nx, z: d.node_at(i), gap });
        }
    }
    let f1z = f1.d_z(backend)?;
    let f2z = f2bar.d_z(backend)?;
    let f2zb = f2bar.d_zbar(backend)?;
    let lambda: Vec<C64> = (0..d.len())
        .map(|i| {
            let diff = f1.data[i] - f2bar.data[i];
            -4.0 * f1z.data[i] / (diff * diff)
        })
        .collect();
    let mu: Vec<C64> = (0..d.len()).map(|i| (f2z.data[i] / f2zb.data[i]).conj()).collect();
    ComplexMetric::new(
        ComplexField::new(d, lambda, "lambda")?,
        ComplexField::new(d, mu, "mu")?,
        f2zb.with_label("wbar_dzbar").validate()?,
        backend,
    )
}

/// Bers metric from closed-form jets of the developing pair.
///
/// `f1(z)` returns `[f1, ∂_z f1]` and `f2bar(z)` returns
/// `[f̄2, ∂_z f̄2, ∂_z̄ f̄2]`. Compared with [`bers_metric`] this avoids
/// differentiating sampled maps, so `μ` carries no finite-difference noise
/// into the third derivatives that the curvature needs.
pub fn bers_metric_jets<F, G>(domain: &GridDomain, f1: F, f2bar: G, backend: Backend) -> Result<ComplexMetric>
where
    F: Fn(C64) -> [C64; 2] + Sync + Send,
    G: Fn(C64) -> [C64; 3] + Sync + Send,
{
    let d = *domain;
    let jets: Vec<([C64; 2], [C64; 3])> = (0..d.len()).map(|i| (f1(d.node_at(i)), f2bar(d.node_at(i)))).collect();
    for (i, (a, b)) in jets.iter().enumerate() {
        let gap = (a[0] - b[0]).norm();
        if gap <= 1e-8 * (1.0 + a[0].norm().max(b[0].norm())) {
            return Err(CasError::SingularMetric { j: i % d.nx, k: i / d.nx, z: d.node_at(i), gap });
        }
    }
    let lambda = jets
        .iter()
        .map(|(a, b)| {
            let diff = a[0] - b[0];
            -4.0 * a[1] / (diff * diff)
        })
        .collect();
    let mu = jets.iter().map(|(_, b)| (b[1] / b[2]).conj()).collect();
    let wz = jets.iter().map(|(_, b)| b[2]).collect();
    ComplexMetric::new(
        ComplexField::new(d, lambda, "lambda")?,
        ComplexField::new(d, mu, "mu")?,
        ComplexField::new(d, wz, "wbar_dzbar")?,
        backend,
    )
}

/// `¼ g(Q1, Q̄2) = 2 φ ψ̄ / λ³`, the source term of the Gauss equation.
pub fn pair_cubics(g: &ComplexMetric, q: &CubicPair) -> Result<ComplexField> {
    g.require_positive()?;
    let pq = q.phi.mul(&q.psibar)?;
    pq.zip_map(&g.lambda, |a, l| 2.0 * a / (l * l * l))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{c, make_field, I};

    fn flat(n: usize, mu: C64) -> ComplexMetric {
        let d = GridDomain::square(n, 1.0).unwrap();
        ComplexMetric::new(
            ComplexField::constant(&d, c(1.0, 0.0)),
            ComplexField::constant(&d, mu),
            ComplexField::constant(&d, c(1.0, 0.0)),
            Backend::Spectral,
        )
        .unwrap()
    }

    #[test]
    fn positivity_certificates() {
        assert!(flat(8, c(0.0, 0.0)).check_positive().passed);
        let half = flat(8, c(0.5, 0.0)).check_positive();
        assert!(half.passed && (half.max_mu - 0.5).abs() < 1e-15);
        let bad = flat(8, c(1.2, 0.0)).check_positive();
        assert!(!bad.passed);
        assert_eq!(bad.failing_nodes, 64);
    }

    #[test]
    fn laplacian_of_constant_vanishes() {
        let g = flat(16, c(0.3, 0.1));
        let u = ComplexField::constant(&g.domain(), c(2.0, -1.0));
        assert!(g.laplacian(&u).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn laplacian_constant_beltrami_on_window() {
        let k = c(0.2, 0.3);
        let d = GridDomain::window(16, -1.0, 1.0, -1.0, 1.0).unwrap();
        let g = ComplexMetric::new(
            ComplexField::constant(&d, c(1.0, 0.0)),
            ComplexField::constant(&d, k),
            ComplexField::constant(&d, c(1.0, 0.0)),
            Backend::Fd4Window,
        )
        .unwrap();
        let u = make_field(&d, |z| z.conj() * z.conj()).unwrap();
        let lap = g.laplacian(&u).unwrap();
        let expected = ComplexField::constant(&d, -8.0 * k.conj());
        assert!(lap.max_diff(&expected).unwrap() < 1e-10);
        let zz = make_field(&d, |z| z * z.conj()).unwrap();
        let flat = ComplexMetric::conformal(ComplexField::constant(&d, c(1.0, 0.0)), Backend::Fd4Window).unwrap();
        let four = ComplexField::constant(&d, c(4.0, 0.0));
        assert!(flat.laplacian(&zz).unwrap().max_diff(&four).unwrap() < 1e-10);
    }

    #[test]
    fn flat_frame_has_no_connection() {
        let d = GridDomain::square(16, 1.0).unwrap();
        let g = ComplexMetric::conformal(ComplexField::constant(&d, c(3.0, 0.0)), Backend::Spectral).unwrap();
        let f = g.frame_connection_forms().unwrap();
        for field in [&f.alpha_zbar, &f.alpha_w, &f.beta_zbar, &f.beta_w] {
            assert!(field.max_abs() < 1e-12);
        }
        assert!(g.gauss_curvature().unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn hyperbolic_forms() {
        let d = GridDomain::window(48, -0.25, 0.25, 1.0, 1.5).unwrap();
        let lambda = make_field(&d, |z| c(1.0 / (z.im * z.im), 0.0)).unwrap();
        let g = ComplexMetric::conformal(lambda, Backend::Fd6Window).unwrap();
        let f = g.frame_connection_forms().unwrap();
        assert!(f.alpha_w.max_abs() < 1e-12);
        // d log(1/(2y²)) = -2 dy / y; ∂_z̄ y = i/2, ∂_w = ∂_z, ∂_z y = -i/2.
        let sum_zbar = f.alpha_zbar.add(&f.beta_zbar).unwrap();
        let sum_w = f.alpha_w.add(&f.beta_w).unwrap();
        let ezb = make_field(&d, |z| -2.0 / z.im * 0.5 * I).unwrap();
        let ew = make_field(&d, |z| -2.0 / z.im * -0.5 * I).unwrap();
        assert!(sum_zbar.max_diff(&ezb).unwrap() < 1e-7);
        assert!(sum_w.max_diff(&ew).unwrap() < 1e-7);
    }

    #[test]
    fn gaussian_conformal_factor_curvature() {
        let d = GridDomain::window(64, -1.0, 1.0, -0.5, 0.5).unwrap();
        let lambda = make_field(&d, |z| c((z.re * z.re).exp(), 0.0)).unwrap();
        let g = ComplexMetric::conformal(lambda, Backend::Fd6Window).unwrap();
        let k = g.gauss_curvature().unwrap();
        let expected = make_field(&d, |z| c(-(-z.re * z.re).exp(), 0.0)).unwrap();
        assert!(k.max_diff(&expected).unwrap() < 1e-4);
        let g4 = ComplexMetric::conformal(g.lambda.clone(), Backend::Fd4Window).unwrap();
        assert!(g4.gauss_curvature().unwrap().max_diff_interior(&expected, 3).unwrap() < 1e-4);
    }

    #[test]
    fn bers_collision_is_reported() {
        let d = GridDomain::window(9, -1.0, 1.0, -1.0, 1.0).unwrap();
        let f1 = make_field(&d, |z| z).unwrap();
        let f2 = make_field(&d, |z| z.conj()).unwrap();
        assert!(matches!(bers_metric(&f1, &f2, Backend::Fd4Window), Err(CasError::SingularMetric { .. })));
    }

    #[test]
    fn bers_upper_half_plane_is_hyperbolic() {
        let d = GridDomain::window(32, -0.25, 0.25, 1.0, 1.5).unwrap();
        let f1 = make_field(&d, |z| z).unwrap();
        let f2 = make_field(&d, |z| z.conj()).unwrap();
        let g = bers_metric(&f1, &f2, Backend::Fd4Window).unwrap();
        let expected = make_field(&d, |z| c(1.0 / (z.im * z.im), 0.0)).unwrap();
        assert!(g.lambda.max_diff(&expected).unwrap() < 1e-12);
        assert!(g.mu.max_abs() < 1e-12);
    }

    #[test]
    fn pairing_examples() {
        let d = GridDomain::square(4, 1.0).unwrap();
        let g2 = ComplexMetric::conformal(ComplexField::constant(&d, c(2.0, 0.0)), Backend::Spectral).unwrap();
        let q = CubicPair::constant(&d, c(1.0, 0.0), c(1.0, 0.0));
        assert!((pair_cubics(&g2, &q).unwrap().data[0] - 0.25).norm() < 1e-15);
        let g1 = ComplexMetric::conformal(ComplexField::constant(&d, c(1.0, 0.0)), Backend::Spectral).unwrap();
        let q = CubicPair::constant(&d, c(2.0, 0.0), c(1.0, 0.0));
        assert!((pair_cubics(&g1, &q).unwrap().data[0] - 4.0).norm() < 1e-15);
        assert_eq!(pair_cubics(&g1, &CubicPair::zero(&d)).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn conformal_scale_rejects_winding() {
        let d = GridDomain::square(16, 1.0).unwrap();
        let g = ComplexMetric::conformal(ComplexField::constant(&d, c(1.0, 0.0)), Backend::Spectral).unwrap();
        let rho = make_field(&d, |z| (2.0 * std::f64::consts::PI * I * z.re).exp()).unwrap();
        assert!(matches!(g.conformal_scale(&rho), Err(CasError::Branch { .. })));
        let same = g.conformal_scale(&ComplexField::constant(&d, c(1.0, 0.0))).unwrap();
        assert_eq!(same.lambda.data, g.lambda.data);
    }
}
