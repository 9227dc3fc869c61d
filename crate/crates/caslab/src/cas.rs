//! Structural data of complex affine spheres and their flat connection.
//!
//! The affine connection is `∇ = ∇^g + K` with `K` given by the cubic pair,
//! and the bundle connection `D̂_X Y = ∇_X Y + g(X, Y) ξ̂`, `D̂_X ξ̂ = X` lives
//! on the frame `(∂_z̄, ∂_w, ξ̂)`. Before integration the frame is rescaled
//! by `G^{-1/2}` on the tangent part, which makes the connection traceless
//! (`∇ dV_g = 0`) and the invariant bilinear form constant, and then turned
//! by the constant matrix [`form_basis`] into a frame where that form is
//! `diag(1, 1, -1)`.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::cmetric::{pair_cubics, ComplexMetric, CubicPair};
use crate::error::{CasError, Result};
use crate::grid::{unwrapped_log, Backend, ComplexField, GridDomain, C64};

/// Smallest `|G|` accepted by [`assemble_connection`].
pub const FRAME_TOL: f64 = 1e-12;

/// Nonzero components of the difference tensor:
/// `K_{∂_w} ∂_w = k_w ∂_z̄` and `K_{∂_z̄} ∂_z̄ = k_zbar ∂_w`.
#[derive(Clone, Debug)]
pub struct DifferenceTensor {
    pub k_w: ComplexField,
    pub k_zbar: ComplexField,
}

pub fn difference_tensor(g: &ComplexMetric, q: &CubicPair) -> Result<DifferenceTensor> {
    g.require_positive()?;
    let big_g = g.big_g();
    let dwz = g.dwz();
    let d = g.domain();
    let k_w = (0..d.len())
        .map(|i| -0.5 * dwz.data[i].powi(3) * q.phi.data[i] / big_g.data[i])
        .collect();
    let k_zbar = (0..d.len())
        .map(|i| -0.5 * g.wbar_dzbar.data[i].powi(3) * q.psibar.data[i] / big_g.data[i])
        .collect();
    Ok(DifferenceTensor { k_w: ComplexField::new(d, k_w, "k_w")?, k_zbar: ComplexField::new(d, k_zbar, "k_zbar")? })
}

/// Largest apolarity and symmetry defects of the cubic form
/// `C(X, Y, Z) = -g(K_X Y, Z) - g(Y, K_X Z)` over the isotropic frame.
pub fn pick_defects(g: &ComplexMetric, k: &DifferenceTensor) -> (f64, f64) {
    let big_g = g.big_g();
    let mut apolarity = 0.0f64;
    let mut symmetry = 0.0f64;
    for i in 0..big_g.len() {
        let gg = big_g.data[i];
        let zero = C64::new(0.0, 0.0);
        let gram = nalgebra::Matrix2::new(zero, gg, gg, zero);
        // K_X as 2×2 matrices in the frame (∂_z̄, ∂_w), X = ∂_z̄ and X = ∂_w.
        let kx = [
            nalgebra::Matrix2::new(zero, zero, k.k_zbar.data[i], zero),
            nalgebra::Matrix2::new(zero, k.k_w.data[i], zero, zero),
        ];
        let c: Vec<nalgebra::Matrix2<C64>> =
            kx.iter().map(|m| -(m.transpose() * gram + gram * m)).collect();
        let scale = gg.norm().max(1e-300);
        let inv = gram.try_inverse().unwrap_or_else(nalgebra::Matrix2::zeros);
        for cx in &c {
            apolarity = apolarity.max((inv * cx).trace().norm());
            symmetry = symmetry.max((cx - cx.transpose()).norm() / scale);
        }
        for y in 0..2 {
            for z in 0..2 {
                symmetry = symmetry.max((c[0][(y, z)] - c[y][(0, z)]).norm() / scale);
                symmetry = symmetry.max((c[1][(y, z)] - c[y][(1, z)]).norm() / scale);
            }
        }
    }
    (apolarity, symmetry)
}

/// `K_g + 1 - 2 φ ψ̄ / λ³`.
pub fn gauss_identity_residual(g: &ComplexMetric, q: &CubicPair) -> Result<ComplexField> {
    let k = g.gauss_curvature()?;
    let s = pair_cubics(g, q)?;
    k.zip_map(&s, |kk, ss| kk + 1.0 - ss)
}

/// Connection matrices along `∂_x` and `∂_y`, stored as nine component
/// fields each (row-major).
#[derive(Clone, Debug)]
pub struct FrameConnection {
    pub ax: Vec<ComplexField>,
    pub ay: Vec<ComplexField>,
    pub backend: Backend,
    /// Constant change of basis from the rescaled isotropic frame.
    pub basis_change: Matrix3<C64>,
    /// `G = g(∂_z̄, ∂_w)`; empty for connections not built from a metric.
    pub big_g: Option<ComplexField>,
}

/// Columns `(ẽ1 + ẽ2)/√2`, `i(ẽ1 - ẽ2)/√2`, `ξ̂`: the Gram matrix
/// `[[0,1,0],[1,0,0],[0,0,-1]]` of the rescaled frame becomes `diag(1,1,-1)`.
pub fn form_basis() -> Matrix3<C64> {
    let r = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    let i = C64::new(0.0, std::f64::consts::FRAC_1_SQRT_2);
    let z = C64::new(0.0, 0.0);
    Matrix3::new(r, i, z, r, -i, z, z, z, C64::new(1.0, 0.0))
}

impl FrameConnection {
    pub fn domain(&self) -> GridDomain {
        self.ax[0].domain
    }

    /// Connection with constant matrices on `domain`.
    pub fn constant(domain: &GridDomain, ax: Matrix3<C64>, ay: Matrix3<C64>, backend: Backend) -> Self {
        let split = |m: Matrix3<C64>| {
            (0..9).map(|e| ComplexField::constant(domain, m[(e / 3, e % 3)])).collect::<Vec<_>>()
        };
        FrameConnection { ax: split(ax), ay: split(ay), backend, basis_change: Matrix3::identity(), big_g: None }
    }

    pub fn from_nodes(domain: &GridDomain, ax: &[Matrix3<C64>], ay: &[Matrix3<C64>], backend: Backend) -> Result<Self> {
        let split = |ms: &[Matrix3<C64>]| -> Result<Vec<ComplexField>> {
            (0..9).map(|e| ComplexField::new(*domain, ms.iter().map(|m| m[(e / 3, e % 3)]).collect(), "")).collect()
        };
        Ok(FrameConnection { ax: split(ax)?, ay: split(ay)?, backend, basis_change: Matrix3::identity(), big_g: None })
    }

    pub fn matrix_x(&self, idx: usize) -> Matrix3<C64> {
        Matrix3::from_fn(|r, c| self.ax[3 * r + c].data[idx])
    }

    pub fn matrix_y(&self, idx: usize) -> Matrix3<C64> {
        Matrix3::from_fn(|r, c| self.ay[3 * r + c].data[idx])
    }

    /// `(A_x, A_y)` at an arbitrary chart point by Lagrange interpolation
    /// with `order` points per axis; `None` outside a window.
    pub fn sample(&self, z: C64, order: usize) -> Option<(Matrix3<C64>, Matrix3<C64>)> {
        let periodic = self.backend.periodic();
        let mut ax = Matrix3::zeros();
        let mut ay = Matrix3::zeros();
        for e in 0..9 {
            ax[(e / 3, e % 3)] = self.ax[e].interpolate(z, order, periodic)?;
            ay[(e / 3, e % 3)] = self.ay[e].interpolate(z, order, periodic)?;
        }
        Some((ax, ay))
    }

    /// Largest `|tr A_x|`, `|tr A_y|` over the grid.
    pub fn trace_defect(&self) -> f64 {
        (0..self.domain().len())
            .map(|i| self.matrix_x(i).trace().norm().max(self.matrix_y(i).trace().norm()))
            .fold(0.0, f64::max)
    }

    /// Largest `‖Aᵀ J + J A‖` over the grid for `J = diag(1, 1, -1)`.
    pub fn form_defect(&self) -> f64 {
        let j = Matrix3::from_diagonal(&nalgebra::Vector3::new(1.0, 1.0, -1.0).map(|v| C64::new(v, 0.0)));
        (0..self.domain().len())
            .map(|i| {
                let x = self.matrix_x(i);
                let y = self.matrix_y(i);
                (x.transpose() * j + j * x).norm().max((y.transpose() * j + j * y).norm())
            })
            .fold(0.0, f64::max)
    }
}

/// Assembles the connection of `(g, Q)` in the basis [`form_basis`].
pub fn assemble_connection(g: &ComplexMetric, q: &CubicPair) -> Result<FrameConnection> {
    let forms = g.frame_connection_forms()?;
    let d = g.domain();
    let b = g.backend;
    let big_g = forms.g.clone();
    let (_, gmin) = big_g.argmin_abs();
    if gmin < FRAME_TOL {
        return Err(CasError::FrameDegenerate(gmin));
    }
    let k = difference_tensor(g, q)?;
    let root_g = unwrapped_log(&big_g, b.periodic())?.map(|l| (0.5 * l).exp());
    let gx = big_g.d_x(b)?;
    let gy = big_g.d_y(b)?;
    let nu = g.nu();
    let dwz = g.dwz();
    let p = form_basis();
    let pinv = p.try_inverse().expect("form basis is invertible");
    let one = C64::new(1.0, 0.0);
    let ii = C64::new(0.0, 1.0);
    let mut ax = Vec::with_capacity(d.len());
    let mut ay = Vec::with_capacity(d.len());
    for i in 0..d.len() {
        let gg = big_g.data[i];
        let rg = root_g.data[i];
        let n = nu.data[i];
        let inv_dwz = one / dwz.data[i];
        // X = a ∂_z̄ + b ∂_w for X = ∂_x and X = ∂_y.
        let dirs = [(one + n, inv_dwz, gx.data[i] / gg), (ii * (n - one), ii * inv_dwz, gy.data[i] / gg)];
        let mats: Vec<Matrix3<C64>> = dirs
            .iter()
            .map(|&(a, bb, dlog)| {
                let alpha = a * forms.alpha_zbar.data[i] + bb * forms.alpha_w.data[i] - 0.5 * dlog;
                let beta = a * forms.beta_zbar.data[i] + bb * forms.beta_w.data[i] - 0.5 * dlog;
                let m = Matrix3::new(
                    alpha,
                    bb * k.k_w.data[i],
                    a * rg,
                    a * k.k_zbar.data[i],
                    beta,
                    bb * rg,
                    bb * rg,
                    a * rg,
                    C64::new(0.0, 0.0),
                );
                pinv * m * p
            })
            .collect();
        ax.push(mats[0]);
        ay.push(mats[1]);
    }
    let mut conn = FrameConnection::from_nodes(&d, &ax, &ay, b)?;
    conn.basis_change = p;
    conn.big_g = Some(big_g);
    Ok(conn)
}

/// Pointwise Frobenius norm of `∂_x A_y - ∂_y A_x + [A_x, A_y]`.
pub fn flatness_residual(conn: &FrameConnection) -> Result<ComplexField> {
    let d = conn.domain();
    let b = conn.backend;
    let mut dyx = Vec::with_capacity(9);
    for e in 0..9 {
        let a = conn.ay[e].d_x(b)?;
        let c = conn.ax[e].d_y(b)?;
        dyx.push(a.sub(&c)?);
    }
    let data = (0..d.len())
        .map(|i| {
            let x = conn.matrix_x(i);
            let y = conn.matrix_y(i);
            let f = Matrix3::from_fn(|r, c| dyx[3 * r + c].data[i]) + x * y - y * x;
            C64::new(f.norm(), 0.0)
        })
        .collect();
    ComplexField::new(d, data, "flatness residual")
}

/// Pass/fail summary of the structural identities for `(g, Q)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StructuralReport {
    pub apolarity_norm: f64,
    pub symmetry_norm: f64,
    /// Holomorphy residuals of `φ` and `ψ̄` (the Codazzi equations).
    pub codazzi_norms: (f64, f64),
    pub gauss_identity_norm: f64,
    pub flatness_norm: f64,
    pub trace_norm: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Evaluates every identity; norms are maxima over nodes at least `margin`
/// nodes away from a window edge (all nodes on periodic grids).
pub fn structural_report(g: &ComplexMetric, q: &CubicPair, tolerance: f64, margin: usize) -> Result<StructuralReport> {
    let k = difference_tensor(g, q)?;
    let (apolarity_norm, symmetry_norm) = pick_defects(g, &k);
    let margin = if g.backend.periodic() { 0 } else { margin };
    let gauss_identity_norm = gauss_identity_residual(g, q)?.max_abs_interior(margin);
    let conn = assemble_connection(g, q)?;
    let flatness_norm = flatness_residual(&conn)?.max_abs_interior(margin);
    let trace_norm = conn.trace_defect();
    let passed = [apolarity_norm, symmetry_norm, q.holo_residuals.0, q.holo_residuals.1, gauss_identity_norm, flatness_norm]
        .iter()
        .all(|v| *v <= tolerance);
    Ok(StructuralReport {
        apolarity_norm,
        symmetry_norm,
        codazzi_norms: q.holo_residuals,
        gauss_identity_norm,
        flatness_norm,
        trace_norm,
        tolerance,
        passed,
    })
}
