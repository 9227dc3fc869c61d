//! Complex scalar fields on rectangular grids.
//!
//! A [`ComplexField`] stores samples at the nodes
//! `z = origin + j*Lx/nx + i*k*Ly/ny` in row-major order (index `k*nx + j`).
//! Wirtinger derivatives come in two flavours: spectral (periodic fields on
//! power-of-two grids) and fourth-order finite differences, either periodic or
//! on a non-periodic chart window with one-sided stencils at the edges.

use std::io::{Read, Write};

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{CasError, Result};
use crate::exec::Exec;

pub type C64 = Complex64;

pub const I: C64 = C64::new(0.0, 1.0);

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridDomain {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    pub origin: C64,
}

impl GridDomain {
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64, origin: C64) -> Result<Self> {
        if nx < 4 || ny < 4 {
            return Err(CasError::InvalidGrid(format!("need nx, ny >= 4, got {nx}x{ny}")));
        }
        if !(lx > 0.0 && ly > 0.0 && lx.is_finite() && ly.is_finite()) {
            return Err(CasError::InvalidGrid(format!("periods must be positive, got {lx} x {ly}")));
        }
        Ok(GridDomain { nx, ny, lx, ly, origin })
    }

    /// Square periodic torus `[0, l)^2` with `n x n` nodes.
    pub fn square(n: usize, l: f64) -> Result<Self> {
        Self::new(n, n, l, l, C64::new(0.0, 0.0))
    }

    /// Chart window whose nodes span `[x0, x1] x [y0, y1]` including both edges.
    pub fn window(n: usize, x0: f64, x1: f64, y0: f64, y1: f64) -> Result<Self> {
        Self::window_xy(n, n, x0, x1, y0, y1)
    }

    pub fn window_xy(nx: usize, ny: usize, x0: f64, x1: f64, y0: f64, y1: f64) -> Result<Self> {
        if nx < 4 || ny < 4 {
            return Err(CasError::InvalidGrid(format!("need nx, ny >= 4, got {nx}x{ny}")));
        }
        let hx = (x1 - x0) / (nx - 1) as f64;
        let hy = (y1 - y0) / (ny - 1) as f64;
        Self::new(nx, ny, hx * nx as f64, hy * ny as f64, C64::new(x0, y0))
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hx(&self) -> f64 {
        self.lx / self.nx as f64
    }

    pub fn hy(&self) -> f64 {
        self.ly / self.ny as f64
    }

    pub fn index(&self, j: usize, k: usize) -> usize {
        k * self.nx + j
    }

    pub fn node(&self, j: usize, k: usize) -> C64 {
        self.origin + C64::new(j as f64 * self.hx(), k as f64 * self.hy())
    }

    pub fn node_at(&self, idx: usize) -> C64 {
        self.node(idx % self.nx, idx / self.nx)
    }

    pub fn spectral_ok(&self) -> bool {
        self.nx.is_power_of_two() && self.ny.is_power_of_two()
    }

    pub fn same_grid(&self, other: &GridDomain) -> bool {
        let tol = 1e-12 * (1.0 + self.lx.abs() + self.ly.abs());
        self.nx == other.nx
            && self.ny == other.ny
            && (self.lx - other.lx).abs() <= tol
            && (self.ly - other.ly).abs() <= tol
            && (self.origin - other.origin).norm() <= tol
    }

    /// The same physical rectangle sampled with a different node count.
    pub fn refined(&self, nx: usize, ny: usize) -> Result<Self> {
        Self::new(nx, ny, self.lx, self.ly, self.origin)
    }

    /// Window with the same corner nodes but `n` nodes per side.
    pub fn refined_window(&self, n: usize) -> Result<Self> {
        let x0 = self.origin.re;
        let y0 = self.origin.im;
        let x1 = x0 + self.hx() * (self.nx - 1) as f64;
        let y1 = y0 + self.hy() * (self.ny - 1) as f64;
        Self::window(n, x0, x1, y0, y1)
    }

    /// True for nodes on the outer ring of the grid.
    pub fn on_edge(&self, idx: usize) -> bool {
        let j = idx % self.nx;
        let k = idx / self.nx;
        j == 0 || k == 0 || j + 1 == self.nx || k + 1 == self.ny
    }
}

/// Derivative backend.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Backend {
    /// Fourier multipliers; exact on resolved trigonometric polynomials.
    Spectral,
    /// Fourth-order central differences with periodic wrap.
    Fd4Periodic,
    /// Fourth-order differences on a non-periodic window.
    Fd4Window,
    /// Sixth-order differences on a non-periodic window. The one-sided edge
    /// stencils keep composite second derivatives accurate to fifth order.
    Fd6Window,
}

impl Backend {
    pub fn periodic(self) -> bool {
        !matches!(self, Backend::Fd4Window | Backend::Fd6Window)
    }

    /// Stencil order of a finite-difference backend (0 for spectral).
    pub fn order(self) -> usize {
        match self {
            Backend::Spectral => 0,
            Backend::Fd4Periodic | Backend::Fd4Window => 4,
            Backend::Fd6Window => 6,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComplexField {
    pub domain: GridDomain,
    pub data: Vec<C64>,
    pub label: String,
}

fn check_finite(domain: &GridDomain, data: &[C64]) -> Result<()> {
    for (idx, v) in data.iter().enumerate() {
        if !(v.re.is_finite() && v.im.is_finite()) {
            return Err(CasError::NonFinite {
                j: idx % domain.nx,
                k: idx / domain.nx,
                z: domain.node_at(idx),
                value: *v,
            });
        }
    }
    Ok(())
}

/// Samples `generator` at every node of `domain`.
pub fn make_field<F>(domain: &GridDomain, generator: F) -> Result<ComplexField>
where
    F: Fn(C64) -> C64 + Sync + Send,
{
    make_field_with(Exec::default(), domain, generator)
}

pub fn make_field_with<F>(exec: Exec, domain: &GridDomain, generator: F) -> Result<ComplexField>
where
    F: Fn(C64) -> C64 + Sync + Send,
{
    let data = exec.map(domain.len(), |idx| generator(domain.node_at(idx)));
    ComplexField::new(*domain, data, "")
}

/// Samples a vector-valued closed-form map componentwise.
pub fn sample_map<F>(domain: &GridDomain, k: usize, map: F) -> Result<Vec<ComplexField>>
where
    F: Fn(C64) -> Vec<C64> + Sync + Send,
{
    let rows = Exec::default().map(domain.len(), |idx| map(domain.node_at(idx)));
    (0..k)
        .map(|c| {
            let data = rows
                .iter()
                .map(|r| r.get(c).copied().unwrap_or(C64::new(f64::NAN, f64::NAN)))
                .collect();
            ComplexField::new(*domain, data, &format!("component {c}"))
        })
        .collect()
}

impl ComplexField {
    pub fn new(domain: GridDomain, data: Vec<C64>, label: &str) -> Result<Self> {
        if data.len() != domain.len() {
            return Err(CasError::InvalidGrid(format!(
                "data length {} != {}x{}",
                data.len(),
                domain.nx,
                domain.ny
            )));
        }
        check_finite(&domain, &data)?;
        Ok(ComplexField { domain, data, label: label.to_string() })
    }

    pub fn constant(domain: &GridDomain, value: C64) -> Self {
        ComplexField { domain: *domain, data: vec![value; domain.len()], label: String::new() }
    }

    pub fn zeros(domain: &GridDomain) -> Self {
        Self::constant(domain, C64::new(0.0, 0.0))
    }

    pub fn with_label(mut self, label: &str) -> Self {
        self.label = label.to_string();
        self
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn at(&self, j: usize, k: usize) -> C64 {
        self.data[self.domain.index(j, k)]
    }

    fn same(&self, other: &ComplexField) -> Result<()> {
        if self.domain.same_grid(&other.domain) {
            Ok(())
        } else {
            Err(CasError::GridMismatch(format!(
                "{}x{} [{} x {}] vs {}x{} [{} x {}]",
                self.domain.nx,
                self.domain.ny,
                self.domain.lx,
                self.domain.ly,
                other.domain.nx,
                other.domain.ny,
                other.domain.lx,
                other.domain.ly
            )))
        }
    }

    /// Pointwise map; the result is not checked for finiteness.
    pub fn map<F: Fn(C64) -> C64>(&self, f: F) -> ComplexField {
        ComplexField {
            domain: self.domain,
            data: self.data.iter().map(|&v| f(v)).collect(),
            label: String::new(),
        }
    }

    pub fn zip_map<F: Fn(C64, C64) -> C64>(&self, other: &ComplexField, f: F) -> Result<ComplexField> {
        self.same(other)?;
        Ok(ComplexField {
            domain: self.domain,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
            label: String::new(),
        })
    }

    pub fn add(&self, other: &ComplexField) -> Result<ComplexField> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &ComplexField) -> Result<ComplexField> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &ComplexField) -> Result<ComplexField> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn div(&self, other: &ComplexField) -> Result<ComplexField> {
        self.zip_map(other, |a, b| a / b)
    }

    pub fn scale(&self, s: C64) -> ComplexField {
        self.map(|v| v * s)
    }

    pub fn conj(&self) -> ComplexField {
        self.map(|v| v.conj())
    }

    /// Checks that all samples are finite.
    pub fn validate(self) -> Result<ComplexField> {
        check_finite(&self.domain, &self.data)?;
        Ok(self)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.norm()))
    }

    /// Node and value of the sample with largest modulus.
    pub fn argmax_abs(&self) -> (usize, f64) {
        self.data
            .iter()
            .enumerate()
            .fold((0, 0.0), |(bi, bm), (i, v)| if v.norm() > bm { (i, v.norm()) } else { (bi, bm) })
    }

    pub fn argmin_abs(&self) -> (usize, f64) {
        self.data.iter().enumerate().fold((0, f64::INFINITY), |(bi, bm), (i, v)| {
            if v.norm() < bm {
                (i, v.norm())
            } else {
                (bi, bm)
            }
        })
    }

    /// Discrete L2 norm with the area element `hx*hy`.
    pub fn norm_l2(&self) -> f64 {
        let s: f64 = self.data.iter().map(|v| v.norm_sqr()).sum();
        (s * self.domain.hx() * self.domain.hy()).sqrt()
    }

    /// Root-mean-square of the samples.
    pub fn rms(&self) -> f64 {
        let s: f64 = self.data.iter().map(|v| v.norm_sqr()).sum();
        (s / self.data.len() as f64).sqrt()
    }

    pub fn mean(&self) -> C64 {
        let s: C64 = self.data.iter().sum();
        s / self.data.len() as f64
    }

    /// Largest `|self - other|` over the nodes.
    pub fn max_diff(&self, other: &ComplexField) -> Result<f64> {
        self.same(other)?;
        Ok(self.data.iter().zip(&other.data).fold(0.0, |m, (a, b)| m.max((a - b).norm())))
    }

    /// Max difference restricted to nodes at least `margin` away from the edges.
    pub fn max_diff_interior(&self, other: &ComplexField, margin: usize) -> Result<f64> {
        self.same(other)?;
        let d = &self.domain;
        let mut m: f64 = 0.0;
        for k in margin..d.ny.saturating_sub(margin) {
            for j in margin..d.nx.saturating_sub(margin) {
                let i = d.index(j, k);
                m = m.max((self.data[i] - other.data[i]).norm());
            }
        }
        Ok(m)
    }

    pub fn max_abs_interior(&self, margin: usize) -> f64 {
        let d = &self.domain;
        let mut m: f64 = 0.0;
        for k in margin..d.ny.saturating_sub(margin) {
            for j in margin..d.nx.saturating_sub(margin) {
                m = m.max(self.data[d.index(j, k)].norm());
            }
        }
        m
    }

    pub fn max_imag(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.im.abs()))
    }

    // ---- derivatives -------------------------------------------------------

    pub fn d_x(&self, backend: Backend) -> Result<ComplexField> {
        self.derivative(backend, Direction::X)
    }

    pub fn d_y(&self, backend: Backend) -> Result<ComplexField> {
        self.derivative(backend, Direction::Y)
    }

    /// `∂_z = (∂_x - i ∂_y) / 2`.
    pub fn d_z(&self, backend: Backend) -> Result<ComplexField> {
        self.derivative(backend, Direction::Z)
    }

    /// `∂_z̄ = (∂_x + i ∂_y) / 2`.
    pub fn d_zbar(&self, backend: Backend) -> Result<ComplexField> {
        self.derivative(backend, Direction::Zbar)
    }

    /// `∂_z ∂_z̄ = (∂_x² + ∂_y²) / 4` from direct second-derivative stencils.
    ///
    /// Unlike composing [`Self::d_z`] and [`Self::d_zbar`], this keeps the
    /// highest resolved mode: first-derivative stencils annihilate the
    /// alternating sequence, so their composition has a spurious kernel.
    pub fn d_zzbar(&self, backend: Backend) -> Result<ComplexField> {
        match backend {
            Backend::Spectral => {
                if !self.domain.spectral_ok() {
                    return Err(CasError::InvalidGrid("spectral path needs power-of-two grids".into()));
                }
                Ok(apply_multiplier(self, |kx, ky, _| C64::new(-(kx * kx + ky * ky) / 4.0, 0.0)))
            }
            _ => {
                let periodic = backend.periodic();
                let order = backend.order();
                let d = self.domain;
                let mut out = vec![C64::new(0.0, 0.0); self.len()];
                let mut line = vec![C64::new(0.0, 0.0); d.nx.max(d.ny)];
                for k in 0..d.ny {
                    let row = &self.data[k * d.nx..(k + 1) * d.nx];
                    fd2_line(row, d.hx(), periodic, order, &mut line[..d.nx]);
                    for j in 0..d.nx {
                        out[k * d.nx + j] = 0.25 * line[j];
                    }
                }
                let mut col = vec![C64::new(0.0, 0.0); d.ny];
                for j in 0..d.nx {
                    for k in 0..d.ny {
                        col[k] = self.data[k * d.nx + j];
                    }
                    fd2_line(&col, d.hy(), periodic, order, &mut line[..d.ny]);
                    for k in 0..d.ny {
                        out[k * d.nx + j] += 0.25 * line[k];
                    }
                }
                Ok(ComplexField { domain: d, data: out, label: String::new() })
            }
        }
    }

    fn derivative(&self, backend: Backend, dir: Direction) -> Result<ComplexField> {
        match backend {
            Backend::Spectral => spectral_derivative(self, dir),
            Backend::Fd4Periodic | Backend::Fd4Window | Backend::Fd6Window => {
                let periodic = backend.periodic();
                let order = backend.order();
                let combine = |ax: C64, ay: C64| match dir {
                    Direction::X => ax,
                    Direction::Y => ay,
                    Direction::Z => 0.5 * (ax - I * ay),
                    Direction::Zbar => 0.5 * (ax + I * ay),
                };
                let fx = if dir == Direction::Y { None } else { Some(fd_axis(self, true, periodic, order)) };
                let fy = if dir == Direction::X { None } else { Some(fd_axis(self, false, periodic, order)) };
                let zero = C64::new(0.0, 0.0);
                let data = (0..self.len())
                    .map(|i| {
                        combine(
                            fx.as_ref().map_or(zero, |v| v[i]),
                            fy.as_ref().map_or(zero, |v| v[i]),
                        )
                    })
                    .collect();
                Ok(ComplexField { domain: self.domain, data, label: String::new() })
            }
        }
    }

    // ---- snapshots ---------------------------------------------------------

    pub fn write_snapshot<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e: std::io::Error| CasError::Snapshot(e.to_string());
        let mut header = Vec::with_capacity(SNAPSHOT_HEADER);
        header.extend_from_slice(SNAPSHOT_MAGIC);
        header.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
        header.extend_from_slice(&(self.domain.nx as u32).to_le_bytes());
        header.extend_from_slice(&(self.domain.ny as u32).to_le_bytes());
        header.extend_from_slice(&self.domain.lx.to_le_bytes());
        header.extend_from_slice(&self.domain.ly.to_le_bytes());
        w.write_all(&header).map_err(io)?;
        let mut body = Vec::with_capacity(16 * self.len());
        for v in &self.data {
            body.extend_from_slice(&v.re.to_le_bytes());
            body.extend_from_slice(&v.im.to_le_bytes());
        }
        w.write_all(&body).map_err(io)
    }

    /// Reads a snapshot; the origin is not part of the format and is set to 0.
    pub fn read_snapshot<R: Read>(mut r: R) -> Result<ComplexField> {
        let io = |e: std::io::Error| CasError::Snapshot(e.to_string());
        let mut header = [0u8; SNAPSHOT_HEADER];
        r.read_exact(&mut header).map_err(io)?;
        if &header[0..4] != SNAPSHOT_MAGIC {
            return Err(CasError::Snapshot("bad magic".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(header[o..o + 4].try_into().unwrap());
        let f64_at = |o: usize| f64::from_le_bytes(header[o..o + 8].try_into().unwrap());
        let version = u32_at(4);
        if version != SNAPSHOT_VERSION {
            return Err(CasError::Snapshot(format!("unsupported version {version}")));
        }
        let domain = GridDomain::new(
            u32_at(8) as usize,
            u32_at(12) as usize,
            f64_at(16),
            f64_at(24),
            C64::new(0.0, 0.0),
        )?;
        let mut body = vec![0u8; 16 * domain.len()];
        r.read_exact(&mut body).map_err(io)?;
        let data = body
            .chunks_exact(16)
            .map(|b| {
                C64::new(
                    f64::from_le_bytes(b[0..8].try_into().unwrap()),
                    f64::from_le_bytes(b[8..16].try_into().unwrap()),
                )
            })
            .collect();
        ComplexField::new(domain, data, "")
    }

    // ---- interpolation -----------------------------------------------------

    /// Tensor-product Lagrange interpolation with `order` points per axis.
    ///
    /// Periodic fields wrap the stencil; window fields shift it inward so it
    /// stays inside the grid. Returns `None` outside a window.
    pub fn interpolate(&self, z: C64, order: usize, periodic: bool) -> Option<C64> {
        let d = &self.domain;
        let sx = (z.re - d.origin.re) / d.hx();
        let sy = (z.im - d.origin.im) / d.hy();
        let (jx, wx) = lagrange_stencil(sx, d.nx, order, periodic)?;
        let (jy, wy) = lagrange_stencil(sy, d.ny, order, periodic)?;
        let mut acc = C64::new(0.0, 0.0);
        for (b, &ky) in jy.iter().enumerate() {
            let mut row = C64::new(0.0, 0.0);
            for (a, &kx) in jx.iter().enumerate() {
                row += self.data[d.index(kx, ky)] * wx[a];
            }
            acc += row * wy[b];
        }
        Some(acc)
    }
}

const SNAPSHOT_MAGIC: &[u8; 4] = b"CASF";
const SNAPSHOT_VERSION: u32 = 1;
pub const SNAPSHOT_HEADER: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Direction {
    X,
    Y,
    Z,
    Zbar,
}

fn lagrange_stencil(s: f64, n: usize, order: usize, periodic: bool) -> Option<(Vec<usize>, Vec<f64>)> {
    let order = order.clamp(2, n);
    let tol = 1e-9;
    if !periodic && (s < -tol || s > (n - 1) as f64 + tol) {
        return None;
    }
    let base = (s - (order as f64 - 1.0) / 2.0).floor() as i64;
    let base = if periodic { base } else { base.clamp(0, (n - order) as i64) };
    let nodes: Vec<i64> = (0..order as i64).map(|a| base + a).collect();
    let mut w = vec![1.0; order];
    for a in 0..order {
        for b in 0..order {
            if a != b {
                w[a] *= (s - nodes[b] as f64) / (nodes[a] - nodes[b]) as f64;
            }
        }
    }
    let idx = nodes.iter().map(|&m| m.rem_euclid(n as i64) as usize).collect();
    Some((idx, w))
}

// ---- spectral machinery ----------------------------------------------------

/// Signed integer wavenumber of FFT bin `j` on `n` points.
pub fn wavenumber(j: usize, n: usize) -> i64 {
    if j <= n / 2 {
        j as i64
    } else {
        j as i64 - n as i64
    }
}

/// Reusable plans for 2-D FFTs of row-major `nx x ny` data.
pub struct Fft2Plan {
    nx: usize,
    ny: usize,
    fwd: [std::sync::Arc<dyn rustfft::Fft<f64>>; 2],
    inv: [std::sync::Arc<dyn rustfft::Fft<f64>>; 2],
}

impl Fft2Plan {
    pub fn new(nx: usize, ny: usize) -> Self {
        let mut planner = FftPlanner::<f64>::new();
        Fft2Plan {
            nx,
            ny,
            fwd: [planner.plan_fft_forward(nx), planner.plan_fft_forward(ny)],
            inv: [planner.plan_fft_inverse(nx), planner.plan_fft_inverse(ny)],
        }
    }

    /// In-place transform, unnormalized in both directions.
    pub fn process(&self, data: &mut [C64], inverse: bool) {
        let [fx, fy] = if inverse { &self.inv } else { &self.fwd };
        fx.process(data);
        let mut t = transpose(data, self.nx, self.ny);
        fy.process(&mut t);
        let back = transpose(&t, self.ny, self.nx);
        data.copy_from_slice(&back);
    }
}

/// In-place 2-D FFT of row-major `nx x ny` data (unnormalized both ways).
pub fn fft2(data: &mut [C64], nx: usize, ny: usize, inverse: bool) {
    Fft2Plan::new(nx, ny).process(data, inverse)
}

fn transpose(data: &[C64], nx: usize, ny: usize) -> Vec<C64> {
    let mut out = vec![C64::new(0.0, 0.0); data.len()];
    for k in 0..ny {
        for j in 0..nx {
            out[j * ny + k] = data[k * nx + j];
        }
    }
    out
}

/// Applies the Fourier multiplier `symbol(kx, ky)` (angular wavenumbers).
pub fn apply_multiplier<F>(f: &ComplexField, symbol: F) -> ComplexField
where
    F: Fn(f64, f64, bool) -> C64,
{
    let d = f.domain;
    let mut buf = f.data.clone();
    fft2(&mut buf, d.nx, d.ny, false);
    let scale = 1.0 / (d.nx * d.ny) as f64;
    for k in 0..d.ny {
        let mk = wavenumber(k, d.ny);
        let ky = 2.0 * std::f64::consts::PI * mk as f64 / d.ly;
        for j in 0..d.nx {
            let mj = wavenumber(j, d.nx);
            let kx = 2.0 * std::f64::consts::PI * mj as f64 / d.lx;
            let nyquist = (d.nx % 2 == 0 && j == d.nx / 2) || (d.ny % 2 == 0 && k == d.ny / 2);
            buf[k * d.nx + j] *= symbol(kx, ky, nyquist) * scale;
        }
    }
    fft2(&mut buf, d.nx, d.ny, true);
    ComplexField { domain: d, data: buf, label: String::new() }
}

fn spectral_derivative(f: &ComplexField, dir: Direction) -> Result<ComplexField> {
    if !f.domain.spectral_ok() {
        return Err(CasError::InvalidGrid(format!(
            "spectral path needs power-of-two grids, got {}x{}",
            f.domain.nx, f.domain.ny
        )));
    }
    Ok(apply_multiplier(f, |kx, ky, nyq| {
        if nyq {
            return C64::new(0.0, 0.0);
        }
        match dir {
            Direction::X => I * kx,
            Direction::Y => I * ky,
            Direction::Z => 0.5 * C64::new(ky, kx),
            Direction::Zbar => 0.5 * C64::new(-ky, kx),
        }
    }))
}

// ---- finite differences ----------------------------------------------------

const CENTRAL: [f64; 5] = [1.0, -8.0, 0.0, 8.0, -1.0];
const EDGE0: [f64; 5] = [-25.0, 48.0, -36.0, 16.0, -3.0];
const EDGE1: [f64; 5] = [-3.0, -10.0, 18.0, -6.0, 1.0];

/// Fourth-order first derivative of a sampled line with spacing `h`.
pub fn fd4_line(v: &[C64], h: f64, periodic: bool, out: &mut [C64]) {
    let n = v.len();
    let s = 1.0 / (12.0 * h);
    let at = |i: i64| v[i.rem_euclid(n as i64) as usize];
    for i in 0..n {
        let ii = i as i64;
        out[i] = if periodic || (i >= 2 && i + 2 < n) {
            (0..5).map(|a| at(ii + a as i64 - 2) * CENTRAL[a]).sum::<C64>() * s
        } else if i == 0 {
            (0..5).map(|a| v[a] * EDGE0[a]).sum::<C64>() * s
        } else if i == 1 {
            (0..5).map(|a| v[a] * EDGE1[a]).sum::<C64>() * s
        } else if i + 1 == n {
            -(0..5).map(|a| v[n - 1 - a] * EDGE0[a]).sum::<C64>() * s
        } else {
            -(0..5).map(|a| v[n - 1 - a] * EDGE1[a]).sum::<C64>() * s
        };
    }
}

/// Finite-difference weights for the first derivative at `x0` from nodes `xs`
/// (Fornberg's recursion).
pub fn fd_weights(x0: f64, xs: &[f64]) -> Vec<f64> {
    fd_weights_m(x0, xs, 1)
}

/// Weights for the `m`-th derivative at `x0` from nodes `xs`.
pub fn fd_weights_m(x0: f64, xs: &[f64], m: usize) -> Vec<f64> {
    let n = xs.len();
    let mut c = vec![vec![0.0f64; m + 1]; n];
    c[0][0] = 1.0;
    let mut c1 = 1.0;
    let mut c4 = xs[0] - x0;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = xs[i] - x0;
        for j in 0..i {
            let c3 = xs[i] - xs[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.iter().map(|w| w[m]).collect()
}

/// Per-node stencils of one line derivative: `(start, weights)` with
/// indices taken modulo the line length.
type StencilTable = std::sync::Arc<Vec<(i64, Vec<f64>)>>;

thread_local! {
    static STENCILS: std::cell::RefCell<std::collections::HashMap<(usize, usize, usize, bool), StencilTable>> =
        std::cell::RefCell::new(std::collections::HashMap::new());
}

/// Stencils for the `m`-th derivative on `n` nodes: centered with
/// `order + 1` points inside (or everywhere when periodic), one-sided with
/// `order + m` points where a centered stencil would leave a window.
fn stencil_table(n: usize, order: usize, m: usize, periodic: bool) -> StencilTable {
    let key = (n, order, m, periodic);
    if let Some(t) = STENCILS.with(|c| c.borrow().get(&key).cloned()) {
        return t;
    }
    let half = order / 2;
    let central = {
        let xs: Vec<f64> = (0..=2 * half).map(|a| a as f64).collect();
        fd_weights_m(half as f64, &xs, m)
    };
    let edge_width = (order + m).min(n);
    let xs: Vec<f64> = (0..edge_width).map(|a| a as f64).collect();
    let table: Vec<(i64, Vec<f64>)> = (0..n)
        .map(|i| {
            if periodic || (i >= half && i + half < n) {
                (i as i64 - half as i64, central.clone())
            } else {
                let start = if i < half { 0 } else { n - edge_width };
                (start as i64, fd_weights_m((i - start) as f64, &xs, m))
            }
        })
        .collect();
    let table = std::sync::Arc::new(table);
    STENCILS.with(|c| c.borrow_mut().insert(key, table.clone()));
    table
}

fn apply_table(table: &[(i64, Vec<f64>)], v: &[C64], scale: f64, out: &mut [C64]) {
    let n = v.len() as i64;
    for (i, (start, w)) in table.iter().enumerate() {
        let mut acc = C64::new(0.0, 0.0);
        for (a, wa) in w.iter().enumerate() {
            acc += v[(start + a as i64).rem_euclid(n) as usize] * *wa;
        }
        out[i] = acc * scale;
    }
}

/// Second derivative of a sampled line: centered `order + 1` point stencils
/// inside, one-sided `order + 2` point stencils near the ends of a window.
pub fn fd2_line(v: &[C64], h: f64, periodic: bool, order: usize, out: &mut [C64]) {
    let table = stencil_table(v.len(), order, 2, periodic);
    apply_table(&table, v, 1.0 / (h * h), out);
}

/// Sixth-order first derivative on a non-periodic line.
pub fn fd6_line(v: &[C64], h: f64, out: &mut [C64]) {
    let table = stencil_table(v.len(), 6, 1, false);
    apply_table(&table, v, 1.0 / h, out);
}

fn fd_axis(f: &ComplexField, along_x: bool, periodic: bool, order: usize) -> Vec<C64> {
    let line = |v: &[C64], h: f64, out: &mut [C64]| {
        if order == 6 {
            fd6_line(v, h, out)
        } else {
            fd4_line(v, h, periodic, out)
        }
    };
    let d = f.domain;
    let mut out = vec![C64::new(0.0, 0.0); f.len()];
    if along_x {
        for k in 0..d.ny {
            let row = &f.data[k * d.nx..(k + 1) * d.nx];
            line(row, d.hx(), &mut out[k * d.nx..(k + 1) * d.nx]);
        }
    } else {
        let mut col = vec![C64::new(0.0, 0.0); d.ny];
        let mut dcol = col.clone();
        for j in 0..d.nx {
            for k in 0..d.ny {
                col[k] = f.data[k * d.nx + j];
            }
            line(&col, d.hy(), &mut dcol);
            for k in 0..d.ny {
                out[k * d.nx + j] = dcol[k];
            }
        }
    }
    out
}

/// Continuous logarithm of a nowhere-vanishing field by phase unwrapping.
///
/// The branch at node (0,0) is principal; the first column is unwrapped
/// upward and every row is unwrapped from it. For periodic fields the net
/// winding along each row and column must vanish.
pub fn unwrapped_log(f: &ComplexField, periodic: bool) -> Result<ComplexField> {
    let d = f.domain;
    for (idx, v) in f.data.iter().enumerate() {
        if v.norm() == 0.0 {
            return Err(CasError::Vanishing { j: idx % d.nx, k: idx / d.nx });
        }
    }
    let step = |a: C64, b: C64| (b / a).arg();
    if periodic {
        for k in 0..d.ny {
            let w: f64 = (0..d.nx).map(|j| step(f.at(j, k), f.at((j + 1) % d.nx, k))).sum();
            let wind = (w / (2.0 * std::f64::consts::PI)).round() as i64;
            if wind != 0 {
                return Err(CasError::Branch { axis: "x", winding: wind });
            }
        }
        for j in 0..d.nx {
            let w: f64 = (0..d.ny).map(|k| step(f.at(j, k), f.at(j, (k + 1) % d.ny))).sum();
            let wind = (w / (2.0 * std::f64::consts::PI)).round() as i64;
            if wind != 0 {
                return Err(CasError::Branch { axis: "y", winding: wind });
            }
        }
    }
    let mut phase = vec![0.0; f.len()];
    phase[0] = f.data[0].arg();
    for k in 1..d.ny {
        phase[d.index(0, k)] = phase[d.index(0, k - 1)] + step(f.at(0, k - 1), f.at(0, k));
    }
    for k in 0..d.ny {
        for j in 1..d.nx {
            phase[d.index(j, k)] = phase[d.index(j - 1, k)] + step(f.at(j - 1, k), f.at(j, k));
        }
    }
    let data = f.data.iter().zip(&phase).map(|(v, &p)| C64::new(v.norm().ln(), p)).collect();
    ComplexField::new(d, data, "log")
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn zero_and_identity_fields() {
        let d = GridDomain::square(16, 1.0).unwrap();
        let z = make_field(&d, |_| C64::new(0.0, 0.0)).unwrap();
        assert_eq!(z.max_abs(), 0.0);
        let id = make_field(&d, |p| p).unwrap();
        assert_eq!(id.at(3, 5), d.node(3, 5));
    }

    #[test]
    fn plane_wave_has_unit_modulus() {
        let d = GridDomain::square(64, 2.0).unwrap();
        let f = make_field(&d, |p| (I * 2.0 * PI * p.re / 2.0).exp()).unwrap();
        assert!((f.max_abs() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn non_finite_sample_reports_node() {
        let d = GridDomain::square(8, 1.0).unwrap();
        let err = make_field(&d, |p| if p.re > 0.5 { C64::new(f64::NAN, 0.0) } else { p }).unwrap_err();
        assert!(matches!(err, CasError::NonFinite { j: 5, k: 0, .. }));
    }

    #[test]
    fn d_z_of_plane_wave() {
        let l = 3.0;
        let d = GridDomain::square(32, l).unwrap();
        let f = make_field(&d, |p| (I * 2.0 * PI * p.re / l).exp()).unwrap();
        let expected = f.scale(I * PI / l);
        assert!(f.d_z(Backend::Spectral).unwrap().max_diff(&expected).unwrap() < 1e-12);
        assert!(f.d_zbar(Backend::Spectral).unwrap().max_diff(&expected).unwrap() < 1e-12);
    }

    #[test]
    fn fd_window_is_fourth_order() {
        let err = |n: usize| {
            let d = GridDomain::window(n, 0.0, 1.0, 0.0, 1.0).unwrap();
            let f = make_field(&d, |p| (p * p).exp()).unwrap();
            let exact = make_field(&d, |p| 2.0 * p * (p * p).exp()).unwrap();
            f.d_z(Backend::Fd4Window).unwrap().max_diff(&exact).unwrap()
        };
        let rate = (err(32) / err(64)).log2();
        assert!(rate > 3.5, "rate {rate}");
    }

    #[test]
    fn fd6_window_is_sixth_order() {
        let err = |n: usize| {
            let d = GridDomain::window(n, 0.0, 1.0, 0.0, 1.0).unwrap();
            let f = make_field(&d, |p| (p * p).exp()).unwrap();
            let exact = make_field(&d, |p| 2.0 * p * (p * p).exp()).unwrap();
            f.d_z(Backend::Fd6Window).unwrap().max_diff(&exact).unwrap()
        };
        let rate = (err(32) / err(64)).log2();
        assert!(rate > 5.5, "rate {rate}");
    }

    #[test]
    fn fornberg_reproduces_central_stencil() {
        let w = fd_weights(0.0, &[-2.0, -1.0, 0.0, 1.0, 2.0]);
        let expected = [1.0 / 12.0, -8.0 / 12.0, 0.0, 8.0 / 12.0, -1.0 / 12.0];
        for (a, b) in w.iter().zip(expected) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn second_derivative_weights_and_rates() {
        let w = fd_weights_m(0.0, &[-1.0, 0.0, 1.0], 2);
        assert!((w[0] - 1.0).abs() < 1e-14 && (w[1] + 2.0).abs() < 1e-14 && (w[2] - 1.0).abs() < 1e-14);
        for (backend, min_rate) in [(Backend::Fd4Window, 3.5), (Backend::Fd6Window, 5.5)] {
            let err = |n: usize| {
                let d = GridDomain::window(n, 0.0, 1.0, 0.0, 1.0).unwrap();
                // ∂_z∂_z̄ e^{z z̄} = (1 + z z̄) e^{z z̄}
                let f = make_field(&d, |p| C64::new(p.norm_sqr().exp(), 0.0)).unwrap();
                let exact = make_field(&d, |p| C64::new((1.0 + p.norm_sqr()) * p.norm_sqr().exp(), 0.0)).unwrap();
                f.d_zzbar(backend).unwrap().max_diff(&exact).unwrap()
            };
            let rate = (err(32) / err(64)).log2();
            assert!(rate > min_rate, "{backend:?} rate {rate}");
        }
    }

    #[test]
    fn direct_laplacian_keeps_the_highest_mode() {
        let d = GridDomain::square(8, 1.0).unwrap();
        let alt = make_field(&d, |p| C64::new((PI * 8.0 * p.re).cos(), 0.0)).unwrap();
        let composite = alt.d_z(Backend::Spectral).unwrap().d_zbar(Backend::Spectral).unwrap();
        assert!(composite.max_abs() < 1e-12);
        let direct = alt.d_zzbar(Backend::Spectral).unwrap();
        let expected = alt.scale(C64::new(-(8.0 * PI).powi(2) / 4.0, 0.0));
        assert!(direct.max_diff(&expected).unwrap() < 1e-9);
    }

    #[test]
    fn snapshot_roundtrip_is_bit_exact() {
        let d = GridDomain::new(8, 4, 1.5, 0.25, C64::new(0.0, 0.0)).unwrap();
        let f = make_field(&d, |p| (p * 1.3).sin() / 7.0).unwrap();
        let mut buf = Vec::new();
        f.write_snapshot(&mut buf).unwrap();
        assert_eq!(buf.len(), SNAPSHOT_HEADER + 16 * 32);
        assert_eq!(&buf[0..4], b"CASF");
        let g = ComplexField::read_snapshot(&buf[..]).unwrap();
        assert_eq!(g.data, f.data);
        assert_eq!((g.domain.nx, g.domain.ny, g.domain.lx, g.domain.ly), (8, 4, 1.5, 0.25));
    }

    #[test]
    fn lagrange_interpolation_recovers_smooth_function() {
        let d = GridDomain::window(32, -1.0, 1.0, -1.0, 1.0).unwrap();
        let f = make_field(&d, |p| (p * 0.7).exp()).unwrap();
        let z = C64::new(0.123, -0.456);
        let v = f.interpolate(z, 8, false).unwrap();
        assert!((v - (z * 0.7).exp()).norm() < 1e-10);
        assert!(f.interpolate(C64::new(2.0, 0.0), 8, false).is_none());
    }

    #[test]
    fn unwrapped_log_detects_winding() {
        let d = GridDomain::square(16, 1.0).unwrap();
        let wind = make_field(&d, |p| (I * 2.0 * PI * p.re).exp()).unwrap();
        assert!(matches!(unwrapped_log(&wind, true), Err(CasError::Branch { .. })));
        let ok = make_field(&d, |p| (C64::new(0.3, 2.0) * (2.0 * PI * p.re).sin()).exp()).unwrap();
        let l = unwrapped_log(&ok, true).unwrap();
        let back = l.map(|v| v.exp());
        assert!(back.max_diff(&ok).unwrap() < 1e-13);
    }
}
