//! The complex Tzitzéica equation
//! `G(u) = Δ_h u - e^{2u} + s e^{-4u} + 1 = 0`, `s = 2φψ̄/λ³`,
//! its linearization, a Newton solver and pseudo-arclength continuation
//! along twistor and minimal-Lagrangian rays.
//!
//! Periodic backends solve on every node. Window backends hold the outer ring
//! of nodes fixed (Dirichlet data) and solve on the interior.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::cmetric::{pair_cubics, ComplexMetric, CubicPair};
use crate::error::{CasError, Result};
use crate::exec::Exec;
use crate::grid::{apply_multiplier, ComplexField, GridDomain, C64};
use crate::linalg::{gmres, CsrMatrix, Factorization};
use crate::spectra;

fn one() -> C64 {
    C64::new(1.0, 0.0)
}

/// Nodes carrying unknowns: all of them on a torus, the interior on a window.
pub fn active_nodes(domain: &GridDomain, periodic: bool) -> Vec<usize> {
    (0..domain.len()).filter(|&i| periodic || !domain.on_edge(i)).collect()
}

/// `Δ_h u - e^{2u} + s e^{-4u} + 1` with `s = pair_cubics(h, Q)`.
pub fn residual(h: &ComplexMetric, q: &CubicPair, u: &ComplexField) -> Result<ComplexField> {
    let s = pair_cubics(h, q)?;
    residual_with_source(h, &s, u)
}

pub fn residual_with_source(h: &ComplexMetric, s: &ComplexField, u: &ComplexField) -> Result<ComplexField> {
    let lap = h.laplacian_unchecked(u)?;
    let data = (0..u.len())
        .map(|i| {
            let v = u.data[i];
            lap.data[i] - (2.0 * v).exp() + s.data[i] * (-4.0 * v).exp() + 1.0
        })
        .collect();
    ComplexField::new(u.domain, data, "gauss residual")
}

/// `2e^{2u} + 4s e^{-4u}`, so that `L v = Δ_h v - potential · v`.
pub fn potential(s: &ComplexField, u: &ComplexField) -> Result<ComplexField> {
    s.zip_map(u, |sv, v| 2.0 * (2.0 * v).exp() + 4.0 * sv * (-4.0 * v).exp())
}

/// The operator `v ↦ Δ_h v - p v` restricted to a set of active nodes.
#[derive(Clone, Debug)]
pub struct Linearization {
    pub metric: ComplexMetric,
    pub potential: ComplexField,
    pub active: Vec<usize>,
}

/// Linearization of the Gauss equation at `u`.
pub fn linearize(h: &ComplexMetric, q: &CubicPair, u: &ComplexField) -> Result<Linearization> {
    let s = pair_cubics(h, q)?;
    Linearization::new(h.clone(), potential(&s, u)?)
}

impl Linearization {
    pub fn new(metric: ComplexMetric, potential: ComplexField) -> Result<Self> {
        if !metric.domain().same_grid(&potential.domain) {
            return Err(CasError::GridMismatch("linearization potential".into()));
        }
        let active = active_nodes(&metric.domain(), metric.backend.periodic());
        Ok(Linearization { metric, potential, active })
    }

    /// `Δ_h - k`.
    pub fn shifted_laplacian(metric: ComplexMetric, k: f64) -> Result<Self> {
        let p = ComplexField::constant(&metric.domain(), C64::new(k, 0.0));
        Self::new(metric, p)
    }

    pub fn dim(&self) -> usize {
        self.active.len()
    }

    pub fn domain(&self) -> GridDomain {
        self.metric.domain()
    }

    /// Full-grid application, ignoring the active set.
    pub fn apply_field(&self, v: &ComplexField) -> Result<ComplexField> {
        let lap = self.metric.laplacian_unchecked(v)?;
        let data = (0..v.len()).map(|i| lap.data[i] - self.potential.data[i] * v.data[i]).collect();
        ComplexField::new(v.domain, data, "")
    }

    pub fn embed(&self, x: &[C64]) -> ComplexField {
        let d = self.domain();
        let mut data = vec![C64::new(0.0, 0.0); d.len()];
        for (&i, &v) in self.active.iter().zip(x) {
            data[i] = v;
        }
        ComplexField { domain: d, data, label: String::new() }
    }

    pub fn restrict(&self, f: &ComplexField) -> Vec<C64> {
        self.active.iter().map(|&i| f.data[i]).collect()
    }

    /// Matrix-free application on the active unknowns.
    pub fn apply(&self, x: &[C64]) -> Vec<C64> {
        let v = self.embed(x);
        let lap = self.metric.laplacian_unchecked(&v).expect("operator fields share a grid");
        self.active.iter().map(|&i| lap.data[i] - self.potential.data[i] * v.data[i]).collect()
    }

    /// Sparse matrix in the nodal basis of the active set, one column per
    /// unit vector. Finite-difference stencils produce exact zeros away from
    /// the column, so the sparsity is structural.
    pub fn assemble_sparse(&self, exec: Exec) -> CsrMatrix {
        if self.metric.backend.periodic() {
            self.assemble_columns(exec)
        } else {
            self.assemble_probed(exec)
        }
    }

    fn assemble_columns(&self, exec: Exec) -> CsrMatrix {
        let n = self.dim();
        let cols: Vec<Vec<(usize, C64)>> = exec.map(n, |c| {
            let mut e = vec![C64::new(0.0, 0.0); n];
            e[c] = one();
            self.apply(&e).into_iter().enumerate().filter(|(_, v)| *v != C64::new(0.0, 0.0)).collect()
        });
        CsrMatrix::from_columns(n, &cols)
    }

    /// Per-axis reach of the window stencils: one-sided edge stencils
    /// extend `order` nodes for first and `order + 1` for second derivatives,
    /// and the Beltrami term composes two first derivatives.
    fn window_reach(&self) -> usize {
        let order = self.metric.backend.order();
        if self.metric.mu.data.iter().any(|m| *m != C64::new(0.0, 0.0)) {
            (order + 1).max(2 * order)
        } else {
            order + 1
        }
    }

    /// Column extraction by probing: columns whose nodes are congruent modulo
    /// `2R + 1` on both axes never share a row, so one application recovers
    /// all of them. Gives the same entries as column-by-column assembly.
    fn assemble_probed(&self, exec: Exec) -> CsrMatrix {
        let d = self.domain();
        let n = self.dim();
        let reach = self.window_reach() as i64;
        let period = 2 * reach + 1;
        let mut slot = vec![usize::MAX; d.len()];
        for (a, &i) in self.active.iter().enumerate() {
            slot[i] = a;
        }
        let colors: Vec<(i64, i64)> = (0..period.min(d.ny as i64))
            .flat_map(|ck| (0..period.min(d.nx as i64)).map(move |cj| (cj, ck)))
            .collect();
        let probes = exec.map_slice(&colors, |&(cj, ck)| {
            let x: Vec<C64> = self
                .active
                .iter()
                .map(|&i| {
                    let (j, k) = ((i % d.nx) as i64, (i / d.nx) as i64);
                    if j % period == cj && k % period == ck {
                        one()
                    } else {
                        C64::new(0.0, 0.0)
                    }
                })
                .collect();
            let y = self.apply(&x);
            let mut entries = Vec::new();
            for (row, v) in y.into_iter().enumerate() {
                if v == C64::new(0.0, 0.0) {
                    continue;
                }
                let i = self.active[row];
                let (j, k) = ((i % d.nx) as i64, (i / d.nx) as i64);
                let mut oj = (cj - j).rem_euclid(period);
                if oj > reach {
                    oj -= period;
                }
                let mut ok = (ck - k).rem_euclid(period);
                if ok > reach {
                    ok -= period;
                }
                let (jc, kc) = (j + oj, k + ok);
                if jc < 0 || kc < 0 || jc >= d.nx as i64 || kc >= d.ny as i64 {
                    continue;
                }
                let col = slot[d.index(jc as usize, kc as usize)];
                if col != usize::MAX {
                    entries.push((col, row, v));
                }
            }
            entries
        });
        let mut cols: Vec<Vec<(usize, C64)>> = vec![Vec::new(); n];
        for entries in probes {
            for (col, row, v) in entries {
                cols[col].push((row, v));
            }
        }
        for c in cols.iter_mut() {
            c.sort_by_key(|e| e.0);
        }
        CsrMatrix::from_columns(n, &cols)
    }

    pub fn assemble(&self, exec: Exec) -> DMatrix<C64> {
        self.assemble_sparse(exec).to_dense()
    }

    /// Second-order discretization of the same operator on a window, with
    /// the nine-point stencil of `Δ_h v = (4/(λ∂_z̄w̄)) (∂_z̄∂_z v - ν ∂_z̄² v - (∂_z̄ν) ∂_z̄ v)`.
    /// Banded with bandwidth one grid row; used to precondition GMRES.
    /// `None` on periodic backends.
    pub fn low_order(&self) -> Result<Option<CsrMatrix>> {
        if self.metric.backend.periodic() {
            return Ok(None);
        }
        let d = self.domain();
        let (hx, hy) = (d.hx(), d.hy());
        let nu = self.metric.nu();
        let nu_zb = nu.d_zbar(self.metric.backend)?;
        let lw = self.metric.lambda_w();
        let mut slot = vec![usize::MAX; d.len()];
        for (a, &i) in self.active.iter().enumerate() {
            slot[i] = a;
        }
        let mut cols: Vec<Vec<(usize, C64)>> = vec![Vec::new(); self.dim()];
        for (row, &i) in self.active.iter().enumerate() {
            let (j, k) = (i % d.nx, i / d.nx);
            let c4 = 4.0 / lw.data[i];
            let (nv, nz) = (nu.data[i], nu_zb.data[i]);
            let dxx = 1.0 / (hx * hx);
            let dyy = 1.0 / (hy * hy);
            // ∂_z̄∂_z = ¼(∂xx + ∂yy), ∂_z̄² = ¼(∂xx - ∂yy + 2i∂xy), ∂_z̄ = ½(∂x + i∂y).
            let axx = c4 * (0.25 - 0.25 * nv) * dxx;
            let ayy = c4 * (0.25 + 0.25 * nv) * dyy;
            let axy = c4 * (-0.5 * C64::new(0.0, 1.0) * nv) / (4.0 * hx * hy);
            let ax = c4 * (-0.5 * nz) / (2.0 * hx);
            let ay = c4 * (-0.5 * C64::new(0.0, 1.0) * nz) / (2.0 * hy);
            let mut push = |dj: i64, dk: i64, v: C64| {
                let jj = j as i64 + dj;
                let kk = k as i64 + dk;
                let target = d.index(jj as usize, kk as usize);
                if slot[target] != usize::MAX {
                    cols[slot[target]].push((row, v));
                }
            };
            push(0, 0, -2.0 * axx - 2.0 * ayy - self.potential.data[i]);
            push(1, 0, axx + ax);
            push(-1, 0, axx - ax);
            push(0, 1, ayy + ay);
            push(0, -1, ayy - ay);
            push(1, 1, axy);
            push(-1, -1, axy);
            push(1, -1, -axy);
            push(-1, 1, -axy);
        }
        Ok(Some(CsrMatrix::from_columns(self.dim(), &cols)))
    }

    /// Inverse of the constant-coefficient symbol `-(mean 4/(λ∂_z̄w̄)) |k|²/4 - mean p`
    /// on a torus; the identity on windows.
    pub fn fourier_preconditioner(&self) -> impl Fn(&[C64]) -> Vec<C64> + '_ {
        let d = self.domain();
        let periodic = self.metric.backend.periodic();
        let lw = self.metric.lambda_w();
        let c_bar = lw.data.iter().map(|l| 4.0 / l).sum::<C64>() / d.len() as f64;
        let p_bar = self.potential.mean();
        move |x: &[C64]| {
            if !periodic {
                return x.to_vec();
            }
            let f = self.embed(x);
            let out = apply_multiplier(&f, |kx, ky, _| {
                let sym = -c_bar * (kx * kx + ky * ky) / 4.0 - p_bar;
                if sym.norm() < 1e-12 * (c_bar.norm() + p_bar.norm() + 1.0) {
                    one()
                } else {
                    1.0 / sym
                }
            });
            self.restrict(&out)
        }
    }
}

/// Which linear solver produced the Newton steps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LinearSolver {
    Direct,
    Gmres,
}

#[derive(Clone, Debug)]
pub struct NewtonSettings {
    /// Target for the max-norm of the residual on the active nodes.
    pub tol: f64,
    pub max_iter: usize,
    /// Periodic problems with at most this many unknowns use a direct
    /// solve; larger ones use preconditioned GMRES. Window problems are
    /// banded and always solved directly.
    pub dense_threshold: usize,
    pub gmres_restart: usize,
    pub gmres_max_iter: usize,
    /// Dirichlet data for window problems; taken from the initial guess
    /// when absent.
    pub boundary: Option<ComplexField>,
    /// Compute the spectral summary of the final linearization.
    pub spectrum: bool,
    /// Smallest singular value (relative to the largest) below which the
    /// final linearization is declared singular.
    pub singular_floor: f64,
    pub exec: Exec,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        NewtonSettings {
            tol: 1e-12,
            max_iter: 30,
            dense_threshold: 1024,
            gmres_restart: 60,
            gmres_max_iter: 3000,
            boundary: None,
            spectrum: true,
            singular_floor: 1e-13,
            exec: Exec::default(),
        }
    }
}

/// Eigenvalue of smallest modulus and smallest singular value of a
/// linearization, at grid scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralSummary {
    pub smallest_eigenvalue: C64,
    pub eigen_residual: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
}

#[derive(Clone, Debug)]
pub struct GaussSolution {
    pub metric: ComplexMetric,
    pub cubics: CubicPair,
    pub u: ComplexField,
    pub residual_norm: f64,
    /// Residual max-norm before each Newton step, ending with the final one.
    pub newton_trace: Vec<f64>,
    pub spectral_summary: Option<SpectralSummary>,
    pub solver: LinearSolver,
}

impl GaussSolution {
    /// Largest `r_{k+1} / r_k²` over the last `tail` steps of the trace,
    /// ignoring steps that land below `floor`, where roundoff takes over.
    pub fn quadratic_constant(&self, tail: usize, floor: f64) -> Option<f64> {
        let t = &self.newton_trace;
        let pairs: Vec<(f64, f64)> = t.windows(2).map(|w| (w[0], w[1])).filter(|(_, b)| *b > floor).collect();
        if pairs.len() < tail {
            return None;
        }
        pairs[pairs.len() - tail..].iter().map(|(a, b)| b / (a * a)).reduce(f64::max)
    }
}

fn max_on(f: &ComplexField, active: &[usize]) -> f64 {
    active.iter().map(|&i| f.data[i].norm()).fold(0.0, f64::max)
}

fn apply_boundary(u: &mut ComplexField, boundary: Option<&ComplexField>, periodic: bool) -> Result<()> {
    if periodic {
        return Ok(());
    }
    if let Some(b) = boundary {
        if !b.domain.same_grid(&u.domain) {
            return Err(CasError::GridMismatch("Dirichlet data".into()));
        }
        for i in 0..u.len() {
            if u.domain.on_edge(i) {
                u.data[i] = b.data[i];
            }
        }
    }
    Ok(())
}

/// Newton's method for `G(u) = 0` starting from `u0`.
pub fn newton_solve(
    h: &ComplexMetric,
    q: &CubicPair,
    u0: &ComplexField,
    settings: &NewtonSettings,
) -> Result<GaussSolution> {
    let s = pair_cubics(h, q)?;
    let periodic = h.backend.periodic();
    let mut u = u0.clone().with_label("u");
    apply_boundary(&mut u, settings.boundary.as_ref(), periodic)?;
    let active = active_nodes(&h.domain(), periodic);
    let direct = !periodic || active.len() <= settings.dense_threshold;
    let mut trace = Vec::new();
    for iter in 0..=settings.max_iter {
        let g = residual_with_source(h, &s, &u)?;
        let r = max_on(&g, &active);
        trace.push(r);
        if !r.is_finite() || r > 1e12 {
            return Err(CasError::Divergence { iteration: iter, residual: r });
        }
        if r <= settings.tol {
            break;
        }
        if iter == settings.max_iter {
            let contraction = if trace.len() > 1 { r / trace[trace.len() - 2] } else { f64::NAN };
            return Err(CasError::NoConvergence { iterations: iter, residual: r, contraction });
        }
        let lin = Linearization::new(h.clone(), potential(&s, &u)?)?;
        let rhs: Vec<C64> = active.iter().map(|&i| -g.data[i]).collect();
        let step = if direct {
            let low = lin.low_order()?;
            let solver = spectra::Solver::new(lin.assemble_sparse(settings.exec), low.as_ref()).map_err(|e| match e {
                CasError::SingularMatrix(p) => CasError::SingularLinearization(p),
                other => other,
            })?;
            solver.solve(&rhs)?
        } else {
            let mut x = vec![C64::new(0.0, 0.0); rhs.len()];
            let eta = (0.1 * r).clamp(1e-13, 1e-2);
            let report = {
                let pre = lin.fourier_preconditioner();
                gmres(|v| lin.apply(v), pre, &rhs, &mut x, eta, settings.gmres_restart, settings.gmres_max_iter)
            };
            if !report.converged {
                return Err(CasError::Divergence { iteration: iter, residual: report.relative_residual });
            }
            x
        };
        if step.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(CasError::SingularLinearization(0.0));
        }
        for (&i, dv) in active.iter().zip(&step) {
            u.data[i] += dv;
        }
    }
    let residual_norm = *trace.last().expect("trace holds the initial residual");
    let spectral_summary = if settings.spectrum && direct {
        let lin = Linearization::new(h.clone(), potential(&s, &u)?)?;
        let d = h.domain();
        let source = spectra::OperatorSource {
            description: "gauss linearization".into(),
            shift: None,
            u_mean: u.mean(),
            s_mean: s.mean(),
            backend: h.backend,
            nx: d.nx,
            ny: d.ny,
        };
        let op = spectra::OperatorMatrix::from_linearization(lin, source, settings.exec);
        let rep = spectra::spectrum(&op, 1)?;
        let summary = SpectralSummary {
            smallest_eigenvalue: rep.eigenvalues[0],
            eigen_residual: rep.residuals[0],
            sigma_min: rep.sigma_min,
            sigma_max: rep.sigma_max,
        };
        if summary.sigma_min <= settings.singular_floor * summary.sigma_max {
            return Err(CasError::SingularLinearization(summary.sigma_min));
        }
        Some(summary)
    } else {
        None
    };
    Ok(GaussSolution {
        metric: h.clone(),
        cubics: q.clone(),
        u,
        residual_norm,
        newton_trace: trace,
        spectral_summary,
        solver: if direct { LinearSolver::Direct } else { LinearSolver::Gmres },
    })
}

// ---- continuation ---------------------------------------------------------

/// One-parameter family of cubic data.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum RayMode {
    /// `(ζ Q1, ζ⁻¹ Q̄2)` with `ζ = exp(t · rate)`.
    Twistor { rate: C64 },
    /// `(t Q1, -t Q̄2)`.
    Hll,
}

impl RayMode {
    /// Multipliers `(a, b)` applied to `(φ, ψ̄)` at parameter `t`.
    pub fn multipliers(self, t: C64) -> (C64, C64) {
        match self {
            RayMode::Twistor { rate } => {
                let z = (t * rate).exp();
                (z, z.inv())
            }
            RayMode::Hll => (t, -t),
        }
    }

    /// `d(ab)/dt`, the rate of change of the source multiplier.
    pub fn product_rate(self, t: C64) -> C64 {
        match self {
            RayMode::Twistor { .. } => C64::new(0.0, 0.0),
            RayMode::Hll => -2.0 * t,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RaySchedule {
    pub mode: RayMode,
    pub t_start: f64,
    /// The run ends once the parameter leaves `[t_min, t_max]`.
    pub t_min: f64,
    pub t_max: f64,
    /// The run also ends once the mean of `Re u` drops below this floor
    /// (the lower HLL branch escapes to `u → -∞` as `t → 0`).
    pub u_floor: f64,
    pub ds: f64,
    pub ds_min: f64,
    pub ds_max: f64,
    pub max_steps: usize,
    pub newton_tol: f64,
    /// Bracket width, in arclength, at which fold refinement stops.
    pub fold_tol: f64,
}

impl RaySchedule {
    pub fn hll() -> Self {
        RaySchedule {
            mode: RayMode::Hll,
            t_start: 0.0,
            t_min: -1e-9,
            t_max: 10.0,
            u_floor: -2.5,
            ds: 0.05,
            ds_min: 1e-9,
            ds_max: 0.1,
            max_steps: 400,
            newton_tol: 1e-12,
            fold_tol: 1e-13,
        }
    }

    pub fn twistor(rate: C64, t_end: f64) -> Self {
        RaySchedule { mode: RayMode::Twistor { rate }, t_max: t_end, ..Self::hll() }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.t_min <= self.t_start
            && self.t_start <= self.t_max
            && self.t_min < self.t_max
            && self.ds_min > 0.0
            && self.ds_min <= self.ds
            && self.ds <= self.ds_max
            && self.newton_tol > 0.0;
        if ok {
            Ok(())
        } else {
            Err(CasError::Invalid("ray schedule bounds are not monotone".into()))
        }
    }
}

/// A converged point on a continuation branch.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RayPoint {
    pub t: C64,
    pub s_mean: C64,
    pub u_mean: C64,
    /// `e^{2u}` averaged over the grid.
    pub x_mean: C64,
    pub u_rms: f64,
    pub residual: f64,
    /// Parameter component of the unit tangent.
    pub tangent_t: C64,
    /// Eigenvalue of the linearization nearest zero.
    pub eigenvalue: C64,
    pub branch: usize,
    #[serde(skip)]
    pub u: Option<ComplexField>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub t: C64,
    pub s: C64,
    pub x: C64,
    pub u_mean: C64,
    /// Parameter values of the converged points enclosing the turning point.
    pub bracket: (C64, C64),
    /// Source values matching `bracket`.
    pub s_bracket: (C64, C64),
    pub smallest_eigenvalue: C64,
    pub eigen_residual: f64,
    /// `|⟨v, 1⟩| / (|v| |1|)` for the kernel candidate `v`.
    pub kernel_alignment: f64,
    /// Step index after which the nearest eigenvalue changes sign.
    pub eigen_crossing: Option<usize>,
    /// Step index after which the parameter turns.
    pub turning: usize,
    /// Eigenvalue tracking and the turning-point test agree.
    pub agree: bool,
}

#[derive(Clone, Debug)]
pub struct RayResult {
    pub points: Vec<RayPoint>,
    pub fold: Option<FoldReport>,
    pub branches: usize,
    pub steps: usize,
    pub rejected: usize,
}

impl RayResult {
    /// Number of branch crossings of the parameter value `t` (real part).
    /// The refined fold point is spliced into the path, so values between
    /// the last converged points and the fold are counted on both branches.
    pub fn solutions_at(&self, t: f64) -> usize {
        let mut path: Vec<f64> = self.points.iter().map(|p| p.t.re).collect();
        if let Some(f) = &self.fold {
            if f.turning < path.len() {
                path.insert(f.turning + 1, f.t.re);
            }
        }
        let mut count = 0;
        for w in path.windows(2) {
            let (a, b) = (w[0] - t, w[1] - t);
            if a == 0.0 || a * b < 0.0 {
                count += 1;
            }
        }
        if path.last() == Some(&t) {
            count += 1;
        }
        count
    }
}

struct RayProblem<'a> {
    h: &'a ComplexMetric,
    base: &'a CubicPair,
    mode: RayMode,
    s0: ComplexField,
    active: Vec<usize>,
    exec: Exec,
}

struct State {
    u: ComplexField,
    t: C64,
}

impl<'a> RayProblem<'a> {
    fn source(&self, t: C64) -> ComplexField {
        let (a, b) = self.mode.multipliers(t);
        self.s0.scale(a * b)
    }

    fn g_and_jac(&self, st: &State) -> Result<(Vec<C64>, DMatrix<C64>, Vec<C64>)> {
        let s = self.source(st.t);
        let g = residual_with_source(self.h, &s, &st.u)?;
        let lin = Linearization::new(self.h.clone(), potential(&s, &st.u)?)?;
        let m = lin.assemble(self.exec);
        let rate = self.mode.product_rate(st.t);
        let gt: Vec<C64> = self.active.iter().map(|&i| rate * self.s0.data[i] * (-4.0 * st.u.data[i]).exp()).collect();
        let gv: Vec<C64> = self.active.iter().map(|&i| g.data[i]).collect();
        Ok((gv, m, gt))
    }

    fn weight(&self) -> f64 {
        1.0 / self.active.len() as f64
    }

    /// Bordered matrix `[[L, G_t], [w τ_uᴴ, conj τ_t]]`.
    fn bordered(&self, m: &DMatrix<C64>, gt: &[C64], tau: &[C64]) -> DMatrix<C64> {
        let n = m.nrows();
        let w = self.weight();
        let mut b = DMatrix::zeros(n + 1, n + 1);
        b.view_mut((0, 0), (n, n)).copy_from(m);
        for i in 0..n {
            b[(i, n)] = gt[i];
            b[(n, i)] = w * tau[i].conj();
        }
        b[(n, n)] = tau[n].conj();
        b
    }

    fn normalize(&self, tau: &mut [C64]) {
        let n = tau.len() - 1;
        let w = self.weight();
        let nrm = (w * tau[..n].iter().map(|v| v.norm_sqr()).sum::<f64>() + tau[n].norm_sqr()).sqrt();
        for v in tau.iter_mut() {
            *v /= nrm;
        }
    }

    /// Unit tangent oriented so that `⟨τ, prev⟩ > 0`.
    fn tangent(&self, m: &DMatrix<C64>, gt: &[C64], prev: &[C64]) -> Result<Vec<C64>> {
        let n = m.nrows();
        let b = self.bordered(m, gt, prev);
        let fact = Factorization::new(&b, false)?;
        let mut rhs = vec![C64::new(0.0, 0.0); n + 1];
        rhs[n] = one();
        let mut tau = fact.solve(&rhs);
        self.normalize(&mut tau);
        Ok(tau)
    }

    fn with_values(&self, u: &ComplexField, x: &[C64]) -> ComplexField {
        let mut out = u.clone();
        for (&i, v) in self.active.iter().zip(x) {
            out.data[i] = *v;
        }
        out
    }

    /// Corrector on the hyperplane `⟨τ, X - X₀⟩_w = ds` through the predictor.
    fn correct(&self, from: &State, tau: &[C64], ds: f64, tol: f64) -> Result<(State, usize)> {
        let n = self.active.len();
        let w = self.weight();
        let x0: Vec<C64> = self.active.iter().map(|&i| from.u.data[i]).collect();
        let mut x: Vec<C64> = (0..n).map(|i| x0[i] + ds * tau[i]).collect();
        let mut t = from.t + ds * tau[n];
        for it in 0..12 {
            let st = State { u: self.with_values(&from.u, &x), t };
            let (g, m, gt) = self.g_and_jac(&st)?;
            let mut nres = C64::new(-ds, 0.0);
            for i in 0..n {
                nres += w * tau[i].conj() * (x[i] - x0[i]);
            }
            nres += tau[n].conj() * (t - from.t);
            let r = g.iter().map(|v| v.norm()).fold(nres.norm(), f64::max);
            if !r.is_finite() {
                break;
            }
            if r <= tol {
                return Ok((st, it));
            }
            let b = self.bordered(&m, &gt, tau);
            let fact = Factorization::new(&b, false)?;
            let mut rhs: Vec<C64> = g.iter().map(|v| -v).collect();
            rhs.push(-nres);
            let d = fact.solve(&rhs);
            for i in 0..n {
                x[i] += d[i];
            }
            t += d[n];
        }
        Err(CasError::NoConvergence { iterations: 12, residual: f64::NAN, contraction: f64::NAN })
    }

    fn point(&self, st: &State, tau: &[C64], branch: usize) -> Result<RayPoint> {
        let s = self.source(st.t);
        let g = residual_with_source(self.h, &s, &st.u)?;
        let lin = Linearization::new(self.h.clone(), potential(&s, &st.u)?)?;
        let m = lin.assemble(self.exec);
        let eig = spectra::nearest_eigenpairs(&m, 1, C64::new(0.0, 0.0))?;
        let n = self.active.len() as f64;
        let u_mean = self.active.iter().map(|&i| st.u.data[i]).sum::<C64>() / n;
        let x_mean = self.active.iter().map(|&i| (2.0 * st.u.data[i]).exp()).sum::<C64>() / n;
        let u_rms = (self.active.iter().map(|&i| st.u.data[i].norm_sqr()).sum::<f64>() / n).sqrt();
        Ok(RayPoint {
            t: st.t,
            s_mean: s.mean(),
            u_mean,
            x_mean,
            u_rms,
            residual: max_on(&g, &self.active),
            tangent_t: tau[tau.len() - 1],
            eigenvalue: eig[0].value,
            branch,
            u: Some(st.u.clone()),
        })
    }
}

/// Pseudo-arclength continuation of `G(u; Q(t)) = 0` from `u0`, an
/// approximate solution at `schedule.t_start`.
///
/// A fold is a sign change of `Re dt/ds`; it is refined by regula falsi on
/// the tangent component until the arclength bracket is below
/// `schedule.fold_tol`. Points after the fold are labelled branch 1.
pub fn continue_ray(
    h: &ComplexMetric,
    q: &CubicPair,
    u0: &ComplexField,
    schedule: &RaySchedule,
) -> Result<RayResult> {
    schedule.validate()?;
    let periodic = h.backend.periodic();
    let active = active_nodes(&h.domain(), periodic);
    if active.len() > 4096 {
        return Err(CasError::TooLarge(active.len()));
    }
    let prob = RayProblem {
        h,
        base: q,
        mode: schedule.mode,
        s0: pair_cubics(h, q)?,
        active,
        exec: Exec::default(),
    };
    let t0 = C64::new(schedule.t_start, 0.0);
    let (a, b) = schedule.mode.multipliers(t0);
    let start = newton_solve(
        h,
        &prob.base.scaled(a, b),
        u0,
        &NewtonSettings { tol: schedule.newton_tol, spectrum: false, ..Default::default() },
    )?;
    let n = prob.active.len();
    let mut prev_tau = vec![C64::new(0.0, 0.0); n + 1];
    prev_tau[n] = one();
    let mut state = State { u: start.u, t: t0 };
    let (_, m, gt) = prob.g_and_jac(&state)?;
    let mut tau = prob.tangent(&m, &gt, &prev_tau)?;
    let mut points = vec![prob.point(&state, &tau, 0)?];
    let mut ds = schedule.ds;
    let mut branch = 0;
    let mut fold = None;
    let mut rejected = 0;
    let mut steps = 0;
    while steps < schedule.max_steps {
        let attempt = prob.correct(&state, &tau, ds, schedule.newton_tol);
        let (next, iters) = match attempt {
            Ok(v) => v,
            Err(_) => {
                rejected += 1;
                ds *= 0.5;
                if ds < schedule.ds_min {
                    let last = points.last().map(|p| p.t).unwrap_or(t0);
                    return Err(CasError::StepUnderflow { t: last.re, lo: last.re, hi: (last + 2.0 * ds * tau[n]).re });
                }
                continue;
            }
        };
        steps += 1;
        let (_, m, gt) = prob.g_and_jac(&next)?;
        let next_tau = prob.tangent(&m, &gt, &tau)?;
        if fold.is_none() && tau[n].re > 0.0 && next_tau[n].re <= 0.0 {
            let report = refine_fold(&prob, &state, &tau, ds, schedule, &points, steps)?;
            fold = Some(report);
            branch = 1;
        }
        let p = prob.point(&next, &next_tau, branch)?;
        if let Some(f) = fold.as_mut() {
            if f.eigen_crossing.is_none() && points.len() == f.turning + 1 {
                let before = points[f.turning].eigenvalue.re;
                if before * p.eigenvalue.re <= 0.0 {
                    f.eigen_crossing = Some(f.turning);
                }
                f.agree = f.eigen_crossing == Some(f.turning);
            }
        }
        let done = p.t.re < schedule.t_min || p.t.re > schedule.t_max || p.u_mean.re < schedule.u_floor;
        points.push(p);
        state = next;
        tau = next_tau;
        if done {
            break;
        }
        if iters <= 3 {
            ds = (ds * 1.5).min(schedule.ds_max);
        } else if iters > 6 {
            ds = (ds * 0.5).max(schedule.ds_min);
        }
    }
    let branches = if fold.is_some() { 2 } else { 1 };
    Ok(RayResult { points, fold, branches, steps, rejected })
}

fn refine_fold(
    prob: &RayProblem,
    from: &State,
    tau: &[C64],
    ds: f64,
    schedule: &RaySchedule,
    points: &[RayPoint],
    steps: usize,
) -> Result<FoldReport> {
    let n = prob.active.len();
    let eval = |sigma: f64| -> Result<(State, Vec<C64>)> {
        let (st, _) = prob.correct(from, tau, sigma, schedule.newton_tol)?;
        let (_, m, gt) = prob.g_and_jac(&st)?;
        let tt = prob.tangent(&m, &gt, tau)?;
        Ok((st, tt))
    };
    let (mut lo, mut flo) = (0.0, tau[n].re);
    let (mut hi, mut fhi) = (ds, eval(ds)?.1[n].re);
    let mut side = 0i32;
    let mut best = None;
    for _ in 0..200 {
        if hi - lo <= schedule.fold_tol {
            break;
        }
        let mut mid = (lo * fhi - hi * flo) / (fhi - flo);
        if !(mid > lo && mid < hi) {
            mid = 0.5 * (lo + hi);
        }
        let (st, tt) = eval(mid)?;
        let fm = tt[n].re;
        if fm == 0.0 {
            best = Some((st, tt));
            break;
        }
        if fm > 0.0 {
            lo = mid;
            flo = fm;
            if side == 1 {
                fhi *= 0.5;
            }
            side = 1;
        } else {
            hi = mid;
            fhi = fm;
            if side == -1 {
                flo *= 0.5;
            }
            side = -1;
        }
        best = Some((st, tt));
    }
    let (st, _) = match best {
        Some(v) => v,
        None => eval(0.5 * (lo + hi))?,
    };
    let s = prob.source(st.t);
    let lin = Linearization::new(prob.h.clone(), potential(&s, &st.u)?)?;
    let m = lin.assemble(prob.exec);
    let eig = spectra::nearest_eigenpairs(&m, 1, C64::new(0.0, 0.0))?;
    let v = &eig[0].vector;
    let ones = (n as f64).sqrt();
    let align = v.iter().sum::<C64>().norm() / (crate::linalg::norm(v) * ones);
    let npts = n as f64;
    let lo_state = if lo > 0.0 { eval(lo)?.0 } else { State { u: from.u.clone(), t: from.t } };
    let hi_state = eval(hi)?.0;
    let turning = points.len() - 1;
    let _ = steps;
    Ok(FoldReport {
        t: st.t,
        s: s.mean(),
        x: prob.active.iter().map(|&i| (2.0 * st.u.data[i]).exp()).sum::<C64>() / npts,
        u_mean: prob.active.iter().map(|&i| st.u.data[i]).sum::<C64>() / npts,
        bracket: (lo_state.t, hi_state.t),
        s_bracket: (prob.source(lo_state.t).mean(), prob.source(hi_state.t).mean()),
        smallest_eigenvalue: eig[0].value,
        eigen_residual: eig[0].residual,
        kernel_alignment: align,
        eigen_crossing: None,
        turning,
        agree: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{c, Backend};

    fn flat(n: usize) -> ComplexMetric {
        let d = GridDomain::square(n, 1.0).unwrap();
        ComplexMetric::conformal(ComplexField::constant(&d, c(1.0, 0.0)), Backend::Spectral).unwrap()
    }

    #[test]
    fn manufactured_constant_residual_is_zero() {
        let h = flat(8);
        let q = CubicPair::constant(&h.domain(), c(2.0, 0.0), c(1.0, 0.0));
        let u = ComplexField::constant(&h.domain(), c(0.5 * 2f64.ln(), 0.0));
        assert!(residual(&h, &q, &u).unwrap().max_abs() < 1e-14);
        let z = ComplexField::zeros(&h.domain());
        assert!(residual(&h, &CubicPair::zero(&h.domain()), &z).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn constants_span_the_fold_kernel() {
        let h = flat(8);
        let s = ComplexField::constant(&h.domain(), c(-4.0 / 27.0, 0.0));
        let u = ComplexField::constant(&h.domain(), c(0.5 * (2.0f64 / 3.0).ln(), 0.0));
        let lin = Linearization::new(h, potential(&s, &u).unwrap()).unwrap();
        let ones = vec![one(); lin.dim()];
        assert!(crate::linalg::norm(&lin.apply(&ones)) < 1e-13);
    }

    #[test]
    fn newton_from_complex_guess() {
        let h = flat(8);
        let q = CubicPair::constant(&h.domain(), c(2.0, 0.0), c(1.0, 0.0));
        let u0 = ComplexField::constant(&h.domain(), c(0.6, 0.1));
        let sol = newton_solve(&h, &q, &u0, &NewtonSettings::default()).unwrap();
        let target = c(0.5 * 2f64.ln(), 0.0);
        assert!(sol.u.data.iter().all(|v| (v - target).norm() < 1e-12));
        let summary = sol.spectral_summary.unwrap();
        // L = Δ - (2x + 4s/x²) = Δ - 8 on constants at x = 2.
        assert!((summary.smallest_eigenvalue - c(-8.0, 0.0)).norm() < 1e-9, "{summary:?}");
    }

    #[test]
    fn gmres_path_matches_direct_path() {
        let h = flat(16);
        let q = CubicPair::constant(&h.domain(), c(2.0, 0.0), c(1.0, 0.0));
        let d = h.domain();
        let u0 = crate::grid::make_field(&d, |z| c(0.35, 0.0) + 0.05 * (2.0 * std::f64::consts::PI * z.re).cos()).unwrap();
        let settings = NewtonSettings { dense_threshold: 16, spectrum: false, ..Default::default() };
        let sol = newton_solve(&h, &q, &u0, &settings).unwrap();
        assert_eq!(sol.solver, LinearSolver::Gmres);
        assert!(sol.residual_norm <= 1e-12);
        assert!(sol.u.data.iter().all(|v| (v - c(0.5 * 2f64.ln(), 0.0)).norm() < 1e-11));
    }

    #[test]
    fn twistor_multipliers_keep_the_product() {
        let m = RayMode::Twistor { rate: c(0.3, 1.1) };
        let (a, b) = m.multipliers(c(0.7, 0.0));
        assert!((a * b - one()).norm() < 1e-15);
        assert_eq!(RayMode::Hll.multipliers(c(0.5, 0.0)), (c(0.5, 0.0), c(-0.5, 0.0)));
    }

    #[test]
    fn schedule_validation() {
        assert!(RaySchedule::hll().validate().is_ok());
        let bad = RaySchedule { ds: 1.0, ds_max: 0.1, ..RaySchedule::hll() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn probed_assembly_matches_columns() {
        use crate::spectra::{family_metric, MetricFamily};
        for (family, backend) in [
            (MetricFamily::BersPerturbed { epsilon: 0.05 }, Backend::Fd6Window),
            (MetricFamily::BersPerturbed { epsilon: 0.05 }, Backend::Fd4Window),
            (MetricFamily::Riemannian { amplitude: 0.3 }, Backend::Fd6Window),
        ] {
            let mut h = family_metric(family, 0, 3, 20).unwrap();
            h.backend = backend;
            let d = h.domain();
            let p = crate::grid::make_field(&d, |z| c(1.0 + 0.2 * z.re, 0.1 * z.im)).unwrap();
            let lin = Linearization::new(h, p).unwrap();
            let a = lin.assemble_probed(Exec::Sequential).to_dense();
            let b = lin.assemble_columns(Exec::Sequential).to_dense();
            assert!((a - b).iter().all(|v| v.norm() == 0.0));
        }
    }
}
