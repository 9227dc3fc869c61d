//! Discretized operators `Δ_h - k` and `L_σ`, their eigenvalues nearest
//! zero, extreme singular values, and invertibility scans over seeded
//! metric families.
//!
//! Everything here is evidence at grid scale: a large smallest singular
//! value of the matrix says nothing rigorous about the continuum operator.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cmetric::{bers_metric_jets, ComplexMetric};
use crate::error::{CasError, Result};
use crate::exec::Exec;
use crate::gauss::{potential, Linearization};
use crate::grid::{make_field, Backend, ComplexField, GridDomain, C64};
use crate::linalg::{dot, gmres, norm, BandedLu, CsrMatrix, Factorization};

fn zero() -> C64 {
    C64::new(0.0, 0.0)
}

/// Work estimate (complex multiply-adds) below which systems are factored
/// directly rather than solved by preconditioned GMRES.
pub const DIRECT_BUDGET: f64 = 4e8;

/// Problems up to this size use a full Schur decomposition for eigenvalues.
pub const DENSE_EIGEN_LIMIT: usize = 400;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatorSource {
    pub description: String,
    pub shift: Option<f64>,
    pub u_mean: C64,
    pub s_mean: C64,
    pub backend: Backend,
    pub nx: usize,
    pub ny: usize,
}

/// Sparse nodal matrix of a linearized operator on its active nodes.
#[derive(Clone, Debug)]
pub struct OperatorMatrix {
    pub matrix: CsrMatrix,
    pub operator: Linearization,
    pub source: OperatorSource,
    /// All entries real.
    pub real: bool,
    pub hermitian: bool,
}

impl OperatorMatrix {
    pub fn from_linearization(operator: Linearization, source: OperatorSource, exec: Exec) -> Self {
        let matrix = operator.assemble_sparse(exec);
        let scale = matrix.vals.iter().map(|v| v.norm()).fold(0.0, f64::max).max(1.0);
        let real = matrix.vals.iter().all(|v| v.im.abs() <= 1e-12 * scale);
        let hermitian = is_hermitian(&matrix);
        OperatorMatrix { matrix, operator, source, real, hermitian }
    }

    pub fn dim(&self) -> usize {
        self.matrix.n
    }

    /// Largest relative deviation `|A x - L x| / |L x|` over the vectors.
    pub fn matrix_free_deviation(&self, vectors: &[Vec<C64>]) -> f64 {
        vectors
            .iter()
            .map(|x| {
                let a = self.matrix.matvec(x);
                let l = self.operator.apply(x);
                let diff: Vec<C64> = a.iter().zip(&l).map(|(p, q)| p - q).collect();
                norm(&diff) / norm(&l).max(f64::MIN_POSITIVE)
            })
            .fold(0.0, f64::max)
    }
}

fn is_hermitian(a: &CsrMatrix) -> bool {
    let dense_ok = a.n <= 2048;
    if !dense_ok {
        return false;
    }
    let d = a.to_dense();
    let scale = d.iter().map(|v| v.norm()).fold(0.0, f64::max).max(1.0);
    (0..a.n).all(|i| (0..a.n).all(|j| (d[(i, j)] - d[(j, i)].conj()).norm() <= 1e-12 * scale))
}

/// `v ↦ Δ_h v - 2e^{2u} v - 4s e^{-4u} v` on the active nodes of `h`.
pub fn discretize(h: &ComplexMetric, u: &ComplexField, s: &ComplexField) -> Result<OperatorMatrix> {
    let c = h.check_positive();
    if !c.passed {
        return Err(CasError::NotPositive(format!("{} failing nodes", c.failing_nodes)));
    }
    let p = potential(s, u)?;
    let lin = Linearization::new(h.clone(), p)?;
    let d = h.domain();
    let source = OperatorSource {
        description: "gauss linearization".into(),
        shift: None,
        u_mean: u.mean(),
        s_mean: s.mean(),
        backend: h.backend,
        nx: d.nx,
        ny: d.ny,
    };
    Ok(OperatorMatrix::from_linearization(lin, source, Exec::default()))
}

/// `Δ_h - k`; with `k = 2` this is the rigidity operator.
pub fn discretize_shifted(h: &ComplexMetric, k: f64) -> Result<OperatorMatrix> {
    let c = h.check_positive();
    if !c.passed {
        return Err(CasError::NotPositive(format!("{} failing nodes", c.failing_nodes)));
    }
    let lin = Linearization::shifted_laplacian(h.clone(), k)?;
    let d = h.domain();
    let source = OperatorSource {
        description: format!("laplacian shifted by {k}"),
        shift: Some(k),
        u_mean: zero(),
        s_mean: zero(),
        backend: h.backend,
        nx: d.nx,
        ny: d.ny,
    };
    Ok(OperatorMatrix::from_linearization(lin, source, Exec::default()))
}

// ---- solvers ----------------------------------------------------------------

enum SolveMode {
    Direct(Factorization),
    Banded(BandedLu),
    Preconditioned(BandedLu),
}

/// Solves with `A` and `Aᴴ`, directly when affordable and otherwise by GMRES
/// preconditioned with a banded second-order discretization.
pub struct Solver {
    a: CsrMatrix,
    mode: SolveMode,
    pub tol: f64,
}

impl Solver {
    /// `low_order` is an optional banded approximation of `a` used as a
    /// preconditioner when a direct factorization is too expensive.
    pub fn new(a: CsrMatrix, low_order: Option<&CsrMatrix>) -> Result<Self> {
        let n = a.n as f64;
        let (kl, ku) = a.bandwidth();
        let banded_cost = n * kl as f64 * (2 * kl + ku + 1) as f64;
        let dense_cost = n * n * n / 3.0;
        let mode = if banded_cost.min(dense_cost) <= DIRECT_BUDGET || low_order.is_none() {
            if banded_cost < dense_cost {
                SolveMode::Banded(a.banded_lu()?)
            } else {
                SolveMode::Direct(Factorization::new(&a.to_dense(), true)?)
            }
        } else {
            SolveMode::Preconditioned(low_order.expect("checked above").banded_lu()?)
        };
        Ok(Solver { a, mode, tol: 1e-12 })
    }

    pub fn from_dense(m: &DMatrix<C64>) -> Result<Self> {
        Self::new(CsrMatrix::from_dense(m), None)
    }

    pub fn is_direct(&self) -> bool {
        !matches!(self.mode, SolveMode::Preconditioned(_))
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.a
    }

    pub fn solve(&self, b: &[C64]) -> Result<Vec<C64>> {
        match &self.mode {
            SolveMode::Direct(f) => Ok(f.solve(b)),
            SolveMode::Banded(lu) => Ok(lu.solve(b)),
            SolveMode::Preconditioned(lu) => {
                let mut x = lu.solve(b);
                let rep = gmres(|v| self.a.matvec(v), |v| lu.solve(v), b, &mut x, self.tol, 80, 2000);
                if rep.converged {
                    Ok(x)
                } else {
                    Err(CasError::NoConvergence { iterations: rep.iterations, residual: rep.relative_residual, contraction: f64::NAN })
                }
            }
        }
    }

    pub fn solve_adjoint(&self, b: &[C64]) -> Result<Vec<C64>> {
        match &self.mode {
            SolveMode::Direct(f) => Ok(f.solve_adjoint(b)),
            SolveMode::Banded(lu) => Ok(lu.solve_adjoint(b)),
            SolveMode::Preconditioned(lu) => {
                let mut x = lu.solve_adjoint(b);
                let rep = gmres(|v| self.a.matvec_adjoint(v), |v| lu.solve_adjoint(v), b, &mut x, self.tol, 80, 2000);
                if rep.converged {
                    Ok(x)
                } else {
                    Err(CasError::NoConvergence { iterations: rep.iterations, residual: rep.relative_residual, contraction: f64::NAN })
                }
            }
        }
    }
}

// ---- eigen- and singular values -------------------------------------------

/// Deterministic, generic starting vector.
fn start_vector(n: usize) -> Vec<C64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    (0..n).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect()
}

/// Largest eigenvalue of a Hermitian positive semidefinite operator by
/// Lanczos with full reorthogonalization.
fn lanczos_max<F>(n: usize, mut apply: F, max_steps: usize, tol: f64) -> Result<(f64, Vec<C64>, bool)>
where
    F: FnMut(&[C64]) -> Result<Vec<C64>>,
{
    let mut q = start_vector(n);
    let q0 = norm(&q);
    q.iter_mut().for_each(|v| *v /= q0);
    let mut basis = vec![q];
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut last = f64::NAN;
    let steps = max_steps.min(n);
    for j in 0..steps {
        let mut w = apply(&basis[j])?;
        let a = dot(&basis[j], &w).re;
        alpha.push(a);
        for _ in 0..2 {
            for b in &basis {
                let c = dot(b, &w);
                w.iter_mut().zip(b).for_each(|(wi, bi)| *wi -= c * bi);
            }
        }
        let bnext = norm(&w);
        let m = alpha.len();
        let t = DMatrix::from_fn(m, m, |r, c| {
            if r == c {
                alpha[r]
            } else if r + 1 == c {
                beta[r]
            } else if c + 1 == r {
                beta[c]
            } else {
                0.0
            }
        });
        let eig = SymmetricEigen::new(t);
        let (imax, theta) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
        let y = eig.eigenvectors.column(imax);
        let bound = bnext * y[m - 1].abs();
        let done = bound <= tol * theta.abs() || bnext <= 1e-300 || j + 1 == steps;
        if done || (j > 3 && (theta - last).abs() <= 1e-3 * tol * theta.abs()) {
            let mut v = vec![zero(); n];
            for (k, b) in basis.iter().enumerate() {
                v.iter_mut().zip(b).for_each(|(vi, bi)| *vi += y[k] * bi);
            }
            let converged = bound <= tol * theta.abs() || bnext <= 1e-300 || (theta - last).abs() <= 1e-3 * tol * theta.abs();
            return Ok((theta, v, converged));
        }
        last = theta;
        beta.push(bnext);
        basis.push(w.iter().map(|v| v / bnext).collect());
    }
    Err(CasError::Eigen("Lanczos produced no Ritz value".into()))
}

/// Smallest singular value and its right singular vector.
pub fn sigma_min_with(solver: &Solver) -> Result<(f64, Vec<C64>)> {
    let n = solver.matrix().n;
    let res = lanczos_max(n, |x| solver.solve_adjoint(&solver.solve(x)?), 120, 1e-11);
    match res {
        Ok((theta, v, _)) => Ok((1.0 / theta.sqrt(), v)),
        Err(e) => Err(e),
    }
}

/// Smallest singular value of a dense matrix; `0` when it is exactly singular.
pub fn sigma_min(m: &DMatrix<C64>) -> Result<(f64, Vec<C64>)> {
    match Solver::from_dense(m) {
        Ok(s) => sigma_min_with(&s),
        Err(CasError::SingularMatrix(_)) => Ok((0.0, vec![zero(); m.nrows()])),
        Err(e) => Err(e),
    }
}

pub fn sigma_max_sparse(a: &CsrMatrix) -> f64 {
    lanczos_max(a.n, |x| Ok(a.matvec_adjoint(&a.matvec(x))), 60, 1e-8)
        .map(|(t, _, _)| t.sqrt())
        .unwrap_or(f64::NAN)
}

pub fn sigma_max(m: &DMatrix<C64>) -> f64 {
    sigma_max_sparse(&CsrMatrix::from_dense(m))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EigenPair {
    pub value: C64,
    pub vector: Vec<C64>,
    /// `|A v - λ v| / |v|`.
    pub residual: f64,
}

fn rayleigh(a: &CsrMatrix, v: &[C64]) -> (C64, f64) {
    let av = a.matvec(v);
    let vv = dot(v, v).re;
    let lam = dot(v, &av) / vv;
    let r: Vec<C64> = av.iter().zip(v).map(|(p, q)| p - lam * q).collect();
    (lam, norm(&r) / vv.sqrt())
}

/// Null vector of `m - θ I` by two steps of inverse iteration.
fn small_eigenvector(m: &DMatrix<C64>, theta: C64) -> Vec<C64> {
    let n = m.nrows();
    let scale = m.iter().map(|v| v.norm()).fold(0.0, f64::max).max(1e-300);
    let mut shifted = m.clone();
    for i in 0..n {
        shifted[(i, i)] -= theta + C64::new(1e-13 * scale, 0.7e-13 * scale);
    }
    let lu = shifted.lu();
    let mut x = nalgebra::DVector::from_vec(start_vector(n));
    for _ in 0..3 {
        match lu.solve(&x) {
            Some(y) => {
                let nrm = y.norm();
                if !(nrm.is_finite() && nrm > 0.0) {
                    break;
                }
                x = y / C64::new(nrm, 0.0);
            }
            None => break,
        }
    }
    x.as_slice().to_vec()
}

/// The `k` eigenvalues of `m` nearest `shift`, with eigenvectors.
pub fn nearest_eigenpairs(m: &DMatrix<C64>, k: usize, shift: C64) -> Result<Vec<EigenPair>> {
    let a = CsrMatrix::from_dense(m);
    if m.nrows() <= DENSE_EIGEN_LIMIT {
        dense_eigenpairs(m, &a, k, shift)
    } else {
        let solver = shifted_solver(&a, None, shift)?;
        arnoldi_eigenpairs(&a, &solver, k, shift)
    }
}

fn dense_eigenpairs(m: &DMatrix<C64>, a: &CsrMatrix, k: usize, shift: C64) -> Result<Vec<EigenPair>> {
    let n = m.nrows();
    let schur = nalgebra::Schur::try_new(m.clone(), 4.0 * f64::EPSILON, 200_000).ok_or_else(|| CasError::Eigen("Schur iteration failed".into()))?;
    let (_, t) = schur.unpack();
    let mut vals: Vec<C64> = (0..n).map(|i| t[(i, i)]).collect();
    vals.sort_by(|x, y| (x - shift).norm().total_cmp(&(y - shift).norm()).then(x.re.total_cmp(&y.re)).then(x.im.total_cmp(&y.im)));
    Ok(vals
        .into_iter()
        .take(k)
        .map(|lam| {
            let v = small_eigenvector(m, lam);
            let (value, residual) = rayleigh(a, &v);
            EigenPair { value, vector: v, residual }
        })
        .collect())
}

fn shifted_solver(a: &CsrMatrix, low_order: Option<&CsrMatrix>, shift: C64) -> Result<Solver> {
    let shifted = |m: &CsrMatrix, s: C64| {
        let mut out = m.clone();
        for i in 0..out.n {
            let mut found = false;
            for p in out.row_ptr[i]..out.row_ptr[i + 1] {
                if out.cols[p] == i {
                    out.vals[p] -= s;
                    found = true;
                }
            }
            debug_assert!(found || s == zero());
        }
        out
    };
    let lo = low_order.map(|l| shifted(l, shift));
    let attempt = Solver::new(shifted(a, shift), lo.as_ref());
    match attempt {
        Err(CasError::SingularMatrix(_)) => {
            // The shift sits on an eigenvalue; step off it slightly.
            let scale = a.vals.iter().map(|v| v.norm()).fold(0.0, f64::max).max(1.0);
            let s2 = shift + C64::new(1e-7 * scale, 0.0);
            let lo = low_order.map(|l| shifted(l, s2));
            Solver::new(shifted(a, s2), lo.as_ref())
        }
        other => other,
    }
}

/// Shift-invert Arnoldi; the shift actually used may be nudged off an
/// exact eigenvalue by [`shifted_solver`], which only changes the
/// convergence rate.
fn arnoldi_eigenpairs(a: &CsrMatrix, solver: &Solver, k: usize, _shift: C64) -> Result<Vec<EigenPair>> {
    let n = a.n;
    let mut m = (2 * k + 20).min(n);
    loop {
        let mut v0 = start_vector(n);
        let nv = norm(&v0);
        v0.iter_mut().for_each(|x| *x /= nv);
        let mut basis = vec![v0];
        let mut h = DMatrix::<C64>::zeros(m + 1, m);
        let mut steps = m;
        for j in 0..m {
            let mut w = solver.solve(&basis[j])?;
            for _ in 0..2 {
                for (i, b) in basis.iter().enumerate() {
                    let c = dot(b, &w);
                    h[(i, j)] += c;
                    w.iter_mut().zip(b).for_each(|(wi, bi)| *wi -= c * bi);
                }
            }
            let wn = norm(&w);
            h[(j + 1, j)] = C64::new(wn, 0.0);
            if wn <= 1e-14 {
                steps = j + 1;
                break;
            }
            basis.push(w.iter().map(|x| x / wn).collect());
        }
        let hm = h.view((0, 0), (steps, steps)).into_owned();
        let schur = nalgebra::Schur::try_new(hm.clone(), 4.0 * f64::EPSILON, 200_000).ok_or_else(|| CasError::Eigen("Schur iteration failed".into()))?;
        let (_, t) = schur.unpack();
        let mut thetas: Vec<C64> = (0..steps).map(|i| t[(i, i)]).collect();
        thetas.sort_by(|x, y| y.norm().total_cmp(&x.norm()).then(x.re.total_cmp(&y.re)));
        let mut out = Vec::new();
        for theta in thetas.into_iter().take(k) {
            let y = small_eigenvector(&hm, theta);
            let mut v = vec![zero(); n];
            for (i, yi) in y.iter().enumerate() {
                v.iter_mut().zip(&basis[i]).for_each(|(vi, bi)| *vi += yi * bi);
            }
            let (value, residual) = rayleigh(a, &v);
            out.push(EigenPair { value, vector: v, residual });
        }
        let worst = out.iter().map(|p| p.residual).fold(0.0, f64::max);
        if worst < 1e-9 || m >= n || m >= 200 {
            out.sort_by(|x, y| x.value.norm().total_cmp(&y.value.norm()));
            return Ok(out);
        }
        m = (2 * m).min(n).min(200);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    /// Eigenvalues nearest zero, ordered by modulus.
    pub eigenvalues: Vec<C64>,
    pub residuals: Vec<f64>,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub condition: f64,
    pub nx: usize,
    pub ny: usize,
    pub dim: usize,
    pub direct: bool,
    /// Every reported eigenpair has residual below `1e-8`.
    pub converged: bool,
    #[serde(skip)]
    pub vectors: Vec<Vec<C64>>,
}

/// The `k` eigenvalues nearest zero (shift-invert) and the extreme singular
/// values of `op`.
pub fn spectrum(op: &OperatorMatrix, k: usize) -> Result<SpectrumReport> {
    let low = op.operator.low_order()?;
    let pairs = if op.dim() <= DENSE_EIGEN_LIMIT {
        dense_eigenpairs(&op.matrix.to_dense(), &op.matrix, k, zero())?
    } else {
        let solver = shifted_solver(&op.matrix, low.as_ref(), zero())?;
        arnoldi_eigenpairs(&op.matrix, &solver, k, zero())?
    };
    let (smin, direct) = match Solver::new(op.matrix.clone(), low.as_ref()) {
        Ok(s) => (sigma_min_with(&s)?.0, s.is_direct()),
        Err(CasError::SingularMatrix(_)) => (0.0, true),
        Err(e) => return Err(e),
    };
    let smax = sigma_max_sparse(&op.matrix);
    let converged = pairs.iter().all(|p| p.residual < 1e-8);
    Ok(SpectrumReport {
        eigenvalues: pairs.iter().map(|p| p.value).collect(),
        residuals: pairs.iter().map(|p| p.residual).collect(),
        sigma_min: smin,
        sigma_max: smax,
        condition: if smin > 0.0 { smax / smin } else { f64::INFINITY },
        nx: op.source.nx,
        ny: op.source.ny,
        dim: op.dim(),
        direct,
        converged,
        vectors: pairs.into_iter().map(|p| p.vector).collect(),
    })
}

/// Smallest singular value only, skipping the eigensolve.
pub fn sigma_min_of(op: &OperatorMatrix) -> Result<f64> {
    let low = op.operator.low_order()?;
    match Solver::new(op.matrix.clone(), low.as_ref()) {
        Ok(s) => Ok(sigma_min_with(&s)?.0),
        Err(CasError::SingularMatrix(_)) => Ok(0.0),
        Err(e) => Err(e),
    }
}

// ---- invertibility scans ----------------------------------------------------

/// Seeded families of window metrics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum MetricFamily {
    /// `λ = exp(a)` for a random real trigonometric `a`, `μ = 0`, on `[0,1]²`.
    Riemannian { amplitude: f64 },
    /// Bers metrics of `(z, z̄ + ε p(z))` for random cubic `p`, on
    /// `[-½,½] × [1,2]` in the upper half plane.
    BersPerturbed { epsilon: f64 },
    /// Riemannian background with a Beltrami bump of size near `sup`;
    /// samples whose bump reaches `|μ| ≥ 1` are not positive.
    Degenerate { sup: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct FamilyParams {
    coeffs: Vec<(f64, f64, f64, f64)>,
    poly: Vec<C64>,
    bump: f64,
}

fn family_params(family: MetricFamily, rng: &mut ChaCha8Rng) -> FamilyParams {
    let coeffs = (0..4)
        .map(|_| {
            (
                rng.random_range(-1.0..1.0),
                rng.random_range(1..3) as f64,
                rng.random_range(1..3) as f64,
                rng.random_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    let poly = (0..3).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
    let bump = match family {
        MetricFamily::Degenerate { sup } => sup * rng.random_range(0.9..1.1),
        _ => 0.0,
    };
    FamilyParams { coeffs, poly, bump }
}

/// Builds the sample metric on an `n x n` window.
pub fn family_metric(family: MetricFamily, index: usize, seed: u64, n: usize) -> Result<ComplexMetric> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let p = family_params(family, &mut rng);
    match family {
        MetricFamily::Riemannian { amplitude } | MetricFamily::Degenerate { sup: amplitude } => {
            let amp = if matches!(family, MetricFamily::Riemannian { .. }) { amplitude } else { 0.3 };
            let d = GridDomain::window(n, 0.0, 1.0, 0.0, 1.0)?;
            let coeffs = p.coeffs.clone();
            let lambda = make_field(&d, move |z| {
                let a: f64 = coeffs
                    .iter()
                    .map(|(c, kx, ky, ph)| c * (std::f64::consts::TAU * (kx * z.re + ky * z.im) + ph).cos())
                    .sum();
                C64::new((amp * a / 2.0).exp(), 0.0)
            })?;
            let bump = p.bump;
            let mu = make_field(&d, move |z| {
                let r2 = (z - C64::new(0.5, 0.5)).norm_sqr();
                C64::new(bump * (-r2 / 0.02).exp(), 0.0)
            })?;
            ComplexMetric::new(lambda, mu, ComplexField::constant(&d, C64::new(1.0, 0.0)), Backend::Fd6Window)
        }
        MetricFamily::BersPerturbed { epsilon } => {
            let d = GridDomain::window(n, -0.5, 0.5, 1.0, 2.0)?;
            let c = p.poly.clone();
            let z0 = C64::new(0.0, 1.5);
            let c2 = c.clone();
            bers_metric_jets(
                &d,
                |z| [z, C64::new(1.0, 0.0)],
                move |z| {
                    let w = z - z0;
                    let val = c[0] * w * w + c[1] * w * w * w + c[2] * w * w * w * w;
                    let der = 2.0 * c2[0] * w + 3.0 * c2[1] * w * w + 4.0 * c2[2] * w * w * w;
                    [z.conj() + epsilon * val, epsilon * der, C64::new(1.0, 0.0)]
                },
                Backend::Fd6Window,
            )
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    /// `σ_min` above the floor and stable under refinement.
    Invertible,
    BelowFloor,
    /// `σ_min` changed by more than the stability tolerance.
    Unstable,
    /// `σ_min / σ_max` at roundoff level.
    NumericalKernel,
    /// The sample metric is not positive.
    Skipped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanSample {
    pub index: usize,
    pub sigma_min_coarse: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub relative_change: f64,
    pub verdict: Verdict,
    pub note: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanSettings {
    pub floor: f64,
    pub shift: f64,
    pub coarse: usize,
    pub fine: usize,
    pub stability: f64,
}

impl Default for ScanSettings {
    fn default() -> Self {
        ScanSettings { floor: 0.5, shift: 2.0, coarse: 24, fine: 48, stability: 0.05 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub family: MetricFamily,
    pub seed: u64,
    pub settings: ScanSettings,
    pub samples: Vec<ScanSample>,
    /// Fraction of non-skipped samples judged invertible at grid scale.
    pub pass_fraction: f64,
    pub skipped: usize,
}

fn scan_one(family: MetricFamily, index: usize, seed: u64, settings: &ScanSettings) -> ScanSample {
    let measure = |n: usize| -> Result<(f64, f64)> {
        let h = family_metric(family, index, seed, n)?;
        let op = discretize_shifted(&h, settings.shift)?;
        Ok((sigma_min_of(&op)?, sigma_max_sparse(&op.matrix)))
    };
    let outcome = measure(settings.coarse).and_then(|c| measure(settings.fine).map(|f| (c, f)));
    match outcome {
        Ok(((sc, _), (sf, smax))) => {
            let change = (sf - sc).abs() / sf.max(f64::MIN_POSITIVE);
            let verdict = if sf <= 1e-12 * smax {
                Verdict::NumericalKernel
            } else if change > settings.stability {
                Verdict::Unstable
            } else if sf < settings.floor {
                Verdict::BelowFloor
            } else {
                Verdict::Invertible
            };
            ScanSample { index, sigma_min_coarse: sc, sigma_min: sf, sigma_max: smax, relative_change: change, verdict, note: String::new() }
        }
        Err(e) => ScanSample {
            index,
            sigma_min_coarse: f64::NAN,
            sigma_min: f64::NAN,
            sigma_max: f64::NAN,
            relative_change: f64::NAN,
            verdict: Verdict::Skipped,
            note: e.to_string(),
        },
    }
}

/// Smallest singular value of `Δ_h - k` for `count` seeded samples, on the
/// coarse and fine grids of `settings`.
pub fn invertibility_scan(family: MetricFamily, count: usize, seed: u64, settings: &ScanSettings, exec: Exec) -> ScanReport {
    let samples = exec.map(count, |i| scan_one(family, i, seed, settings));
    let skipped = samples.iter().filter(|s| s.verdict == Verdict::Skipped).count();
    let judged = samples.len() - skipped;
    let passed = samples.iter().filter(|s| s.verdict == Verdict::Invertible).count();
    ScanReport {
        family,
        seed,
        settings: settings.clone(),
        samples,
        pass_fraction: if judged == 0 { 0.0 } else { passed as f64 / judged as f64 },
        skipped,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::c;

    fn flat_torus(n: usize) -> ComplexMetric {
        let d = GridDomain::square(n, 1.0).unwrap();
        ComplexMetric::conformal(ComplexField::constant(&d, c(1.0, 0.0)), Backend::Spectral).unwrap()
    }

    #[test]
    fn flat_torus_rigidity_operator() {
        let op = discretize_shifted(&flat_torus(8), 2.0).unwrap();
        assert!(op.real && op.hermitian);
        let rep = spectrum(&op, 3).unwrap();
        assert!((rep.eigenvalues[0] - c(-2.0, 0.0)).norm() < 1e-10, "{:?}", rep.eigenvalues);
        assert!((rep.sigma_min - 2.0).abs() < 1e-9);
        let four_pi2 = 4.0 * std::f64::consts::PI.powi(2);
        assert!((rep.eigenvalues[2] - c(-2.0 - four_pi2, 0.0)).norm() < 1e-8 || (rep.eigenvalues[1] - c(-2.0, 0.0)).norm() < 1e-9);
        assert!(rep.converged);
    }

    #[test]
    fn fold_operator_is_numerically_singular() {
        let h = flat_torus(8);
        let d = h.domain();
        let u = ComplexField::constant(&d, c(0.5 * (2.0f64 / 3.0).ln(), 0.0));
        let s = ComplexField::constant(&d, c(-4.0 / 27.0, 0.0));
        let rep = spectrum(&discretize(&h, &u, &s).unwrap(), 1).unwrap();
        assert!(rep.sigma_min < 1e-8);
        assert!(rep.eigenvalues[0].norm() < 1e-10);
    }

    #[test]
    fn lanczos_recovers_extreme_singular_values() {
        let m = DMatrix::from_fn(30, 30, |i, j| {
            if i == j {
                c(1.0 + i as f64, 0.0)
            } else if j == i + 1 {
                c(0.1, 0.05)
            } else {
                c(0.0, 0.0)
            }
        });
        let svd = m.clone().svd(false, false);
        let smin = svd.singular_values.iter().cloned().fold(f64::INFINITY, f64::min);
        let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
        assert!((sigma_min(&m).unwrap().0 - smin).abs() < 1e-10 * smin);
        assert!((sigma_max(&m) - smax).abs() < 1e-8 * smax);
    }

    #[test]
    fn degenerate_samples_are_skipped() {
        let rep = invertibility_scan(
            MetricFamily::Degenerate { sup: 2.0 },
            3,
            1,
            &ScanSettings { coarse: 12, fine: 16, ..Default::default() },
            Exec::Sequential,
        );
        assert_eq!(rep.skipped, 3);
    }
}
