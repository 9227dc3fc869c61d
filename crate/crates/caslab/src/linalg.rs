//! Linear-algebra kernels: restarted GMRES, banded LU and a factorization
//! front end that picks banded or dense storage.

use nalgebra::{DMatrix, DVector};

use crate::error::{CasError, Result};
use crate::grid::C64;

fn zero() -> C64 {
    C64::new(0.0, 0.0)
}

pub fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm(a: &[C64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct GmresReport {
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
}

/// Right-preconditioned restarted GMRES for `A x = b`; `x` holds the initial
/// guess on entry and the solution on exit.
pub fn gmres<A, P>(
    apply: A,
    precond: P,
    b: &[C64],
    x: &mut [C64],
    tol: f64,
    restart: usize,
    max_iter: usize,
) -> GmresReport
where
    A: Fn(&[C64]) -> Vec<C64>,
    P: Fn(&[C64]) -> Vec<C64>,
{
    let n = b.len();
    let bnorm = norm(b).max(f64::MIN_POSITIVE);
    let mut total = 0;
    loop {
        let ax = apply(x);
        let r: Vec<C64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let beta = norm(&r);
        if beta / bnorm <= tol || total >= max_iter {
            return GmresReport { iterations: total, relative_residual: beta / bnorm, converged: beta / bnorm <= tol };
        }
        let m = restart.max(1);
        let mut v: Vec<Vec<C64>> = vec![r.iter().map(|ri| ri / beta).collect()];
        let mut z: Vec<Vec<C64>> = Vec::with_capacity(m);
        let mut h = vec![vec![zero(); m]; m + 1];
        let mut cs = vec![0.0; m];
        let mut sn = vec![zero(); m];
        let mut g = vec![zero(); m + 1];
        g[0] = C64::new(beta, 0.0);
        let mut used = 0;
        for j in 0..m {
            let zj = precond(&v[j]);
            let mut w = apply(&zj);
            z.push(zj);
            for i in 0..=j {
                let hij = dot(&v[i], &w);
                h[i][j] = hij;
                for (wk, vk) in w.iter_mut().zip(&v[i]) {
                    *wk -= hij * vk;
                }
            }
            let wn = norm(&w);
            h[j + 1][j] = C64::new(wn, 0.0);
            for i in 0..j {
                let (a, bb) = (h[i][j], h[i + 1][j]);
                h[i][j] = cs[i] * a + sn[i] * bb;
                h[i + 1][j] = -sn[i].conj() * a + cs[i] * bb;
            }
            let (a, bb) = (h[j][j], h[j + 1][j]);
            let r = (a.norm_sqr() + bb.norm_sqr()).sqrt();
            if r == 0.0 {
                cs[j] = 1.0;
                sn[j] = zero();
            } else if a.norm() == 0.0 {
                cs[j] = 0.0;
                sn[j] = bb.conj() / r;
            } else {
                cs[j] = a.norm() / r;
                sn[j] = (a / a.norm()) * bb.conj() / r;
            }
            h[j][j] = cs[j] * a + sn[j] * bb;
            h[j + 1][j] = zero();
            g[j + 1] = -sn[j].conj() * g[j];
            g[j] *= cs[j];
            used = j + 1;
            total += 1;
            if g[j + 1].norm() / bnorm <= tol || wn == 0.0 || total >= max_iter {
                break;
            }
            v.push(w.iter().map(|wk| wk / wn).collect());
        }
        let mut y = vec![zero(); used];
        for i in (0..used).rev() {
            let mut s = g[i];
            for k in i + 1..used {
                s -= h[i][k] * y[k];
            }
            y[i] = s / h[i][i];
        }
        for (k, yk) in y.iter().enumerate() {
            for (xi, zi) in x.iter_mut().zip(&z[k]) {
                *xi += yk * zi;
            }
        }
        let _ = n;
    }
}

/// Lower and upper bandwidths of a square matrix.
pub fn bandwidth(m: &DMatrix<C64>) -> (usize, usize) {
    let n = m.nrows();
    let (mut kl, mut ku) = (0, 0);
    for j in 0..n {
        for i in 0..n {
            if m[(i, j)] != zero() {
                if i > j {
                    kl = kl.max(i - j);
                } else {
                    ku = ku.max(j - i);
                }
            }
        }
    }
    (kl, ku)
}

/// LU factorization with partial pivoting for banded matrices.
///
/// Row `i` keeps columns `i - kl ..= i + kl + ku`; the extra `kl` upper
/// diagonals receive fill-in from row interchanges.
#[derive(Clone, Debug)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    ab: Vec<C64>,
    piv: Vec<usize>,
}

impl BandedLu {
    pub fn factor(m: &DMatrix<C64>, kl: usize, ku: usize) -> Result<Self> {
        let n = m.nrows();
        let entries = (0..n).flat_map(|i| {
            let lo = i.saturating_sub(kl);
            let hi = (i + ku).min(n - 1);
            (lo..=hi).map(move |j| (i, j, m[(i, j)]))
        });
        Self::from_entries(n, kl, ku, entries)
    }

    /// Factors a matrix given by its entries inside the band; entries
    /// outside the band are an error.
    pub fn from_entries<I>(n: usize, kl: usize, ku: usize, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, C64)>,
    {
        let width = 2 * kl + ku + 1;
        let mut ab = vec![zero(); n * width];
        for (i, j, v) in entries {
            if j + kl < i || j > i + ku {
                return Err(CasError::Invalid(format!("entry ({i}, {j}) outside the band")));
            }
            ab[i * width + (j + kl - i)] += v;
        }
        let mut lu = BandedLu { n, kl, ku, width, ab, piv: vec![0; n] };
        lu.eliminate()?;
        Ok(lu)
    }

    fn idx(&self, i: usize, j: usize) -> usize {
        i * self.width + (j + self.kl - i)
    }

    fn eliminate(&mut self) -> Result<()> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let mut scale: f64 = 0.0;
        for v in &self.ab {
            scale = scale.max(v.norm());
        }
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = self.ab[self.idx(k, k)].norm();
            for i in k + 1..=last {
                let v = self.ab[self.idx(i, k)].norm();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best <= 1e-300 || best <= scale * 1e-15 * f64::EPSILON {
                return Err(CasError::SingularMatrix(best));
            }
            self.piv[k] = p;
            let jmax = (k + ku + kl).min(n - 1);
            if p != k {
                for j in k..=jmax {
                    let (a, b) = (self.idx(k, j), self.idx(p, j));
                    self.ab.swap(a, b);
                }
            }
            let pivot = self.ab[self.idx(k, k)];
            let len = jmax - k;
            let k1 = self.idx(k, k + 1);
            let (head, tail) = self.ab.split_at_mut((k + 1) * self.width);
            let pivot_row = &head[k1..k1 + len];
            for i in k + 1..=last {
                // Row i starts at offset (i - k - 1) * width in `tail`.
                let base = (i - k - 1) * self.width;
                let ik = base + (k + kl - i);
                let l = tail[ik] / pivot;
                tail[ik] = l;
                if l == zero() {
                    continue;
                }
                let row = &mut tail[ik + 1..ik + 1 + len];
                for (x, &p) in row.iter_mut().zip(pivot_row) {
                    *x -= l * p;
                }
            }
        }
        Ok(())
    }

    pub fn solve(&self, b: &[C64]) -> Vec<C64> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let mut x = b.to_vec();
        for k in 0..n {
            x.swap(k, self.piv[k]);
            let xk = x[k];
            for i in k + 1..=(k + kl).min(n - 1) {
                x[i] -= self.ab[self.idx(i, k)] * xk;
            }
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in i + 1..=(i + ku + kl).min(n - 1) {
                s -= self.ab[self.idx(i, j)] * x[j];
            }
            x[i] = s / self.ab[self.idx(i, i)];
        }
        x
    }

    /// Solves `Aᴴ x = b`.
    pub fn solve_adjoint(&self, b: &[C64]) -> Vec<C64> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for j in i.saturating_sub(ku + kl)..i {
                s -= self.ab[self.idx(j, i)].conj() * y[j];
            }
            y[i] = s / self.ab[self.idx(i, i)].conj();
        }
        for k in (0..n).rev() {
            let mut s = zero();
            for i in k + 1..=(k + kl).min(n - 1) {
                s += self.ab[self.idx(i, k)].conj() * y[i];
            }
            y[k] -= s;
            y.swap(k, self.piv[k]);
        }
        y
    }
}

/// A factorized square matrix supporting solves with `A` and `Aᴴ`.
pub enum Factorization {
    Banded(BandedLu),
    Dense {
        lu: nalgebra::LU<C64, nalgebra::Dyn, nalgebra::Dyn>,
        lu_adj: Option<nalgebra::LU<C64, nalgebra::Dyn, nalgebra::Dyn>>,
    },
}

impl Factorization {
    /// Chooses banded storage when it is cheaper than a dense LU.
    pub fn new(m: &DMatrix<C64>, with_adjoint: bool) -> Result<Self> {
        let n = m.nrows();
        let (kl, ku) = bandwidth(m);
        if 3 * kl * (2 * kl + ku + 1) < n * n {
            return Ok(Factorization::Banded(BandedLu::factor(m, kl, ku)?));
        }
        let lu = m.clone().lu();
        let det_scale = (0..n).fold(f64::INFINITY, |acc, i| acc.min(lu.u()[(i, i)].norm()));
        if !(det_scale > 0.0) {
            return Err(CasError::SingularMatrix(det_scale));
        }
        let lu_adj = if with_adjoint { Some(m.adjoint().lu()) } else { None };
        Ok(Factorization::Dense { lu, lu_adj })
    }

    pub fn solve(&self, b: &[C64]) -> Vec<C64> {
        match self {
            Factorization::Banded(lu) => lu.solve(b),
            Factorization::Dense { lu, .. } => {
                let v = DVector::from_column_slice(b);
                lu.solve(&v).map(|x| x.as_slice().to_vec()).unwrap_or_else(|| vec![C64::new(f64::NAN, 0.0); b.len()])
            }
        }
    }

    pub fn solve_adjoint(&self, b: &[C64]) -> Vec<C64> {
        match self {
            Factorization::Banded(lu) => lu.solve_adjoint(b),
            Factorization::Dense { lu_adj, .. } => {
                let v = DVector::from_column_slice(b);
                lu_adj
                    .as_ref()
                    .and_then(|lu| lu.solve(&v))
                    .map(|x| x.as_slice().to_vec())
                    .unwrap_or_else(|| vec![C64::new(f64::NAN, 0.0); b.len()])
            }
        }
    }
}

/// Compressed sparse row matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<C64>,
}

impl CsrMatrix {
    /// Builds the matrix from sparse columns `(row, value)`.
    pub fn from_columns(n: usize, columns: &[Vec<(usize, C64)>]) -> Self {
        let mut counts = vec![0usize; n + 1];
        for col in columns {
            for &(r, _) in col {
                counts[r + 1] += 1;
            }
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let row_ptr = counts.clone();
        let nnz = row_ptr[n];
        let mut cols = vec![0; nnz];
        let mut vals = vec![zero(); nnz];
        let mut fill = counts;
        for (c, col) in columns.iter().enumerate() {
            for &(r, v) in col {
                cols[fill[r]] = c;
                vals[fill[r]] = v;
                fill[r] += 1;
            }
        }
        CsrMatrix { n, row_ptr, cols, vals }
    }

    pub fn from_dense(m: &DMatrix<C64>) -> Self {
        let n = m.nrows();
        let columns: Vec<Vec<(usize, C64)>> = (0..n)
            .map(|c| (0..n).filter(|&r| m[(r, c)] != zero()).map(|r| (r, m[(r, c)])).collect())
            .collect();
        Self::from_columns(n, &columns)
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, C64)> + '_ {
        (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |p| (self.cols[p], self.vals[p]))
    }

    pub fn matvec(&self, x: &[C64]) -> Vec<C64> {
        (0..self.n).map(|i| self.row(i).map(|(j, v)| v * x[j]).sum()).collect()
    }

    /// `Aᴴ x`.
    pub fn matvec_adjoint(&self, x: &[C64]) -> Vec<C64> {
        let mut y = vec![zero(); self.n];
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                y[j] += v.conj() * x[i];
            }
        }
        y
    }

    pub fn bandwidth(&self) -> (usize, usize) {
        let (mut kl, mut ku) = (0, 0);
        for i in 0..self.n {
            for (j, _) in self.row(i) {
                if i > j {
                    kl = kl.max(i - j);
                } else {
                    ku = ku.max(j - i);
                }
            }
        }
        (kl, ku)
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                m[(i, j)] += v;
            }
        }
        m
    }

    pub fn banded_lu(&self) -> Result<BandedLu> {
        let (kl, ku) = self.bandwidth();
        BandedLu::from_entries(self.n, kl, ku, (0..self.n).flat_map(|i| self.row(i).map(move |(j, v)| (i, j, v))))
    }
}

/// Dense matrix-vector product.
pub fn matvec(m: &DMatrix<C64>, x: &[C64]) -> Vec<C64> {
    let v = DVector::from_column_slice(x);
    (m * v).as_slice().to_vec()
}
