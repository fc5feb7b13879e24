//! Sparse symmetric systems: CSR storage, preconditioned conjugate gradients,
//! the Thomas algorithm, and a small dense solver for matching conditions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 50_000;

/// Row-compressed square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    /// 32-bit to halve index traffic in the memory-bound products.
    cols: Vec<u32>,
    vals: Vec<f64>,
}

/// Accumulates `(row, col, value)` contributions; duplicates are summed.
#[derive(Debug, Clone, Default)]
pub struct TripletBuilder {
    n: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl TripletBuilder {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            entries: Vec::new(),
        }
    }

    pub fn with_capacity(n: usize, capacity: usize) -> Self {
        Self {
            n,
            entries: Vec::with_capacity(capacity),
        }
    }

    pub fn add(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.n && col < self.n);
        self.entries.push((row, col, value));
    }

    pub fn build(mut self) -> SparseMatrix {
        // stable sort keeps summation order deterministic
        self.entries.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; self.n + 1];
        let mut cols = Vec::with_capacity(self.entries.len());
        let mut vals: Vec<f64> = Vec::with_capacity(self.entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in self.entries {
            if last == Some((r, c)) {
                *vals.last_mut().expect("entry exists") += v;
            } else {
                cols.push(u32::try_from(c).expect("matrix dimension fits in u32"));
                vals.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..self.n {
            row_ptr[r + 1] += row_ptr[r];
        }
        SparseMatrix {
            n: self.n,
            row_ptr,
            cols,
            vals,
        }
    }
}

impl SparseMatrix {
    pub fn identity(n: usize) -> Self {
        Self::from_diagonal(&vec![1.0; n])
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        Self {
            n: d.len(),
            row_ptr: (0..=d.len()).collect(),
            cols: (0..d.len() as u32).collect(),
            vals: d.to_vec(),
        }
    }

    pub fn from_dense(rows: &[Vec<f64>]) -> Self {
        let mut b = TripletBuilder::new(rows.len());
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    b.add(i, j, v);
                }
            }
        }
        b.build()
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[span.clone()].iter().map(|&c| c as usize).zip(self.vals[span].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        self.mul_vec_dot(x, y);
    }

    /// `y = A x`, returning `x . y` from the same pass.
    pub fn mul_vec_dot(&self, x: &[f64], y: &mut [f64]) -> f64 {
        assert!(x.len() == self.n && y.len() == self.n, "dimension mismatch in product");
        let mut acc = 0.0;
        for (i, (yi, w)) in y.iter_mut().zip(self.row_ptr.windows(2)).enumerate() {
            let (cols, vals) = (&self.cols[w[0]..w[1]], &self.vals[w[0]..w[1]]);
            let mut sum = 0.0;
            for (&c, &v) in cols.iter().zip(vals) {
                sum += v * x[c as usize];
            }
            *yi = sum;
            acc += x[i] * sum;
        }
        acc
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// `x^T A x`.
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        dot(x, &self.mul_vec(x))
    }

    pub fn max_abs(&self) -> f64 {
        self.vals.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `max |A_ij - A_ji| / max |A_ij|`.
    pub fn symmetry_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        let scale = self.max_abs();
        if scale == 0.0 {
            0.0
        } else {
            worst / scale
        }
    }

    /// Positive diagonal strictly larger than the off-diagonal row sum.
    pub fn is_strictly_diagonally_dominant(&self) -> bool {
        (0..self.n).all(|i| {
            let mut diag = 0.0;
            let mut off = 0.0;
            for (j, v) in self.row(i) {
                if j == i {
                    diag += v;
                } else {
                    off += v.abs();
                }
            }
            diag > 0.0 && diag > off
        })
    }

    /// Tridiagonal view, if the matrix has bandwidth one.
    pub fn to_tridiagonal(&self) -> Option<Tridiagonal> {
        let n = self.n;
        let mut t = Tridiagonal {
            lower: vec![0.0; n.saturating_sub(1)],
            diag: vec![0.0; n],
            upper: vec![0.0; n.saturating_sub(1)],
        };
        for i in 0..n {
            for (j, v) in self.row(i) {
                if j == i {
                    t.diag[i] = v;
                } else if j + 1 == i {
                    t.lower[j] = v;
                } else if j == i + 1 {
                    t.upper[i] = v;
                } else if v != 0.0 {
                    return None;
                }
            }
        }
        Some(t)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Outcome of an iterative solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    /// `||A x - b|| / ||b||`, recomputed from scratch on exit.
    pub relative_residual: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preconditioner {
    None,
    Jacobi,
}

#[derive(Debug, Clone, Copy)]
pub struct CgOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub preconditioner: Preconditioner,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            preconditioner: Preconditioner::Jacobi,
        }
    }
}

impl CgOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }
}

fn true_residual(a: &SparseMatrix, x: &[f64], b: &[f64], r: &mut [f64]) -> f64 {
    a.mul_vec_into(x, r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    norm2(r)
}

/// Preconditioned conjugate gradients from a zero initial guess.
///
/// On failure the best iterate travels inside [`Error::NotConverged`].
pub fn cg_solve(a: &SparseMatrix, b: &[f64], opts: &CgOptions) -> Result<(Vec<f64>, SolveReport)> {
    let n = a.dim();
    if b.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: b.len(),
        });
    }
    let b_norm = norm2(b);
    if !b_norm.is_finite() {
        return Err(Error::Invalid("right-hand side is not finite".into()));
    }
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        let report = SolveReport {
            iterations: 0,
            relative_residual: 0.0,
            converged: true,
        };
        return Ok((x, report));
    }
    let inv_diag: Vec<f64> = match opts.preconditioner {
        Preconditioner::Jacobi => a
            .diagonal()
            .iter()
            .map(|&d| if d != 0.0 { 1.0 / d } else { 1.0 })
            .collect(),
        Preconditioner::None => vec![1.0; n],
    };
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut rr = dot(&r, &r);
    let mut iterations = 0;

    // the vector updates are fused into as few passes as possible; the
    // iteration is memory bound on large grids
    while iterations < opts.max_iter {
        if rr.sqrt() / b_norm <= opts.tol {
            if true_residual(a, &x, b, &mut r) / b_norm <= opts.tol {
                break;
            }
            // recurrence drifted: restart from the true residual
            for i in 0..n {
                z[i] = r[i] * inv_diag[i];
            }
            p.copy_from_slice(&z);
            rz = dot(&r, &z);
        }
        let pap = a.mul_vec_dot(&p, &mut ap);
        if !(pap > 0.0) {
            break;
        }
        let step = rz / pap;
        let mut rz_next = 0.0;
        rr = 0.0;
        for i in 0..n {
            x[i] += step * p[i];
            let ri = r[i] - step * ap[i];
            let zi = ri * inv_diag[i];
            r[i] = ri;
            z[i] = zi;
            rz_next += ri * zi;
            rr += ri * ri;
        }
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        iterations += 1;
    }

    let mut scratch = vec![0.0; n];
    let rel = true_residual(a, &x, b, &mut scratch) / b_norm;
    let report = SolveReport {
        iterations,
        relative_residual: rel,
        converged: rel <= opts.tol,
    };
    if report.converged {
        Ok((x, report))
    } else {
        Err(Error::NotConverged {
            solution: x,
            report,
        })
    }
}

/// Tridiagonal matrix; `lower[i]` couples rows `i + 1` and `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiagonal {
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Tridiagonal {
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.diag.len();
        (0..n)
            .map(|i| {
                let mut v = self.diag[i] * x[i];
                if i > 0 {
                    v += self.lower[i - 1] * x[i - 1];
                }
                if i + 1 < n {
                    v += self.upper[i] * x[i + 1];
                }
                v
            })
            .collect()
    }

    pub fn to_sparse(&self) -> SparseMatrix {
        let n = self.diag.len();
        let mut b = TripletBuilder::with_capacity(n, 3 * n);
        for i in 0..n {
            if i > 0 {
                b.add(i, i - 1, self.lower[i - 1]);
            }
            b.add(i, i, self.diag[i]);
            if i + 1 < n {
                b.add(i, i + 1, self.upper[i]);
            }
        }
        b.build()
    }
}

pub fn thomas_solve(tri: &Tridiagonal, b: &[f64]) -> Result<Vec<f64>> {
    let n = tri.diag.len();
    if b.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: b.len(),
        });
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut pivot = tri.diag[0];
    if pivot == 0.0 {
        return Err(Error::ZeroPivot { row: 0 });
    }
    c[0] = if n > 1 { tri.upper[0] / pivot } else { 0.0 };
    d[0] = b[0] / pivot;
    for i in 1..n {
        pivot = tri.diag[i] - tri.lower[i - 1] * c[i - 1];
        if pivot == 0.0 || !pivot.is_finite() {
            return Err(Error::ZeroPivot { row: i });
        }
        if i + 1 < n {
            c[i] = tri.upper[i] / pivot;
        }
        d[i] = (b[i] - tri.lower[i - 1] * d[i - 1]) / pivot;
    }
    for i in (0..n - 1).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    Ok(d)
}

/// Elimination for a tridiagonal M-matrix described by its off-diagonals and
/// the row excess `a_ii - sum_j |a_ij| >= 0`.
///
/// Every pivot is a sum of nonnegative terms, so nothing cancels and the
/// solution stays accurate componentwise when the matrix is badly conditioned
/// (fine grids with a small zeroth-order term). The diagonal of `tri` is
/// ignored.
pub fn thomas_solve_excess(tri: &Tridiagonal, excess: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    let n = tri.diag.len();
    for len in [excess.len(), b.len()] {
        if len != n {
            return Err(Error::DimensionMismatch { expected: n, found: len });
        }
    }
    if tri.lower.iter().chain(&tri.upper).any(|&v| v > 0.0) || excess.iter().any(|&s| s < 0.0) {
        return Err(Error::Invalid("excess elimination needs an M-matrix with nonnegative excess".into()));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let upper = |i: usize| if i + 1 < n { -tri.upper[i] } else { 0.0 };
    let mut pivot = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut reduced = excess[0];
    pivot[0] = upper(0) + reduced;
    y[0] = b[0];
    for i in 0..n {
        if i > 0 {
            let lower = -tri.lower[i - 1];
            let ratio = lower / pivot[i - 1];
            reduced = excess[i] + ratio * reduced;
            pivot[i] = upper(i) + reduced;
            y[i] = b[i] + ratio * y[i - 1];
        }
        if pivot[i] == 0.0 || !pivot[i].is_finite() {
            return Err(Error::ZeroPivot { row: i });
        }
    }
    let mut x = vec![0.0; n];
    x[n - 1] = y[n - 1] / pivot[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = (y[i] + upper(i) * x[i + 1]) / pivot[i];
    }
    Ok(x)
}

/// Gaussian elimination with partial pivoting on a small dense system.
pub fn dense_solve(matrix: &[Vec<f64>], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = rhs.len();
    if matrix.len() != n || matrix.iter().any(|r| r.len() != n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: matrix.len(),
        });
    }
    let mut a: Vec<Vec<f64>> = matrix.to_vec();
    let mut b = rhs.to_vec();
    let scale = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("non-empty range");
        if a[pivot_row][col].abs() <= 1e-14 * scale {
            return Err(Error::ZeroPivot { row: col });
        }
        a.swap(col, pivot_row);
        b.swap(col, pivot_row);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    Ok(x)
}
