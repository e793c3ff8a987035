//! Sparse linear algebra and implicit time stepping shared by every solver.
//!
//! Two operator representations are provided: a general compressed-row
//! matrix and a matrix-free five-point stencil on a structured grid. Both
//! implement [`LinearOperator`], which is all the Krylov solvers need.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use thiserror::Error;

mod multigrid;
pub use multigrid::{Multigrid, Stencil9, SymStencil5};

/// Default relative residual tolerance for every linear solve.
pub const DEFAULT_TOL: f64 = 1e-10;

/// Rows below this count are processed sequentially.
const PAR_THRESHOLD: usize = 1 << 15;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("dimension mismatch: operator has {expected} rows, vector has {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("zero diagonal entry in row {row}")]
    ZeroDiagonal { row: usize },
    #[error("no convergence after {} iterations (relative residual {:.3e})", .stats.iterations, .stats.residual)]
    NotConverged { best: Vec<f64>, stats: SolveStats },
    #[error("Krylov breakdown at iteration {iteration}")]
    Breakdown { iteration: usize, best: Vec<f64> },
    #[error("time step must be positive, got {0}")]
    InvalidTimeStep(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    /// Final relative residual `|Ax - b| / |b|`.
    pub residual: f64,
    pub wall_time: Duration,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    /// `None` means `10 * n`.
    pub max_iter: Option<usize>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: DEFAULT_TOL, max_iter: None }
    }
}

impl SolverOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self { tol, max_iter: None }
    }

    fn max_iter_for(&self, n: usize) -> usize {
        self.max_iter.unwrap_or(10 * n.max(1))
    }
}

pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
    fn diagonal(&self) -> Vec<f64>;
    /// Whether the operator is known to be symmetric. Used to pick CG over BiCGStab.
    fn is_symmetric(&self) -> bool {
        false
    }
}

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
    symmetric: bool,
}

impl CsrMatrix {
    /// Builds a matrix from (row, col, value) triplets. Duplicates are summed.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for &(i, j, v) in triplets {
            assert!(i < n && j < n, "triplet ({i}, {j}) outside {n}x{n}");
            rows[i].push((j, v));
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(j, _)| j);
            let mut last: Option<usize> = None;
            for (j, v) in row {
                if last == Some(j) {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(j);
                    values.push(v);
                    last = Some(j);
                }
            }
            row_ptr.push(col_idx.len());
        }
        let mut m = Self { n, row_ptr, col_idx, values, symmetric: false };
        m.symmetric = m.check_symmetric(1e-14);
        m
    }

    pub fn identity(n: usize) -> Self {
        let t: Vec<_> = (0..n).map(|i| (i, i, 1.0)).collect();
        Self::from_triplets(n, &t)
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        let t: Vec<_> = d.iter().enumerate().map(|(i, &v)| (i, i, v)).collect();
        Self::from_triplets(d.len(), &t)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    /// Symmetry check with a relative tolerance on each entry pair.
    pub fn check_symmetric(&self, rel_tol: f64) -> bool {
        (0..self.n).all(|i| {
            self.row(i).all(|(j, v)| {
                let w = self.get(j, i);
                (v - w).abs() <= rel_tol * v.abs().max(w.abs()).max(f64::MIN_POSITIVE)
            })
        })
    }

    /// Whether the sparsity pattern is structurally symmetric.
    pub fn pattern_symmetric(&self) -> bool {
        (0..self.n).all(|i| {
            self.row(i)
                .all(|(j, _)| self.col_idx[self.row_ptr[j]..self.row_ptr[j + 1]].contains(&i))
        })
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).map(|(_, v)| v).sum()).collect()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for (i, row) in d.iter_mut().enumerate() {
            for (j, v) in self.row(i) {
                row[j] += v;
            }
        }
        d
    }
}

impl LinearOperator for CsrMatrix {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let kernel = |(i, yi): (usize, &mut f64)| {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            *yi = acc;
        };
        if self.n >= PAR_THRESHOLD {
            y.par_iter_mut().enumerate().for_each(kernel);
        } else {
            y.iter_mut().enumerate().for_each(kernel);
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    fn is_symmetric(&self) -> bool {
        self.symmetric
    }
}

/// A matrix together with its right-hand side.
#[derive(Debug, Clone)]
pub struct SparseSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
}

impl SparseSystem {
    pub fn new(matrix: CsrMatrix, rhs: Vec<f64>) -> Result<Self, SolveError> {
        if matrix.dim() != rhs.len() {
            return Err(SolveError::DimensionMismatch { expected: matrix.dim(), found: rhs.len() });
        }
        Ok(Self { matrix, rhs })
    }

    pub fn dim(&self) -> usize {
        self.rhs.len()
    }

    pub fn cg(&self, opts: SolverOptions) -> Result<(Vec<f64>, SolveStats), SolveError> {
        cg_solve(&self.matrix, &self.rhs, None, opts)
    }

    pub fn bicgstab(&self, opts: SolverOptions) -> Result<(Vec<f64>, SolveStats), SolveError> {
        bicgstab_solve(&self.matrix, &self.rhs, None, opts)
    }
}

/// Five-point operator on an `nx * ny` structured grid, row-major with x fastest.
///
/// Couplings that would leave the grid must be zero; they are never read.
#[derive(Debug, Clone)]
pub struct Stencil5 {
    pub nx: usize,
    pub ny: usize,
    pub diag: Vec<f64>,
    pub west: Vec<f64>,
    pub east: Vec<f64>,
    pub south: Vec<f64>,
    pub north: Vec<f64>,
    pub symmetric: bool,
}

impl Stencil5 {
    pub fn zeros(nx: usize, ny: usize) -> Self {
        let n = nx * ny;
        Self {
            nx,
            ny,
            diag: vec![0.0; n],
            west: vec![0.0; n],
            east: vec![0.0; n],
            south: vec![0.0; n],
            north: vec![0.0; n],
            symmetric: true,
        }
    }

    /// Adds `coef * (u_i - u_j)` to row `i` and, when `both`, `coef * (u_j - u_i)` to row `j`.
    /// `j` must be the east or north neighbour of `i`.
    pub fn add_edge(&mut self, i: usize, j: usize, coef_i: f64, coef_j: f64) {
        self.diag[i] += coef_i;
        self.diag[j] += coef_j;
        if j == i + 1 {
            self.east[i] -= coef_i;
            self.west[j] -= coef_j;
        } else if j == i + self.nx {
            self.north[i] -= coef_i;
            self.south[j] -= coef_j;
        } else {
            panic!("add_edge: {j} is not the east or north neighbour of {i}");
        }
    }

    /// Replaces row `i` by the identity row. Couplings from neighbouring rows are left alone.
    pub fn pin_row(&mut self, i: usize) {
        self.diag[i] = 1.0;
        self.west[i] = 0.0;
        self.east[i] = 0.0;
        self.south[i] = 0.0;
        self.north[i] = 0.0;
    }

    /// Row sums, useful to check conservation of assembled operators.
    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.diag.len())
            .map(|i| self.diag[i] + self.west[i] + self.east[i] + self.south[i] + self.north[i])
            .collect()
    }

    pub fn to_csr(&self) -> CsrMatrix {
        let mut t = Vec::with_capacity(5 * self.diag.len());
        for i in 0..self.diag.len() {
            t.push((i, i, self.diag[i]));
            if self.west[i] != 0.0 {
                t.push((i, i - 1, self.west[i]));
            }
            if self.east[i] != 0.0 {
                t.push((i, i + 1, self.east[i]));
            }
            if self.south[i] != 0.0 {
                t.push((i, i - self.nx, self.south[i]));
            }
            if self.north[i] != 0.0 {
                t.push((i, i + self.nx, self.north[i]));
            }
        }
        CsrMatrix::from_triplets(self.diag.len(), &t)
    }

    fn apply_row_block(&self, x: &[f64], y: &mut [f64], row: usize) {
        let nx = self.nx;
        let base = row * nx;
        for (c, yi) in y.iter_mut().enumerate() {
            let i = base + c;
            let mut acc = self.diag[i] * x[i];
            if c > 0 {
                acc += self.west[i] * x[i - 1];
            }
            if c + 1 < nx {
                acc += self.east[i] * x[i + 1];
            }
            if row > 0 {
                acc += self.south[i] * x[i - nx];
            }
            if row + 1 < self.ny {
                acc += self.north[i] * x[i + nx];
            }
            *yi = acc;
        }
    }
}

impl LinearOperator for Stencil5 {
    fn dim(&self) -> usize {
        self.nx * self.ny
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        if self.dim() >= PAR_THRESHOLD {
            y.par_chunks_mut(self.nx)
                .enumerate()
                .for_each(|(row, yr)| self.apply_row_block(x, yr, row));
        } else {
            y.chunks_mut(self.nx)
                .enumerate()
                .for_each(|(row, yr)| self.apply_row_block(x, yr, row));
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        self.diag.clone()
    }

    fn is_symmetric(&self) -> bool {
        self.symmetric
    }
}

/// `mass + dt * A` without forming the sum.
pub struct ShiftedOperator<'a, A: LinearOperator> {
    pub mass: &'a [f64],
    pub op: &'a A,
    pub dt: f64,
}

impl<A: LinearOperator> LinearOperator for ShiftedOperator<'_, A> {
    fn dim(&self) -> usize {
        self.op.dim()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.op.apply(x, y);
        for ((yi, &m), &xi) in y.iter_mut().zip(self.mass).zip(x) {
            *yi = m * xi + self.dt * *yi;
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        self.op
            .diagonal()
            .into_iter()
            .zip(self.mass)
            .map(|(d, &m)| m + self.dt * d)
            .collect()
    }

    fn is_symmetric(&self) -> bool {
        self.op.is_symmetric()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Fixed summation order keeps results independent of thread count.
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn inverse_diagonal<A: LinearOperator + ?Sized>(a: &A) -> Result<Vec<f64>, SolveError> {
    a.diagonal()
        .into_iter()
        .enumerate()
        .map(|(row, d)| if d == 0.0 { Err(SolveError::ZeroDiagonal { row }) } else { Ok(1.0 / d) })
        .collect()
}

fn check_dims<A: LinearOperator + ?Sized>(
    a: &A,
    b: &[f64],
    x0: Option<&[f64]>,
) -> Result<(), SolveError> {
    let n = a.dim();
    if b.len() != n {
        return Err(SolveError::DimensionMismatch { expected: n, found: b.len() });
    }
    if let Some(x0) = x0 {
        if x0.len() != n {
            return Err(SolveError::DimensionMismatch { expected: n, found: x0.len() });
        }
    }
    Ok(())
}

/// Approximate inverse applied inside the Krylov loops.
pub trait Preconditioner: Sync {
    fn precondition(&self, r: &[f64], z: &mut [f64]);
}

#[derive(Debug, Clone)]
pub struct Jacobi {
    inv_diag: Vec<f64>,
}

impl Jacobi {
    pub fn new<A: LinearOperator + ?Sized>(a: &A) -> Result<Self, SolveError> {
        Ok(Self { inv_diag: inverse_diagonal(a)? })
    }
}

impl Preconditioner for Jacobi {
    fn precondition(&self, r: &[f64], z: &mut [f64]) {
        z.iter_mut().zip(r).zip(&self.inv_diag).for_each(|((zi, ri), di)| *zi = ri * di);
    }
}

/// Jacobi-preconditioned conjugate gradients.
pub fn cg_solve<A: LinearOperator + ?Sized>(
    a: &A,
    b: &[f64],
    x0: Option<&[f64]>,
    opts: SolverOptions,
) -> Result<(Vec<f64>, SolveStats), SolveError> {
    cg_solve_observed(a, b, x0, opts, |_, _| {})
}

/// As [`cg_solve`], calling `observer(iteration, x)` after every update.
pub fn cg_solve_observed<A, F>(
    a: &A,
    b: &[f64],
    x0: Option<&[f64]>,
    opts: SolverOptions,
    observer: F,
) -> Result<(Vec<f64>, SolveStats), SolveError>
where
    A: LinearOperator + ?Sized,
    F: FnMut(usize, &[f64]),
{
    check_dims(a, b, x0)?;
    let jacobi = Jacobi::new(a)?;
    pcg_solve_observed(a, b, x0, &jacobi, opts, observer)
}

/// Conjugate gradients with a caller-supplied symmetric preconditioner.
pub fn pcg_solve<A, P>(
    a: &A,
    b: &[f64],
    x0: Option<&[f64]>,
    precond: &P,
    opts: SolverOptions,
) -> Result<(Vec<f64>, SolveStats), SolveError>
where
    A: LinearOperator + ?Sized,
    P: Preconditioner + ?Sized,
{
    pcg_solve_observed(a, b, x0, precond, opts, |_, _| {})
}

pub fn pcg_solve_observed<A, P, F>(
    a: &A,
    b: &[f64],
    x0: Option<&[f64]>,
    precond: &P,
    opts: SolverOptions,
    mut observer: F,
) -> Result<(Vec<f64>, SolveStats), SolveError>
where
    A: LinearOperator + ?Sized,
    P: Preconditioner + ?Sized,
    F: FnMut(usize, &[f64]),
{
    let start = Instant::now();
    check_dims(a, b, x0)?;
    let n = a.dim();
    let max_iter = opts.max_iter_for(n);
    let b_norm = norm(b);
    let mut x = x0.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    if b_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        let stats = SolveStats { iterations: 0, residual: 0.0, wall_time: start.elapsed() };
        return Ok((x, stats));
    }

    let mut r = vec![0.0; n];
    a.apply(&x, &mut r);
    r.iter_mut().zip(b).for_each(|(ri, &bi)| *ri = bi - *ri);
    let mut res = norm(&r) / b_norm;
    let mut z = vec![0.0; n];
    precond.precondition(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut it = 0;

    while res > opts.tol && it < max_iter {
        a.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap.is_finite()) || pap <= 0.0 {
            return Err(SolveError::Breakdown { iteration: it, best: x });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        precond.precondition(&r, &mut z);
        it += 1;
        observer(it, &x);
        let (rz_new, rr) =
            r.iter().zip(&z).fold((0.0, 0.0), |(a, b), (ri, zi)| (a + ri * zi, b + ri * ri));
        res = rr.sqrt() / b_norm;
        if res <= opts.tol {
            // Guard against drift of the recursive residual.
            a.apply(&x, &mut ap);
            let true_res = ap.iter().zip(b).map(|(v, bi)| (bi - v) * (bi - v)).sum::<f64>().sqrt()
                / b_norm;
            if true_res <= opts.tol {
                res = true_res;
                break;
            }
            r.iter_mut().zip(b).zip(&ap).for_each(|((ri, bi), v)| *ri = bi - v);
            precond.precondition(&r, &mut z);
            p.copy_from_slice(&z);
            rz = dot(&r, &z);
            res = true_res;
            continue;
        }
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }

    let stats = SolveStats { iterations: it, residual: res, wall_time: start.elapsed() };
    if res > opts.tol {
        return Err(SolveError::NotConverged { best: x, stats });
    }
    Ok((x, stats))
}

/// Jacobi-preconditioned BiCGStab for nonsymmetric systems.
pub fn bicgstab_solve<A: LinearOperator + ?Sized>(
    a: &A,
    b: &[f64],
    x0: Option<&[f64]>,
    opts: SolverOptions,
) -> Result<(Vec<f64>, SolveStats), SolveError> {
    check_dims(a, b, x0)?;
    let jacobi = Jacobi::new(a)?;
    pbicgstab_solve(a, b, x0, &jacobi, opts)
}

/// BiCGStab with right preconditioning by `precond`.
pub fn pbicgstab_solve<A, P>(
    a: &A,
    b: &[f64],
    x0: Option<&[f64]>,
    precond: &P,
    opts: SolverOptions,
) -> Result<(Vec<f64>, SolveStats), SolveError>
where
    A: LinearOperator + ?Sized,
    P: Preconditioner + ?Sized,
{
    let start = Instant::now();
    check_dims(a, b, x0)?;
    let n = a.dim();
    let max_iter = opts.max_iter_for(n);
    let b_norm = norm(b);
    let mut x = x0.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    if b_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        let stats = SolveStats { iterations: 0, residual: 0.0, wall_time: start.elapsed() };
        return Ok((x, stats));
    }

    let mut r = vec![0.0; n];
    a.apply(&x, &mut r);
    r.iter_mut().zip(b).for_each(|(ri, &bi)| *ri = bi - *ri);
    let r_hat = r.clone();
    let mut res = norm(&r) / b_norm;
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut zs = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut it = 0;

    while res > opts.tol && it < max_iter {
        let rho_new = dot(&r_hat, &r);
        if rho_new == 0.0 || omega == 0.0 {
            return Err(SolveError::Breakdown { iteration: it, best: x });
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        precond.precondition(&p, &mut y);
        a.apply(&y, &mut v);
        let rv = dot(&r_hat, &v);
        if rv == 0.0 || !rv.is_finite() {
            return Err(SolveError::Breakdown { iteration: it, best: x });
        }
        alpha = rho / rv;
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        it += 1;
        if norm(&s) / b_norm <= opts.tol {
            for i in 0..n {
                x[i] += alpha * y[i];
            }
            break;
        }
        precond.precondition(&s, &mut zs);
        a.apply(&zs, &mut t);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += alpha * y[i] + omega * zs[i];
            r[i] = s[i] - omega * t[i];
        }
        res = norm(&r) / b_norm;
    }

    // Confirm with the true residual.
    a.apply(&x, &mut t);
    let true_res =
        t.iter().zip(b).map(|(v, bi)| (bi - v) * (bi - v)).sum::<f64>().sqrt() / b_norm;
    let stats = SolveStats { iterations: it, residual: true_res, wall_time: start.elapsed() };
    if true_res > opts.tol {
        return Err(SolveError::NotConverged { best: x, stats });
    }
    Ok((x, stats))
}

/// Picks CG for symmetric operators and BiCGStab otherwise.
pub fn solve_auto<A: LinearOperator + ?Sized>(
    a: &A,
    b: &[f64],
    x0: Option<&[f64]>,
    opts: SolverOptions,
) -> Result<(Vec<f64>, SolveStats), SolveError> {
    if a.is_symmetric() {
        cg_solve(a, b, x0, opts)
    } else {
        bicgstab_solve(a, b, x0, opts)
    }
}

/// One backward Euler step: solves `(M + dt A) w = M state + dt forcing`.
///
/// `guess` seeds the Krylov iteration; `state` is used when absent.
pub fn implicit_euler_step<A: LinearOperator>(
    mass: &[f64],
    stiffness: &A,
    state: &[f64],
    forcing: Option<&[f64]>,
    dt: f64,
    guess: Option<&[f64]>,
    opts: SolverOptions,
) -> Result<(Vec<f64>, SolveStats), SolveError> {
    if !(dt > 0.0) {
        return Err(SolveError::InvalidTimeStep(dt));
    }
    let n = stiffness.dim();
    for len in [mass.len(), state.len()] {
        if len != n {
            return Err(SolveError::DimensionMismatch { expected: n, found: len });
        }
    }
    let mut rhs: Vec<f64> = mass.iter().zip(state).map(|(m, s)| m * s).collect();
    if let Some(f) = forcing {
        if f.len() != n {
            return Err(SolveError::DimensionMismatch { expected: n, found: f.len() });
        }
        rhs.iter_mut().zip(f).for_each(|(r, fi)| *r += dt * fi);
    }
    let op = ShiftedOperator { mass, op: stiffness, dt };
    solve_auto(&op, &rhs, Some(guess.unwrap_or(state)), opts)
}

/// Dense Gaussian elimination with partial pivoting. Small systems and test oracles only.
pub fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col] == 0.0 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f != 0.0 {
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

/// Solves a tridiagonal system in place (Thomas algorithm). `lower[0]` and `upper[n-1]` are ignored.
pub fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &mut [f64]) {
    let n = diag.len();
    if n == 0 {
        return;
    }
    let mut c = vec![0.0; n];
    let mut denom = diag[0];
    c[0] = upper[0] / denom;
    rhs[0] /= denom;
    for i in 1..n {
        denom = diag[i] - lower[i] * c[i - 1];
        c[i] = if i + 1 < n { upper[i] / denom } else { 0.0 };
        rhs[i] = (rhs[i] - lower[i] * rhs[i - 1]) / denom;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= c[i] * rhs[i + 1];
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn poisson_1d(n: usize, h: f64) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0 / (h * h)));
            if i > 0 {
                t.push((i, i - 1, -1.0 / (h * h)));
            }
            if i + 1 < n {
                t.push((i, i + 1, -1.0 / (h * h)));
            }
        }
        CsrMatrix::from_triplets(n, &t)
    }

    #[test]
    fn identity_converges_in_one_iteration() {
        let a = CsrMatrix::identity(5);
        let b = vec![1.0, -2.0, 3.0, 0.5, 7.0];
        let (x, stats) = cg_solve(&a, &b, None, SolverOptions::default()).unwrap();
        assert_eq!(x, b);
        assert_eq!(stats.iterations, 1);
    }

    #[test]
    fn diagonal_by_hand() {
        let a = CsrMatrix::from_diagonal(&[2.0, 4.0]);
        let (x, _) = cg_solve(&a, &[2.0, 4.0], None, SolverOptions::default()).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn poisson_1d_second_order() {
        // -u'' = pi^2 sin(pi x) on (0,1), u = sin(pi x).
        let n = 63;
        let h = 1.0 / (n as f64 + 1.0);
        let a = poisson_1d(n, h);
        let pi = std::f64::consts::PI;
        let xs: Vec<f64> = (1..=n).map(|i| i as f64 * h).collect();
        let b: Vec<f64> = xs.iter().map(|x| pi * pi * (pi * x).sin()).collect();
        let (u, stats) = cg_solve(&a, &b, None, SolverOptions::default()).unwrap();
        assert!(stats.residual <= 1e-10);
        let err = u.iter().zip(&xs).map(|(u, x)| (u - (pi * x).sin()).abs()).fold(0.0, f64::max);
        // Truncation error of the 3-point Laplacian: pi^4 h^2 / 12 * max|u| = 8.1 h^2.
        assert!(err <= 8.2 * h * h, "err {err}");
    }

    fn upwind_advection_diffusion(n: usize) -> CsrMatrix {
        let h = 1.0 / (n as f64 + 1.0);
        let (d, q) = (0.05, 1.0);
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0 * d / (h * h) + q / h));
            if i > 0 {
                t.push((i, i - 1, -d / (h * h) - q / h));
            }
            if i + 1 < n {
                t.push((i, i + 1, -d / (h * h)));
            }
        }
        CsrMatrix::from_triplets(n, &t)
    }

    #[test]
    fn bicgstab_upwind_residual() {
        let a = upwind_advection_diffusion(32);
        assert!(!a.is_symmetric());
        let b: Vec<f64> = (0..32).map(|i| 1.0 + (i as f64 * 0.3).sin()).collect();
        let (x, stats) = bicgstab_solve(&a, &b, None, SolverOptions::default()).unwrap();
        let mut ax = vec![0.0; 32];
        a.apply(&x, &mut ax);
        let res = norm(&ax.iter().zip(&b).map(|(u, v)| u - v).collect::<Vec<_>>()) / norm(&b);
        assert!(res <= 1e-10 && stats.residual <= 1e-10);
    }

    #[test]
    fn bicgstab_matches_cg_on_symmetric() {
        let a = poisson_1d(40, 0.1);
        let b: Vec<f64> = (0..40).map(|i| (i as f64).cos()).collect();
        let (x1, _) = cg_solve(&a, &b, None, SolverOptions::default()).unwrap();
        let (x2, _) = bicgstab_solve(&a, &b, None, SolverOptions::default()).unwrap();
        let scale = x1.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (u, v) in x1.iter().zip(&x2) {
            assert!((u - v).abs() <= 1e-8 * scale);
        }
    }

    #[test]
    fn zero_row_is_rejected() {
        let a = CsrMatrix::from_triplets(3, &[(0, 0, 1.0), (2, 2, 1.0), (0, 2, 0.5)]);
        let err = bicgstab_solve(&a, &[1.0, 1.0, 1.0], None, SolverOptions::default());
        assert!(matches!(err, Err(SolveError::ZeroDiagonal { row: 1 })));
        let err = cg_solve(&a, &[1.0, 1.0, 1.0], None, SolverOptions::default());
        assert!(matches!(err, Err(SolveError::ZeroDiagonal { row: 1 })));
    }

    #[test]
    fn non_convergence_reports_best_iterate() {
        let a = poisson_1d(50, 0.02);
        let b = vec![1.0; 50];
        let opts = SolverOptions { tol: 1e-14, max_iter: Some(3) };
        match cg_solve(&a, &b, None, opts) {
            Err(SolveError::NotConverged { best, stats }) => {
                assert_eq!(best.len(), 50);
                assert_eq!(stats.iterations, 3);
            }
            other => panic!("expected NotConverged, got {other:?}"),
        }
    }

    #[test]
    fn euler_with_zero_operator_is_identity() {
        let a = CsrMatrix::from_triplets(3, &[(0, 0, 0.0), (1, 1, 0.0), (2, 2, 0.0)]);
        // Zero stiffness still has the mass on the diagonal of the shifted system.
        let state = [0.3, -1.0, 2.0];
        let (w, _) =
            implicit_euler_step(&[1.0; 3], &a, &state, None, 0.1, None, SolverOptions::default())
                .unwrap();
        assert_eq!(w, state);
    }

    #[test]
    fn euler_scalar_decay_closed_form() {
        let lambda = 3.0;
        let dt = 0.2;
        let a = CsrMatrix::from_diagonal(&[lambda]);
        let (w, _) =
            implicit_euler_step(&[1.0], &a, &[1.0], None, dt, None, SolverOptions::with_tol(1e-14))
                .unwrap();
        assert!((w[0] - 1.0 / (1.0 + lambda * dt)).abs() < 1e-15);
    }

    #[test]
    fn euler_rejects_nonpositive_dt() {
        let a = CsrMatrix::identity(2);
        let r = implicit_euler_step(&[1.0; 2], &a, &[1.0; 2], None, 0.0, None, Default::default());
        assert!(matches!(r, Err(SolveError::InvalidTimeStep(_))));
    }

    #[test]
    fn neumann_heat_keeps_constants() {
        let n = 32;
        let mut st = Stencil5::zeros(n, n);
        for j in 0..n {
            for i in 0..n {
                let k = j * n + i;
                if i + 1 < n {
                    st.add_edge(k, k + 1, 1.0, 1.0);
                }
                if j + 1 < n {
                    st.add_edge(k, k + n, 1.0, 1.0);
                }
            }
        }
        let state = vec![0.75; n * n];
        let (w, _) = implicit_euler_step(
            &vec![1.0; n * n],
            &st,
            &state,
            None,
            0.5,
            None,
            SolverOptions::default(),
        )
        .unwrap();
        assert!(w.iter().all(|v| (v - 0.75).abs() < 1e-12));
    }

    #[test]
    fn stencil_matches_csr() {
        let n = 7;
        let mut st = Stencil5::zeros(n, n);
        for k in 0..n * n {
            st.diag[k] += 0.1 * k as f64;
            if k % n + 1 < n {
                st.add_edge(k, k + 1, 1.0 + k as f64 * 0.01, 2.0);
            }
            if k / n + 1 < n {
                st.add_edge(k, k + n, 0.5, 0.25);
            }
        }
        let csr = st.to_csr();
        let x: Vec<f64> = (0..n * n).map(|i| (i as f64).sin()).collect();
        let (mut y1, mut y2) = (vec![0.0; n * n], vec![0.0; n * n]);
        st.apply(&x, &mut y1);
        csr.apply(&x, &mut y2);
        for (a, b) in y1.iter().zip(&y2) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn tridiagonal_matches_dense() {
        let lower = [0.0, -1.0, -2.0, -0.5];
        let diag = [4.0, 5.0, 6.0, 3.0];
        let upper = [-1.0, -1.5, -0.5, 0.0];
        let b = vec![1.0, 2.0, 3.0, 4.0];
        let mut dense = vec![vec![0.0; 4]; 4];
        for i in 0..4 {
            dense[i][i] = diag[i];
            if i > 0 {
                dense[i][i - 1] = lower[i];
            }
            if i < 3 {
                dense[i][i + 1] = upper[i];
            }
        }
        let want = dense_solve(dense, b.clone()).unwrap();
        let mut got = b;
        solve_tridiagonal(&lower, &diag, &upper, &mut got);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
