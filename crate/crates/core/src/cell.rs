//! Periodic cell problems for a disc of radius `r` in the unit cell.
//!
//! The cell is sampled by an `n x n` periodic node grid `y_k = -1/2 + k/n`,
//! so the disc centre is a node and `k -> n - k` is a reflection. Nodes with
//! `|y| < r` are solid. Each corrector `M_j` is the finite-volume solution of
//! `-div(grad M_j + e_j) = 0` on the pore nodes, with zero conductance on
//! every face touching the solid. The effective tensor is
//! `D_ij = D_h sum_faces h^2 (delta_ij + dM_j/h)` over direction-`i` faces
//! joining two pore nodes.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::numerics::{cg_solve, CsrMatrix, SolveError, SolverOptions};

#[derive(Debug, Error)]
pub enum CellError {
    #[error("radius {0} is outside [0, 1/2)")]
    BadRadius(f64),
    #[error("cell resolution n = {0} must be even and at least 32")]
    BadResolution(usize),
    #[error("radii must be strictly increasing")]
    Unsorted,
    #[error("need at least 4 radii for cubic interpolation, got {0}")]
    TooFewSamples(usize),
    #[error("radius {0} outside the tabulated range [{1}, {2}]")]
    OutOfTable(f64, f64, f64),
    #[error("no cell solution for radius {0}")]
    MissingRadius(f64),
    #[error("cell solve for r = {r}: {source}")]
    Solve { r: f64, source: SolveError },
    #[error("malformed table: {0}")]
    Parse(String),
}

pub type Tensor = [[f64; 2]; 2];

#[derive(Debug, Clone)]
pub struct CellSolution {
    pub r: f64,
    pub n: usize,
    pub d_h: f64,
    /// `true` on pore nodes (the high phase `Y`).
    pub pore: Vec<bool>,
    /// `M_1`, `M_2` on the node grid; zero on solid nodes.
    pub m: [Vec<f64>; 2],
    pub tensor: Tensor,
    pub iterations: [usize; 2],
}

pub fn node_y(n: usize, k: usize) -> f64 {
    -0.5 + k as f64 / n as f64
}

fn pore_mask(r: f64, n: usize) -> Vec<bool> {
    (0..n * n)
        .map(|p| {
            let (a, b) = (node_y(n, p % n), node_y(n, p / n));
            a.hypot(b) >= r
        })
        .collect()
}

#[inline]
fn neighbour(n: usize, p: usize, dir: usize, forward: bool) -> usize {
    let (a, b) = (p % n, p / n);
    match (dir, forward) {
        (0, true) => b * n + (a + 1) % n,
        (0, false) => b * n + (a + n - 1) % n,
        (1, true) => ((b + 1) % n) * n + a,
        _ => ((b + n - 1) % n) * n + a,
    }
}

/// Solves both cell problems.
pub fn solve_cell(r: f64, n: usize, d_h: f64) -> Result<CellSolution, CellError> {
    solve_cell_with(r, n, d_h, SolverOptions::default())
}

pub fn solve_cell_with(r: f64, n: usize, d_h: f64, opts: SolverOptions) -> Result<CellSolution, CellError> {
    if !(0.0..0.5).contains(&r) {
        return Err(CellError::BadRadius(r));
    }
    if n < 32 || n % 2 != 0 {
        return Err(CellError::BadResolution(n));
    }
    let h = 1.0 / n as f64;
    let pore = pore_mask(r, n);
    // Pore nodes with at least one pore neighbour are unknowns.
    let mut slot = vec![usize::MAX; n * n];
    let mut nodes = Vec::new();
    for p in 0..n * n {
        if pore[p] && (0..4).any(|k| pore[neighbour(n, p, k / 2, k % 2 == 0)]) {
            slot[p] = nodes.len();
            nodes.push(p);
        }
    }
    let mut triplets = Vec::with_capacity(5 * nodes.len());
    for (row, &p) in nodes.iter().enumerate() {
        let mut deg = 0.0;
        for k in 0..4 {
            let q = neighbour(n, p, k / 2, k % 2 == 0);
            if pore[q] {
                deg += 1.0;
                triplets.push((row, slot[q], -1.0));
            }
        }
        triplets.push((row, row, deg));
    }
    let a = CsrMatrix::from_triplets(nodes.len(), &triplets);

    let mut m = [vec![0.0; n * n], vec![0.0; n * n]];
    let mut iterations = [0; 2];
    for j in 0..2 {
        let b: Vec<f64> = nodes
            .iter()
            .map(|&p| {
                let plus = pore[neighbour(n, p, j, true)] as i32;
                let minus = pore[neighbour(n, p, j, false)] as i32;
                h * (plus - minus) as f64
            })
            .collect();
        let (x, stats) = cg_solve(&a, &b, None, opts).map_err(|source| CellError::Solve { r, source })?;
        iterations[j] = stats.iterations;
        let mean = x.iter().sum::<f64>() / x.len().max(1) as f64;
        for (&p, v) in nodes.iter().zip(x) {
            m[j][p] = v - mean;
        }
    }
    let mut sol = CellSolution { r, n, d_h, pore, m, tensor: [[0.0; 2]; 2], iterations };
    sol.tensor = sol.compute_tensor();
    Ok(sol)
}

impl CellSolution {
    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Continuum porosity `1 - pi r^2`.
    pub fn theta(&self) -> f64 {
        1.0 - PI * self.r * self.r
    }

    /// Discrete porosity: pore nodes times `h^2`.
    pub fn theta_h(&self) -> f64 {
        self.pore.iter().filter(|&&p| p).count() as f64 * self.h() * self.h()
    }

    pub fn is_pore(&self, p: usize) -> bool {
        self.pore[p]
    }

    /// Whether the face from `p` towards `+e_dir` joins two pore nodes.
    pub fn open_face(&self, p: usize, dir: usize) -> bool {
        self.pore[p] && self.pore[neighbour(self.n, p, dir, true)]
    }

    /// `dM_j / dy_dir` on the face from `p` towards `+e_dir`.
    pub fn face_gradient(&self, j: usize, p: usize, dir: usize) -> f64 {
        let q = neighbour(self.n, p, dir, true);
        (self.m[j][q] - self.m[j][p]) * self.n as f64
    }

    pub fn neighbour(&self, p: usize, dir: usize, forward: bool) -> usize {
        neighbour(self.n, p, dir, forward)
    }

    fn compute_tensor(&self) -> Tensor {
        let h2 = self.h() * self.h();
        let mut d = [[0.0; 2]; 2];
        for (i, row) in d.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                let delta = if i == j { 1.0 } else { 0.0 };
                let s: f64 = (0..self.n * self.n)
                    .filter(|&p| self.open_face(p, i))
                    .map(|p| h2 * (delta + self.face_gradient(j, p, i)))
                    .sum();
                *v = self.d_h * s;
            }
        }
        d
    }

    /// `sum_faces h^2 |e_j + grad w|^2` over open faces, the quantity `M_j` minimises.
    pub fn energy(&self, j: usize, w: &[f64]) -> f64 {
        let (n, h) = (self.n, self.h());
        let mut e = 0.0;
        for dir in 0..2 {
            for p in 0..n * n {
                if self.open_face(p, dir) {
                    let q = neighbour(n, p, dir, true);
                    let g = (w[q] - w[p]) / h + if dir == j { 1.0 } else { 0.0 };
                    e += h * h * g * g;
                }
            }
        }
        e
    }

    /// Mean of `M_j` over the pore nodes.
    pub fn mean(&self, j: usize) -> f64 {
        let (s, c) = (0..self.n * self.n)
            .filter(|&p| self.pore[p])
            .fold((0.0, 0usize), |(s, c), p| (s + self.m[j][p], c + 1));
        if c == 0 {
            0.0
        } else {
            s / c as f64
        }
    }

    /// Largest violation of `M_1` odd in `y_1` and even in `y_2` (and the
    /// transposed pattern for `M_2`).
    pub fn symmetry_residual(&self) -> f64 {
        let n = self.n;
        let mut worst: f64 = 0.0;
        for b in 0..n {
            for a in 0..n {
                let p = b * n + a;
                let fa = b * n + (n - a) % n;
                let fb = ((n - b) % n) * n + a;
                worst = worst
                    .max((self.m[0][p] + self.m[0][fa]).abs())
                    .max((self.m[0][p] - self.m[0][fb]).abs())
                    .max((self.m[1][p] + self.m[1][fb]).abs())
                    .max((self.m[1][p] - self.m[1][fa]).abs());
            }
        }
        worst
    }

    /// Largest finite-volume residual `|sum_faces flux|` on pore nodes, in
    /// units of `h` (a flux through one face of length `h`).
    pub fn fv_residual(&self) -> f64 {
        let (n, h) = (self.n, self.h());
        let mut worst: f64 = 0.0;
        for j in 0..2 {
            for p in 0..n * n {
                if !self.pore[p] {
                    continue;
                }
                let mut s = 0.0;
                for dir in 0..2 {
                    let e = if dir == j { 1.0 } else { 0.0 };
                    let qp = neighbour(n, p, dir, true);
                    let qm = neighbour(n, p, dir, false);
                    if self.pore[qp] {
                        s += h * ((self.m[j][qp] - self.m[j][p]) / h + e);
                    }
                    if self.pore[qm] {
                        s += h * ((self.m[j][qm] - self.m[j][p]) / h - e);
                    }
                }
                worst = worst.max(s.abs());
            }
        }
        worst
    }

    /// Seam check: the equations at nodes next to the periodic seam, with
    /// their neighbours taken from the opposite edge, hold to this residual.
    pub fn periodicity_residual(&self) -> f64 {
        let (n, h) = (self.n, self.h());
        let mut worst: f64 = 0.0;
        for j in 0..2 {
            for k in 0..n {
                for p in [k, (n - 1) * n + k, k * n, k * n + n - 1] {
                    if !self.pore[p] {
                        continue;
                    }
                    let mut s = 0.0;
                    for dir in 0..2 {
                        let e = if dir == j { 1.0 } else { 0.0 };
                        for (fwd, sign) in [(true, 1.0), (false, -1.0)] {
                            let q = neighbour(n, p, dir, fwd);
                            if self.pore[q] {
                                s += h * ((self.m[j][q] - self.m[j][p]) / h + sign * e);
                            }
                        }
                    }
                    worst = worst.max(s.abs());
                }
            }
        }
        worst
    }

    /// Node index for cell coordinates that sit exactly on the grid.
    pub fn node_at(&self, y: [f64; 2]) -> Option<usize> {
        let n = self.n as f64;
        let a = (y[0] + 0.5) * n;
        let b = (y[1] + 0.5) * n;
        let (ra, rb) = (a.round(), b.round());
        if (a - ra).abs() > 1e-9 || (b - rb).abs() > 1e-9 {
            return None;
        }
        let wrap = |v: f64| (v as i64).rem_euclid(self.n as i64) as usize;
        Some(wrap(rb) * self.n + wrap(ra))
    }

    /// `M(y)` by periodic bilinear interpolation; solid nodes contribute zero.
    pub fn value(&self, y: [f64; 2]) -> [f64; 2] {
        if let Some(p) = self.node_at(y) {
            return [self.m[0][p], self.m[1][p]];
        }
        let n = self.n;
        let a = (y[0] + 0.5) * n as f64;
        let b = (y[1] + 0.5) * n as f64;
        let (fa, fb) = (a.floor(), b.floor());
        let (ta, tb) = (a - fa, b - fb);
        let wrap = |v: i64| v.rem_euclid(n as i64) as usize;
        let (a0, b0) = (wrap(fa as i64), wrap(fb as i64));
        let (a1, b1) = ((a0 + 1) % n, (b0 + 1) % n);
        let mut out = [0.0; 2];
        for (j, o) in out.iter_mut().enumerate() {
            let v = |aa: usize, bb: usize| self.m[j][bb * n + aa];
            *o = (1.0 - tb) * ((1.0 - ta) * v(a0, b0) + ta * v(a1, b0))
                + tb * ((1.0 - ta) * v(a0, b1) + ta * v(a1, b1));
        }
        out
    }
}

/// Monotone piecewise cubic Hermite interpolation (Fritsch-Carlson).
#[derive(Debug, Clone)]
struct Pchip {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

impl Pchip {
    fn new(x: &[f64], y: &[f64]) -> Self {
        let n = x.len();
        let hs: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let del: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / hs[k]).collect();
        let mut d = vec![0.0; n];
        for k in 1..n - 1 {
            if del[k - 1] * del[k] > 0.0 {
                let w1 = 2.0 * hs[k] + hs[k - 1];
                let w2 = hs[k] + 2.0 * hs[k - 1];
                d[k] = (w1 + w2) / (w1 / del[k - 1] + w2 / del[k]);
            }
        }
        let end = |h0: f64, h1: f64, d0: f64, d1: f64| {
            let v = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
            if v * d0 <= 0.0 {
                0.0
            } else if d0 * d1 <= 0.0 && v.abs() > 3.0 * d0.abs() {
                3.0 * d0
            } else {
                v
            }
        };
        d[0] = end(hs[0], hs[1], del[0], del[1]);
        d[n - 1] = end(hs[n - 2], hs[n - 3], del[n - 2], del[n - 3]);
        Self { x: x.to_vec(), y: y.to_vec(), d }
    }

    fn eval(&self, t: f64) -> f64 {
        let n = self.x.len();
        let k = match self.x.binary_search_by(|v| v.total_cmp(&t)) {
            Ok(k) => return self.y[k],
            Err(k) => k.clamp(1, n - 1) - 1,
        };
        let h = self.x[k + 1] - self.x[k];
        let s = (t - self.x[k]) / h;
        let (s2, s3) = (s * s, s * s * s);
        (2.0 * s3 - 3.0 * s2 + 1.0) * self.y[k]
            + (s3 - 2.0 * s2 + s) * h * self.d[k]
            + (-2.0 * s3 + 3.0 * s2) * self.y[k + 1]
            + (s3 - s2) * h * self.d[k + 1]
    }
}

/// Porosity and effective tensor tabulated in the radius.
#[derive(Debug, Clone)]
pub struct EffectiveTable {
    pub n: usize,
    pub d_h: f64,
    pub radii: Vec<f64>,
    pub theta: Vec<f64>,
    pub tensors: Vec<Tensor>,
    interp: [Pchip; 4],
}

impl EffectiveTable {
    pub fn from_samples(n: usize, d_h: f64, radii: Vec<f64>, tensors: Vec<Tensor>) -> Result<Self, CellError> {
        if radii.len() < 4 {
            return Err(CellError::TooFewSamples(radii.len()));
        }
        if radii.windows(2).any(|w| w[1] <= w[0]) {
            return Err(CellError::Unsorted);
        }
        if let Some(&r) = radii.iter().find(|r| !(0.0..0.5).contains(*r)) {
            return Err(CellError::BadRadius(r));
        }
        let theta = radii.iter().map(|r| 1.0 - PI * r * r).collect();
        let comp = |i: usize, j: usize| -> Vec<f64> { tensors.iter().map(|t| t[i][j]).collect() };
        let interp = [
            Pchip::new(&radii, &comp(0, 0)),
            Pchip::new(&radii, &comp(0, 1)),
            Pchip::new(&radii, &comp(1, 0)),
            Pchip::new(&radii, &comp(1, 1)),
        ];
        Ok(Self { n, d_h, radii, theta, tensors, interp })
    }

    fn check(&self, r: f64) -> Result<(), CellError> {
        let (lo, hi) = (self.radii[0], self.radii[self.radii.len() - 1]);
        if r < lo - 1e-12 || r > hi + 1e-12 {
            return Err(CellError::OutOfTable(r, lo, hi));
        }
        Ok(())
    }

    pub fn theta(&self, r: f64) -> Result<f64, CellError> {
        self.check(r)?;
        Ok(1.0 - PI * r * r)
    }

    pub fn tensor(&self, r: f64) -> Result<Tensor, CellError> {
        self.check(r)?;
        let v = |k: usize| self.interp[k].eval(r);
        Ok([[v(0), v(1)], [v(2), v(3)]])
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("# n={} D_h={}\nr,theta,D11,D12,D21,D22\n", self.n, self.d_h);
        for (k, r) in self.radii.iter().enumerate() {
            let t = self.tensors[k];
            s.push_str(&format!(
                "{r:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}\n",
                self.theta[k], t[0][0], t[0][1], t[1][0], t[1][1]
            ));
        }
        s
    }

    /// Parses [`to_csv`](Self::to_csv) output; other `#` lines are ignored.
    pub fn from_csv(text: &str) -> Result<Self, CellError> {
        let err = |m: String| CellError::Parse(m);
        let mut n = None;
        let mut d_h = None;
        let mut radii = Vec::new();
        let mut tensors = Vec::new();
        let mut saw_header = false;
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                for tok in rest.split_whitespace() {
                    if let Some(v) = tok.strip_prefix("n=") {
                        n = v.parse().ok();
                    } else if let Some(v) = tok.strip_prefix("D_h=") {
                        d_h = v.parse().ok();
                    }
                }
                continue;
            }
            if !saw_header {
                if line != "r,theta,D11,D12,D21,D22" {
                    return Err(err(format!("line {}: unexpected header {line:?}", ln + 1)));
                }
                saw_header = true;
                continue;
            }
            let v: Vec<f64> = line
                .split(',')
                .map(|t| t.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| err(format!("line {}: {e}", ln + 1)))?;
            if v.len() != 6 {
                return Err(err(format!("line {}: expected 6 columns", ln + 1)));
            }
            radii.push(v[0]);
            tensors.push([[v[2], v[3]], [v[4], v[5]]]);
        }
        let n = n.ok_or_else(|| err("missing n in header".into()))?;
        let d_h = d_h.ok_or_else(|| err("missing D_h in header".into()))?;
        Self::from_samples(n, d_h, radii, tensors)
    }
}

/// Solves every radius (concurrently) and tabulates the results.
pub fn build_table(radii: &[f64], n: usize, d_h: f64) -> Result<EffectiveTable, CellError> {
    if radii.len() < 4 {
        return Err(CellError::TooFewSamples(radii.len()));
    }
    if radii.windows(2).any(|w| w[1] <= w[0]) {
        return Err(CellError::Unsorted);
    }
    let sols: Vec<CellSolution> =
        radii.par_iter().map(|&r| solve_cell(r, n, d_h)).collect::<Result<_, _>>()?;
    EffectiveTable::from_samples(n, d_h, radii.to_vec(), sols.iter().map(|s| s.tensor).collect())
}

/// Cell solutions keyed by radius, for reconstructing `M(x, x/eps)`.
#[derive(Debug, Clone, Default)]
pub struct CellLibrary {
    solutions: BTreeMap<u64, Arc<CellSolution>>,
}

impl CellLibrary {
    /// Solves the distinct radii in `radii` at resolution `n`.
    pub fn build(radii: &[f64], n: usize, d_h: f64) -> Result<Self, CellError> {
        let mut distinct: Vec<f64> = radii.to_vec();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        let sols: Vec<CellSolution> =
            distinct.par_iter().map(|&r| solve_cell(r, n, d_h)).collect::<Result<_, _>>()?;
        let mut lib = Self::default();
        for s in sols {
            lib.insert(s);
        }
        Ok(lib)
    }

    pub fn insert(&mut self, sol: CellSolution) {
        self.solutions.insert(sol.r.to_bits(), Arc::new(sol));
    }

    pub fn get(&self, r: f64) -> Result<&CellSolution, CellError> {
        self.solutions.get(&r.to_bits()).map(|a| a.as_ref()).ok_or(CellError::MissingRadius(r))
    }

    pub fn len(&self) -> usize {
        self.solutions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.solutions.is_empty()
    }

    pub fn radii(&self) -> Vec<f64> {
        self.solutions.values().map(|s| s.r).collect()
    }

    /// Solutions bracketing `r` and the linear weight of the upper one.
    /// Radii are non-negative, so the bit patterns sort like the values.
    pub fn bracket(&self, r: f64) -> Result<(&CellSolution, &CellSolution, f64), CellError> {
        let key = r.to_bits();
        let hi = self.solutions.range(key..).next();
        let lo = self.solutions.range(..=key).next_back();
        match (lo, hi) {
            (Some((_, a)), Some((_, b))) => {
                let t = if b.r > a.r { (r - a.r) / (b.r - a.r) } else { 0.0 };
                Ok((a, b, t))
            }
            _ => Err(CellError::MissingRadius(r)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn zero_radius_is_trivial() {
        let s = solve_cell(0.0, 32, 2.0).unwrap();
        assert!(s.m.iter().all(|m| m.iter().all(|&v| v == 0.0)));
        assert_eq!(s.tensor, [[2.0, 0.0], [0.0, 2.0]]);
    }

    #[test]
    fn disc_invariants_at_n64() {
        let s = solve_cell(0.25, 64, 1.0).unwrap();
        assert!(s.mean(0).abs() < 1e-12 && s.mean(1).abs() < 1e-12);
        assert!(s.symmetry_residual() < 1e-10, "{}", s.symmetry_residual());
        assert!(s.fv_residual() < 1e-8);
        let t = s.tensor;
        assert!((t[0][1] - t[1][0]).abs() < 1e-10);
        assert!(t[0][1].abs() < 1e-10);
        assert!((t[0][0] - t[1][1]).abs() < 1e-10);
        assert!(t[0][0] > 0.0 && t[0][0] < 1.0);
        // Dipole sign: M_1 > 0 to the right of the disc.
        let p = s.node_at([0.3125, 0.0]).unwrap();
        assert!(s.m[0][p] > 0.0);
    }

    #[test]
    fn corrector_minimises_energy() {
        let s = solve_cell(0.3, 32, 1.0).unwrap();
        let e0 = s.energy(0, &s.m[0]);
        assert!((e0 - s.tensor[0][0]).abs() < 1e-9);
        let mut rng = rand::rngs::StdRng::seed_from_u64(7);
        for _ in 0..10 {
            let w: Vec<f64> = s.m[0].iter().map(|v| v + 1e-2 * rng.gen_range(-1.0..1.0)).collect();
            assert!(s.energy(0, &w) >= e0);
        }
    }

    #[test]
    fn pchip_reproduces_knots_and_is_monotone() {
        let x = [0.0, 0.1, 0.2, 0.3, 0.45];
        let y = [1.0, 0.9, 0.7, 0.6, 0.2];
        let p = Pchip::new(&x, &y);
        for k in 0..x.len() {
            assert_eq!(p.eval(x[k]), y[k]);
        }
        let mut prev = f64::INFINITY;
        for k in 0..=450 {
            let v = p.eval(k as f64 / 1000.0);
            assert!(v <= prev + 1e-15);
            prev = v;
        }
        // Cubics are reproduced when the data allow it.
        let xs = [0.0, 1.0, 2.0, 3.0, 4.0];
        let lin: Vec<f64> = xs.iter().map(|v| 2.0 * v + 1.0).collect();
        let p = Pchip::new(&xs, &lin);
        assert!((p.eval(2.5) - 6.0).abs() < 1e-14);
    }

    #[test]
    fn table_validation_and_csv_round_trip() {
        let t = [[1.0, 0.0], [0.0, 1.0]];
        assert!(matches!(
            EffectiveTable::from_samples(32, 1.0, vec![0.0, 0.2, 0.1, 0.3], vec![t; 4]),
            Err(CellError::Unsorted)
        ));
        assert!(matches!(
            EffectiveTable::from_samples(32, 1.0, vec![0.0, 0.1, 0.1, 0.3], vec![t; 4]),
            Err(CellError::Unsorted)
        ));
        assert!(matches!(
            EffectiveTable::from_samples(32, 1.0, vec![0.0, 0.1, 0.2], vec![t; 3]),
            Err(CellError::TooFewSamples(3))
        ));
        let table = build_table(&[0.0, 0.1, 0.2, 0.3], 32, 1.0).unwrap();
        let expected = [1.0, 0.9686, 0.8743, 0.7173];
        for (th, e) in table.theta.iter().zip(expected) {
            assert!((th - e).abs() < 5e-5);
        }
        let back = EffectiveTable::from_csv(&table.to_csv()).unwrap();
        assert_eq!(back.tensors, table.tensors);
        assert_eq!(back.tensor(0.2).unwrap(), table.tensors[2]);
        assert!(table.tensor(0.45).is_err());
    }

    #[test]
    fn library_lookup() {
        let lib = CellLibrary::build(&[0.25, 0.25, 0.2], 32, 1.0).unwrap();
        assert_eq!(lib.len(), 2);
        assert!(lib.get(0.25).is_ok());
        assert!(matches!(lib.get(0.3), Err(CellError::MissingRadius(_))));
    }
}
