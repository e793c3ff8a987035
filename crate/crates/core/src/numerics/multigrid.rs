//! Galerkin geometric multigrid on vertex-centred structured grids.
//!
//! Coarse nodes sit on the even fine nodes, interpolation is bilinear and
//! restriction is its transpose, so every coarse operator is the exact
//! Galerkin product `P^T A P` and stays a nine-point stencil. Rows that are
//! plain identities with no couplings (Dirichlet nodes) are excluded from the
//! coarse space. One V-cycle with forward Gauss-Seidel before and backward
//! Gauss-Seidel after the coarse correction is a symmetric operator whenever
//! `A` is, which is what CG needs from a preconditioner.

use std::sync::Mutex;

use super::{LinearOperator, Preconditioner, Stencil5};

const CENTER: usize = 4;
const MAX_DENSE: usize = 625;
const COARSE_SWEEPS: usize = 30;

#[inline]
fn slot(dx: isize, dy: isize) -> usize {
    ((dy + 1) * 3 + (dx + 1)) as usize
}

/// Nine-point operator, row-major with x fastest. Entry `slot(dx, dy)` of a
/// row couples node `(i, j)` to `(i + dx, j + dy)`.
#[derive(Debug, Clone)]
pub struct Stencil9 {
    pub nx: usize,
    pub ny: usize,
    pub coef: Vec<[f64; 9]>,
}

impl Stencil9 {
    pub fn zeros(nx: usize, ny: usize) -> Self {
        Self { nx, ny, coef: vec![[0.0; 9]; nx * ny] }
    }

    pub fn from_stencil5(a: &Stencil5) -> Self {
        let mut s = Self::zeros(a.nx, a.ny);
        for (i, row) in s.coef.iter_mut().enumerate() {
            row[CENTER] = a.diag[i];
            row[slot(-1, 0)] = a.west[i];
            row[slot(1, 0)] = a.east[i];
            row[slot(0, -1)] = a.south[i];
            row[slot(0, 1)] = a.north[i];
        }
        s
    }

    /// `diag(mass) + dt * a`.
    pub fn from_shifted(mass: &[f64], a: &Stencil5, dt: f64) -> Self {
        let mut s = Self::from_stencil5(a);
        for (row, &m) in s.coef.iter_mut().zip(mass) {
            row.iter_mut().for_each(|c| *c *= dt);
            row[CENTER] += m;
        }
        s
    }

    fn is_pinned(&self, i: usize) -> bool {
        let row = &self.coef[i];
        row.iter().enumerate().all(|(k, &c)| k == CENTER || c == 0.0)
    }

    /// Off-centre part of row `i` at grid position `(ix, iy)`.
    #[inline(always)]
    fn off_dot(&self, i: usize, ix: usize, iy: usize, x: &[f64]) -> f64 {
        let (nx, ny) = (self.nx, self.ny);
        let row = &self.coef[i];
        if ix > 0 && ix + 1 < nx && iy > 0 && iy + 1 < ny {
            let s = i - nx - 1;
            let n = i + nx - 1;
            row[0] * x[s] + row[1] * x[s + 1] + row[2] * x[s + 2]
                + row[3] * x[i - 1] + row[5] * x[i + 1]
                + row[6] * x[n] + row[7] * x[n + 1] + row[8] * x[n + 2]
        } else {
            let mut acc = 0.0;
            for dy in -1isize..=1 {
                let jy = iy as isize + dy;
                if jy < 0 || jy >= ny as isize {
                    continue;
                }
                for dx in -1isize..=1 {
                    let jx = ix as isize + dx;
                    if (dx == 0 && dy == 0) || jx < 0 || jx >= nx as isize {
                        continue;
                    }
                    acc += row[slot(dx, dy)] * x[jy as usize * nx + jx as usize];
                }
            }
            acc
        }
    }

    fn gauss_seidel(&self, b: &[f64], inv_diag: &[f64], x: &mut [f64], forward: bool) {
        let (nx, ny) = (self.nx, self.ny);
        let mut visit = |ix: usize, iy: usize| {
            let i = iy * nx + ix;
            x[i] = (b[i] - self.off_dot(i, ix, iy, x)) * inv_diag[i];
        };
        if forward {
            for iy in 0..ny {
                for ix in 0..nx {
                    visit(ix, iy);
                }
            }
        } else {
            for iy in (0..ny).rev() {
                for ix in (0..nx).rev() {
                    visit(ix, iy);
                }
            }
        }
    }

    fn residual(&self, b: &[f64], x: &[f64], r: &mut [f64]) {
        let nx = self.nx;
        for (iy, rr) in r.chunks_mut(nx).enumerate() {
            for (ix, ri) in rr.iter_mut().enumerate() {
                let i = iy * nx + ix;
                *ri = b[i] - self.coef[i][CENTER] * x[i] - self.off_dot(i, ix, iy, x);
            }
        }
    }
}

impl LinearOperator for Stencil9 {
    fn dim(&self) -> usize {
        self.coef.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let nx = self.nx;
        for (iy, yr) in y.chunks_mut(nx).enumerate() {
            for (ix, yi) in yr.iter_mut().enumerate() {
                let i = iy * nx + ix;
                *yi = self.coef[i][CENTER] * x[i] + self.off_dot(i, ix, iy, x);
            }
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        self.coef.iter().map(|r| r[CENTER]).collect()
    }

    fn is_symmetric(&self) -> bool {
        let nx = self.nx as isize;
        self.coef.iter().enumerate().all(|(i, row)| {
            let (ix, iy) = ((i as isize) % nx, (i as isize) / nx);
            (0..9).filter(|&k| k != CENTER && row[k] != 0.0).all(|k| {
                let (dx, dy) = (k as isize % 3 - 1, k as isize / 3 - 1);
                let j = ((iy + dy) * nx + ix + dx) as usize;
                let back = self.coef[j][slot(-dx, -dy)];
                (row[k] - back).abs() <= 1e-12 * row[k].abs().max(back.abs())
            })
        })
    }
}

/// Symmetric five-point operator storing each coupling once: `east[i]`
/// couples `i` and `i + 1`, `north[i]` couples `i` and `i + nx`.
#[derive(Debug, Clone)]
pub struct SymStencil5 {
    pub nx: usize,
    pub ny: usize,
    pub diag: Vec<f64>,
    pub east: Vec<f64>,
    pub north: Vec<f64>,
}

impl SymStencil5 {
    /// `diag(mass) + dt * a`. Returns `None` when `a` is not symmetric.
    pub fn from_shifted(mass: &[f64], a: &Stencil5, dt: f64) -> Option<Self> {
        let (nx, ny) = (a.nx, a.ny);
        let n = nx * ny;
        let mut out = Self {
            nx,
            ny,
            diag: (0..n).map(|i| mass[i] + dt * a.diag[i]).collect(),
            east: vec![0.0; n],
            north: vec![0.0; n],
        };
        let close = |p: f64, q: f64| (p - q).abs() <= 1e-12 * p.abs().max(q.abs());
        for i in 0..n {
            if (i + 1) % nx != 0 {
                if !close(a.east[i], a.west[i + 1]) {
                    return None;
                }
                out.east[i] = dt * a.east[i];
            }
            if i + nx < n {
                if !close(a.north[i], a.south[i + nx]) {
                    return None;
                }
                out.north[i] = dt * a.north[i];
            }
        }
        Some(out)
    }

    pub fn to_stencil9(&self) -> Stencil9 {
        let (nx, n) = (self.nx, self.diag.len());
        let mut s = Stencil9::zeros(nx, self.ny);
        for i in 0..n {
            s.coef[i][CENTER] = self.diag[i];
            if (i + 1) % nx != 0 {
                s.coef[i][slot(1, 0)] = self.east[i];
                s.coef[i + 1][slot(-1, 0)] = self.east[i];
            }
            if i + nx < n {
                s.coef[i][slot(0, 1)] = self.north[i];
                s.coef[i + nx][slot(0, -1)] = self.north[i];
            }
        }
        s
    }

    #[inline(always)]
    fn off_dot(&self, i: usize, ix: usize, iy: usize, x: &[f64]) -> f64 {
        let nx = self.nx;
        let mut acc = 0.0;
        if ix > 0 {
            acc += self.east[i - 1] * x[i - 1];
        }
        if ix + 1 < nx {
            acc += self.east[i] * x[i + 1];
        }
        if iy > 0 {
            acc += self.north[i - nx] * x[i - nx];
        }
        if iy + 1 < self.ny {
            acc += self.north[i] * x[i + nx];
        }
        acc
    }

    /// Red-black Gauss-Seidel; the backward sweep visits the colours in
    /// reverse so that a forward/backward pair is symmetric.
    fn gauss_seidel(&self, b: &[f64], inv_diag: &[f64], x: &mut [f64], forward: bool) {
        let colours = if forward { [0, 1] } else { [1, 0] };
        for c in colours {
            self.colour_sweep(b, inv_diag, x, c);
        }
    }

    fn colour_sweep(&self, b: &[f64], inv_diag: &[f64], x: &mut [f64], colour: usize) {
        let (nx, ny) = (self.nx, self.ny);
        let (east, north) = (&self.east[..], &self.north[..]);
        for iy in 0..ny {
            let base = iy * nx;
            let start = (colour + iy) % 2;
            if iy == 0 || iy + 1 == ny {
                for ix in (start..nx).step_by(2) {
                    let i = base + ix;
                    x[i] = (b[i] - self.off_dot(i, ix, iy, x)) * inv_diag[i];
                }
                continue;
            }
            if start == 0 {
                x[base] = (b[base] - self.off_dot(base, 0, iy, x)) * inv_diag[base];
            }
            let first = if start == 0 { 2 } else { 1 };
            for ix in (first..nx - 1).step_by(2) {
                let i = base + ix;
                let acc = east[i - 1] * x[i - 1]
                    + east[i] * x[i + 1]
                    + north[i - nx] * x[i - nx]
                    + north[i] * x[i + nx];
                x[i] = (b[i] - acc) * inv_diag[i];
            }
            if (nx - 1 + iy) % 2 == colour {
                let i = base + nx - 1;
                x[i] = (b[i] - self.off_dot(i, nx - 1, iy, x)) * inv_diag[i];
            }
        }
    }

    fn residual(&self, b: &[f64], x: &[f64], r: &mut [f64]) {
        let nx = self.nx;
        for (iy, rr) in r.chunks_mut(nx).enumerate() {
            for (ix, ri) in rr.iter_mut().enumerate() {
                let i = iy * nx + ix;
                *ri = b[i] - self.diag[i] * x[i] - self.off_dot(i, ix, iy, x);
            }
        }
    }
}

impl LinearOperator for SymStencil5 {
    fn dim(&self) -> usize {
        self.diag.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let nx = self.nx;
        for (iy, yr) in y.chunks_mut(nx).enumerate() {
            for (ix, yi) in yr.iter_mut().enumerate() {
                let i = iy * nx + ix;
                *yi = self.diag[i] * x[i] + self.off_dot(i, ix, iy, x);
            }
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        self.diag.clone()
    }
}

struct Level {
    op: Stencil9,
    /// Faster storage for the finest level when it is a symmetric 5-point operator.
    five: Option<SymStencil5>,
    inv_diag: Vec<f64>,
    /// Nodes carrying no coarse basis function.
    pinned: Vec<bool>,
}

/// Interpolation weight of the coarse node at fine offset `f` (-1, 0 or 1).
#[inline]
fn w1(f: isize) -> f64 {
    if f == 0 {
        1.0
    } else {
        0.5
    }
}

fn coarsen(fine: &Level) -> Level {
    let (nx, ny) = (fine.op.nx, fine.op.ny);
    let (cx, cy) = ((nx - 1) / 2 + 1, (ny - 1) / 2 + 1);
    let mut op = Stencil9::zeros(cx, cy);
    let pinned: Vec<bool> =
        (0..cx * cy).map(|c| fine.pinned[2 * (c / cx) * nx + 2 * (c % cx)]).collect();

    let fine_w = |fx: isize, fy: isize, ox: isize, oy: isize| -> f64 {
        // Weight of fine node (fx, fy) in the basis function centred at fine (ox, oy).
        let (dx, dy) = (fx - ox, fy - oy);
        if dx.abs() > 1 || dy.abs() > 1 {
            return 0.0;
        }
        if fx < 0 || fy < 0 || fx >= nx as isize || fy >= ny as isize {
            return 0.0;
        }
        if fine.pinned[fy as usize * nx + fx as usize] {
            return 0.0;
        }
        w1(dx) * w1(dy)
    };

    for jc in 0..cx * cy {
        if pinned[jc] {
            op.coef[jc][CENTER] = 1.0;
            continue;
        }
        let (jx, jy) = ((jc % cx) as isize, (jc / cx) as isize);
        let (ox, oy) = (2 * jx, 2 * jy);
        // v = A P e_J on the 5x5 fine patch around the coarse node.
        let mut v = [[0.0f64; 5]; 5];
        for fy in -1isize..=1 {
            for fx in -1isize..=1 {
                let w = fine_w(ox + fx, oy + fy, ox, oy);
                if w == 0.0 {
                    continue;
                }
                let i = (oy + fy) as usize * nx + (ox + fx) as usize;
                let row = &fine.op.coef[i];
                for dy in -1isize..=1 {
                    for dx in -1isize..=1 {
                        let c = row[slot(dx, dy)];
                        if c != 0.0 {
                            v[(fy + dy + 2) as usize][(fx + dx + 2) as usize] += c * w;
                        }
                    }
                }
            }
        }
        for ey in -1isize..=1 {
            for ex in -1isize..=1 {
                let (ix, iy) = (jx + ex, jy + ey);
                if ix < 0 || iy < 0 || ix >= cx as isize || iy >= cy as isize {
                    continue;
                }
                let ic = iy as usize * cx + ix as usize;
                if pinned[ic] {
                    continue;
                }
                let mut acc = 0.0;
                for fy in -1isize..=1 {
                    for fx in -1isize..=1 {
                        let (px, py) = (2 * ex + fx, 2 * ey + fy);
                        if px.abs() > 2 || py.abs() > 2 {
                            continue;
                        }
                        let w = fine_w(ox + px, oy + py, 2 * ix, 2 * iy);
                        if w != 0.0 {
                            acc += w * v[(py + 2) as usize][(px + 2) as usize];
                        }
                    }
                }
                op.coef[ic][slot(-ex, -ey)] = acc;
            }
        }
    }
    Level::new(op, pinned)
}

impl Level {
    fn new(op: Stencil9, pinned: Vec<bool>) -> Self {
        let inv_diag = op.coef.iter().map(|r| 1.0 / r[CENTER]).collect();
        Self { op, five: None, inv_diag, pinned }
    }

    fn smooth(&self, b: &[f64], x: &mut [f64], forward: bool) {
        match &self.five {
            Some(f) => f.gauss_seidel(b, &self.inv_diag, x, forward),
            None => self.op.gauss_seidel(b, &self.inv_diag, x, forward),
        }
    }

    fn residual(&self, b: &[f64], x: &[f64], r: &mut [f64]) {
        match &self.five {
            Some(f) => f.residual(b, x, r),
            None => self.op.residual(b, x, r),
        }
    }
}

/// Full-weighting restriction. Residuals on pinned fine nodes are zero, so
/// no masking is needed here.
fn restrict(fine: &Level, coarse: &Level, r: &[f64], rc: &mut [f64]) {
    let (nx, ny) = (fine.op.nx, fine.op.ny);
    let cx = coarse.op.nx;
    let line = |fy: usize, out: &mut [f64]| {
        let row = &r[fy * nx..(fy + 1) * nx];
        for (xc, o) in out.iter_mut().enumerate() {
            let f = 2 * xc;
            let mut acc = row[f];
            if f > 0 {
                acc += 0.5 * row[f - 1];
            }
            if f + 1 < nx {
                acc += 0.5 * row[f + 1];
            }
            *o = acc;
        }
    };
    let mut mid = vec![0.0; cx];
    let mut side = vec![0.0; cx];
    for (yc, out) in rc.chunks_mut(cx).enumerate() {
        let fy = 2 * yc;
        line(fy, &mut mid);
        out.copy_from_slice(&mid);
        for g in [fy.wrapping_sub(1), fy + 1] {
            if g < ny {
                line(g, &mut side);
                out.iter_mut().zip(&side).for_each(|(o, s)| *o += 0.5 * s);
            }
        }
        for (xc, o) in out.iter_mut().enumerate() {
            if coarse.pinned[yc * cx + xc] {
                *o = 0.0;
            }
        }
    }
}

fn prolong_add(fine: &Level, coarse: &Level, ec: &[f64], x: &mut [f64]) {
    let nx = fine.op.nx;
    let cx = coarse.op.nx;
    let mut line = vec![0.0; cx];
    for (fy, xr) in x.chunks_mut(nx).enumerate() {
        let yc = fy / 2;
        if fy % 2 == 0 {
            line.copy_from_slice(&ec[yc * cx..(yc + 1) * cx]);
        } else {
            let (lo, hi) = (&ec[yc * cx..(yc + 1) * cx], &ec[(yc + 1) * cx..(yc + 2) * cx]);
            line.iter_mut().zip(lo.iter().zip(hi)).for_each(|(l, (a, b))| *l = 0.5 * (a + b));
        }
        let pins = &fine.pinned[fy * nx..(fy + 1) * nx];
        for (fx, xi) in xr.iter_mut().enumerate() {
            if pins[fx] {
                continue;
            }
            *xi += if fx % 2 == 0 {
                line[fx / 2]
            } else {
                0.5 * (line[fx / 2] + line[fx / 2 + 1])
            };
        }
    }
}

struct DenseLu {
    lu: Vec<f64>,
    piv: Vec<usize>,
    n: usize,
}

impl DenseLu {
    fn factor(op: &Stencil9) -> Option<Self> {
        let n = op.coef.len();
        let mut lu = vec![0.0; n * n];
        let mut e = vec![0.0; n];
        let mut col = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            op.apply(&e, &mut col);
            e[j] = 0.0;
            for i in 0..n {
                lu[i * n + j] = col[i];
            }
        }
        let mut piv: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let p = (k..n).max_by(|&a, &b| lu[a * n + k].abs().total_cmp(&lu[b * n + k].abs()))?;
            if lu[p * n + k] == 0.0 {
                return None;
            }
            if p != k {
                for c in 0..n {
                    lu.swap(p * n + c, k * n + c);
                }
                piv.swap(p, k);
            }
            let d = lu[k * n + k];
            for i in k + 1..n {
                let f = lu[i * n + k] / d;
                lu[i * n + k] = f;
                if f != 0.0 {
                    for c in k + 1..n {
                        lu[i * n + c] -= f * lu[k * n + c];
                    }
                }
            }
        }
        Some(Self { lu, piv, n })
    }

    fn solve(&self, b: &[f64], x: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let mut s = b[self.piv[i]];
            for c in 0..i {
                s -= self.lu[i * n + c] * x[c];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for c in i + 1..n {
                s -= self.lu[i * n + c] * x[c];
            }
            x[i] = s / self.lu[i * n + i];
        }
    }
}

struct Workspace {
    x: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    r: Vec<Vec<f64>>,
}

/// V-cycle preconditioner built from a structured fine-grid operator.
pub struct Multigrid {
    levels: Vec<Level>,
    coarse_lu: Option<DenseLu>,
    work: Mutex<Workspace>,
    /// Pre- and post-smoothing sweeps per level.
    pub sweeps: usize,
}

impl Multigrid {
    pub fn new(fine: Stencil9) -> Self {
        let pinned = (0..fine.coef.len()).map(|i| fine.is_pinned(i)).collect();
        let mut levels = vec![Level::new(fine, pinned)];
        loop {
            let last = &levels[levels.len() - 1].op;
            let (nx, ny) = (last.nx, last.ny);
            let can = (nx - 1) % 2 == 0 && (ny - 1) % 2 == 0 && nx.min(ny) > 5;
            if !can {
                break;
            }
            let next = coarsen(&levels[levels.len() - 1]);
            levels.push(next);
        }
        let coarsest = &levels[levels.len() - 1].op;
        let coarse_lu =
            if coarsest.coef.len() <= MAX_DENSE { DenseLu::factor(coarsest) } else { None };
        let sizes: Vec<usize> = levels.iter().map(|l| l.op.coef.len()).collect();
        let work = Workspace {
            x: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            b: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            r: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        };
        Self { levels, coarse_lu, work: Mutex::new(work), sweeps: 1 }
    }

    pub fn from_symmetric5(fine: &SymStencil5) -> Self {
        let mut mg = Self::new(fine.to_stencil9());
        mg.levels[0].five = Some(fine.clone());
        mg
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    fn cycle(&self, l: usize, w: &mut Workspace) {
        let level = &self.levels[l];
        let last = l + 1 == self.levels.len();
        w.x[l].iter_mut().for_each(|v| *v = 0.0);
        if last {
            let x = &mut w.x[l];
            match &self.coarse_lu {
                Some(lu) => lu.solve(&w.b[l], x),
                None => {
                    for _ in 0..COARSE_SWEEPS {
                        level.smooth(&w.b[l], x, true);
                        level.smooth(&w.b[l], x, false);
                    }
                }
            }
            return;
        }
        for _ in 0..self.sweeps {
            level.smooth(&w.b[l], &mut w.x[l], true);
        }
        level.residual(&w.b[l], &w.x[l], &mut w.r[l]);
        restrict(level, &self.levels[l + 1], &w.r[l], &mut w.b[l + 1]);
        self.cycle(l + 1, w);
        {
            let (xf, xc) = w.x.split_at_mut(l + 1);
            prolong_add(level, &self.levels[l + 1], &xc[0], &mut xf[l]);
        }
        for _ in 0..self.sweeps {
            level.smooth(&w.b[l], &mut w.x[l], false);
        }
    }
}

impl Preconditioner for Multigrid {
    fn precondition(&self, r: &[f64], z: &mut [f64]) {
        let mut w = self.work.lock().expect("multigrid workspace poisoned");
        w.b[0].copy_from_slice(r);
        self.cycle(0, &mut w);
        z.copy_from_slice(&w.x[0]);
    }
}
