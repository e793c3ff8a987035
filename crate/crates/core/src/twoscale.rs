//! The two-scale limit model: a macroscopic advection-diffusion equation for
//! `u0` coupled at every macro node to a radially symmetric heat equation for
//! `v0` on the inclusion `B(x)`.
//!
//! The radial equation is discretised by cell-centred finite volumes on
//! `[0, R]` with `m` cells and a Dirichlet node at `rho = R` that carries the
//! macro value. Each implicit step eliminates the radial unknowns exactly
//! (static condensation through a Thomas solve), which leaves one macro
//! M-matrix system per step with an extra non-negative diagonal term.

use std::f64::consts::PI;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use thiserror::Error;

use crate::cell::{CellError, CellSolution, EffectiveTable, Tensor};
use crate::data::{
    require_nonnegative, require_positive, BoundaryData, DataError, LowInit, MacroFn, VelocitySpec,
};
use crate::geometry::{Grid, LevelSetSpec};
use crate::numerics::{
    pbicgstab_solve, pcg_solve, solve_tridiagonal, Multigrid, SolveError, SolverOptions, Stencil5,
    Stencil9, SymStencil5,
};

#[derive(Debug, Error)]
pub enum TwoScaleError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Cell(#[from] CellError),
    #[error("macro spacing {0} does not divide the domain")]
    Spacing(f64),
    #[error("radial resolution must be at least 2 (got {0})")]
    Radial(usize),
    #[error("radius varies by {jump} between neighbouring macro nodes, more than r_min/4 = {limit}")]
    Unresolved { jump: f64, limit: f64 },
    #[error("fixed coefficients are for r = {expected}, found r = {found}")]
    RadiusMismatch { expected: f64, found: f64 },
    #[error("time step {dt} does not divide the horizon {t_end}")]
    StepMismatch { dt: f64, t_end: f64 },
    #[error("point ({0}, {1}) with |y| = {2} lies outside the inclusion of radius {3}")]
    OutsideInclusion(f64, f64, f64, f64),
    #[error("linear solve failed at step {step}: {source}")]
    Solve { step: usize, source: SolveError },
}

/// Effective porosity and diffusion tensor as a function of the radius.
#[derive(Debug, Clone)]
pub enum Coefficients {
    /// Interpolated table; exact porosity `1 - pi r^2`.
    Table(Arc<EffectiveTable>),
    /// One discrete cell solution for a constant radius. Porosity is the
    /// discrete pore fraction and the radial model uses the disc of equal
    /// area, so the limit model matches a micro run on the same cell grid.
    Cell { r: f64, d_h: f64, theta: f64, tensor: Tensor },
}

/// Local coefficients at one macro node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalCoefficients {
    pub theta: f64,
    pub tensor: Tensor,
    /// Radius of the radial model; zero when there is no inclusion.
    pub radial_radius: f64,
}

impl Coefficients {
    pub fn from_cell(sol: &CellSolution) -> Self {
        Self::Cell { r: sol.r, d_h: sol.d_h, theta: sol.theta_h(), tensor: sol.tensor }
    }

    pub fn d_h(&self) -> f64 {
        match self {
            Self::Table(t) => t.d_h,
            Self::Cell { d_h, .. } => *d_h,
        }
    }

    pub fn at(&self, r: f64) -> Result<LocalCoefficients, TwoScaleError> {
        if r == 0.0 {
            let d = self.d_h();
            return Ok(LocalCoefficients { theta: 1.0, tensor: [[d, 0.0], [0.0, d]], radial_radius: 0.0 });
        }
        match self {
            Self::Table(t) => Ok(LocalCoefficients { theta: t.theta(r)?, tensor: t.tensor(r)?, radial_radius: r }),
            Self::Cell { r: r0, theta, tensor, .. } => {
                if (r - r0).abs() > 1e-12 {
                    return Err(TwoScaleError::RadiusMismatch { expected: *r0, found: r });
                }
                Ok(LocalCoefficients {
                    theta: *theta,
                    tensor: *tensor,
                    radial_radius: ((1.0 - theta) / PI).sqrt(),
                })
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct TwoScaleConfig {
    pub spec: LevelSetSpec,
    pub coefficients: Coefficients,
    /// Macro grid spacing `H`.
    pub h_macro: f64,
    /// Radial cells on `[0, r(x)]`.
    pub m: usize,
    pub d_l: f64,
    /// Macro velocity. The same preset as the micro run; see [`crate::microsim`].
    pub velocity: VelocitySpec,
    pub boundary: BoundaryData,
    pub u_init: MacroFn,
    pub v_init: LowInit,
    pub t_end: f64,
    pub dt: f64,
    pub solver: SolverOptions,
}

impl TwoScaleConfig {
    pub fn new(spec: LevelSetSpec, coefficients: Coefficients) -> Self {
        Self {
            spec,
            coefficients,
            h_macro: 1.0 / 64.0,
            m: 16,
            d_l: 1.0,
            velocity: VelocitySpec::Zero,
            boundary: BoundaryData::Constant(0.0),
            u_init: MacroFn::default(),
            v_init: LowInit::MatchMacro,
            t_end: 0.25,
            dt: 1.0 / 1024.0,
            solver: SolverOptions::default(),
        }
    }

    pub fn num_steps(&self) -> Result<usize, TwoScaleError> {
        let s = self.t_end / self.dt;
        let n = s.round();
        if (s - n).abs() > 1e-9 * n.max(1.0) {
            return Err(TwoScaleError::StepMismatch { dt: self.dt, t_end: self.t_end });
        }
        Ok(n as usize)
    }

    pub fn grid(&self) -> Result<Grid, TwoScaleError> {
        Grid::covering(&self.spec.omega, self.h_macro).ok_or(TwoScaleError::Spacing(self.h_macro))
    }

    pub fn validate(&self) -> Result<Grid, TwoScaleError> {
        require_positive("H", self.h_macro)?;
        require_nonnegative("D_l", self.d_l)?;
        require_positive("dt", self.dt)?;
        require_nonnegative("T", self.t_end)?;
        if self.m < 2 {
            return Err(TwoScaleError::Radial(self.m));
        }
        let steps = self.num_steps()?;
        let k = steps.clamp(1, 256);
        let times: Vec<f64> = (0..=k).map(|j| self.t_end * j as f64 / k as f64).collect();
        self.boundary.validate(&self.spec.omega, &times)?;
        let grid = self.grid()?;
        if self.spec.has_inclusions() {
            let limit = self.spec.r_min / 4.0;
            for i in 0..grid.len() {
                let (ix, iy) = grid.ij(i);
                let r = self.spec.r(grid.coord(i));
                for (ok, j) in [(ix + 1 < grid.nx, i + 1), (iy + 1 < grid.ny, i + grid.nx)] {
                    if ok {
                        let jump = (self.spec.r(grid.coord(j)) - r).abs();
                        if jump > limit {
                            return Err(TwoScaleError::Unresolved { jump, limit });
                        }
                    }
                }
            }
        }
        Ok(grid)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoScaleState {
    pub t: f64,
    pub step: usize,
    /// `u0` on the macro nodes.
    pub u: Vec<f64>,
    /// `m + 1` radial values per macro node: cell centres, then the trace at `rho = R`.
    pub v: Vec<f64>,
}

impl TwoScaleState {
    pub fn profile(&self, node: usize, m: usize) -> &[f64] {
        &self.v[node * (m + 1)..(node + 1) * (m + 1)]
    }
}

/// Radial finite volumes for one node: volumes, face conductances and the
/// Dirichlet-to-Neumann data for the current time step.
#[derive(Debug, Clone)]
struct Radial {
    volume: Vec<f64>,
    /// Conductance of the face between cell `k` and `k + 1`; the last entry is the boundary face.
    conductance: Vec<f64>,
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
    /// Response of the radial cells to a unit boundary value.
    beta: Vec<f64>,
}

impl Radial {
    fn new(radius: f64, m: usize, d_l: f64, dt: f64) -> Self {
        let d = radius / m as f64;
        let volume: Vec<f64> = (0..m).map(|k| 2.0 * PI * (k as f64 + 0.5) * d * d).collect();
        // 2 pi rho_face D_l / distance; the boundary face sits half a cell away.
        let conductance: Vec<f64> = (0..m)
            .map(|k| if k + 1 < m { 2.0 * PI * d_l * (k + 1) as f64 } else { 4.0 * PI * d_l * m as f64 })
            .collect();
        let mut lower = vec![0.0; m];
        let mut upper = vec![0.0; m];
        let mut diag = vec![0.0; m];
        for k in 0..m {
            diag[k] = volume[k] / dt + conductance[k];
            if k > 0 {
                diag[k] += conductance[k - 1];
                lower[k] = -conductance[k - 1];
            }
            if k + 1 < m {
                upper[k] = -conductance[k];
            }
        }
        let mut beta = vec![0.0; m];
        beta[m - 1] = conductance[m - 1];
        solve_tridiagonal(&lower, &diag, &upper, &mut beta);
        Self { volume, conductance, lower, diag, upper, beta }
    }

    fn boundary_conductance(&self) -> f64 {
        self.conductance[self.conductance.len() - 1]
    }

    /// Diagonal exchange coefficient `g (1 - beta_last)`.
    fn exchange_diagonal(&self) -> f64 {
        self.boundary_conductance() * (1.0 - self.beta[self.beta.len() - 1])
    }

    /// `alpha`: the radial update for a zero boundary value.
    fn alpha(&self, v_old: &[f64], dt: f64) -> Vec<f64> {
        let mut a: Vec<f64> = v_old.iter().zip(&self.volume).map(|(v, w)| v * w / dt).collect();
        solve_tridiagonal(&self.lower, &self.diag, &self.upper, &mut a);
        a
    }

    fn mass(&self, v: &[f64]) -> f64 {
        v.iter().zip(&self.volume).map(|(a, b)| a * b).sum()
    }
}

/// The assembled two-scale model for one configuration.
pub struct TwoScaleModel {
    pub cfg: TwoScaleConfig,
    pub grid: Grid,
    pub local: Vec<LocalCoefficients>,
    pub dirichlet: Vec<bool>,
    /// Macro `A` on interior rows, boundary couplings removed.
    pub stiffness: Stencil5,
    pub boundary_couplings: Vec<(usize, usize, f64)>,
    /// Diagonal share of each boundary coupling's face in its interior row.
    boundary_diag: Vec<f64>,
    radial: Vec<Option<Radial>>,
    system: MacroSystem,
    mg: Multigrid,
}

enum MacroSystem {
    Symmetric(SymStencil5),
    General(Stencil9),
}

fn dyadic(v: f64) -> f64 {
    const S: f64 = (1u64 << 40) as f64;
    (v * S).round() / S
}

pub fn assemble_twoscale(cfg: &TwoScaleConfig) -> Result<TwoScaleModel, TwoScaleError> {
    let grid = cfg.validate()?;
    let n = grid.len();
    let local: Vec<LocalCoefficients> =
        (0..n).map(|i| cfg.coefficients.at(cfg.spec.r(grid.coord(i)))).collect::<Result<_, _>>()?;
    let dirichlet: Vec<bool> = (0..n).map(|i| grid.on_boundary(i)).collect();
    let h2 = grid.h * grid.h;
    let omega = &cfg.spec.omega;

    let stream = if cfg.velocity.amplitude() != 0.0 {
        let cx = grid.nx + 1;
        let mut psi = vec![0.0; cx * (grid.ny + 1)];
        for (k, p) in psi.iter_mut().enumerate() {
            let (a, b) = (k % cx, k / cx);
            let x = [grid.x0 + (a as f64 - 0.5) * grid.h, grid.y0 + (b as f64 - 0.5) * grid.h];
            *p = dyadic(cfg.velocity.psi(omega, x));
        }
        Some(psi)
    } else {
        None
    };

    let mut st = Stencil5::zeros(grid.nx, grid.ny);
    st.symmetric = stream.is_none();
    let mut couplings = Vec::new();
    let mut boundary_diag = Vec::new();
    for a in 0..n {
        let (ix, iy) = grid.ij(a);
        for (ok, b, dir) in [(ix + 1 < grid.nx, a + 1, 0usize), (iy + 1 < grid.ny, a + grid.nx, 1)] {
            if !ok {
                continue;
            }
            let (pa, pb) = (grid.coord(a), grid.coord(b));
            let mid = [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])];
            let k = cfg.coefficients.at(cfg.spec.r(mid))?.tensor[dir][dir] / h2;
            let f = match &stream {
                None => 0.0,
                Some(psi) => {
                    let cx = grid.nx + 1;
                    let at = |p: usize, q: usize| psi[q * cx + p];
                    let raw = if dir == 0 {
                        at(ix + 1, iy + 1) - at(ix + 1, iy)
                    } else {
                        -(at(ix + 1, iy + 1) - at(ix, iy + 1))
                    };
                    raw / h2
                }
            };
            let (da, db) = (k + f.max(0.0), k + (-f).max(0.0));
            let (ab, ba) = (k + (-f).max(0.0), k + f.max(0.0));
            match (dirichlet[a], dirichlet[b]) {
                (false, false) => {
                    st.diag[a] += da;
                    st.diag[b] += db;
                    if dir == 0 {
                        st.east[a] -= ab;
                        st.west[b] -= ba;
                    } else {
                        st.north[a] -= ab;
                        st.south[b] -= ba;
                    }
                }
                (false, true) => {
                    st.diag[a] += da;
                    couplings.push((a, b, ab));
                    boundary_diag.push(da);
                }
                (true, false) => {
                    st.diag[b] += db;
                    couplings.push((b, a, ba));
                    boundary_diag.push(db);
                }
                (true, true) => {}
            }
        }
    }

    let radial: Vec<Option<Radial>> = local
        .iter()
        .map(|l| (l.radial_radius > 0.0).then(|| Radial::new(l.radial_radius, cfg.m, cfg.d_l, cfg.dt)))
        .collect();
    let mass: Vec<f64> = (0..n)
        .map(|i| {
            if dirichlet[i] {
                0.0
            } else {
                local[i].theta + cfg.dt * radial[i].as_ref().map_or(0.0, Radial::exchange_diagonal)
            }
        })
        .collect();
    let (system, mg) = if st.symmetric {
        let mut s = SymStencil5::from_shifted(&mass, &st, cfg.dt).expect("diffusion operator is symmetric");
        for i in 0..n {
            if dirichlet[i] {
                s.diag[i] = 1.0;
            }
        }
        let mg = Multigrid::from_symmetric5(&s);
        (MacroSystem::Symmetric(s), mg)
    } else {
        let mut s = Stencil9::from_shifted(&mass, &st, cfg.dt);
        for i in 0..n {
            if dirichlet[i] {
                s.coef[i][4] = 1.0;
            }
        }
        let mg = Multigrid::new(s.clone());
        (MacroSystem::General(s), mg)
    };
    Ok(TwoScaleModel {
        cfg: cfg.clone(),
        grid,
        local,
        dirichlet,
        stiffness: st,
        boundary_couplings: couplings,
        boundary_diag,
        radial,
        system,
        mg,
    })
}

impl TwoScaleModel {
    pub fn m(&self) -> usize {
        self.cfg.m
    }

    pub fn initial_state(&self) -> TwoScaleState {
        let cfg = &self.cfg;
        let omega = &cfg.spec.omega;
        let m = cfg.m;
        let n = self.grid.len();
        let mut u = vec![0.0; n];
        let mut v = vec![0.0; n * (m + 1)];
        for i in 0..n {
            let x = self.grid.coord(i);
            u[i] = if self.dirichlet[i] { cfg.boundary.eval(x, 0.0) } else { cfg.u_init.eval(omega, x) };
            let p = &mut v[i * (m + 1)..(i + 1) * (m + 1)];
            if self.radial[i].is_some() {
                let vi = cfg.v_init.eval(&cfg.u_init, omega, x);
                p[..m].iter_mut().for_each(|a| *a = vi);
            }
            p[m] = u[i];
        }
        TwoScaleState { t: 0.0, step: 0, u, v }
    }

    /// `theta u0 + int_B v0` per node.
    pub fn node_mass(&self, state: &TwoScaleState, i: usize) -> f64 {
        let m = self.cfg.m;
        let inner = self.radial[i].as_ref().map_or(0.0, |r| r.mass(&state.profile(i, m)[..m]));
        self.local[i].theta * state.u[i] + inner
    }

    /// Total mass over the interior macro nodes, `H^2 sum (theta u0 + int_B v0)`.
    pub fn interior_mass(&self, state: &TwoScaleState) -> f64 {
        let h2 = self.grid.h * self.grid.h;
        (0..self.grid.len()).filter(|&i| !self.dirichlet[i]).map(|i| h2 * self.node_mass(state, i)).sum()
    }

    /// Net inflow rate through the faces between interior and Dirichlet
    /// nodes, evaluated at `state` (the implicit end of a step).
    pub fn boundary_inflow(&self, state: &TwoScaleState) -> f64 {
        let h2 = self.grid.h * self.grid.h;
        self.boundary_couplings
            .iter()
            .zip(&self.boundary_diag)
            .map(|(&(a, b, c), &d)| h2 * (c * state.u[b] - d * state.u[a]))
            .sum()
    }

    /// Exchange rate `int_{dB} D_l d_rho v0` at node `i` for the given state.
    pub fn exchange_flux(&self, state: &TwoScaleState, i: usize) -> f64 {
        let m = self.cfg.m;
        self.radial[i].as_ref().map_or(0.0, |r| {
            let p = state.profile(i, m);
            r.boundary_conductance() * (p[m] - p[m - 1])
        })
    }

    pub fn step(&self, state: &TwoScaleState, previous: Option<&TwoScaleState>) -> Result<(TwoScaleState, usize), TwoScaleError> {
        let cfg = &self.cfg;
        let (m, dt) = (cfg.m, cfg.dt);
        let n = self.grid.len();
        let t1 = state.t + dt;
        let alphas: Vec<Option<Vec<f64>>> = (0..n)
            .into_par_iter()
            .map(|i| self.radial[i].as_ref().map(|r| r.alpha(&state.profile(i, m)[..m], dt)))
            .collect();
        let mut rhs = vec![0.0; n];
        for i in 0..n {
            if self.dirichlet[i] {
                rhs[i] = cfg.boundary.eval(self.grid.coord(i), t1);
            } else {
                rhs[i] = self.local[i].theta * state.u[i];
                if let (Some(r), Some(a)) = (&self.radial[i], &alphas[i]) {
                    rhs[i] += dt * r.boundary_conductance() * a[m - 1];
                }
            }
        }
        for &(a, b, c) in &self.boundary_couplings {
            rhs[a] += dt * c * rhs[b];
        }
        let mut guess = match previous {
            Some(p) => state.u.iter().zip(&p.u).map(|(a, b)| 2.0 * a - b).collect(),
            None => state.u.clone(),
        };
        for i in 0..n {
            if self.dirichlet[i] {
                guess[i] = rhs[i];
            }
        }
        let result = match &self.system {
            MacroSystem::Symmetric(s) => pcg_solve(s, &rhs, Some(&guess), &self.mg, cfg.solver),
            MacroSystem::General(s) => pbicgstab_solve(s, &rhs, Some(&guess), &self.mg, cfg.solver),
        };
        let (u, stats) = result.map_err(|source| TwoScaleError::Solve { step: state.step + 1, source })?;
        let mut v = vec![0.0; n * (m + 1)];
        for i in 0..n {
            let p = &mut v[i * (m + 1)..(i + 1) * (m + 1)];
            if let (Some(r), Some(a)) = (&self.radial[i], &alphas[i]) {
                for k in 0..m {
                    p[k] = a[k] + r.beta[k] * u[i];
                }
            }
            p[m] = u[i];
        }
        Ok((TwoScaleState { t: t1, step: state.step + 1, u, v }, stats.iterations))
    }

    /// Value of `v0(x, y)`: radial profiles interpolated linearly in `|y| / r(x)`
    /// and bilinearly between the four surrounding macro nodes.
    pub fn sample_v0(&self, state: &TwoScaleState, x: [f64; 2], y: [f64; 2]) -> Result<f64, TwoScaleError> {
        let r = self.cfg.spec.r(x);
        let ny = y[0].hypot(y[1]);
        if ny > r * (1.0 + 1e-12) {
            return Err(TwoScaleError::OutsideInclusion(y[0], y[1], ny, r));
        }
        let s = if r > 0.0 { (ny / r).min(1.0) } else { 1.0 };
        Ok(self.interpolate_nodes(x, |i| self.profile_at(state, i, s)))
    }

    /// Bilinear interpolation of `u0`.
    pub fn sample_u0(&self, state: &TwoScaleState, x: [f64; 2]) -> f64 {
        self.grid.interpolate(&state.u, x)
    }

    fn profile_at(&self, state: &TwoScaleState, i: usize, s: f64) -> f64 {
        let m = self.cfg.m;
        let p = state.profile(i, m);
        if self.radial[i].is_none() {
            return p[m];
        }
        // nodes at s_k = (k + 1/2) / m for k < m and s_m = 1
        let pos = s * m as f64 - 0.5;
        if pos <= 0.0 {
            return p[0];
        }
        let k = (pos.floor() as usize).min(m - 1);
        let (s0, s1) = (k as f64 + 0.5, if k + 1 < m { k as f64 + 1.5 } else { m as f64 });
        let t = ((s * m as f64 - s0) / (s1 - s0)).clamp(0.0, 1.0);
        (1.0 - t) * p[k] + t * p[k + 1]
    }

    fn interpolate_nodes(&self, x: [f64; 2], f: impl Fn(usize) -> f64) -> f64 {
        let g = &self.grid;
        let loc = |d: f64, n: usize| {
            let s = (d / g.h).clamp(0.0, (n - 1) as f64);
            let i = (s.floor() as usize).min(n - 2);
            (i, s - i as f64)
        };
        let (ix, tx) = loc(x[0] - g.x0, g.nx);
        let (iy, ty) = loc(x[1] - g.y0, g.ny);
        let at = |a: usize, b: usize| f(g.index(a, b));
        (1.0 - ty) * ((1.0 - tx) * at(ix, iy) + tx * at(ix + 1, iy))
            + ty * ((1.0 - tx) * at(ix, iy + 1) + tx * at(ix + 1, iy + 1))
    }

    /// Central-difference gradient of `u0` at the nodes (one-sided on the boundary).
    pub fn nodal_gradient(&self, state: &TwoScaleState) -> Vec<[f64; 2]> {
        let g = &self.grid;
        (0..g.len())
            .map(|i| {
                let (ix, iy) = g.ij(i);
                let d = |lo: usize, hi: usize, steps: usize| (state.u[hi] - state.u[lo]) / (steps as f64 * g.h);
                let gx = match (ix > 0, ix + 1 < g.nx) {
                    (true, true) => d(i - 1, i + 1, 2),
                    (false, _) => d(i, i + 1, 1),
                    (_, false) => d(i - 1, i, 1),
                };
                let gy = match (iy > 0, iy + 1 < g.ny) {
                    (true, true) => d(i - g.nx, i + g.nx, 2),
                    (false, _) => d(i, i + g.nx, 1),
                    (_, false) => d(i - g.nx, i, 1),
                };
                [gx, gy]
            })
            .collect()
    }

    /// Bilinear interpolation of a nodal vector field.
    pub fn interpolate_vector(&self, field: &[[f64; 2]], x: [f64; 2]) -> [f64; 2] {
        [self.interpolate_nodes(x, |i| field[i][0]), self.interpolate_nodes(x, |i| field[i][1])]
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TwoScaleStats {
    pub steps: usize,
    pub total_iterations: usize,
    /// Largest relative per-step mismatch between the change of interior mass
    /// and the boundary inflow.
    pub max_mass_defect: f64,
    pub wall_time: Duration,
}

/// Runs the model, calling `observer` on the initial state and after every step.
pub fn run_twoscale_observed<F: FnMut(&TwoScaleModel, &TwoScaleState)>(
    cfg: &TwoScaleConfig,
    mut observer: F,
) -> Result<(TwoScaleModel, TwoScaleState, TwoScaleStats), TwoScaleError> {
    let start = Instant::now();
    let steps = cfg.num_steps()?;
    let model = assemble_twoscale(cfg)?;
    let mut stats = TwoScaleStats::default();
    let mut cur = model.initial_state();
    observer(&model, &cur);
    let mut prev: Option<TwoScaleState> = None;
    for _ in 0..steps {
        let (next, iters) = model.step(&cur, prev.as_ref())?;
        let dm = model.interior_mass(&next) - model.interior_mass(&cur);
        let inflow = cfg.dt * model.boundary_inflow(&next);
        let scale = dm.abs().max(inflow.abs());
        if scale > 0.0 {
            stats.max_mass_defect = stats.max_mass_defect.max((dm - inflow).abs() / scale);
        }
        stats.steps += 1;
        stats.total_iterations += iters;
        observer(&model, &next);
        prev = Some(std::mem::replace(&mut cur, next));
    }
    stats.wall_time = start.elapsed();
    Ok((model, cur, stats))
}

/// States at the steps closest to each of `times`.
pub fn run_twoscale(cfg: &TwoScaleConfig, times: &[f64]) -> Result<(TwoScaleModel, Vec<TwoScaleState>), TwoScaleError> {
    let steps = cfg.num_steps()?;
    let wanted: Vec<usize> = times
        .iter()
        .map(|&t| ((t.clamp(0.0, cfg.t_end) / cfg.dt).round() as usize).min(steps))
        .collect();
    let mut out: Vec<Option<TwoScaleState>> = vec![None; times.len()];
    let (model, _, _) = run_twoscale_observed(cfg, |_, s| {
        for (slot, &w) in out.iter_mut().zip(&wanted) {
            if w == s.step {
                *slot = Some(s.clone());
            }
        }
    })?;
    Ok((model, out.into_iter().map(|s| s.expect("every requested step is visited")).collect()))
}
