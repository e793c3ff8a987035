//! Fully resolved simulation of the two-phase transport problem.
//!
//! Both phases share one continuous nodal field on the fine grid. Faces carry
//! the harmonic mean of the nodal conductances (`D_h` in the high phase,
//! `eps^2 D_l` in the inclusions), which makes the trace and the diffusive
//! flux single valued across the interface. Advection is upwinded and lives
//! only on faces between two high nodes. Time stepping is backward Euler with
//! lumped unit mass and strongly imposed Dirichlet nodes, so every step solves
//! an M-matrix system and the scheme obeys a discrete maximum principle.

use std::time::{Duration, Instant};

use thiserror::Error;

use crate::data::{
    require_nonnegative, require_positive, BoundaryData, DataError, LowInit, MacroFn, VelocitySpec,
};
use crate::geometry::{MediumGeometry, Phase, NO_CELL};
use crate::numerics::{
    pbicgstab_solve, pcg_solve, LinearOperator, Multigrid, SolveError, SolverOptions, Stencil5,
    Stencil9, SymStencil5,
};

#[derive(Debug, Error)]
pub enum MicroError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("linear solve failed at step {step}: {source}")]
    Solve { step: usize, source: SolveError },
    #[error("time step {dt} does not divide the horizon {t_end}")]
    StepMismatch { dt: f64, t_end: f64 },
    #[error("field has {found} values, grid has {expected} nodes")]
    FieldLength { expected: usize, found: usize },
    #[error("operator was assembled for a different grid or time step")]
    Mismatch,
    #[error("inclusions {0} and {1} are too close to freeze the stream function")]
    TouchingInclusions(usize, usize),
}

#[derive(Debug, Clone)]
pub struct MicroConfig {
    pub d_h: f64,
    pub d_l: f64,
    pub velocity: VelocitySpec,
    pub boundary: BoundaryData,
    pub u_init: MacroFn,
    pub v_init: LowInit,
    pub t_end: f64,
    pub dt: f64,
    pub solver: SolverOptions,
}

impl Default for MicroConfig {
    fn default() -> Self {
        Self {
            d_h: 1.0,
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
}

impl MicroConfig {
    /// Number of time steps, or an error when `dt` does not divide `t_end`.
    pub fn num_steps(&self) -> Result<usize, MicroError> {
        let s = self.t_end / self.dt;
        let n = s.round();
        if (s - n).abs() > 1e-9 * n.max(1.0) {
            return Err(MicroError::StepMismatch { dt: self.dt, t_end: self.t_end });
        }
        Ok(n as usize)
    }

    /// `D_l = 0` is accepted: the inclusions then keep their initial data.
    pub fn validate(&self, geom: &MediumGeometry) -> Result<(), MicroError> {
        require_positive("D_h", self.d_h)?;
        require_nonnegative("D_l", self.d_l)?;
        require_positive("dt", self.dt)?;
        require_nonnegative("T", self.t_end)?;
        let n = self.num_steps()?;
        let times: Vec<f64> = (0..=n.clamp(1, 256))
            .map(|k| self.t_end * k as f64 / n.clamp(1, 256) as f64)
            .collect();
        self.boundary.validate(&geom.spec.omega, &times)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MicroState {
    pub t: f64,
    pub step: usize,
    /// `u_eps` on high nodes and `v_eps` on low nodes.
    pub field: Vec<f64>,
}

/// The assembled spatial operator and the time-step system built from it.
pub struct MicroOperator {
    /// `A` in `du/dt + A u = 0`, restricted to interior rows. Dirichlet rows are zero.
    pub stiffness: Stencil5,
    /// `(row, boundary node, c)`: row `row` has the term `-c u_b` moved to the right-hand side.
    pub boundary_couplings: Vec<(usize, usize, f64)>,
    pub dirichlet: Vec<bool>,
    /// Outgoing flux `q . n h` through the east and north face of every node.
    pub flux: Option<[Vec<f64>; 2]>,
    pub dt: f64,
    system: System,
    /// Rows the preconditioner treats as decoupled identities.
    decoupled: Vec<bool>,
    mg: Multigrid,
}

enum System {
    Symmetric(SymStencil5),
    General(Stencil9),
}

impl System {
    fn diag(&self, i: usize) -> f64 {
        match self {
            Self::Symmetric(s) => s.diag[i],
            Self::General(s) => s.coef[i][4],
        }
    }
}

impl MicroOperator {
    pub fn is_symmetric(&self) -> bool {
        matches!(self.system, System::Symmetric(_))
    }

    pub fn num_mg_levels(&self) -> usize {
        self.mg.num_levels()
    }

    /// Row sums of the operator with the boundary couplings put back.
    pub fn full_row_sums(&self) -> Vec<f64> {
        let mut s = self.stiffness.row_sums();
        for &(a, _, c) in &self.boundary_couplings {
            s[a] -= c;
        }
        for (i, v) in s.iter_mut().enumerate() {
            if self.dirichlet[i] {
                *v = 0.0;
            }
        }
        s
    }

    /// Largest net outflow `|sum q . n h|` over the dual cells of high nodes.
    pub fn max_divergence(&self, geom: &MediumGeometry) -> f64 {
        let Some([fx, fy]) = &self.flux else { return 0.0 };
        let g = &geom.grid;
        let mut worst: f64 = 0.0;
        for i in 0..g.len() {
            if geom.phase[i] != Phase::High || g.on_boundary(i) {
                continue;
            }
            let net = fx[i] - fx[i - 1] + fy[i] - fy[i - g.nx];
            worst = worst.max(net.abs());
        }
        worst / (g.h * g.h)
    }

    /// `M u + dt * (A u)` applied with the time-step system, for tests.
    pub fn apply_system(&self, x: &[f64], y: &mut [f64]) {
        match &self.system {
            System::Symmetric(s) => s.apply(x, y),
            System::General(s) => s.apply(x, y),
        }
    }
}

fn harmonic(a: f64, b: f64) -> f64 {
    if a == b {
        a
    } else if a + b == 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

/// Rounds to a dyadic grid fine enough to be invisible but coarse enough that
/// differences and four-term sums of such values are exact in `f64`.
fn dyadic(v: f64) -> f64 {
    const S: f64 = (1u64 << 40) as f64;
    (v * S).round() / S
}

/// Stream function at the dual corners `(i + 1/2, k + 1/2) h`, stored at
/// `(i + 1, k + 1)` on an `(nx + 1) x (ny + 1)` array, with every corner of a
/// low node's dual cell frozen to the value at the inclusion centre.
fn corner_stream_function(
    geom: &MediumGeometry,
    velocity: &VelocitySpec,
) -> Result<Vec<f64>, MicroError> {
    let g = &geom.grid;
    let (cx, cy) = (g.nx + 1, g.ny + 1);
    let omega = &geom.spec.omega;
    let mut psi = vec![0.0; cx * cy];
    for b in 0..cy {
        for a in 0..cx {
            let x = [g.x0 + (a as f64 - 0.5) * g.h, g.y0 + (b as f64 - 0.5) * g.h];
            psi[b * cx + a] = dyadic(velocity.psi(omega, x));
        }
    }
    let mut claim = vec![NO_CELL; cx * cy];
    for i in 0..g.len() {
        let c = geom.owner[i];
        if c == NO_CELL {
            continue;
        }
        let v = dyadic(velocity.psi(omega, geom.cell_center(c as usize)));
        let (ix, iy) = g.ij(i);
        for (a, b) in [(ix, iy), (ix + 1, iy), (ix, iy + 1), (ix + 1, iy + 1)] {
            let k = b * cx + a;
            if claim[k] != NO_CELL && claim[k] != c {
                return Err(MicroError::TouchingInclusions(claim[k] as usize, c as usize));
            }
            claim[k] = c;
            psi[k] = v;
        }
    }
    Ok(psi)
}

/// Face fluxes `q . n h` through the east and north faces of each node.
/// Faces touching an inclusion carry no flux because their corners are frozen.
fn face_fluxes(geom: &MediumGeometry, velocity: &VelocitySpec) -> Result<[Vec<f64>; 2], MicroError> {
    let g = &geom.grid;
    let psi = corner_stream_function(geom, velocity)?;
    let cx = g.nx + 1;
    let at = |a: usize, b: usize| psi[b * cx + a];
    let mut fx = vec![0.0; g.len()];
    let mut fy = vec![0.0; g.len()];
    for i in 0..g.len() {
        let (ix, iy) = g.ij(i);
        // east face: corners (ix + 1/2, iy -+ 1/2)
        fx[i] = at(ix + 1, iy + 1) - at(ix + 1, iy);
        // north face: corners (ix -+ 1/2, iy + 1/2)
        fy[i] = -(at(ix + 1, iy + 1) - at(ix, iy + 1));
    }
    Ok([fx, fy])
}

/// Assembles the spatial operator and the backward Euler system for `cfg.dt`.
pub fn assemble_micro(geom: &MediumGeometry, cfg: &MicroConfig) -> Result<MicroOperator, MicroError> {
    cfg.validate(geom)?;
    let g = &geom.grid;
    let n = g.len();
    let h2 = g.h * g.h;
    let eps2 = geom.epsilon * geom.epsilon;
    let kappa = |i: usize| match geom.phase[i] {
        Phase::High => cfg.d_h,
        Phase::Low => eps2 * cfg.d_l,
    };
    let dirichlet: Vec<bool> = (0..n).map(|i| g.on_boundary(i)).collect();
    let flux = match cfg.velocity {
        VelocitySpec::Zero => None,
        v if v.amplitude() == 0.0 => None,
        v => Some(face_fluxes(geom, &v)?),
    };

    let mut st = Stencil5::zeros(g.nx, g.ny);
    st.symmetric = flux.is_none();
    let mut couplings = Vec::new();
    let mut edge = |st: &mut Stencil5, a: usize, b: usize, f: f64| {
        let k = harmonic(kappa(a), kappa(b)) / h2;
        let advective = geom.phase[a] == Phase::High && geom.phase[b] == Phase::High;
        let f = if advective { f / h2 } else { 0.0 };
        // Row a sees outflow f: +max(f,0) u_a + min(f,0) u_b. Row b sees -f.
        let (ca, cb) = (k + f.max(0.0), k + (-f).max(0.0));
        match (dirichlet[a], dirichlet[b]) {
            (false, false) => {
                st.diag[a] += ca;
                st.diag[b] += cb;
                let (ab, ba) = (k + (-f).max(0.0), k + f.max(0.0));
                if b == a + 1 {
                    st.east[a] -= ab;
                    st.west[b] -= ba;
                } else {
                    st.north[a] -= ab;
                    st.south[b] -= ba;
                }
            }
            (false, true) => {
                st.diag[a] += ca;
                couplings.push((a, b, k + (-f).max(0.0)));
            }
            (true, false) => {
                st.diag[b] += cb;
                couplings.push((b, a, k + f.max(0.0)));
            }
            (true, true) => {}
        }
    };
    for i in 0..n {
        let (ix, iy) = g.ij(i);
        let (fe, fn_) = match &flux {
            Some([fx, fy]) => (fx[i], fy[i]),
            None => (0.0, 0.0),
        };
        if ix + 1 < g.nx {
            edge(&mut st, i, i + 1, fe);
        }
        if iy + 1 < g.ny {
            edge(&mut st, i, i + g.nx, fn_);
        }
    }

    let mass: Vec<f64> = vec![1.0; n];
    let (system, mg) = if st.symmetric {
        let mut s = SymStencil5::from_shifted(&mass, &st, cfg.dt).expect("diffusion operator is symmetric");
        for i in 0..n {
            if dirichlet[i] {
                s.diag[i] = 1.0;
            }
        }
        let mg = Multigrid::from_symmetric5(&s);
        (System::Symmetric(s), mg)
    } else {
        let mut s = Stencil9::from_shifted(&mass, &st, cfg.dt);
        for i in 0..n {
            if dirichlet[i] {
                s.coef[i][4] = 1.0;
            }
        }
        let mg = Multigrid::new(s.clone());
        (System::General(s), mg)
    };
    let decoupled = (0..n)
        .map(|i| {
            dirichlet[i]
                || (st.west[i] == 0.0 && st.east[i] == 0.0 && st.south[i] == 0.0 && st.north[i] == 0.0)
        })
        .collect();
    Ok(MicroOperator { stiffness: st, boundary_couplings: couplings, dirichlet, flux, dt: cfg.dt, system, decoupled, mg })
}

/// Initial field: `u_I` on high nodes, `v_I` on low nodes and `u_b(., 0)` on the boundary.
pub fn initial_state(geom: &MediumGeometry, cfg: &MicroConfig) -> MicroState {
    let g = &geom.grid;
    let omega = &geom.spec.omega;
    let field = (0..g.len())
        .map(|i| {
            let x = g.coord(i);
            if g.on_boundary(i) {
                cfg.boundary.eval(x, 0.0)
            } else if geom.phase[i] == Phase::Low {
                cfg.v_init.eval(&cfg.u_init, omega, x)
            } else {
                cfg.u_init.eval(omega, x)
            }
        })
        .collect();
    MicroState { t: 0.0, step: 0, field }
}

/// State built from an explicit field. Boundary nodes are overwritten with `u_b(., 0)`.
pub fn state_from_field(geom: &MediumGeometry, cfg: &MicroConfig, mut field: Vec<f64>) -> Result<MicroState, MicroError> {
    let g = &geom.grid;
    if field.len() != g.len() {
        return Err(MicroError::FieldLength { expected: g.len(), found: field.len() });
    }
    for (i, v) in field.iter_mut().enumerate() {
        if g.on_boundary(i) {
            *v = cfg.boundary.eval(g.coord(i), 0.0);
        }
    }
    Ok(MicroState { t: 0.0, step: 0, field })
}

/// Bounds that the discrete maximum principle guarantees for the whole run.
pub fn data_hull(geom: &MediumGeometry, cfg: &MicroConfig, initial: &MicroState) -> (f64, f64) {
    let (mut lo, mut hi) = cfg.boundary.range(&geom.spec.omega, cfg.t_end);
    for &v in &initial.field {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (lo, hi)
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunStats {
    pub steps: usize,
    pub total_iterations: usize,
    pub max_iterations: usize,
    pub wall_time: Duration,
}

/// One backward Euler step. `previous` (the state before `state`) enables a
/// linear extrapolation warm start.
pub fn step_micro(
    geom: &MediumGeometry,
    op: &MicroOperator,
    cfg: &MicroConfig,
    state: &MicroState,
    previous: Option<&MicroState>,
) -> Result<(MicroState, usize), MicroError> {
    let g = &geom.grid;
    if state.field.len() != g.len() || op.dirichlet.len() != g.len() || op.dt != cfg.dt {
        return Err(MicroError::Mismatch);
    }
    let t1 = state.t + cfg.dt;
    let mut rhs = state.field.clone();
    for i in 0..g.len() {
        if op.dirichlet[i] {
            rhs[i] = cfg.boundary.eval(g.coord(i), t1);
        }
    }
    for &(a, b, c) in &op.boundary_couplings {
        rhs[a] += cfg.dt * c * rhs[b];
    }
    let mut guess = match previous {
        Some(p) => state.field.iter().zip(&p.field).map(|(u, v)| 2.0 * u - v).collect(),
        None => state.field.clone(),
    };
    for i in 0..g.len() {
        if op.decoupled[i] {
            guess[i] = rhs[i] / op.system.diag(i);
        }
    }
    let result = match &op.system {
        System::Symmetric(s) => pcg_solve(s, &rhs, Some(&guess), &op.mg, cfg.solver),
        System::General(s) => pbicgstab_solve(s, &rhs, Some(&guess), &op.mg, cfg.solver),
    };
    let (field, stats) = result.map_err(|source| MicroError::Solve { step: state.step + 1, source })?;
    Ok((MicroState { t: t1, step: state.step + 1, field }, stats.iterations))
}

/// Runs from `initial` to `cfg.t_end`, calling `observer` on the initial state and after every step.
pub fn run_micro_from<F: FnMut(&MicroState)>(
    geom: &MediumGeometry,
    cfg: &MicroConfig,
    initial: MicroState,
    mut observer: F,
) -> Result<(MicroState, RunStats), MicroError> {
    let start = Instant::now();
    let steps = cfg.num_steps()?;
    let mut stats = RunStats::default();
    observer(&initial);
    if steps == 0 {
        stats.wall_time = start.elapsed();
        return Ok((initial, stats));
    }
    let op = assemble_micro(geom, cfg)?;
    let mut prev: Option<MicroState> = None;
    let mut cur = initial;
    for _ in 0..steps {
        let (next, iters) = step_micro(geom, &op, cfg, &cur, prev.as_ref())?;
        stats.steps += 1;
        stats.total_iterations += iters;
        stats.max_iterations = stats.max_iterations.max(iters);
        observer(&next);
        prev = Some(std::mem::replace(&mut cur, next));
    }
    stats.wall_time = start.elapsed();
    Ok((cur, stats))
}

/// Runs from the configured initial data.
pub fn run_micro_observed<F: FnMut(&MicroState)>(
    geom: &MediumGeometry,
    cfg: &MicroConfig,
    observer: F,
) -> Result<(MicroState, RunStats), MicroError> {
    run_micro_from(geom, cfg, initial_state(geom, cfg), observer)
}

/// States at the steps closest to each of `times` (clamped to `[0, T]`).
pub fn run_micro(geom: &MediumGeometry, cfg: &MicroConfig, times: &[f64]) -> Result<Vec<MicroState>, MicroError> {
    let steps = cfg.num_steps()?;
    let wanted: Vec<usize> = times
        .iter()
        .map(|&t| ((t.clamp(0.0, cfg.t_end) / cfg.dt).round() as usize).min(steps))
        .collect();
    let mut out: Vec<Option<MicroState>> = vec![None; times.len()];
    run_micro_observed(geom, cfg, |s| {
        for (slot, &w) in out.iter_mut().zip(&wanted) {
            if w == s.step {
                *slot = Some(s.clone());
            }
        }
    })?;
    Ok(out.into_iter().map(|s| s.expect("every requested step is visited")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_medium, LevelSetSpec};
    use rand::{Rng, SeedableRng};

    fn medium(eps: f64, ratio: usize, r: f64) -> MediumGeometry {
        build_medium(&LevelSetSpec::constant(r).unwrap(), eps, eps / ratio as f64).unwrap()
    }

    fn small_cfg() -> MicroConfig {
        MicroConfig { t_end: 0.02, dt: 0.002, ..MicroConfig::default() }
    }

    #[test]
    fn constants_are_preserved() {
        let geom = medium(1.0 / 8.0, 16, 0.25);
        for velocity in [VelocitySpec::Zero, VelocitySpec::StreamFunction { amplitude: 2.0 }] {
            let cfg = MicroConfig {
                d_l: 0.3,
                velocity,
                boundary: BoundaryData::Constant(0.7),
                u_init: MacroFn::Constant(0.7),
                v_init: LowInit::MatchMacro,
                t_end: 0.1,
                dt: 0.001,
                ..MicroConfig::default()
            };
            let (last, _) = run_micro_observed(&geom, &cfg, |s| {
                let err = s.field.iter().map(|v| (v - 0.7).abs()).fold(0.0, f64::max);
                assert!(err <= 1e-12, "step {} error {err}", s.step);
            })
            .unwrap();
            assert_eq!(last.step, 100);
        }
    }

    #[test]
    fn interface_faces_use_the_harmonic_mean() {
        let geom = medium(1.0 / 8.0, 16, 0.25);
        let cfg = MicroConfig { d_h: 2.0, d_l: 3.0, ..small_cfg() };
        let op = assemble_micro(&geom, &cfg).unwrap();
        let h2 = geom.grid.h * geom.grid.h;
        let kl = geom.epsilon * geom.epsilon * 3.0;
        let expected = 2.0 * 2.0 * kl / (2.0 + kl) / h2;
        let f = geom.interface_faces.iter().find(|f| f.horizontal && !op.dirichlet[f.high]).unwrap();
        let (a, b) = (f.high.min(f.low), f.high.max(f.low));
        assert!((op.stiffness.east[a] + expected).abs() < 1e-9 * expected);
        assert!((op.stiffness.west[b] + expected).abs() < 1e-9 * expected);
    }

    #[test]
    fn matched_conductances_give_a_uniform_laplacian() {
        let eps = 1.0 / 8.0;
        let geom = medium(eps, 16, 0.25);
        let cfg = MicroConfig { d_h: 1.0, d_l: 1.0 / (eps * eps), ..small_cfg() };
        let op = assemble_micro(&geom, &cfg).unwrap();
        let c = 1.0 / (geom.grid.h * geom.grid.h);
        for i in 0..geom.grid.len() {
            if op.dirichlet[i] {
                continue;
            }
            assert!((op.stiffness.diag[i] - 4.0 * c).abs() < 1e-9 * c);
        }
    }

    #[test]
    fn diffusion_only_system_is_symmetric_with_zero_row_sums() {
        let geom = medium(1.0 / 8.0, 16, 0.3);
        let op = assemble_micro(&geom, &small_cfg()).unwrap();
        assert!(op.is_symmetric());
        let csr = op.stiffness.to_csr();
        assert!(csr.check_symmetric(1e-12));
        let scale = op.stiffness.diag.iter().cloned().fold(0.0, f64::max);
        assert!(op.full_row_sums().iter().all(|s| s.abs() <= 1e-12 * scale));
    }

    #[test]
    fn stream_function_flux_is_divergence_free_and_stays_out_of_inclusions() {
        let geom = medium(1.0 / 8.0, 16, 0.3);
        let cfg = MicroConfig { velocity: VelocitySpec::StreamFunction { amplitude: 1.5 }, ..small_cfg() };
        let op = assemble_micro(&geom, &cfg).unwrap();
        assert!(!op.is_symmetric());
        assert!(op.max_divergence(&geom) <= 1e-12);
        let [fx, fy] = op.flux.as_ref().unwrap();
        for f in &geom.interface_faces {
            let a = f.high.min(f.low);
            let flux = if f.horizontal { fx[a] } else { fy[a] };
            assert_eq!(flux, 0.0);
        }
        let scale = op.stiffness.diag.iter().cloned().fold(0.0, f64::max);
        assert!(op.full_row_sums().iter().all(|s| s.abs() <= 1e-12 * scale));
    }

    #[test]
    fn frozen_inclusions_keep_their_initial_data() {
        let geom = medium(1.0 / 8.0, 16, 0.25);
        let cfg = MicroConfig { d_l: 0.0, v_init: LowInit::Constant(0.3), ..small_cfg() };
        run_micro_observed(&geom, &cfg, |s| {
            for i in 0..s.field.len() {
                if geom.phase[i] == Phase::Low {
                    assert!((s.field[i] - 0.3).abs() < 1e-12);
                }
            }
        })
        .unwrap();
    }

    #[test]
    fn random_data_obeys_the_maximum_principle() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(7);
        let geom = medium(1.0 / 8.0, 16, 0.3);
        for trial in 0..4 {
            let amp = if trial % 2 == 0 { 0.0 } else { 3.0 };
            let cfg = MicroConfig {
                d_l: rng.gen_range(0.1..2.0),
                velocity: VelocitySpec::StreamFunction { amplitude: amp },
                boundary: BoundaryData::Decay { c0: rng.gen_range(0.0..1.0), lambda: 1.0 },
                ..small_cfg()
            };
            let field: Vec<f64> = (0..geom.grid.len()).map(|_| rng.gen_range(-1.0..2.0)).collect();
            let init = state_from_field(&geom, &cfg, field).unwrap();
            let (lo, hi) = data_hull(&geom, &cfg, &init);
            run_micro_from(&geom, &cfg, init, |s| {
                for &v in &s.field {
                    assert!(v >= lo - 1e-9 && v <= hi + 1e-9, "{v} outside [{lo}, {hi}]");
                }
            })
            .unwrap();
        }
    }

    #[test]
    fn zero_horizon_returns_the_initial_state() {
        let geom = medium(1.0 / 8.0, 16, 0.25);
        let cfg = MicroConfig { t_end: 0.0, ..small_cfg() };
        let out = run_micro(&geom, &cfg, &[0.0]).unwrap();
        assert_eq!(out[0], initial_state(&geom, &cfg));
    }

    #[test]
    fn rejects_increasing_boundary_data() {
        let geom = medium(1.0 / 8.0, 16, 0.25);
        let cfg = MicroConfig { boundary: BoundaryData::Decay { c0: 1.0, lambda: -1.0 }, ..small_cfg() };
        assert!(matches!(assemble_micro(&geom, &cfg), Err(MicroError::Data(_))));
    }
}
