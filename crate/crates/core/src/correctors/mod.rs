//! Corrector reconstructions, error norms, rate fitting and the epsilon ladder.

use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::cell::{solve_cell, CellError, CellLibrary, CellSolution, EffectiveTable};
use crate::data::{BoundaryData, LowInit, MacroFn};
use crate::geometry::{build_cutoff, build_medium, CutoffField, GeometryError, LevelSetSpec, MediumGeometry, Phase, RadiusProfile, Rect};
use crate::microsim::{run_micro_observed, MicroConfig, MicroError};
use crate::numerics::SolverOptions;
use crate::twoscale::{run_twoscale, Coefficients, TwoScaleConfig, TwoScaleError, TwoScaleModel, TwoScaleState};

pub mod lemmas;

#[derive(Debug, Error)]
pub enum CorrectorError {
    #[error(transparent)]
    Cell(#[from] CellError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Micro(#[from] MicroError),
    #[error(transparent)]
    TwoScale(#[from] TwoScaleError),
    #[error("field has {found} values, grid has {expected}")]
    FieldLength { expected: usize, found: usize },
    #[error("sample times differ: micro t = {micro}, reconstruction t = {recon}")]
    TimeMismatch { micro: f64, recon: f64 },
    #[error("rate fit needs at least 3 rows, got {0}")]
    TooFewRows(usize),
    #[error("rate fit needs positive data, got norm {norm} at eps {eps}")]
    NonPositive { eps: f64, norm: f64 },
    #[error("ladder runs failed: {}", .0.iter().map(|(e, m)| format!("eps={e}: {m}")).collect::<Vec<_>>().join("; "))]
    Ladder(Vec<(f64, String)>),
}

/// Where the cell correctors `M(r, y)` come from.
#[derive(Debug, Clone)]
pub enum CorrectorSource {
    /// No inclusions: `M = 0`.
    Zero,
    /// One radius.
    Single(Arc<CellSolution>),
    /// Several radii, interpolated linearly in `r`.
    Library(Arc<CellLibrary>),
}

impl CorrectorSource {
    pub fn value(&self, r: f64, y: [f64; 2]) -> Result<[f64; 2], CellError> {
        if r == 0.0 {
            return Ok([0.0, 0.0]);
        }
        match self {
            Self::Zero => Ok([0.0, 0.0]),
            Self::Single(s) => {
                if (s.r - r).abs() > 1e-12 {
                    return Err(CellError::MissingRadius(r));
                }
                Ok(s.value(y))
            }
            Self::Library(lib) => {
                let (a, b, t) = lib.bracket(r)?;
                let (ma, mb) = (a.value(y), b.value(y));
                Ok([(1.0 - t) * ma[0] + t * mb[0], (1.0 - t) * ma[1] + t * mb[1]])
            }
        }
    }
}

/// Macroscopic reconstructions on the fine grid at one time.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub t: f64,
    /// `u0(x)` at every node.
    pub u0: Vec<f64>,
    /// `v0(x, x/eps)` on low nodes, zero elsewhere.
    pub v0: Vec<f64>,
    /// `u0 + eps chi M(x, x/eps) . grad u0` on high nodes, zero elsewhere.
    pub u1: Vec<f64>,
}

/// Builds `u0^eps`, `v0^eps` and `u1^eps` from a two-scale state.
///
/// The first-order term carries the cutoff `chi_eps`, so `u1^eps` keeps the
/// Dirichlet data and vanishes in the frame of cells without inclusions.
pub fn reconstruct(
    geom: &MediumGeometry,
    model: &TwoScaleModel,
    state: &TwoScaleState,
    cells: &CorrectorSource,
    cutoff: &CutoffField,
) -> Result<Reconstruction, CorrectorError> {
    let g = &geom.grid;
    let grad = model.nodal_gradient(state);
    let eps = geom.epsilon;
    let rows: Vec<(f64, f64, f64)> = (0..g.len())
        .into_par_iter()
        .map(|i| -> Result<(f64, f64, f64), CorrectorError> {
            let x = g.coord(i);
            let u0 = model.sample_u0(state, x);
            match geom.phase[i] {
                Phase::Low => {
                    let (_, y) = geom.node_cell(i);
                    Ok((u0, model.sample_v0(state, x, y)?, 0.0))
                }
                Phase::High => {
                    let chi = cutoff.values[i];
                    if chi == 0.0 {
                        return Ok((u0, 0.0, u0));
                    }
                    let (_, y) = geom.node_cell(i);
                    let m = cells.value(geom.spec.r(x), y)?;
                    let gu = model.interpolate_vector(&grad, x);
                    Ok((u0, 0.0, u0 + eps * chi * (m[0] * gu[0] + m[1] * gu[1])))
                }
            }
        })
        .collect::<Result<_, _>>()?;
    let mut out = Reconstruction { t: state.t, u0: Vec::with_capacity(g.len()), v0: Vec::with_capacity(g.len()), u1: Vec::with_capacity(g.len()) };
    for (a, b, c) in rows {
        out.u0.push(a);
        out.v0.push(b);
        out.u1.push(c);
    }
    Ok(out)
}

/// Norms of the differences at one time.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NormSample {
    pub t: f64,
    /// `|u - u0^eps|` in `L2(high)`.
    pub n1: f64,
    /// `|v - v0^eps|` in `L2(low)`.
    pub n2: f64,
    /// `|u - u1^eps|` in `H1(high)`.
    pub n3: f64,
    /// `eps |v - v0^eps|` in `H1(low)`.
    pub n4: f64,
}

/// Squared `L2` and `H1`-seminorm of `e` restricted to nodes and faces of one phase.
///
/// `L2` uses the clipped dual cells; the seminorm sums squared differences
/// over faces joining two nodes of the phase, with half weight on faces
/// along the domain boundary.
pub fn phase_norms_sq(geom: &MediumGeometry, e: &[f64], phase: Phase) -> (f64, f64) {
    let g = &geom.grid;
    let mut l2 = 0.0;
    let mut semi = 0.0;
    for i in 0..g.len() {
        if geom.phase[i] != phase {
            continue;
        }
        l2 += g.dual_volume(i) * e[i] * e[i];
        let (ix, iy) = g.ij(i);
        if ix + 1 < g.nx && geom.phase[i + 1] == phase {
            let w = if iy == 0 || iy + 1 == g.ny { 0.5 } else { 1.0 };
            semi += w * (e[i + 1] - e[i]).powi(2);
        }
        if iy + 1 < g.ny && geom.phase[i + g.nx] == phase {
            let w = if ix == 0 || ix + 1 == g.nx { 0.5 } else { 1.0 };
            semi += w * (e[i + g.nx] - e[i]).powi(2);
        }
    }
    (l2, semi)
}

pub fn corrector_norms(geom: &MediumGeometry, t: f64, field: &[f64], recon: &Reconstruction) -> Result<NormSample, CorrectorError> {
    let n = geom.grid.len();
    if field.len() != n || recon.u0.len() != n {
        return Err(CorrectorError::FieldLength { expected: n, found: field.len().min(recon.u0.len()) });
    }
    if (t - recon.t).abs() > 1e-9 * t.abs().max(1.0) {
        return Err(CorrectorError::TimeMismatch { micro: t, recon: recon.t });
    }
    let d0: Vec<f64> = field.iter().zip(&recon.u0).map(|(a, b)| a - b).collect();
    let dv: Vec<f64> = field.iter().zip(&recon.v0).map(|(a, b)| a - b).collect();
    let d1: Vec<f64> = field.iter().zip(&recon.u1).map(|(a, b)| a - b).collect();
    let (a, _) = phase_norms_sq(geom, &d0, Phase::High);
    let (b, bs) = phase_norms_sq(geom, &dv, Phase::Low);
    let (c, cs) = phase_norms_sq(geom, &d1, Phase::High);
    Ok(NormSample {
        t,
        n1: a.sqrt(),
        n2: b.sqrt(),
        n3: (c + cs).sqrt(),
        n4: geom.epsilon * (b + bs).sqrt(),
    })
}

/// Time aggregates of a norm series.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NormSummary {
    pub n1: f64,
    pub n2: f64,
    pub n3_linf: f64,
    pub n3_l2: f64,
    pub n4_linf: f64,
    pub n4_l2: f64,
}

impl NormSummary {
    pub fn values(&self) -> [f64; 6] {
        [self.n1, self.n2, self.n3_linf, self.n3_l2, self.n4_linf, self.n4_l2]
    }
}

pub const NORM_NAMES: [&str; 6] = ["N1", "N2", "N3_Linf", "N3_L2", "N4_Linf", "N4_L2"];

/// Time aggregates over `(0, T]`: maximum over the samples for `L-infinity`,
/// right endpoint rule from `t = 0` for `L2`. Samples at `t <= 0` are ignored.
pub fn summarize(samples: &[NormSample]) -> NormSummary {
    let live: Vec<&NormSample> = samples.iter().filter(|s| s.t > 0.0).collect();
    let max = |f: fn(&NormSample) -> f64| live.iter().map(|s| f(s)).fold(0.0, f64::max);
    let l2 = |f: fn(&NormSample) -> f64| {
        let mut prev = 0.0;
        let mut acc = 0.0;
        for s in &live {
            acc += (s.t - prev) * f(s).powi(2);
            prev = s.t;
        }
        acc.sqrt()
    };
    NormSummary {
        n1: max(|s| s.n1),
        n2: max(|s| s.n2),
        n3_linf: max(|s| s.n3),
        n3_l2: l2(|s| s.n3),
        n4_linf: max(|s| s.n4),
        n4_l2: l2(|s| s.n4),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fit {
    pub p: f64,
    pub c: f64,
}

/// Least squares fit of `log N = log c + p log eps`.
pub fn rate_fit(rows: &[(f64, f64)]) -> Result<Fit, CorrectorError> {
    if rows.len() < 3 {
        return Err(CorrectorError::TooFewRows(rows.len()));
    }
    if let Some(&(eps, norm)) = rows.iter().find(|(e, n)| !(*n > 0.0) || !(*e > 0.0)) {
        return Err(CorrectorError::NonPositive { eps, norm });
    }
    let k = rows.len() as f64;
    let xs: Vec<f64> = rows.iter().map(|r| r.0.ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.1.ln()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / k, ys.iter().sum::<f64>() / k);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let p = sxy / sxx;
    Ok(Fit { p, c: (my - p * mx).exp() })
}

/// Inputs of an epsilon ladder. Every row uses `h = eps / ratio` and `dt = h`.
#[derive(Debug, Clone)]
pub struct LadderConfig {
    pub epsilons: Vec<f64>,
    pub radius: RadiusProfile,
    pub omega: Rect,
    pub ratio: usize,
    pub d_h: f64,
    pub d_l: f64,
    pub boundary: BoundaryData,
    pub u_init: MacroFn,
    pub v_init: LowInit,
    pub t_end: f64,
    pub h_macro: f64,
    pub m: usize,
    /// Cell resolution; `None` uses `ratio`, so cell nodes coincide with micro nodes.
    pub cell_n: Option<usize>,
    /// Radii tabulated for a varying radius.
    pub table_points: usize,
    /// Number of sample times `k T / samples`, `k = 1..=samples`; the initial time is excluded.
    pub samples: usize,
    /// Also run the inclusion-free problem on each grid and subtract it as the discretization floor.
    pub floor: bool,
    pub solver: SolverOptions,
}

impl Default for LadderConfig {
    fn default() -> Self {
        Self {
            epsilons: vec![1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0],
            radius: RadiusProfile::Constant { r0: 0.25 },
            omega: Rect::unit(),
            ratio: 32,
            d_h: 1.0,
            d_l: 1.0,
            boundary: BoundaryData::Constant(0.0),
            u_init: MacroFn::SineProduct { amp: 1.0 },
            v_init: LowInit::MatchMacro,
            t_end: 0.25,
            h_macro: 1.0 / 64.0,
            m: 16,
            cell_n: None,
            table_points: 9,
            samples: 32,
            floor: true,
            solver: SolverOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateRow {
    pub eps: f64,
    pub h: f64,
    pub dt: f64,
    pub steps: usize,
    pub norms: NormSummary,
    pub micro_iterations: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormFit {
    pub name: &'static str,
    pub raw: Option<Fit>,
    /// Fit of `N - floor`, when a floor was run and every difference is positive.
    pub corrected: Option<Fit>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    /// Sorted by `eps`, largest first.
    pub rows: Vec<RateRow>,
    /// Inclusion-free runs on the same grids, aligned with `rows`.
    pub floors: Vec<RateRow>,
    pub fits: Vec<NormFit>,
    pub seconds: f64,
}

impl RateReport {
    pub fn column(&self, k: usize) -> Vec<(f64, f64)> {
        self.rows.iter().map(|r| (r.eps, r.norms.values()[k])).collect()
    }

    /// `N - floor` per row.
    pub fn corrected_column(&self, k: usize) -> Option<Vec<(f64, f64)>> {
        (self.floors.len() == self.rows.len()).then(|| {
            self.rows.iter().zip(&self.floors).map(|(r, f)| (r.eps, r.norms.values()[k] - f.norms.values()[k])).collect()
        })
    }

    pub fn strictly_decreasing(&self, k: usize) -> bool {
        self.column(k).windows(2).all(|w| w[1].1 < w[0].1)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("eps,N1,N2,N3_Linf,N3_L2,N4_Linf,N4_L2\n");
        for r in &self.rows {
            let v = r.norms.values();
            let _ = writeln!(s, "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}", r.eps, v[0], v[1], v[2], v[3], v[4], v[5]);
        }
        if !self.floors.is_empty() {
            s.push_str("# floor (inclusion-free runs on the same grids)\n");
            for r in &self.floors {
                let v = r.norms.values();
                let _ = writeln!(s, "# {:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}", r.eps, v[0], v[1], v[2], v[3], v[4], v[5]);
            }
        }
        s.push_str("# fit: norm,p,c,p_corrected,c_corrected\n");
        for f in &self.fits {
            let fmt = |x: Option<Fit>| x.map_or(("nan".to_string(), "nan".to_string()), |x| (format!("{:.6}", x.p), format!("{:.6e}", x.c)));
            let (p, c) = fmt(f.raw);
            let (pc, cc) = fmt(f.corrected);
            let _ = writeln!(s, "# {},{p},{c},{pc},{cc}", f.name);
        }
        s
    }
}

/// Cell coefficients and correctors at resolution `n`: one solve for a constant
/// radius, a table of `table_points` radii across the range otherwise.
pub fn cell_data(spec: &LevelSetSpec, n: usize, d_h: f64, table_points: usize) -> Result<(Coefficients, CorrectorSource), CorrectorError> {
    if !spec.has_inclusions() {
        let sol = solve_cell(0.0, n.max(32), d_h)?;
        return Ok((Coefficients::from_cell(&sol), CorrectorSource::Zero));
    }
    if let RadiusProfile::Constant { r0 } = spec.radius {
        let sol = Arc::new(solve_cell(r0, n, d_h)?);
        return Ok((Coefficients::from_cell(&sol), CorrectorSource::Single(sol)));
    }
    let k = table_points.max(4);
    let radii: Vec<f64> = (0..k).map(|i| spec.r_min + (spec.r_max - spec.r_min) * i as f64 / (k - 1) as f64).collect();
    let lib = CellLibrary::build(&radii, n, d_h)?;
    let tensors = radii.iter().map(|&r| lib.get(r).map(|s| s.tensor)).collect::<Result<Vec<_>, _>>()?;
    let table = EffectiveTable::from_samples(n, d_h, radii, tensors)?;
    Ok((Coefficients::Table(Arc::new(table)), CorrectorSource::Library(Arc::new(lib))))
}

/// Runs the micro and two-scale problems for one `eps` and returns the norm summary.
pub fn ladder_row(cfg: &LadderConfig, eps: f64, radius: &RadiusProfile) -> Result<RateRow, CorrectorError> {
    let start = Instant::now();
    let spec = LevelSetSpec::new(radius.clone(), cfg.omega)?;
    let h = eps / cfg.ratio as f64;
    let geom = build_medium(&spec, eps, h)?;
    let (coefficients, cells) = cell_data(&spec, cfg.cell_n.unwrap_or(cfg.ratio), cfg.d_h, cfg.table_points)?;
    let micro = MicroConfig {
        d_h: cfg.d_h,
        d_l: cfg.d_l,
        velocity: Default::default(),
        boundary: cfg.boundary,
        u_init: cfg.u_init.clone(),
        v_init: cfg.v_init.clone(),
        t_end: cfg.t_end,
        dt: h,
        solver: cfg.solver,
    };
    let steps = micro.num_steps()?;
    let every = (steps / cfg.samples.max(1)).max(1);
    let sample_steps: Vec<usize> = (1..=steps).filter(|s| s % every == 0 || *s == steps).collect();
    let times: Vec<f64> = sample_steps.iter().map(|&s| s as f64 * h).collect();

    let mut macro_cfg = TwoScaleConfig::new(spec.clone(), coefficients);
    macro_cfg.h_macro = cfg.h_macro;
    macro_cfg.m = cfg.m;
    macro_cfg.d_l = cfg.d_l;
    macro_cfg.boundary = cfg.boundary;
    macro_cfg.u_init = cfg.u_init.clone();
    macro_cfg.v_init = cfg.v_init.clone();
    macro_cfg.t_end = cfg.t_end;
    macro_cfg.dt = h;
    macro_cfg.solver = cfg.solver;
    let (model, states) = run_twoscale(&macro_cfg, &times)?;

    let cutoff = build_cutoff(&geom);
    let mut samples = Vec::with_capacity(states.len());
    let mut failure: Option<CorrectorError> = None;
    let mut next = 0;
    let (_, stats) = run_micro_observed(&geom, &micro, |s| {
        if failure.is_some() || next >= sample_steps.len() || s.step != sample_steps[next] {
            return;
        }
        let st = &states[next];
        next += 1;
        let result = reconstruct(&geom, &model, st, &cells, &cutoff)
            .and_then(|rec| corrector_norms(&geom, s.t, &s.field, &rec));
        match result {
            Ok(n) => samples.push(n),
            Err(e) => failure = Some(e),
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(RateRow {
        eps: geom.epsilon,
        h,
        dt: h,
        steps,
        norms: summarize(&samples),
        micro_iterations: stats.total_iterations,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Runs every ladder row (and its floor) concurrently and fits the rates.
pub fn run_ladder(cfg: &LadderConfig) -> Result<RateReport, CorrectorError> {
    let start = Instant::now();
    let mut eps = cfg.epsilons.clone();
    eps.sort_by(|a, b| b.total_cmp(a));
    let zero = RadiusProfile::Constant { r0: 0.0 };
    let mut jobs: Vec<(f64, bool)> = eps.iter().map(|&e| (e, false)).collect();
    if cfg.floor {
        jobs.extend(eps.iter().map(|&e| (e, true)));
    }
    // Largest jobs first keeps the pool busy.
    jobs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let results: Vec<(f64, bool, Result<RateRow, CorrectorError>)> = jobs
        .par_iter()
        .map(|&(e, floor)| (e, floor, ladder_row(cfg, e, if floor { &zero } else { &cfg.radius })))
        .collect();
    let mut rows = Vec::new();
    let mut floors = Vec::new();
    let mut errors = Vec::new();
    for (e, floor, r) in results {
        match r {
            Ok(row) if floor => floors.push(row),
            Ok(row) => rows.push(row),
            Err(err) => errors.push((e, format!("{}{err}", if floor { "floor: " } else { "" }))),
        }
    }
    if !errors.is_empty() {
        return Err(CorrectorError::Ladder(errors));
    }
    rows.sort_by(|a, b| b.eps.total_cmp(&a.eps));
    floors.sort_by(|a, b| b.eps.total_cmp(&a.eps));
    let mut report = RateReport { rows, floors, fits: Vec::new(), seconds: 0.0 };
    report.fits = (0..NORM_NAMES.len())
        .map(|k| NormFit {
            name: NORM_NAMES[k],
            raw: rate_fit(&report.column(k)).ok(),
            corrected: report.corrected_column(k).and_then(|c| rate_fit(&c).ok()),
        })
        .collect();
    report.seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rate_fit_recovers_power_laws() {
        let rows: Vec<(f64, f64)> = [8.0f64, 16.0, 32.0].iter().map(|k| (1.0 / k, 0.1 * (1.0 / k).powf(0.5))).collect();
        let f = rate_fit(&rows).unwrap();
        assert!((f.p - 0.5).abs() < 1e-12 && (f.c - 0.1).abs() < 1e-12);
        let flat = rate_fit(&[(0.5, 2.0), (0.25, 2.0), (0.125, 2.0)]).unwrap();
        assert!(flat.p.abs() < 1e-12);
        assert!(matches!(rate_fit(&rows[..2]), Err(CorrectorError::TooFewRows(2))));
        assert!(matches!(rate_fit(&[(0.5, 1.0), (0.25, 0.0), (0.1, 1.0)]), Err(CorrectorError::NonPositive { .. })));
    }

    #[test]
    fn summary_skips_initial_time() {
        let s = |t: f64, v: f64| NormSample { t, n1: v, n2: v, n3: v, n4: v };
        let sum = summarize(&[s(0.0, 5.0), s(0.5, 3.0), s(1.0, 1.0)]);
        assert_eq!(sum.n1, 3.0);
        assert!((sum.n3_l2 - (0.5 * 9.0 + 0.5 * 1.0f64).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn constant_offset_gives_c_sqrt_measure() {
        let spec = LevelSetSpec::constant(0.25).unwrap();
        let geom = build_medium(&spec, 0.125, 0.125 / 32.0).unwrap();
        let n = geom.grid.len();
        let recon = Reconstruction { t: 0.0, u0: vec![0.0; n], v0: vec![0.0; n], u1: vec![0.0; n] };
        let field: Vec<f64> = (0..n).map(|i| if geom.phase[i] == Phase::Low { 0.3 } else { 0.0 }).collect();
        let s = corrector_norms(&geom, 0.0, &field, &recon).unwrap();
        let measure: f64 = (0..n).filter(|&i| geom.phase[i] == Phase::Low).map(|i| geom.grid.dual_volume(i)).sum();
        assert!((s.n2 - 0.3 * measure.sqrt()).abs() < 1e-14);
        assert_eq!(s.n1, 0.0);
        // a constant shift has no gradient, so the H1 part is pure L2
        assert!((s.n4 - geom.epsilon * s.n2).abs() < 1e-14);
    }
}
