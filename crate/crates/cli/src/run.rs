//! Subcommand orchestration. Every file starts with the config header line and
//! carries no wall-clock data, so identical configs give identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::sync::Arc;

use homog_core::cell::{solve_cell_with, CellError, EffectiveTable};
use homog_core::correctors::lemmas::{
    check_oscillation_bound, check_strip_scaling, transport_points, transport_refinement, LemmaError, PairPreset, SmoothField,
    TestFunction,
};
use homog_core::correctors::{cell_data, run_ladder, CorrectorError, LadderConfig, NORM_NAMES};
use homog_core::data::VelocitySpec;
use homog_core::geometry::{build_medium, GeometryError, Phase, RadiusProfile};
use homog_core::microsim::{run_micro, MicroConfig, MicroError};
use homog_core::numerics::SolverOptions;
use homog_core::twoscale::{run_twoscale, Coefficients, TwoScaleConfig, TwoScaleError};
use rayon::prelude::*;
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Cell(#[from] CellError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Micro(#[from] MicroError),
    #[error(transparent)]
    TwoScale(#[from] TwoScaleError),
    #[error(transparent)]
    Corrector(#[from] CorrectorError),
    #[error(transparent)]
    Lemma(#[from] LemmaError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Input(_) => 2,
            _ => 1,
        }
    }
}

/// Files written and acceptance checks evaluated by one subcommand.
#[derive(Debug, Default)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub summary: String,
    /// `(name, passed)` for every acceptance check.
    pub checks: Vec<(String, bool)>,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.1)
    }

    fn check(&mut self, name: impl Into<String>, ok: bool) {
        let name = name.into();
        let _ = writeln!(self.summary, "{} {name}", if ok { "PASS" } else { "FAIL" });
        self.checks.push((name, ok));
    }
}

struct Writer<'a> {
    cfg: &'a RunConfig,
    outcome: Outcome,
}

impl Writer<'_> {
    fn write(&mut self, name: &str, body: &str) -> Result<(), RunError> {
        let dir = &self.cfg.out;
        fs::create_dir_all(dir).map_err(|e| RunError::Io { path: dir.clone(), source: e })?;
        let path = dir.join(name);
        let text = format!("{}\n{body}", self.cfg.header());
        fs::write(&path, text).map_err(|e| RunError::Io { path: path.clone(), source: e })?;
        self.outcome.files.push(path);
        Ok(())
    }

    fn finish(mut self) -> Result<Outcome, RunError> {
        let echo = self.cfg.echo();
        self.write("config_echo.toml", &echo)?;
        Ok(self.outcome)
    }
}

fn solver(cfg: &RunConfig) -> SolverOptions {
    SolverOptions::with_tol(cfg.tol)
}

fn velocity(cfg: &RunConfig) -> VelocitySpec {
    if cfg.velocity == 0.0 {
        VelocitySpec::Zero
    } else {
        VelocitySpec::StreamFunction { amplitude: cfg.velocity }
    }
}

/// Cell problems for every configured radius: the coefficient table and a residual report.
pub fn cell(cfg: &RunConfig) -> Result<Outcome, RunError> {
    let opts = solver(cfg);
    let sols = cfg
        .radii
        .par_iter()
        .map(|&r| solve_cell_with(r, cfg.cell_n, cfg.d_h, opts))
        .collect::<Result<Vec<_>, _>>()?;
    let table = EffectiveTable::from_samples(cfg.cell_n, cfg.d_h, cfg.radii.clone(), sols.iter().map(|s| s.tensor).collect())?;
    let mut report = String::from("r,theta_h,symmetry_residual,periodicity_residual,fv_residual,mean_M1,mean_M2,iterations_1,iterations_2\n");
    let mut worst: f64 = 0.0;
    for s in &sols {
        let sym = s.symmetry_residual();
        worst = worst.max(sym);
        let _ = writeln!(
            report,
            "{:.17e},{:.17e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{},{}",
            s.r,
            s.theta_h(),
            sym,
            s.periodicity_residual(),
            s.fv_residual(),
            s.mean(0),
            s.mean(1),
            s.iterations[0],
            s.iterations[1]
        );
    }
    let mut w = Writer { cfg, outcome: Outcome::default() };
    w.write("table.csv", &table.to_csv())?;
    w.write("cell_report.csv", &report)?;
    let _ = writeln!(w.outcome.summary, "{} radii at n = {}; largest symmetry residual {worst:.3e}", sols.len(), cfg.cell_n);
    w.outcome.check("tensor symmetry residual <= 1e-8", worst <= 1e-8);
    w.finish()
}

/// Micro run with field dumps at the configured times.
pub fn micro(cfg: &RunConfig) -> Result<Outcome, RunError> {
    let geom = build_medium(&cfg.spec(), cfg.epsilon, cfg.h)?;
    let mc = MicroConfig {
        d_h: cfg.d_h,
        d_l: cfg.d_l,
        velocity: velocity(cfg),
        boundary: cfg.boundary,
        u_init: cfg.u_init.clone(),
        v_init: cfg.v_init.clone(),
        t_end: cfg.t_end,
        dt: cfg.dt,
        solver: solver(cfg),
    };
    let states = run_micro(&geom, &mc, &cfg.times)?;
    let mut w = Writer { cfg, outcome: Outcome::default() };
    for (k, s) in states.iter().enumerate() {
        let mut body = format!("# t={:.17e} step={}\nx,y,value,phase\n", s.t, s.step);
        for i in 0..geom.grid.len() {
            let x = geom.grid.coord(i);
            let _ = writeln!(body, "{:.17e},{:.17e},{:.17e},{}", x[0], x[1], s.field[i], if geom.phase[i] == Phase::Low { "low" } else { "high" });
        }
        w.write(&format!("micro_{k:03}.csv"), &body)?;
    }
    let _ = writeln!(
        w.outcome.summary,
        "micro: {} nodes ({} low), {} inclusions, {} output times",
        geom.grid.len(),
        geom.num_low(),
        geom.cells.len(),
        states.len()
    );
    w.finish()
}

/// Two-scale run; coefficients from `--table` or fresh cell solves.
pub fn macroscale(cfg: &RunConfig) -> Result<Outcome, RunError> {
    let spec = cfg.spec();
    let coefficients = match &cfg.table {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| RunError::Io { path: path.clone(), source: e })?;
            Coefficients::Table(Arc::new(EffectiveTable::from_csv(&text)?))
        }
        None => cell_data(&spec, cfg.cell_n, cfg.d_h, 9)?.0,
    };
    let mut tc = TwoScaleConfig::new(spec, coefficients);
    tc.h_macro = cfg.h_macro;
    tc.m = cfg.m;
    tc.d_l = cfg.d_l;
    tc.velocity = velocity(cfg);
    tc.boundary = cfg.boundary;
    tc.u_init = cfg.u_init.clone();
    tc.v_init = cfg.v_init.clone();
    tc.t_end = cfg.t_end;
    tc.dt = cfg.dt;
    tc.solver = solver(cfg);
    let (model, states) = run_twoscale(&tc, &cfg.times)?;
    let mut w = Writer { cfg, outcome: Outcome::default() };
    let g = &model.grid;
    for (k, s) in states.iter().enumerate() {
        let mut u = format!("# t={:.17e} step={}\nx,y,u0\n", s.t, s.step);
        let mut v = format!("# t={:.17e} step={}\nx,y,rho,v0\n", s.t, s.step);
        for i in 0..g.len() {
            let x = g.coord(i);
            let _ = writeln!(u, "{:.17e},{:.17e},{:.17e}", x[0], x[1], s.u[i]);
            let r = model.local[i].radial_radius;
            let p = s.profile(i, tc.m);
            for (j, val) in p.iter().enumerate() {
                let rho = if j == tc.m { r } else { (j as f64 + 0.5) / tc.m as f64 * r };
                let _ = writeln!(v, "{:.17e},{:.17e},{:.17e},{:.17e}", x[0], x[1], rho, val);
            }
        }
        w.write(&format!("macro_u0_{k:03}.csv"), &u)?;
        w.write(&format!("macro_v0_{k:03}.csv"), &v)?;
    }
    let _ = writeln!(w.outcome.summary, "macro: {} nodes, m = {}, {} output times", g.len(), tc.m, states.len());
    w.finish()
}

pub fn ladder_config(cfg: &RunConfig) -> LadderConfig {
    LadderConfig {
        epsilons: cfg.epsilons.clone(),
        radius: cfg.radius.clone(),
        omega: cfg.omega,
        d_h: cfg.d_h,
        d_l: cfg.d_l,
        boundary: cfg.boundary,
        u_init: cfg.u_init.clone(),
        v_init: cfg.v_init.clone(),
        t_end: cfg.t_end,
        h_macro: cfg.h_macro,
        m: cfg.m,
        samples: cfg.samples,
        floor: cfg.floor,
        solver: solver(cfg),
        ..LadderConfig::default()
    }
}

/// Epsilon ladder: `rates.csv` plus the rate checks.
pub fn correctors(cfg: &RunConfig) -> Result<Outcome, RunError> {
    let report = run_ladder(&ladder_config(cfg))?;
    let mut w = Writer { cfg, outcome: Outcome::default() };
    w.write("rates.csv", &report.to_csv())?;
    for f in &report.fits {
        let show = |x: Option<homog_core::correctors::Fit>| x.map_or("n/a".to_string(), |f| format!("{:.3}", f.p));
        let _ = writeln!(w.outcome.summary, "{:8} p = {}  p(floor removed) = {}", f.name, show(f.raw), show(f.corrected));
    }
    for (k, name) in NORM_NAMES.iter().enumerate() {
        if report.column(k).iter().all(|r| r.1 == 0.0) {
            continue;
        }
        w.outcome.check(format!("{name} strictly decreasing"), report.strictly_decreasing(k));
    }
    let k = NORM_NAMES.iter().position(|n| *n == "N3_L2").unwrap();
    let p = report.fits[k].corrected.or(report.fits[k].raw).map_or(f64::NAN, |f| f.p);
    w.outcome.check(format!("N3_L2 order {p:.3} >= 0.4"), p >= 0.4);
    w.finish()
}

pub const LEMMA_EPSILONS: [f64; 4] = [0.125, 0.0625, 0.03125, 0.015625];

/// The three auxiliary estimates, each with its own CSV.
pub fn lemmas(cfg: &RunConfig) -> Result<Outcome, RunError> {
    let mut w = Writer { cfg, outcome: Outcome::default() };

    let radius = RadiusProfile::Linear { r0: 0.2, a: 0.05 };
    let tr = transport_refinement(&radius, &SmoothField::SinCos, &transport_points(), &[16, 32, 64, 128])?;
    let mut body = format!("# rhs scale {:.6e}\nn,residual,ratio\n", tr.rhs_scale);
    for (k, (n, res)) in tr.rows.iter().enumerate() {
        let ratio = if k == 0 { "nan".into() } else { format!("{:.6}", tr.ratios[k - 1]) };
        let _ = writeln!(body, "{n},{res:.6e},{ratio}");
    }
    w.write("transport.csv", &body)?;
    let halving = tr.ratios.iter().all(|r| (r - 0.5).abs() <= 0.1);
    w.outcome.check(format!("transport residual halves per refinement {:?}", tr.ratios.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>()), halving);

    let eps = LEMMA_EPSILONS;
    let phis = [
        ("two_scale", TestFunction::TwoScale { base: SmoothField::SineProduct, amp: 1.0 }),
        ("smooth", TestFunction::Smooth(SmoothField::SineProduct)),
    ];
    let pairs = [
        PairPreset::CorrectorFlux { u0: SmoothField::X1Squared },
        PairPreset::Exchange { r: 0.25 },
        PairPreset::Uniform { r: 0.25 },
        PairPreset::Incompatible { r: 0.25 },
    ];
    let mut body = String::from("pair,phi,eps,ratio\n");
    for (pname, phi) in phis {
        for pair in &pairs {
            let rep = check_oscillation_bound(pair, &phi, &eps)?;
            for (e, r) in &rep.rows {
                let _ = writeln!(body, "{},{pname},{e:.17e},{r:.6e}", pair.name());
            }
            if pname != "two_scale" {
                continue;
            }
            if pair.is_control() {
                let f = rep.halving_factors();
                w.outcome.check(
                    format!("control pair grows >= 1.6 per halving {:?}", f.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>()),
                    f.iter().all(|&x| x >= 1.6),
                );
            } else {
                w.outcome.check(format!("{} ratio spread {:.3} <= 2", pair.name(), rep.spread()), rep.spread() <= 2.0);
            }
        }
    }
    w.write("oscillation.csv", &body)?;

    let strip = check_strip_scaling(&SmoothField::X1Squared, &SmoothField::SineProduct, &RadiusProfile::Constant { r0: 0.25 }, &eps)?;
    let mut body = format!("# exponent {:.6}\neps,integral,normalized\n", strip.exponent);
    for (e, s, n) in &strip.rows {
        let _ = writeln!(body, "{e:.17e},{s:.6e},{n:.6e}");
    }
    w.write("strip.csv", &body)?;
    w.outcome.check(format!("strip exponent {:.3} >= 1.35", strip.exponent), strip.exponent >= 1.35);
    w.finish()
}
