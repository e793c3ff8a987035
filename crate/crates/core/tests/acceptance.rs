//! Acceptance criteria. Each test prints one `PASS` or `FAIL` line and then
//! asserts on the same condition. Run with `--nocapture` to see the lines.

use std::time::Instant;

use homog_core::cell::solve_cell;
use homog_core::correctors::lemmas::{
    check_oscillation_bound, check_strip_scaling, gauss, transport_points, transport_refinement, PairPreset, SmoothField,
    TestFunction,
};
use homog_core::correctors::{rate_fit, run_ladder, LadderConfig, NORM_NAMES};
use homog_core::data::{BoundaryData, LowInit, MacroFn, VelocitySpec};
use homog_core::geometry::{build_medium, Cutoff, LevelSetSpec, RadiusProfile};
use homog_core::microsim::{data_hull, run_micro_from, run_micro_observed, state_from_field, MicroConfig};
use homog_core::twoscale::{run_twoscale_observed, Coefficients, TwoScaleConfig};
use rand::{Rng, SeedableRng};

fn verdict(id: u32, name: &str, pass: bool, detail: String) {
    println!("{} [{id:2}] {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {id} ({name}) failed: {detail}");
}

#[test]
fn c01_corrector_rate() {
    let start = Instant::now();
    let report = run_ladder(&LadderConfig::default()).expect("ladder runs");
    let secs = start.elapsed().as_secs_f64();
    let decreasing: Vec<&str> = (0..6).filter(|&k| !report.strictly_decreasing(k)).map(|k| NORM_NAMES[k]).collect();
    let fit = report.fits.iter().find(|f| f.name == "N3_L2").and_then(|f| f.corrected);
    let p = fit.map_or(f64::NAN, |f| f.p);
    print!("{}", report.to_csv());
    verdict(
        1,
        "corrector rate",
        decreasing.is_empty() && p >= 0.4 && secs <= 900.0,
        format!("non-decreasing {decreasing:?}, N3_L2 corrected p = {p:.3} (>= 0.4), {secs:.0} s (<= 900)"),
    );
}

#[test]
fn c02_dilute_limit_and_isotropy() {
    let f: f64 = 0.05;
    let r = (f / std::f64::consts::PI).sqrt();
    let fine = solve_cell(r, 512, 1.0).unwrap();
    let dev = (fine.tensor[0][0] - (1.0 - f) / (1.0 + f)).abs();
    let iso = solve_cell(0.25, 128, 1.0).unwrap();
    let off = iso.tensor[0][1].abs().max(iso.tensor[1][0].abs());
    verdict(
        2,
        "dilute limit and isotropy",
        dev <= 0.01 && off <= 1e-3,
        format!("|d - (1-f)/(1+f)| = {dev:.2e} (<= 1e-2), |D12| = {off:.2e} (<= 1e-3)"),
    );
}

#[test]
fn c03_cell_invariants() {
    let sol = solve_cell(0.25, 128, 1.0).unwrap();
    let theta = sol.theta_h();
    let mean = sol.mean(0).abs().max(sol.mean(1).abs()) * theta;
    let per = sol.periodicity_residual();
    let sym = sol.symmetry_residual();
    verdict(
        3,
        "cell invariants",
        mean <= 1e-10 && per <= 1e-10 && sym <= 1e-8,
        format!("|int M| = {mean:.1e} (<= 1e-10), periodicity {per:.1e} (<= 1e-10), symmetry {sym:.1e} (<= 1e-8)"),
    );
}

#[test]
fn c04_constant_state_exactness() {
    let c = 0.7;
    let geom = build_medium(&LevelSetSpec::constant(0.25).unwrap(), 0.125, 0.125 / 16.0).unwrap();
    let micro = MicroConfig {
        d_l: 0.5,
        boundary: BoundaryData::Constant(c),
        u_init: MacroFn::Constant(c),
        v_init: LowInit::MatchMacro,
        t_end: 0.1,
        dt: 0.001,
        ..MicroConfig::default()
    };
    let mut micro_err: f64 = 0.0;
    let (last, _) = run_micro_observed(&geom, &micro, |s| {
        micro_err = s.field.iter().map(|v| (v - c).abs()).fold(micro_err, f64::max);
    })
    .unwrap();

    let sol = solve_cell(0.25, 32, 1.0).unwrap();
    let mut two = TwoScaleConfig::new(LevelSetSpec::constant(0.25).unwrap(), Coefficients::from_cell(&sol));
    two.h_macro = 1.0 / 16.0;
    two.m = 8;
    two.d_l = 0.5;
    two.boundary = BoundaryData::Constant(c);
    two.u_init = MacroFn::Constant(c);
    two.t_end = 0.1;
    two.dt = 0.001;
    let mut macro_err: f64 = 0.0;
    let (_, _, stats) = run_twoscale_observed(&two, |_, s| {
        macro_err = s.u.iter().chain(&s.v).map(|v| (v - c).abs()).fold(macro_err, f64::max);
    })
    .unwrap();
    verdict(
        4,
        "constant-state exactness",
        last.step == 100 && stats.steps == 100 && micro_err <= 1e-12 && macro_err <= 1e-12,
        format!("100 steps, micro {micro_err:.1e}, two-scale {macro_err:.1e} (<= 1e-12)"),
    );
}

#[test]
fn c05_maximum_principle() {
    let mut rng = rand::rngs::StdRng::seed_from_u64(20261015);
    let mut violations = 0usize;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let r = rng.gen_range(0.15..0.4);
        let eps = [0.25, 0.125][rng.gen_range(0..2)];
        let geom = build_medium(&LevelSetSpec::constant(r).unwrap(), eps, eps / 32.0).unwrap();
        let amp = if rng.gen_bool(0.5) { rng.gen_range(0.0..4.0) } else { 0.0 };
        let cfg = MicroConfig {
            d_h: rng.gen_range(0.5..2.0),
            d_l: rng.gen_range(0.0..3.0),
            velocity: VelocitySpec::StreamFunction { amplitude: amp },
            boundary: BoundaryData::Decay { c0: rng.gen_range(0.0..1.0), lambda: rng.gen_range(0.0..2.0) },
            t_end: 0.02,
            dt: 0.002,
            ..MicroConfig::default()
        };
        let field: Vec<f64> = (0..geom.grid.len()).map(|_| rng.gen_range(-1.0..2.0)).collect();
        let init = state_from_field(&geom, &cfg, field).unwrap();
        let (lo, hi) = data_hull(&geom, &cfg, &init);
        run_micro_from(&geom, &cfg, init, |s| {
            for &v in &s.field {
                let out = (lo - v).max(v - hi);
                if out > 1e-10 {
                    violations += 1;
                    worst = worst.max(out);
                }
            }
        })
        .unwrap();
    }
    verdict(5, "maximum principle", violations == 0, format!("20 random configs, {violations} violations (worst {worst:.1e})"));
}

/// `int f`, `int f^2`, `int f'^2`, `int f''^2` and `int f f''` for the one-dimensional
/// cutoff factor along `x1`, sampled on the line `x2 = 1/2` where the other factor is one.
fn cutoff_moments(c: &Cutoff) -> [f64; 5] {
    let panels = 4096;
    let mut m = [0.0; 5];
    for k in 0..panels {
        let (a, b) = (k as f64 / panels as f64, (k + 1) as f64 / panels as f64);
        for (x, w) in gauss(6, a, b) {
            let (f, g, l) = c.eval([x, 0.5]);
            m[0] += w * f;
            m[1] += w * f * f;
            m[2] += w * g[0] * g[0];
            m[3] += w * l * l;
            m[4] += w * f * l;
        }
    }
    m
}

#[test]
fn c06_cutoff_bounds() {
    let spec = LevelSetSpec::constant(0.25).unwrap();
    let mut rows = [vec![], vec![], vec![]];
    for k in 3..=6 {
        let eps = 0.5f64.powi(k);
        let geom = build_medium(&spec, eps, eps / 16.0).unwrap();
        let c = Cutoff::for_medium(&geom);
        // chi = f(x1) f(x2) on the unit square, so every norm separates
        let [f1, f2, d2, l2, fl] = cutoff_moments(&c);
        let one_minus = (1.0 - 2.0 * f1 * f1 + f2 * f2).sqrt();
        let grad = (2.0 * d2 * f2).sqrt();
        let lap = (2.0 * l2 * f2 + 2.0 * fl * fl).sqrt();
        rows[0].push((eps, one_minus));
        rows[1].push((eps, grad));
        rows[2].push((eps, lap));
    }
    let target = [0.5, -0.5, -1.5];
    let p: Vec<f64> = rows.iter().map(|r| rate_fit(r).unwrap().p).collect();
    let ok = p.iter().zip(target).all(|(p, t)| (p - t).abs() <= 0.15);
    verdict(
        6,
        "cutoff bounds",
        ok,
        format!("exponents ||1-chi|| {:.3}, ||grad chi|| {:.3}, ||lap chi|| {:.3} (targets 0.5, -0.5, -1.5 +- 0.15)", p[0], p[1], p[2]),
    );
}

#[test]
fn c07_transport_identity() {
    let radius = RadiusProfile::Linear { r0: 0.2, a: 0.05 };
    let rep = transport_refinement(&radius, &SmoothField::SinCos, &transport_points(), &[16, 32, 64, 128]).unwrap();
    let ok = rep.ratios.len() == 3 && rep.ratios.iter().all(|r| (r - 0.5).abs() <= 0.1);
    verdict(7, "transport identity", ok, format!("residual ratios {:?} (0.5 +- 20%)", rep.ratios));
}

#[test]
fn c08_oscillation_bound() {
    let eps = [0.125, 0.0625, 0.03125, 0.015625];
    let phi = TestFunction::TwoScale { base: SmoothField::SineProduct, amp: 1.0 };
    let mut detail = Vec::new();
    let mut ok = true;
    for pair in [
        PairPreset::Uniform { r: 0.25 },
        PairPreset::Exchange { r: 0.25 },
        PairPreset::CorrectorFlux { u0: SmoothField::X1Squared },
    ] {
        let rep = check_oscillation_bound(&pair, &phi, &eps).unwrap();
        ok &= rep.spread() <= 2.0;
        detail.push(format!("{} spread {:.3}", pair.name(), rep.spread()));
    }
    let control = check_oscillation_bound(&PairPreset::Incompatible { r: 0.25 }, &phi, &eps).unwrap();
    let f = control.halving_factors();
    ok &= f.iter().all(|&x| x >= 1.6);
    detail.push(format!("control growth {:?}", f.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>()));
    verdict(8, "oscillation bound", ok, format!("{} (spread <= 2, growth >= 1.6)", detail.join(", ")));
}

#[test]
fn c09_strip_scaling() {
    let eps = [0.125, 0.0625, 0.03125, 0.015625];
    let rep = check_strip_scaling(&SmoothField::X1Squared, &SmoothField::SineProduct, &RadiusProfile::Constant { r0: 0.25 }, &eps)
        .unwrap();
    verdict(9, "strip scaling", rep.exponent >= 1.35, format!("exponent {:.3} (>= 1.35)", rep.exponent));
}

#[test]
fn c10_rate_fit_exactness() {
    let mut rng = rand::rngs::StdRng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let p = rng.gen_range(-2.0..2.0);
        let c = rng.gen_range(0.01..10.0);
        let rows: Vec<(f64, f64)> = (3..7).map(|k| 0.5f64.powi(k)).map(|e: f64| (e, c * e.powf(p))).collect();
        let fit = rate_fit(&rows).unwrap();
        worst = worst.max((fit.p - p).abs()).max((fit.c - c).abs());
    }
    verdict(10, "rate_fit exactness", worst <= 1e-12, format!("worst error {worst:.1e} (<= 1e-12)"));
}

#[test]
fn c11_mass_balance() {
    let sol = solve_cell(0.25, 32, 1.0).unwrap();
    let mut cfg = TwoScaleConfig::new(LevelSetSpec::constant(0.25).unwrap(), Coefficients::from_cell(&sol));
    cfg.h_macro = 1.0 / 32.0;
    cfg.m = 16;
    cfg.boundary = BoundaryData::Decay { c0: 0.5, lambda: 1.0 };
    cfg.u_init = MacroFn::SineProduct { amp: 1.0 };
    cfg.v_init = LowInit::Constant(0.0);
    cfg.t_end = 0.25;
    cfg.dt = 1.0 / 256.0;
    let (_, _, stats) = run_twoscale_observed(&cfg, |_, _| {}).unwrap();
    verdict(
        11,
        "mass balance",
        stats.max_mass_defect <= 0.01,
        format!("largest per-step discrepancy {:.2e} over {} steps (<= 1%)", stats.max_mass_defect, stats.steps),
    );
}
