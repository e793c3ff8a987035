use approx::assert_relative_eq;
use homog_core::cell::{build_table, solve_cell, EffectiveTable};
use homog_core::correctors::rate_fit;
use homog_core::data::{BoundaryData, LowInit, MacroFn, VelocitySpec};
use homog_core::geometry::{build_medium, LevelSetSpec, MediumGeometry};
use homog_core::microsim::{run_micro_from, state_from_field, MicroConfig};
use homog_core::twoscale::{run_twoscale_observed, Coefficients, TwoScaleConfig};
use proptest::prelude::*;

fn medium(r: f64) -> MediumGeometry {
    build_medium(&LevelSetSpec::constant(r).unwrap(), 0.25, 0.25 / 32.0).unwrap()
}

fn weighted_l2(geom: &MediumGeometry, u: &[f64]) -> f64 {
    u.iter().enumerate().map(|(i, v)| geom.grid.dual_volume(i) * v * v).sum()
}

fn seeded_field(geom: &MediumGeometry, seed: u64, lo: f64, hi: f64) -> Vec<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    (0..geom.grid.len()).map(|_| rng.gen_range(lo..hi)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn micro_energy_does_not_increase(r in 0.15f64..0.4, d_l in 0.0f64..3.0, seed in any::<u64>()) {
        let geom = medium(r);
        let cfg = MicroConfig { d_l, t_end: 0.02, dt: 0.002, ..MicroConfig::default() };
        let init = state_from_field(&geom, &cfg, seeded_field(&geom, seed, -1.0, 1.0)).unwrap();
        let mut last = f64::INFINITY;
        let mut ok = true;
        run_micro_from(&geom, &cfg, init, |s| {
            let e = weighted_l2(&geom, &s.field);
            ok &= e <= last * (1.0 + 1e-12);
            last = e;
        }).unwrap();
        prop_assert!(ok);
    }

    #[test]
    fn ordered_data_give_ordered_solutions(
        r in 0.15f64..0.4,
        amp in 0.0f64..3.0,
        gap in 0.0f64..0.5,
        seed in any::<u64>(),
    ) {
        let geom = medium(r);
        let lower = MicroConfig {
            velocity: VelocitySpec::StreamFunction { amplitude: amp },
            boundary: BoundaryData::Constant(0.0),
            t_end: 0.02,
            dt: 0.002,
            ..MicroConfig::default()
        };
        let upper = MicroConfig { boundary: BoundaryData::Constant(gap), ..lower.clone() };
        let base = seeded_field(&geom, seed, 0.0, 1.0);
        let bump = seeded_field(&geom, seed ^ 0x5555, 0.0, 0.3);
        let raised: Vec<f64> = base.iter().zip(&bump).map(|(a, b)| a + b).collect();
        let mut a = Vec::new();
        run_micro_from(&geom, &lower, state_from_field(&geom, &lower, base).unwrap(), |s| a.push(s.field.clone())).unwrap();
        let mut k = 0;
        let mut worst: f64 = 0.0;
        run_micro_from(&geom, &upper, state_from_field(&geom, &upper, raised).unwrap(), |s| {
            worst = s.field.iter().zip(&a[k]).map(|(hi, lo)| lo - hi).fold(worst, f64::max);
            k += 1;
        }).unwrap();
        prop_assert!(worst <= 1e-12, "ordering violated by {}", worst);
    }

    #[test]
    fn cell_tensor_is_isotropic_and_below_porosity(r in 0.05f64..0.45) {
        let sol = solve_cell(r, 32, 1.0).unwrap();
        let d = sol.tensor;
        prop_assert!((d[0][0] - d[1][1]).abs() <= 1e-8);
        prop_assert!(d[0][1].abs() <= 1e-10 && d[1][0].abs() <= 1e-10);
        prop_assert!(d[0][0] > 0.0 && d[0][0] <= sol.theta_h() + 1e-12);
    }

    #[test]
    fn twoscale_keeps_constants(c in -2.0f64..2.0, r in 0.1f64..0.4) {
        let sol = solve_cell(r, 32, 1.0).unwrap();
        let mut cfg = TwoScaleConfig::new(LevelSetSpec::constant(r).unwrap(), Coefficients::from_cell(&sol));
        cfg.h_macro = 0.125;
        cfg.m = 6;
        cfg.boundary = BoundaryData::Constant(c);
        cfg.u_init = MacroFn::Constant(c);
        cfg.v_init = LowInit::MatchMacro;
        cfg.t_end = 0.05;
        cfg.dt = 0.005;
        let mut err: f64 = 0.0;
        run_twoscale_observed(&cfg, |_, s| {
            err = s.u.iter().chain(&s.v).map(|v| (v - c).abs()).fold(err, f64::max);
        }).unwrap();
        prop_assert!(err <= 1e-12);
    }

    #[test]
    fn rate_fit_inverts_power_laws(p in -3.0f64..3.0, c in 1e-3f64..1e3, k in 3usize..8) {
        let rows: Vec<(f64, f64)> = (0..k).map(|j| 0.5f64.powi(j as i32 + 2)).map(|e| (e, c * e.powf(p))).collect();
        let fit = rate_fit(&rows).unwrap();
        prop_assert!((fit.p - p).abs() <= 1e-11);
        prop_assert!((fit.c - c).abs() <= 1e-11 * c.max(1.0));
    }
}

#[test]
fn effective_diffusivity_decreases_with_radius() {
    let radii: Vec<f64> = (1..=8).map(|k| 0.05 * k as f64).collect();
    let table = build_table(&radii, 32, 1.0).unwrap();
    let d: Vec<f64> = radii.iter().map(|&r| table.tensor(r).unwrap()[0][0]).collect();
    assert!(d.windows(2).all(|w| w[1] < w[0]), "{d:?}");
}

#[test]
fn table_survives_a_csv_round_trip() {
    let table = build_table(&[0.1, 0.2, 0.3, 0.4], 32, 1.0).unwrap();
    let back = EffectiveTable::from_csv(&table.to_csv()).unwrap();
    for r in [0.1, 0.17, 0.25, 0.4] {
        assert_relative_eq!(back.theta(r).unwrap(), table.theta(r).unwrap(), max_relative = 1e-14);
        assert_relative_eq!(back.tensor(r).unwrap()[0][0], table.tensor(r).unwrap()[0][0], max_relative = 1e-14);
    }
}

#[test]
fn constant_radius_medium_is_periodic_over_retained_cells() {
    let geom = build_medium(&LevelSetSpec::constant(0.3).unwrap(), 0.125, 0.125 / 32.0).unwrap();
    let g = &geom.grid;
    let shift = (geom.epsilon / g.h).round() as usize;
    let mut compared = 0;
    for iy in 0..g.ny - shift {
        for ix in 0..g.nx - shift {
            let (a, b) = (g.index(ix, iy), g.index(ix + shift, iy + shift));
            let (ja, _) = geom.node_cell(a);
            let (jb, _) = geom.node_cell(b);
            if geom.cell_slot(ja).is_some() && geom.cell_slot(jb).is_some() {
                assert_eq!(geom.phase[a], geom.phase[b], "node ({ix}, {iy})");
                compared += 1;
            }
        }
    }
    assert!(compared > 0);
}
