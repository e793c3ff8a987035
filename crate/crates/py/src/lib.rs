//! Python bindings: cell problems, micro and two-scale runs, rate fitting and
//! the auxiliary estimate checks.

use std::sync::Arc;

use homog_core::cell::{self, CellSolution, EffectiveTable};
use homog_core::correctors::lemmas::{self, PairPreset, SmoothField, TestFunction};
use homog_core::correctors::{self, LadderConfig};
use homog_core::data::{BoundaryData, MacroFn};
use homog_core::geometry::{build_medium, LevelSetSpec, MediumGeometry, Phase, RadiusProfile, Rect};
use homog_core::microsim::{self, MicroConfig};
use homog_core::twoscale::{self, Coefficients, TwoScaleConfig};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn radius_profile(r0: f64, slope: f64) -> RadiusProfile {
    if slope == 0.0 {
        RadiusProfile::Constant { r0 }
    } else {
        RadiusProfile::Linear { r0, a: slope }
    }
}

/// Solution of the periodic cell problem for one radius.
#[pyclass(name = "CellSolution", frozen)]
struct PyCellSolution {
    inner: Arc<CellSolution>,
}

#[pymethods]
impl PyCellSolution {
    #[getter]
    fn r(&self) -> f64 {
        self.inner.r
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n
    }

    /// Porosity of the discrete cell.
    #[getter]
    fn theta(&self) -> f64 {
        self.inner.theta_h()
    }

    /// Effective tensor as nested lists.
    #[getter]
    fn tensor(&self) -> Vec<Vec<f64>> {
        self.inner.tensor.iter().map(|row| row.to_vec()).collect()
    }

    /// Corrector `(M1, M2)` at cell coordinate `y`.
    fn corrector(&self, y1: f64, y2: f64) -> (f64, f64) {
        let m = self.inner.value([y1, y2]);
        (m[0], m[1])
    }

    fn symmetry_residual(&self) -> f64 {
        self.inner.symmetry_residual()
    }

    fn __repr__(&self) -> String {
        let t = self.inner.tensor;
        format!("CellSolution(r={}, n={}, D11={:.6}, D22={:.6})", self.inner.r, self.inner.n, t[0][0], t[1][1])
    }
}

#[pyfunction]
#[pyo3(signature = (r, n=128, d_h=1.0))]
fn solve_cell(py: Python<'_>, r: f64, n: usize, d_h: f64) -> PyResult<PyCellSolution> {
    let sol = py.detach(|| cell::solve_cell(r, n, d_h)).map_err(err)?;
    Ok(PyCellSolution { inner: Arc::new(sol) })
}

/// Coefficient table as CSV text.
#[pyfunction]
#[pyo3(signature = (radii, n=128, d_h=1.0))]
fn build_table(py: Python<'_>, radii: Vec<f64>, n: usize, d_h: f64) -> PyResult<String> {
    py.detach(|| cell::build_table(&radii, n, d_h)).map(|t| t.to_csv()).map_err(err)
}

/// Perforated medium on a fine grid.
#[pyclass(name = "Medium", frozen)]
struct PyMedium {
    inner: Arc<MediumGeometry>,
}

#[pymethods]
impl PyMedium {
    #[new]
    #[pyo3(signature = (epsilon, h, r0=0.25, slope=0.0))]
    fn new(epsilon: f64, h: f64, r0: f64, slope: f64) -> PyResult<Self> {
        let spec = LevelSetSpec::new(radius_profile(r0, slope), Rect::unit()).map_err(err)?;
        let geom = build_medium(&spec, epsilon, h).map_err(err)?;
        Ok(Self { inner: Arc::new(geom) })
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        (self.inner.grid.nx, self.inner.grid.ny)
    }

    #[getter]
    fn num_inclusions(&self) -> usize {
        self.inner.cells.len()
    }

    /// `True` for inclusion nodes, row-major with `x` fastest.
    fn low_mask(&self) -> Vec<bool> {
        self.inner.phase.iter().map(|p| *p == Phase::Low).collect()
    }

    fn interface_measure(&self) -> f64 {
        self.inner.interface_measure()
    }

    /// Runs the micro model and returns the fields at `times`. The initial
    /// state is the sine product unless `initial` gives a constant.
    #[pyo3(signature = (times, t_end=0.25, dt=None, d_h=1.0, d_l=1.0, boundary=0.0, initial=None))]
    #[allow(clippy::too_many_arguments)]
    fn run_micro(
        &self,
        py: Python<'_>,
        times: Vec<f64>,
        t_end: f64,
        dt: Option<f64>,
        d_h: f64,
        d_l: f64,
        boundary: f64,
        initial: Option<f64>,
    ) -> PyResult<Vec<(f64, Vec<f64>)>> {
        let cfg = MicroConfig {
            d_h,
            d_l,
            boundary: BoundaryData::Constant(boundary),
            u_init: initial.map_or(MacroFn::default(), MacroFn::Constant),
            t_end,
            dt: dt.unwrap_or(self.inner.grid.h),
            ..MicroConfig::default()
        };
        let geom = self.inner.clone();
        let states = py.detach(|| microsim::run_micro(&geom, &cfg, &times)).map_err(err)?;
        Ok(states.into_iter().map(|s| (s.t, s.field)).collect())
    }
}

/// Runs the two-scale model with coefficients from a fresh cell solve and
/// returns `(t, u0)` at `times`.
#[pyfunction]
#[pyo3(signature = (times, r0=0.25, n=128, h_macro=1.0/64.0, m=16, t_end=0.25, dt=1.0/1024.0, d_l=1.0, amp=1.0))]
#[allow(clippy::too_many_arguments)]
fn run_twoscale(
    py: Python<'_>,
    times: Vec<f64>,
    r0: f64,
    n: usize,
    h_macro: f64,
    m: usize,
    t_end: f64,
    dt: f64,
    d_l: f64,
    amp: f64,
) -> PyResult<Vec<(f64, Vec<f64>)>> {
    py.detach(|| -> Result<_, String> {
        let spec = LevelSetSpec::constant(r0).map_err(|e| e.to_string())?;
        let sol = cell::solve_cell(r0, n, 1.0).map_err(|e| e.to_string())?;
        let mut cfg = TwoScaleConfig::new(spec, Coefficients::from_cell(&sol));
        cfg.h_macro = h_macro;
        cfg.m = m;
        cfg.t_end = t_end;
        cfg.dt = dt;
        cfg.d_l = d_l;
        cfg.u_init = MacroFn::SineProduct { amp };
        let (_, states) = twoscale::run_twoscale(&cfg, &times).map_err(|e| e.to_string())?;
        Ok(states.into_iter().map(|s| (s.t, s.u)).collect())
    })
    .map_err(err)
}

/// Least-squares fit of `log N = log c + p log eps`; returns `(p, c)`.
#[pyfunction]
fn rate_fit(rows: Vec<(f64, f64)>) -> PyResult<(f64, f64)> {
    correctors::rate_fit(&rows).map(|f| (f.p, f.c)).map_err(err)
}

/// Corrector ladder; returns the `rates.csv` text.
#[pyfunction]
#[pyo3(signature = (epsilons, r0=0.25, t_end=0.25, floor=true))]
fn run_ladder(py: Python<'_>, epsilons: Vec<f64>, r0: f64, t_end: f64, floor: bool) -> PyResult<String> {
    let cfg = LadderConfig { epsilons, radius: RadiusProfile::Constant { r0 }, t_end, floor, ..LadderConfig::default() };
    py.detach(|| correctors::run_ladder(&cfg)).map(|r| r.to_csv()).map_err(err)
}

/// Transport identity residuals for the varying-radius preset at resolutions `ns`.
#[pyfunction]
fn transport_residuals(py: Python<'_>, ns: Vec<usize>) -> PyResult<Vec<(usize, f64)>> {
    let radius = RadiusProfile::Linear { r0: 0.2, a: 0.05 };
    py.detach(|| lemmas::transport_refinement(&radius, &SmoothField::SinCos, &lemmas::transport_points(), &ns))
        .map(|r| r.rows)
        .map_err(err)
}

/// Oscillation ratios `(eps, R)` for a named pair against the two-scale test function.
#[pyfunction]
fn oscillation_ratios(py: Python<'_>, pair: &str, epsilons: Vec<f64>) -> PyResult<Vec<(f64, f64)>> {
    let pair = match pair {
        "uniform" => PairPreset::Uniform { r: 0.25 },
        "exchange" => PairPreset::Exchange { r: 0.25 },
        "corrector_flux" => PairPreset::CorrectorFlux { u0: SmoothField::X1Squared },
        "incompatible" => PairPreset::Incompatible { r: 0.25 },
        other => return Err(err(format!("unknown pair {other:?}"))),
    };
    let phi = TestFunction::TwoScale { base: SmoothField::SineProduct, amp: 1.0 };
    py.detach(|| lemmas::check_oscillation_bound(&pair, &phi, &epsilons)).map(|r| r.rows).map_err(err)
}

/// Fitted exponent of the boundary-strip integral.
#[pyfunction]
fn strip_exponent(py: Python<'_>, epsilons: Vec<f64>) -> PyResult<f64> {
    py.detach(|| {
        lemmas::check_strip_scaling(&SmoothField::X1Squared, &SmoothField::SineProduct, &RadiusProfile::Constant { r0: 0.25 }, &epsilons)
    })
    .map(|r| r.exponent)
    .map_err(err)
}

/// Interpolated `(theta, D11, D12, D21, D22)` from table CSV text.
#[pyfunction]
fn table_lookup(csv: &str, r: f64) -> PyResult<(f64, f64, f64, f64, f64)> {
    let t = EffectiveTable::from_csv(csv).map_err(err)?;
    let d = t.tensor(r).map_err(err)?;
    Ok((t.theta(r).map_err(err)?, d[0][0], d[0][1], d[1][0], d[1][1]))
}

#[pymodule]
fn homog(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCellSolution>()?;
    m.add_class::<PyMedium>()?;
    m.add_function(wrap_pyfunction!(solve_cell, m)?)?;
    m.add_function(wrap_pyfunction!(build_table, m)?)?;
    m.add_function(wrap_pyfunction!(run_twoscale, m)?)?;
    m.add_function(wrap_pyfunction!(rate_fit, m)?)?;
    m.add_function(wrap_pyfunction!(run_ladder, m)?)?;
    m.add_function(wrap_pyfunction!(transport_residuals, m)?)?;
    m.add_function(wrap_pyfunction!(oscillation_ratios, m)?)?;
    m.add_function(wrap_pyfunction!(strip_exponent, m)?)?;
    m.add_function(wrap_pyfunction!(table_lookup, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
