//! Numerical checks of the three auxiliary estimates behind the corrector bound.
//!
//! All checks work on the unit square and use the isolated-disc corrector
//! `M_j(x, y) = r(x)^2 y_j / |y|^2`. It satisfies the cell equation in the
//! perforated cell and the zero-flux condition on `|y| = r` exactly, which
//! keeps the quadrature error the only error in the checks.

use std::f64::consts::PI;
use std::num::NonZeroUsize;

use gauss_quad::GaussLegendre;
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{expansion_at, GeometryError, RadiusProfile};

#[derive(Debug, Error)]
pub enum LemmaError {
    #[error("radius profile is constant; both sides vanish and the check is empty")]
    ConstantRadius,
    #[error("radius {0} at x = {1:?} is outside (0, 0.45)")]
    RadiusRange(f64, [f64; 2]),
    #[error("pair violates the average condition: defect {defect:.3e} at x = {x:?}")]
    Incompatible { defect: f64, x: [f64; 2] },
    #[error("test function has boundary trace {value:.3e} at {x:?}")]
    NonzeroTrace { value: f64, x: [f64; 2] },
    #[error("epsilon {0} is not the reciprocal of an integer >= 4")]
    Epsilon(f64),
    #[error("need at least {0} entries")]
    TooFew(usize),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Gauss-Legendre nodes and weights on `[a, b]`.
pub fn gauss(n: usize, a: f64, b: f64) -> Vec<(f64, f64)> {
    let rule = GaussLegendre::new(NonZeroUsize::new(n.max(1)).unwrap());
    let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
    rule.as_node_weight_pairs().iter().map(|&(x, w)| (c + h * x, h * w)).collect()
}

/// Smooth sample fields on the unit square.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SmoothField {
    Constant(f64),
    /// `x1^2`
    X1Squared,
    /// `sin(pi x1) cos(pi x2)`
    SinCos,
    /// `sin(pi x1) sin(pi x2)`
    SineProduct,
}

impl SmoothField {
    pub fn value(&self, x: [f64; 2]) -> f64 {
        let (a, b) = (PI * x[0], PI * x[1]);
        match *self {
            Self::Constant(c) => c,
            Self::X1Squared => x[0] * x[0],
            Self::SinCos => a.sin() * b.cos(),
            Self::SineProduct => a.sin() * b.sin(),
        }
    }

    pub fn gradient(&self, x: [f64; 2]) -> [f64; 2] {
        let (a, b) = (PI * x[0], PI * x[1]);
        match *self {
            Self::Constant(_) => [0.0, 0.0],
            Self::X1Squared => [2.0 * x[0], 0.0],
            Self::SinCos => [PI * a.cos() * b.cos(), -PI * a.sin() * b.sin()],
            Self::SineProduct => [PI * a.cos() * b.sin(), PI * a.sin() * b.cos()],
        }
    }

    pub fn hessian(&self, x: [f64; 2]) -> [[f64; 2]; 2] {
        let (a, b) = (PI * x[0], PI * x[1]);
        let p2 = PI * PI;
        match *self {
            Self::Constant(_) => [[0.0; 2]; 2],
            Self::X1Squared => [[2.0, 0.0], [0.0, 0.0]],
            Self::SinCos => {
                let d = -p2 * a.sin() * b.cos();
                let o = -p2 * a.cos() * b.sin();
                [[d, o], [o, d]]
            }
            Self::SineProduct => {
                let d = -p2 * a.sin() * b.sin();
                let o = p2 * a.cos() * b.cos();
                [[d, o], [o, d]]
            }
        }
    }

    /// Largest `|value|` over a sweep of the unit square's boundary.
    pub fn boundary_trace(&self) -> (f64, [f64; 2]) {
        let mut worst = (0.0, [0.0, 0.0]);
        for k in 0..=64 {
            let t = k as f64 / 64.0;
            for x in [[t, 0.0], [t, 1.0], [0.0, t], [1.0, t]] {
                let v = self.value(x).abs();
                if v > worst.0 {
                    worst = (v, x);
                }
            }
        }
        worst
    }
}

/// `(I + grad_y M) g` for the isolated-disc corrector of radius `r`.
pub fn disc_flux(r: f64, y: [f64; 2], g: [f64; 2]) -> [f64; 2] {
    let q = y[0] * y[0] + y[1] * y[1];
    let yg = y[0] * g[0] + y[1] * g[1];
    let s = r * r / q;
    [g[0] + s * (g[0] - 2.0 * y[0] * yg / q), g[1] + s * (g[1] - 2.0 * y[1] * yg / q)]
}

fn flux_at(radius: &RadiusProfile, u0: &SmoothField, x: [f64; 2], y: [f64; 2]) -> [f64; 2] {
    disc_flux(radius.eval(x), y, u0.gradient(x))
}

const OUTER: f64 = 0.45;

/// Quadrature of `int_{r(x) < |y| < OUTER} F(x, y) dy`: a left rectangle rule
/// with `n` points in the normalized radius and a `k`-point periodic rule in angle.
fn annulus_integral(radius: &RadiusProfile, u0: &SmoothField, x: [f64; 2], n: usize, k: usize, eval_x: [f64; 2]) -> [f64; 2] {
    let r = radius.eval(x);
    let width = OUTER - r;
    let mut acc = [0.0; 2];
    for i in 0..n {
        let rho = r + width * i as f64 / n as f64;
        let w = width / n as f64 * rho * 2.0 * PI / k as f64;
        for a in 0..k {
            let t = 2.0 * PI * a as f64 / k as f64;
            let f = flux_at(radius, u0, eval_x, [rho * t.cos(), rho * t.sin()]);
            acc[0] += w * f[0];
            acc[1] += w * f[1];
        }
    }
    acc
}

const FD_STEP: f64 = 1e-4;

/// Both sides of the transport identity at `x`:
/// `int_A div_x F dy - div_x int_A F dy` against `-int_{|y|=r} nu1 . F dsigma`,
/// with `A(x)` the annulus between the inclusion and a fixed outer circle.
pub fn transport_sides(radius: &RadiusProfile, u0: &SmoothField, x: [f64; 2], n: usize) -> Result<(f64, f64), LemmaError> {
    let r = radius.eval(x);
    if !(r > 0.0 && r < OUTER) {
        return Err(LemmaError::RadiusRange(r, x));
    }
    let k = (4 * n).max(64);
    let d = FD_STEP;
    let shift = |k: usize, s: f64| {
        let mut z = x;
        z[k] += s;
        z
    };
    // First term: x-divergence at fixed y inside the quadrature.
    let width = OUTER - r;
    let mut t1 = 0.0;
    for i in 0..n {
        let rho = r + width * i as f64 / n as f64;
        let w = width / n as f64 * rho * 2.0 * PI / k as f64;
        for a in 0..k {
            let t = 2.0 * PI * a as f64 / k as f64;
            let y = [rho * t.cos(), rho * t.sin()];
            let mut div = 0.0;
            for c in 0..2 {
                let fp = flux_at(radius, u0, shift(c, d), y);
                let fm = flux_at(radius, u0, shift(c, -d), y);
                div += (fp[c] - fm[c]) / (2.0 * d);
            }
            t1 += w * div;
        }
    }
    // Second term: x-divergence of the integral over the moving domain.
    let mut t2 = 0.0;
    for c in 0..2 {
        let (xp, xm) = (shift(c, d), shift(c, -d));
        let ip = annulus_integral(radius, u0, xp, n, k, xp);
        let im = annulus_integral(radius, u0, xm, n, k, xm);
        t2 += (ip[c] - im[c]) / (2.0 * d);
    }
    // Right side: periodic rule on the inclusion boundary.
    let grad_r = radius.gradient(x);
    let mut rhs = 0.0;
    for a in 0..k {
        let t = 2.0 * PI * a as f64 / k as f64;
        let y = [r * t.cos(), r * t.sin()];
        let e = expansion_at(y, grad_r)?;
        let f = flux_at(radius, u0, x, y);
        rhs -= (e.nu1[0] * f[0] + e.nu1[1] * f[1]) * r * 2.0 * PI / k as f64;
    }
    Ok((t1 - t2, rhs))
}

/// Default sample points for the identity.
pub fn transport_points() -> Vec<[f64; 2]> {
    let s = [0.25, 0.5, 0.75];
    s.iter().flat_map(|&a| s.iter().map(move |&b| [a, b])).collect()
}

/// Largest `|LHS - RHS|` over `points` at quadrature resolution `n`.
pub fn check_transport_identity(radius: &RadiusProfile, u0: &SmoothField, points: &[[f64; 2]], n: usize) -> Result<f64, LemmaError> {
    if radius.is_constant() {
        return Err(LemmaError::ConstantRadius);
    }
    let res: Vec<f64> = points
        .par_iter()
        .map(|&x| transport_sides(radius, u0, x, n).map(|(l, r)| (l - r).abs()))
        .collect::<Result<_, _>>()?;
    Ok(res.into_iter().fold(0.0, f64::max))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportReport {
    /// `(n, max residual)` for each resolution.
    pub rows: Vec<(usize, f64)>,
    /// Residual ratio between consecutive resolutions.
    pub ratios: Vec<f64>,
    /// Largest `|RHS|` over the points, for scale.
    pub rhs_scale: f64,
}

pub fn transport_refinement(radius: &RadiusProfile, u0: &SmoothField, points: &[[f64; 2]], ns: &[usize]) -> Result<TransportReport, LemmaError> {
    if ns.len() < 2 {
        return Err(LemmaError::TooFew(2));
    }
    let rows = ns.iter().map(|&n| check_transport_identity(radius, u0, points, n).map(|r| (n, r))).collect::<Result<Vec<_>, _>>()?;
    let ratios = rows.windows(2).map(|w| w[1].1 / w[0].1).collect();
    let mut rhs_scale: f64 = 0.0;
    for &x in points {
        rhs_scale = rhs_scale.max(transport_sides(radius, u0, x, 4)?.1.abs());
    }
    Ok(TransportReport { rows, ratios, rhs_scale })
}

/// Oscillating pairs `(Q, p)` for the average-condition estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PairPreset {
    Zero { r: f64 },
    /// `Q = 1`, `p = theta / (2 pi r)`.
    Uniform { r: f64 },
    /// Interior divergence defect of the corrector flux against its boundary
    /// term `p = -nu1 . (I + grad_y M) grad u0` for `r = 0.2 + 0.05 x1`.
    CorrectorFlux { u0: SmoothField },
    /// Exchange pair of a profile `v0 = g(x) |y|^2`: `p = 2 g r`,
    /// `Q = 4 pi r^2 g / theta`, `g = 1 + x1 x2`.
    Exchange { r: f64 },
    /// `Q = 1`, `p = 0`: violates the average condition.
    Incompatible { r: f64 },
}

impl PairPreset {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Zero { .. } => "zero",
            Self::Uniform { .. } => "uniform",
            Self::CorrectorFlux { .. } => "corrector_flux",
            Self::Exchange { .. } => "exchange",
            Self::Incompatible { .. } => "incompatible",
        }
    }

    pub fn is_control(&self) -> bool {
        matches!(self, Self::Incompatible { .. })
    }

    pub fn radius(&self) -> RadiusProfile {
        match *self {
            Self::CorrectorFlux { .. } => RadiusProfile::Linear { r0: 0.2, a: 0.05 },
            Self::Zero { r } | Self::Uniform { r } | Self::Exchange { r } | Self::Incompatible { r } => {
                RadiusProfile::Constant { r0: r }
            }
        }
    }

    pub fn q(&self, x: [f64; 2], y: [f64; 2]) -> f64 {
        let r = self.radius().eval(x);
        let theta = 1.0 - PI * r * r;
        match *self {
            Self::Zero { .. } => 0.0,
            Self::Uniform { .. } | Self::Incompatible { .. } => 1.0,
            Self::CorrectorFlux { u0 } => {
                let (g, h) = (u0.gradient(x), u0.hessian(x));
                let gr = self.radius().gradient(x);
                let q2 = y[0] * y[0] + y[1] * y[1];
                let a = [
                    [1.0 / q2 - 2.0 * y[0] * y[0] / (q2 * q2), -2.0 * y[0] * y[1] / (q2 * q2)],
                    [-2.0 * y[0] * y[1] / (q2 * q2), 1.0 / q2 - 2.0 * y[1] * y[1] / (q2 * q2)],
                ];
                let ag = [a[0][0] * g[0] + a[0][1] * g[1], a[1][0] * g[0] + a[1][1] * g[1]];
                let ah = a[0][0] * h[0][0] + 2.0 * a[0][1] * h[0][1] + a[1][1] * h[1][1];
                // div_x F minus the averaged divergence; the corrector gradient
                // integrates to zero over the cell, so that average is
                // laplacian(u0) + grad(theta) . grad(u0) / theta.
                2.0 * r * (gr[0] * ag[0] + gr[1] * ag[1]) + r * r * ah + 2.0 * PI * r * (gr[0] * g[0] + gr[1] * g[1]) / theta
            }
            Self::Exchange { .. } => 4.0 * PI * r * r * (1.0 + x[0] * x[1]) / theta,
        }
    }

    /// Boundary density at `y` on `|y| = r(x)`.
    pub fn p(&self, x: [f64; 2], y: [f64; 2]) -> Result<f64, LemmaError> {
        let r = self.radius().eval(x);
        Ok(match *self {
            Self::Zero { .. } | Self::Incompatible { .. } => 0.0,
            Self::Uniform { .. } => (1.0 - PI * r * r) / (2.0 * PI * r),
            Self::CorrectorFlux { u0 } => {
                let e = expansion_at(y, self.radius().gradient(x))?;
                let f = disc_flux(r, y, u0.gradient(x));
                -(e.nu1[0] * f[0] + e.nu1[1] * f[1])
            }
            Self::Exchange { .. } => 2.0 * (1.0 + x[0] * x[1]) * r,
        })
    }

    /// `int_{Y(x)} Q dy - int_{|y|=r} p dsigma` at fixed `x`.
    pub fn average_defect(&self, x: [f64; 2]) -> Result<f64, LemmaError> {
        let r = self.radius().eval(x);
        let mut a = 0.0;
        for (y, w) in perforated_cell(r, 12, 12) {
            a += w * self.q(x, y);
        }
        let k = 256;
        for i in 0..k {
            let t = 2.0 * PI * i as f64 / k as f64;
            a -= self.p(x, [r * t.cos(), r * t.sin()])? * r * 2.0 * PI / k as f64;
        }
        Ok(a)
    }
}

/// Quadrature of the unit cell minus the disc of radius `r`: eight polar
/// sectors, each with Gauss rules in angle and radius.
pub fn perforated_cell(r: f64, n_angle: usize, n_radius: usize) -> Vec<([f64; 2], f64)> {
    let mut out = Vec::with_capacity(8 * n_angle * n_radius);
    for s in 0..8 {
        let (a, b) = (s as f64 * PI / 4.0, (s + 1) as f64 * PI / 4.0);
        for (t, wt) in gauss(n_angle, a, b) {
            let (c, sn) = (t.cos(), t.sin());
            let outer = 0.5 / c.abs().max(sn.abs());
            for (rho, wr) in gauss(n_radius, r, outer) {
                out.push(([rho * c, rho * sn], wt * wr * rho));
            }
        }
    }
    out
}

/// Quadrature of the disc of radius `r`.
fn disc(r: f64, n_angle: usize, n_radius: usize) -> Vec<([f64; 2], f64)> {
    let mut out = Vec::with_capacity(n_angle * n_radius);
    for i in 0..n_angle {
        let t = 2.0 * PI * i as f64 / n_angle as f64;
        for (rho, wr) in gauss(n_radius, 0.0, r) {
            out.push(([rho * t.cos(), rho * t.sin()], 2.0 * PI / n_angle as f64 * wr * rho));
        }
    }
    out
}

fn cell_count(eps: f64) -> Result<usize, LemmaError> {
    let inv = (1.0 / eps).round();
    if inv < 4.0 || (inv * eps - 1.0).abs() > 1e-12 {
        return Err(LemmaError::Epsilon(eps));
    }
    Ok(inv as usize)
}

/// Cell indices `j` whose centres `eps j` lie at least `sqrt(2) eps` inside the unit square.
fn interior_cells(eps: f64) -> Result<Vec<[i64; 2]>, LemmaError> {
    let k = cell_count(eps)? as i64;
    Ok((2..=k - 2).flat_map(|a| (2..=k - 2).map(move |b| [a, b])).collect())
}

/// Test functions for the oscillation estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TestFunction {
    Smooth(SmoothField),
    /// `psi(x) (1 + amp eps w(x / eps))` with `w(z) = cos(2 pi z1) + cos(2 pi z2)`,
    /// bounded in `H1` uniformly in `eps`.
    TwoScale { base: SmoothField, amp: f64 },
}

impl TestFunction {
    pub fn value(&self, x: [f64; 2], eps: f64) -> f64 {
        match *self {
            Self::Smooth(f) => f.value(x),
            Self::TwoScale { base, amp } => {
                let z = [x[0] / eps, x[1] / eps];
                let w = (2.0 * PI * z[0]).cos() + (2.0 * PI * z[1]).cos();
                base.value(x) * (1.0 + amp * eps * w)
            }
        }
    }

    pub fn gradient(&self, x: [f64; 2], eps: f64) -> [f64; 2] {
        match *self {
            Self::Smooth(f) => f.gradient(x),
            Self::TwoScale { base, amp } => {
                let z = [x[0] / eps, x[1] / eps];
                let w = (2.0 * PI * z[0]).cos() + (2.0 * PI * z[1]).cos();
                let (v, g) = (base.value(x), base.gradient(x));
                let s = 1.0 + amp * eps * w;
                [
                    g[0] * s - v * amp * 2.0 * PI * (2.0 * PI * z[0]).sin(),
                    g[1] * s - v * amp * 2.0 * PI * (2.0 * PI * z[1]).sin(),
                ]
            }
        }
    }
}

/// `||phi||_{H1}` over the unit square with the inclusions of the cells in
/// the interior set removed.
pub fn perforated_h1_norm(phi: &TestFunction, radius: &RadiusProfile, eps: f64) -> Result<f64, LemmaError> {
    let k = cell_count(eps)?;
    let rule = gauss(12, -0.5, 0.5);
    let interior = interior_cells(eps)?;
    let disc_rule = |r: f64| disc(r, 48, 12);
    let parts: Vec<f64> = (0..k * k)
        .into_par_iter()
        .map(|idx| -> f64 {
            let j = [(idx % k) as i64, (idx / k) as i64];
            // cells of the lattice tile the square with centres at eps (j + 1/2)
            let c = [eps * (j[0] as f64 + 0.5), eps * (j[1] as f64 + 0.5)];
            let mut acc = 0.0;
            for &(a, wa) in &rule {
                for &(b, wb) in &rule {
                    let x = [c[0] + eps * a, c[1] + eps * b];
                    let v = phi.value(x, eps);
                    let g = phi.gradient(x, eps);
                    acc += eps * eps * wa * wb * (v * v + g[0] * g[0] + g[1] * g[1]);
                }
            }
            acc
        })
        .collect();
    let holes: Vec<f64> = interior
        .par_iter()
        .map(|j| {
            let c = [eps * j[0] as f64, eps * j[1] as f64];
            let mut acc = 0.0;
            for (y, w) in disc_rule(radius.eval(c)) {
                let x = [c[0] + eps * y[0], c[1] + eps * y[1]];
                let v = phi.value(x, eps);
                let g = phi.gradient(x, eps);
                acc += eps * eps * w * (v * v + g[0] * g[0] + g[1] * g[1]);
            }
            acc
        })
        .collect();
    Ok((parts.iter().sum::<f64>() - holes.iter().sum::<f64>()).sqrt())
}

/// `|int Q(x, x/eps) phi dx - eps int_Gamma p(x, x/eps) phi ds| / (eps ||phi||_{H1})`.
///
/// The high phase is taken over the cells with inclusions; the inclusion of
/// cell `j` is the disc of radius `r(eps j)`.
pub fn oscillation_ratio(pair: &PairPreset, phi: &TestFunction, eps: f64) -> Result<f64, LemmaError> {
    let radius = pair.radius();
    let cells = interior_cells(eps)?;
    let k_circle = 128;
    let parts: Vec<f64> = cells
        .par_iter()
        .map(|j| -> Result<f64, LemmaError> {
            let c = [eps * j[0] as f64, eps * j[1] as f64];
            let r = radius.eval(c);
            let mut vol = 0.0;
            for (y, w) in perforated_cell(r, 10, 10) {
                let x = [c[0] + eps * y[0], c[1] + eps * y[1]];
                vol += w * pair.q(x, y) * phi.value(x, eps);
            }
            let mut surf = 0.0;
            for i in 0..k_circle {
                let t = 2.0 * PI * i as f64 / k_circle as f64;
                let y = [r * t.cos(), r * t.sin()];
                let x = [c[0] + eps * y[0], c[1] + eps * y[1]];
                surf += pair.p(x, y)? * phi.value(x, eps) * r * 2.0 * PI / k_circle as f64;
            }
            // dx = eps^2 dy, eps ds = eps^2 dsigma_y
            Ok(eps * eps * (vol - surf))
        })
        .collect::<Result<_, _>>()?;
    let num: f64 = parts.iter().sum();
    Ok(num.abs() / (eps * perforated_h1_norm(phi, &radius, eps)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct OscillationReport {
    pub pair: PairPreset,
    /// Largest average-condition defect over the sample points.
    pub defect: f64,
    /// `(eps, R)`, largest `eps` first.
    pub rows: Vec<(f64, f64)>,
}

impl OscillationReport {
    pub fn max_ratio(&self) -> f64 {
        self.rows.iter().map(|r| r.1).fold(0.0, f64::max)
    }

    /// `max_k R_k / R_0`: growth relative to the coarsest `eps`.
    pub fn growth(&self) -> f64 {
        let r0 = self.rows[0].1;
        if r0 == 0.0 {
            return if self.max_ratio() == 0.0 { 1.0 } else { f64::INFINITY };
        }
        self.rows.iter().map(|r| r.1 / r0).fold(0.0, f64::max)
    }

    /// `max R / min R` over the ladder.
    pub fn spread(&self) -> f64 {
        let min = self.rows.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
        let max = self.max_ratio();
        if max == 0.0 {
            1.0
        } else {
            max / min
        }
    }

    /// `R(eps / 2) / R(eps)` for consecutive rows.
    pub fn halving_factors(&self) -> Vec<f64> {
        self.rows.windows(2).map(|w| w[1].1 / w[0].1).collect()
    }
}

pub fn average_points() -> Vec<[f64; 2]> {
    vec![[0.2, 0.3], [0.5, 0.5], [0.8, 0.6], [0.35, 0.9]]
}

/// Evaluates the ratio over an `eps` ladder. Pairs other than the control
/// must satisfy the average condition to `1e-9`.
pub fn check_oscillation_bound(pair: &PairPreset, phi: &TestFunction, eps: &[f64]) -> Result<OscillationReport, LemmaError> {
    if eps.is_empty() {
        return Err(LemmaError::TooFew(1));
    }
    let mut defect: f64 = 0.0;
    for x in average_points() {
        let d = pair.average_defect(x)?;
        if !pair.is_control() && d.abs() > 1e-9 {
            return Err(LemmaError::Incompatible { defect: d, x });
        }
        defect = defect.max(d.abs());
    }
    let mut eps = eps.to_vec();
    eps.sort_by(|a, b| b.total_cmp(a));
    let rows = eps.iter().map(|&e| oscillation_ratio(pair, phi, e).map(|r| (e, r))).collect::<Result<_, _>>()?;
    Ok(OscillationReport { pair: *pair, defect, rows })
}

/// `|int_{Pi_eps} grad u0 phi dx|` over the strip of width `sqrt(2) eps / 2`
/// along the boundary of the unit square.
pub fn strip_integral(u0: &SmoothField, phi: &SmoothField, eps: f64) -> f64 {
    let w = std::f64::consts::SQRT_2 * eps / 2.0;
    let rects = [
        (0.0, 1.0, 0.0, w),
        (0.0, 1.0, 1.0 - w, 1.0),
        (0.0, w, w, 1.0 - w),
        (1.0 - w, 1.0, w, 1.0 - w),
    ];
    let mut acc = [0.0; 2];
    for (x0, x1, y0, y1) in rects {
        let long_x = x1 - x0 > y1 - y0;
        let (nx, ny) = if long_x { (48, 8) } else { (8, 48) };
        for (x, wx) in gauss(nx, x0, x1) {
            for (y, wy) in gauss(ny, y0, y1) {
                let g = u0.gradient([x, y]);
                let v = phi.value([x, y]) * wx * wy;
                acc[0] += g[0] * v;
                acc[1] += g[1] * v;
            }
        }
    }
    acc[0].hypot(acc[1])
}

#[derive(Debug, Clone, PartialEq)]
pub struct StripReport {
    /// `(eps, strip integral, strip integral / ||phi||_{H1})`.
    pub rows: Vec<(f64, f64, f64)>,
    /// Fitted exponent of the normalized strip integral.
    pub exponent: f64,
}

/// Strip estimate over an `eps` ladder; `phi` must vanish on the boundary.
/// The norm of `phi` is taken over the medium with inclusions of radius `radius`.
pub fn check_strip_scaling(u0: &SmoothField, phi: &SmoothField, radius: &RadiusProfile, eps: &[f64]) -> Result<StripReport, LemmaError> {
    let (trace, at) = phi.boundary_trace();
    if trace > 1e-12 {
        return Err(LemmaError::NonzeroTrace { value: trace, x: at });
    }
    if eps.len() < 2 {
        return Err(LemmaError::TooFew(2));
    }
    let mut eps = eps.to_vec();
    eps.sort_by(|a, b| b.total_cmp(a));
    let rows: Vec<(f64, f64, f64)> = eps
        .iter()
        .map(|&e| {
            let s = strip_integral(u0, phi, e);
            let n = perforated_h1_norm(&TestFunction::Smooth(*phi), radius, e)?;
            Ok((e, s, if n > 0.0 { s / n } else { 0.0 }))
        })
        .collect::<Result<_, LemmaError>>()?;
    let fit_rows: Vec<(f64, f64)> = rows.iter().map(|r| (r.0, r.2)).collect();
    let exponent = super::rate_fit(&fit_rows).map(|f| f.p).unwrap_or(f64::NAN);
    Ok(StripReport { rows, exponent })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_rule_integrates_polynomials() {
        let s: f64 = gauss(4, 0.0, 2.0).iter().map(|(x, w)| w * x.powi(7)).sum();
        assert!((s - 32.0).abs() < 1e-12);
    }

    #[test]
    fn perforated_cell_has_area_theta() {
        for r in [0.0, 0.1, 0.3, 0.45] {
            let a: f64 = perforated_cell(r, 12, 12).iter().map(|p| p.1).sum();
            assert!((a - (1.0 - PI * r * r)).abs() < 1e-11, "r={r}: {a}");
        }
    }

    #[test]
    fn disc_corrector_is_flux_free_and_averages_to_identity() {
        let r = 0.3;
        let g = [0.7, -1.2];
        for k in 0..16 {
            let t = k as f64 * 0.4;
            let y = [r * t.cos(), r * t.sin()];
            let f = disc_flux(r, y, g);
            assert!((f[0] * y[0] + f[1] * y[1]).abs() < 1e-14);
        }
        let mut avg = [0.0; 2];
        for (y, w) in perforated_cell(r, 16, 16) {
            let f = disc_flux(r, y, g);
            avg[0] += w * f[0];
            avg[1] += w * f[1];
        }
        let theta = 1.0 - PI * r * r;
        assert!((avg[0] - theta * g[0]).abs() < 1e-10 && (avg[1] - theta * g[1]).abs() < 1e-10);
    }

    #[test]
    fn transport_identity_trivial_cases() {
        let x = [0.4, 0.6];
        let (l, r) = transport_sides(&RadiusProfile::Constant { r0: 0.25 }, &SmoothField::SinCos, x, 16).unwrap();
        assert!(r.abs() < 1e-14);
        assert!(l.abs() < 1e-6, "{l}");
        let (l, r) = transport_sides(&RadiusProfile::Linear { r0: 0.2, a: 0.05 }, &SmoothField::Constant(2.0), x, 16).unwrap();
        assert!(l.abs() < 1e-9 && r.abs() < 1e-14);
        assert!(matches!(
            check_transport_identity(&RadiusProfile::Constant { r0: 0.2 }, &SmoothField::SinCos, &[x], 8),
            Err(LemmaError::ConstantRadius)
        ));
    }

    #[test]
    fn presets_satisfy_average_condition() {
        for pair in [
            PairPreset::Uniform { r: 0.25 },
            PairPreset::CorrectorFlux { u0: SmoothField::SinCos },
            PairPreset::Exchange { r: 0.3 },
        ] {
            for x in average_points() {
                assert!(pair.average_defect(x).unwrap().abs() < 1e-10, "{}", pair.name());
            }
        }
        assert!(PairPreset::Incompatible { r: 0.25 }.average_defect([0.5, 0.5]).unwrap() > 0.5);
    }

    #[test]
    fn zero_pair_and_zero_gradient_vanish() {
        let r = oscillation_ratio(&PairPreset::Zero { r: 0.25 }, &TestFunction::Smooth(SmoothField::SineProduct), 0.125).unwrap();
        assert_eq!(r, 0.0);
        assert_eq!(strip_integral(&SmoothField::Constant(1.0), &SmoothField::SineProduct, 0.125), 0.0);
        assert_eq!(strip_integral(&SmoothField::X1Squared, &SmoothField::Constant(0.0), 0.125), 0.0);
        let bad = check_strip_scaling(&SmoothField::X1Squared, &SmoothField::SinCos, &RadiusProfile::Constant { r0: 0.25 }, &[0.125, 0.0625]);
        assert!(matches!(bad, Err(LemmaError::NonzeroTrace { .. })));
    }
}
