//! Boundary, initial and velocity presets shared by the micro and two-scale solvers.

use std::f64::consts::PI;

use thiserror::Error;

use crate::geometry::Rect;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("boundary data must be non-increasing in time: {0}")]
    Increasing(String),
    #[error("{0} must be positive (got {1})")]
    NonPositive(&'static str, f64),
    #[error("{0} must be non-negative (got {1})")]
    Negative(&'static str, f64),
}

/// Dirichlet data `u_b(x, t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundaryData {
    Constant(f64),
    /// `c0 exp(-lambda t)`
    Decay { c0: f64, lambda: f64 },
    /// `amp exp(-lambda t) (1 + x1) (1 + x2)`
    Separable { amp: f64, lambda: f64 },
}

impl Default for BoundaryData {
    fn default() -> Self {
        Self::Constant(0.0)
    }
}

impl BoundaryData {
    pub fn eval(&self, x: [f64; 2], t: f64) -> f64 {
        match *self {
            Self::Constant(c) => c,
            Self::Decay { c0, lambda } => c0 * (-lambda * t).exp(),
            Self::Separable { amp, lambda } => amp * (-lambda * t).exp() * (1.0 + x[0]) * (1.0 + x[1]),
        }
    }

    /// Checks `d/dt u_b <= 0` on the boundary of `omega` at the given times.
    pub fn validate(&self, omega: &Rect, times: &[f64]) -> Result<(), DataError> {
        let pts = [
            [omega.x0, omega.y0],
            [omega.x1, omega.y0],
            [omega.x0, omega.y1],
            [omega.x1, omega.y1],
            [0.5 * (omega.x0 + omega.x1), omega.y0],
            [omega.x0, 0.5 * (omega.y0 + omega.y1)],
        ];
        for w in times.windows(2) {
            for x in pts {
                let (a, b) = (self.eval(x, w[0]), self.eval(x, w[1]));
                if b > a + 1e-14 * a.abs().max(1.0) {
                    return Err(DataError::Increasing(format!(
                        "u_b({:?}) rises from {a} at t={} to {b} at t={}",
                        x, w[0], w[1]
                    )));
                }
            }
        }
        Ok(())
    }

    /// Range of `u_b` over `omega`'s boundary for `t` in `[0, t_end]`.
    pub fn range(&self, omega: &Rect, t_end: f64) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let xs = [omega.x0, omega.x1];
        let ys = [omega.y0, omega.y1];
        for t in [0.0, t_end] {
            for &a in &xs {
                for &b in &ys {
                    let v = self.eval([a, b], t);
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
            }
        }
        // Every preset is bilinear in x and monotone in t, so corners at the
        // two end times bound it.
        (lo, hi)
    }
}

/// Macroscopic scalar field presets.
#[derive(Debug, Clone, PartialEq)]
pub enum MacroFn {
    Constant(f64),
    /// `amp sin(pi x1') sin(pi x2')` with `x'` the position scaled to the unit square.
    SineProduct { amp: f64 },
}

impl Default for MacroFn {
    fn default() -> Self {
        Self::SineProduct { amp: 1.0 }
    }
}

impl MacroFn {
    pub fn eval(&self, omega: &Rect, x: [f64; 2]) -> f64 {
        match *self {
            Self::Constant(c) => c,
            Self::SineProduct { amp } => {
                let s = (x[0] - omega.x0) / omega.width();
                let t = (x[1] - omega.y0) / omega.height();
                amp * (PI * s).sin() * (PI * t).sin()
            }
        }
    }

    pub fn range(&self) -> (f64, f64) {
        match *self {
            Self::Constant(c) => (c, c),
            Self::SineProduct { amp } => (amp.min(0.0), amp.max(0.0)),
        }
    }
}

/// Initial data in the inclusions, `v_I(x, y)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum LowInit {
    /// `v_I(x, y) = u_I(x)`.
    #[default]
    MatchMacro,
    Constant(f64),
}

impl LowInit {
    pub fn eval(&self, u_init: &MacroFn, omega: &Rect, x: [f64; 2]) -> f64 {
        match *self {
            Self::MatchMacro => u_init.eval(omega, x),
            Self::Constant(c) => c,
        }
    }
}

/// Divergence-free velocity presets `q = A (d psi/dx2, -d psi/dx1)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum VelocitySpec {
    #[default]
    Zero,
    /// `psi = sin(pi x1') sin(pi x2')` on the unit-scaled domain.
    StreamFunction { amplitude: f64 },
}

impl VelocitySpec {
    pub fn amplitude(&self) -> f64 {
        match *self {
            Self::Zero => 0.0,
            Self::StreamFunction { amplitude } => amplitude,
        }
    }

    pub fn psi(&self, omega: &Rect, x: [f64; 2]) -> f64 {
        let s = (x[0] - omega.x0) / omega.width();
        let t = (x[1] - omega.y0) / omega.height();
        self.amplitude() * (PI * s).sin() * (PI * t).sin()
    }

    /// Continuum velocity.
    pub fn velocity(&self, omega: &Rect, x: [f64; 2]) -> [f64; 2] {
        let a = self.amplitude();
        if a == 0.0 {
            return [0.0, 0.0];
        }
        let (w, hgt) = (omega.width(), omega.height());
        let s = (x[0] - omega.x0) / w;
        let t = (x[1] - omega.y0) / hgt;
        [
            a * (PI * s).sin() * (PI * t).cos() * PI / hgt,
            -a * (PI * s).cos() * (PI * t).sin() * PI / w,
        ]
    }
}

pub fn require_positive(name: &'static str, v: f64) -> Result<(), DataError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(DataError::NonPositive(name, v))
    }
}

pub fn require_nonnegative(name: &'static str, v: f64) -> Result<(), DataError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(DataError::Negative(name, v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundary_presets_are_checked_for_monotonicity() {
        let omega = Rect::unit();
        let times: Vec<f64> = (0..=10).map(|k| k as f64 * 0.1).collect();
        assert!(BoundaryData::Decay { c0: 1.0, lambda: 2.0 }.validate(&omega, &times).is_ok());
        assert!(BoundaryData::Decay { c0: 1.0, lambda: -2.0 }.validate(&omega, &times).is_err());
        assert!(BoundaryData::Separable { amp: -1.0, lambda: 1.0 }.validate(&omega, &times).is_err());
        assert!(BoundaryData::Constant(3.0).validate(&omega, &times).is_ok());
    }

    #[test]
    fn stream_function_velocity_matches_derivatives() {
        let omega = Rect::new(0.0, 0.0, 2.0, 1.0).unwrap();
        let v = VelocitySpec::StreamFunction { amplitude: 0.7 };
        let d = 1e-6;
        let x = [0.3, 0.8];
        let q = v.velocity(&omega, x);
        let dpsi_dy = (v.psi(&omega, [x[0], x[1] + d]) - v.psi(&omega, [x[0], x[1] - d])) / (2.0 * d);
        let dpsi_dx = (v.psi(&omega, [x[0] + d, x[1]]) - v.psi(&omega, [x[0] - d, x[1]])) / (2.0 * d);
        assert!((q[0] - dpsi_dy).abs() < 1e-8);
        assert!((q[1] + dpsi_dx).abs() < 1e-8);
    }
}
