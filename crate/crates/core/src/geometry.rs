//! Locally periodic two-phase media built from the level set `S(x, y) = |y| - r(x)`.
//!
//! Space is tiled by cells `eps * (U + j)` centred at `eps * j`, with
//! `U = [-1/2, 1/2]^2`. Cells whose centre is at least `eps * sqrt(2)` away
//! from the outer boundary carry one disc-shaped inclusion of radius
//! `r(x)` (in cell units). The fine grid is vertex-centred: node `(i, k)` sits
//! at `omega.x0 + i h`, `omega.y0 + k h`, so the outer boundary is made of
//! grid nodes.

use std::collections::VecDeque;
use std::f64::consts::SQRT_2;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("radius {value} at ({x}, {y}) is outside [0, 1/2)")]
    RadiusOutOfRange { x: f64, y: f64, value: f64 },
    #[error("r_max must be < 0.5 (got {0})")]
    RMaxTooLarge(f64),
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("1/epsilon must be a positive integer (got epsilon = {0})")]
    InvalidEpsilon(f64),
    #[error("h = {h} does not divide epsilon = {epsilon}")]
    SpacingMismatch { h: f64, epsilon: f64 },
    #[error("inclusions unresolved: eps * r_min = {resolved} < 4h = {needed}")]
    Unresolved { resolved: f64, needed: f64 },
    #[error("point ({0}, {1}) is outside the domain")]
    OutsideDomain(f64, f64),
    #[error("point is not on the interface: |S| = {s} > {tol}")]
    OffInterface { s: f64, tol: f64 },
    #[error("degenerate level set: grad_y S vanishes at the cell centre")]
    Degenerate,
}

/// Round `v` to the nearest integer if it is within `1e-9` of one.
pub(crate) fn as_integer(v: f64) -> Option<i64> {
    let r = v.round();
    ((v - r).abs() <= 1e-9 * v.abs().max(1.0)).then_some(r as i64)
}

/// Axis-aligned rectangle `[x0, x1] x [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Default for Rect {
    fn default() -> Self {
        Self::unit()
    }
}

impl Rect {
    pub fn unit() -> Self {
        Self { x0: 0.0, y0: 0.0, x1: 1.0, y1: 1.0 }
    }

    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self, GeometryError> {
        if !(x0.is_finite() && y0.is_finite() && x1.is_finite() && y1.is_finite()) {
            return Err(GeometryError::InvalidDomain("non-finite corner".into()));
        }
        if x1 <= x0 || y1 <= y0 {
            return Err(GeometryError::InvalidDomain("empty rectangle".into()));
        }
        Ok(Self { x0, y0, x1, y1 })
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn contains(&self, x: [f64; 2]) -> bool {
        x[0] >= self.x0 && x[0] <= self.x1 && x[1] >= self.y0 && x[1] <= self.y1
    }

    /// Distance from an interior point to the boundary.
    pub fn dist_to_boundary(&self, x: [f64; 2]) -> f64 {
        (x[0] - self.x0).min(self.x1 - x[0]).min(x[1] - self.y0).min(self.y1 - x[1])
    }
}

/// Radius presets, all in cell units.
#[derive(Debug, Clone, PartialEq)]
pub enum RadiusProfile {
    Constant { r0: f64 },
    /// `r0 + a * x1`
    Linear { r0: f64, a: f64 },
    /// `r0 + amp * exp(-|x - center|^2 / width^2)`
    RadialBump { r0: f64, amp: f64, center: [f64; 2], width: f64 },
}

impl RadiusProfile {
    pub fn eval(&self, x: [f64; 2]) -> f64 {
        match *self {
            Self::Constant { r0 } => r0,
            Self::Linear { r0, a } => r0 + a * x[0],
            Self::RadialBump { r0, amp, center, width } => {
                let d2 = (x[0] - center[0]).powi(2) + (x[1] - center[1]).powi(2);
                r0 + amp * (-d2 / (width * width)).exp()
            }
        }
    }

    pub fn gradient(&self, x: [f64; 2]) -> [f64; 2] {
        match *self {
            Self::Constant { .. } => [0.0, 0.0],
            Self::Linear { a, .. } => [a, 0.0],
            Self::RadialBump { amp, center, width, .. } => {
                let (dx, dy) = (x[0] - center[0], x[1] - center[1]);
                let w2 = width * width;
                let g = amp * (-(dx * dx + dy * dy) / w2).exp() * (-2.0 / w2);
                [g * dx, g * dy]
            }
        }
    }

    pub fn is_constant(&self) -> bool {
        match *self {
            Self::Constant { .. } => true,
            Self::Linear { a, .. } => a == 0.0,
            Self::RadialBump { amp, .. } => amp == 0.0,
        }
    }

    /// Exact range of the profile over `omega`.
    pub fn range(&self, omega: &Rect) -> (f64, f64) {
        match *self {
            Self::Constant { r0 } => (r0, r0),
            Self::Linear { .. } => {
                let (a, b) = (self.eval([omega.x0, 0.0]), self.eval([omega.x1, 0.0]));
                (a.min(b), a.max(b))
            }
            Self::RadialBump { center, .. } => {
                // The profile is monotone in the distance to the centre.
                let near = [center[0].clamp(omega.x0, omega.x1), center[1].clamp(omega.y0, omega.y1)];
                let far = [
                    if center[0] - omega.x0 > omega.x1 - center[0] { omega.x0 } else { omega.x1 },
                    if center[1] - omega.y0 > omega.y1 - center[1] { omega.y0 } else { omega.y1 },
                ];
                let (a, b) = (self.eval(near), self.eval(far));
                (a.min(b), a.max(b))
            }
        }
    }

    /// Largest `|grad r|` over `omega`.
    pub fn max_slope(&self, _omega: &Rect) -> f64 {
        match *self {
            Self::Constant { .. } => 0.0,
            Self::Linear { a, .. } => a.abs(),
            Self::RadialBump { amp, width, .. } => {
                // |d/dd (amp e^{-d^2/w^2})| peaks at d = w / sqrt(2).
                amp.abs() * SQRT_2 / width * (-0.5f64).exp()
            }
        }
    }
}

/// Level set description of the medium.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSetSpec {
    pub radius: RadiusProfile,
    pub r_min: f64,
    pub r_max: f64,
    pub omega: Rect,
}

impl LevelSetSpec {
    /// Validates the radius range. `r = 0` everywhere is accepted as the
    /// inclusion-free medium; otherwise the radius must stay in `(0, 1/2)`.
    pub fn new(radius: RadiusProfile, omega: Rect) -> Result<Self, GeometryError> {
        let (r_min, r_max) = radius.range(&omega);
        if r_max >= 0.5 {
            return Err(GeometryError::RMaxTooLarge(r_max));
        }
        let zero = r_min == 0.0 && r_max == 0.0;
        if !zero && !(r_min > 0.0) {
            let x = [omega.x0, omega.y0];
            return Err(GeometryError::RadiusOutOfRange { x: x[0], y: x[1], value: r_min });
        }
        Ok(Self { radius, r_min, r_max, omega })
    }

    pub fn constant(r0: f64) -> Result<Self, GeometryError> {
        Self::new(RadiusProfile::Constant { r0 }, Rect::unit())
    }

    pub fn r(&self, x: [f64; 2]) -> f64 {
        self.radius.eval(x)
    }

    pub fn has_inclusions(&self) -> bool {
        self.r_max > 0.0
    }

    /// `S(x, y) = |y| - r(x)`.
    pub fn level_set(&self, x: [f64; 2], y: [f64; 2]) -> f64 {
        y[0].hypot(y[1]) - self.r(x)
    }

    /// Ratio `eps * max|grad r| / r_min`. Values above 1/4 mean the radius
    /// changes appreciably from one cell to the next; this is reported, not
    /// rejected.
    pub fn variation_ratio(&self, epsilon: f64) -> f64 {
        if self.r_min == 0.0 {
            return 0.0;
        }
        epsilon * self.radius.max_slope(&self.omega) / self.r_min
    }
}

/// Uniform vertex-centred grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub x0: f64,
    pub y0: f64,
    pub h: f64,
    pub nx: usize,
    pub ny: usize,
}

impl Grid {
    /// Grid with nodes on both edges of `omega`; `h` must divide both sides.
    pub fn covering(omega: &Rect, h: f64) -> Option<Self> {
        let cx = as_integer(omega.width() / h)?;
        let cy = as_integer(omega.height() / h)?;
        (cx > 0 && cy > 0).then_some(Self {
            x0: omega.x0,
            y0: omega.y0,
            h,
            nx: cx as usize + 1,
            ny: cy as usize + 1,
        })
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }

    pub fn ij(&self, i: usize) -> (usize, usize) {
        (i % self.nx, i / self.nx)
    }

    pub fn coord(&self, i: usize) -> [f64; 2] {
        let (ix, iy) = self.ij(i);
        [self.x0 + ix as f64 * self.h, self.y0 + iy as f64 * self.h]
    }

    pub fn on_boundary(&self, i: usize) -> bool {
        let (ix, iy) = self.ij(i);
        ix == 0 || iy == 0 || ix + 1 == self.nx || iy + 1 == self.ny
    }

    /// Area of the dual cell of node `i` clipped to the domain.
    pub fn dual_volume(&self, i: usize) -> f64 {
        let (ix, iy) = self.ij(i);
        let fx = if ix == 0 || ix + 1 == self.nx { 0.5 } else { 1.0 };
        let fy = if iy == 0 || iy + 1 == self.ny { 0.5 } else { 1.0 };
        fx * fy * self.h * self.h
    }

    /// Bilinear interpolation of nodal `values` at `x` (clamped to the grid).
    pub fn interpolate(&self, values: &[f64], x: [f64; 2]) -> f64 {
        let (ix, tx) = self.locate(x[0] - self.x0, self.nx);
        let (iy, ty) = self.locate(x[1] - self.y0, self.ny);
        let v = |a: usize, b: usize| values[self.index(a, b)];
        let (ix1, iy1) = ((ix + 1).min(self.nx - 1), (iy + 1).min(self.ny - 1));
        (1.0 - ty) * ((1.0 - tx) * v(ix, iy) + tx * v(ix1, iy))
            + ty * ((1.0 - tx) * v(ix, iy1) + tx * v(ix1, iy1))
    }

    fn locate(&self, d: f64, n: usize) -> (usize, f64) {
        let s = (d / self.h).clamp(0.0, (n - 1) as f64);
        let i = (s.floor() as usize).min(n.saturating_sub(2));
        (i, s - i as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    High,
    Low,
}

impl Phase {
    pub fn code(self) -> u8 {
        match self {
            Phase::High => 0,
            Phase::Low => 1,
        }
    }
}

/// A grid edge joining a high node and a low node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterfaceFace {
    pub high: usize,
    pub low: usize,
    /// `true` when the nodes differ in x.
    pub horizontal: bool,
    /// Index into [`MediumGeometry::cells`] of the owning inclusion.
    pub cell: usize,
    /// Face midpoint.
    pub mid: [f64; 2],
    /// `h |n_f . nu0|`: the staircase face projected onto the disc normal.
    pub weight: f64,
}

pub const NO_CELL: u32 = u32::MAX;

/// The perforated medium at one scale `epsilon`.
#[derive(Debug, Clone)]
pub struct MediumGeometry {
    pub spec: LevelSetSpec,
    pub epsilon: f64,
    pub grid: Grid,
    /// `eps / h`.
    pub ratio: usize,
    /// `J^eps`, row-major in `j`.
    pub cells: Vec<[i64; 2]>,
    /// Inclusive index ranges spanned by `cells`.
    pub j_range: Option<([i64; 2], [i64; 2])>,
    /// Lattice cells meeting the domain that carry no inclusion.
    pub boundary_ring: Vec<[i64; 2]>,
    pub phase: Vec<Phase>,
    /// Owning entry of `cells` for low nodes, [`NO_CELL`] otherwise.
    pub owner: Vec<u32>,
    pub interface_faces: Vec<InterfaceFace>,
    /// Integer offset of grid node 0 in units of `h`, relative to the lattice origin.
    origin: [i64; 2],
}

impl MediumGeometry {
    pub fn num_low(&self) -> usize {
        self.phase.iter().filter(|&&p| p == Phase::Low).count()
    }

    pub fn num_high(&self) -> usize {
        self.phase.len() - self.num_low()
    }

    pub fn cell_center(&self, c: usize) -> [f64; 2] {
        let j = self.cells[c];
        [self.epsilon * j[0] as f64, self.epsilon * j[1] as f64]
    }

    /// Radius `r(eps j)` at the centre of cell `c`.
    pub fn cell_radius(&self, c: usize) -> f64 {
        self.spec.r(self.cell_center(c))
    }

    pub fn contains_cell(&self, j: [i64; 2]) -> bool {
        self.j_range.is_some_and(|(lo, hi)| (0..2).all(|d| j[d] >= lo[d] && j[d] <= hi[d]))
    }

    pub fn cell_slot(&self, j: [i64; 2]) -> Option<usize> {
        let (lo, hi) = self.j_range?;
        if !self.contains_cell(j) {
            return None;
        }
        let w = (hi[0] - lo[0] + 1) as usize;
        Some((j[1] - lo[1]) as usize * w + (j[0] - lo[0]) as usize)
    }

    /// Lattice index and cell coordinate of grid node `i`.
    pub fn node_cell(&self, i: usize) -> ([i64; 2], [f64; 2]) {
        let (ix, iy) = self.grid.ij(i);
        let g = [self.origin[0] + ix as i64, self.origin[1] + iy as i64];
        let r = self.ratio as i64;
        let mut j = [0i64; 2];
        let mut y = [0.0; 2];
        for d in 0..2 {
            // Round half away from zero; on a frame node either choice gives |y| = 1/2.
            j[d] = (2 * g[d] + r).div_euclid(2 * r);
            y[d] = (g[d] - j[d] * r) as f64 / r as f64;
        }
        (j, y)
    }

    /// Phase of an arbitrary point of the domain.
    pub fn classify_point(&self, x: [f64; 2]) -> Result<Phase, GeometryError> {
        if !self.spec.omega.contains(x) {
            return Err(GeometryError::OutsideDomain(x[0], x[1]));
        }
        let (j, y) = cell_coordinates(x, self.epsilon);
        if self.contains_cell(j) && y[0].hypot(y[1]) < self.spec.r(x) {
            Ok(Phase::Low)
        } else {
            Ok(Phase::High)
        }
    }

    /// Sum of interface face weights: a staircase approximation of `|Gamma^eps|`.
    pub fn interface_measure(&self) -> f64 {
        self.interface_faces.iter().map(|f| f.weight).sum()
    }

    /// `sum_j 2 pi eps r(eps j)`.
    pub fn nominal_interface_measure(&self) -> f64 {
        (0..self.cells.len())
            .map(|c| 2.0 * std::f64::consts::PI * self.epsilon * self.cell_radius(c))
            .sum()
    }

    /// Dual-cell area of the low phase.
    pub fn low_area(&self) -> f64 {
        (0..self.phase.len())
            .filter(|&i| self.phase[i] == Phase::Low)
            .map(|i| self.grid.dual_volume(i))
            .sum()
    }

    /// Edge-connected components of the nodes with the given phase.
    pub fn components(&self, phase: Phase) -> Vec<Vec<usize>> {
        let n = self.phase.len();
        let mut seen = vec![false; n];
        let mut out = Vec::new();
        let g = &self.grid;
        for start in 0..n {
            if seen[start] || self.phase[start] != phase {
                continue;
            }
            let mut comp = Vec::new();
            let mut queue = VecDeque::from([start]);
            seen[start] = true;
            while let Some(i) = queue.pop_front() {
                comp.push(i);
                let (ix, iy) = g.ij(i);
                let mut nb = Vec::with_capacity(4);
                if ix > 0 {
                    nb.push(i - 1);
                }
                if ix + 1 < g.nx {
                    nb.push(i + 1);
                }
                if iy > 0 {
                    nb.push(i - g.nx);
                }
                if iy + 1 < g.ny {
                    nb.push(i + g.nx);
                }
                for k in nb {
                    if !seen[k] && self.phase[k] == phase {
                        seen[k] = true;
                        queue.push_back(k);
                    }
                }
            }
            out.push(comp);
        }
        out
    }

    /// Verifies that the high phase is connected and that each inclusion is
    /// one component that touches no other.
    pub fn check_topology(&self) -> Result<(), String> {
        let high = self.components(Phase::High);
        if high.len() != 1 {
            return Err(format!("high phase has {} components", high.len()));
        }
        if !self.spec.has_inclusions() {
            return Ok(());
        }
        let low = self.components(Phase::Low);
        if low.len() != self.cells.len() {
            return Err(format!("{} low components for {} cells", low.len(), self.cells.len()));
        }
        for comp in &low {
            let c = self.owner[comp[0]];
            if comp.iter().any(|&i| self.owner[i] != c) {
                return Err("a low component spans two cells".into());
            }
        }
        Ok(())
    }
}

/// Lattice index `j = round(x / eps)` and cell coordinate `y = x / eps - j`.
pub fn cell_coordinates(x: [f64; 2], epsilon: f64) -> ([i64; 2], [f64; 2]) {
    let mut j = [0i64; 2];
    let mut y = [0.0; 2];
    for d in 0..2 {
        let s = x[d] / epsilon;
        j[d] = s.round() as i64;
        y[d] = s - j[d] as f64;
    }
    (j, y)
}

/// Builds the perforated medium on a grid of spacing `h`.
pub fn build_medium(spec: &LevelSetSpec, epsilon: f64, h: f64) -> Result<MediumGeometry, GeometryError> {
    let inv = as_integer(1.0 / epsilon).filter(|&k| k > 0).ok_or(GeometryError::InvalidEpsilon(epsilon))?;
    let epsilon = 1.0 / inv as f64;
    let ratio = as_integer(epsilon / h)
        .filter(|&k| k > 0)
        .ok_or(GeometryError::SpacingMismatch { h, epsilon })? as usize;
    let h = epsilon / ratio as f64;
    if spec.has_inclusions() && epsilon * spec.r_min < 4.0 * h * (1.0 - 1e-12) {
        return Err(GeometryError::Unresolved { resolved: epsilon * spec.r_min, needed: 4.0 * h });
    }
    let omega = spec.omega;
    let bad = |what: &str| GeometryError::InvalidDomain(format!("{what} is not a multiple of epsilon"));
    let lo = [
        as_integer(omega.x0 / epsilon).ok_or_else(|| bad("x0"))?,
        as_integer(omega.y0 / epsilon).ok_or_else(|| bad("y0"))?,
    ];
    let hi = [
        as_integer(omega.x1 / epsilon).ok_or_else(|| bad("x1"))?,
        as_integer(omega.y1 / epsilon).ok_or_else(|| bad("y1"))?,
    ];
    let grid = Grid::covering(&omega, h).ok_or(GeometryError::SpacingMismatch { h, epsilon })?;
    let origin = [lo[0] * ratio as i64, lo[1] * ratio as i64];

    // J^eps: centres at least eps*sqrt(2) from the boundary. In lattice units
    // that is an index margin of ceil(sqrt 2) = 2 on every side.
    let margin = SQRT_2.ceil() as i64;
    let jlo = [lo[0] + margin, lo[1] + margin];
    let jhi = [hi[0] - margin, hi[1] - margin];
    let j_range = (jlo[0] <= jhi[0] && jlo[1] <= jhi[1]).then_some((jlo, jhi));
    let mut cells = Vec::new();
    if j_range.is_some() {
        for j1 in jlo[1]..=jhi[1] {
            for j0 in jlo[0]..=jhi[0] {
                cells.push([j0, j1]);
            }
        }
    }
    let mut boundary_ring = Vec::new();
    for j1 in lo[1]..=hi[1] {
        for j0 in lo[0]..=hi[0] {
            let inside = j_range.is_some_and(|(a, b)| j0 >= a[0] && j0 <= b[0] && j1 >= a[1] && j1 <= b[1]);
            if !inside {
                boundary_ring.push([j0, j1]);
            }
        }
    }

    let mut geom = MediumGeometry {
        spec: spec.clone(),
        epsilon,
        grid,
        ratio,
        cells,
        j_range,
        boundary_ring,
        phase: vec![Phase::High; grid.len()],
        owner: vec![NO_CELL; grid.len()],
        interface_faces: Vec::new(),
        origin,
    };

    if spec.has_inclusions() {
        for i in 0..grid.len() {
            let (j, y) = geom.node_cell(i);
            if let Some(c) = geom.cell_slot(j) {
                let x = grid.coord(i);
                let r = spec.r(x);
                if r < 0.0 || r >= 0.5 {
                    return Err(GeometryError::RadiusOutOfRange { x: x[0], y: x[1], value: r });
                }
                if y[0].hypot(y[1]) < r {
                    geom.phase[i] = Phase::Low;
                    geom.owner[i] = c as u32;
                }
            }
        }
        geom.interface_faces = collect_interface(&geom);
    }
    Ok(geom)
}

fn collect_interface(geom: &MediumGeometry) -> Vec<InterfaceFace> {
    let g = &geom.grid;
    let mut faces = Vec::new();
    for i in 0..g.len() {
        let (ix, iy) = g.ij(i);
        let mut push = |k: usize, horizontal: bool| {
            if geom.phase[i] == geom.phase[k] {
                return;
            }
            let (high, low) = if geom.phase[i] == Phase::High { (i, k) } else { (k, i) };
            let cell = geom.owner[low] as usize;
            let (a, b) = (g.coord(i), g.coord(k));
            let mid = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
            let c = geom.cell_center(cell);
            let y = [(mid[0] - c[0]) / geom.epsilon, (mid[1] - c[1]) / geom.epsilon];
            let ny = y[0].hypot(y[1]);
            let comp = if horizontal { y[0] } else { y[1] };
            let weight = if ny > 0.0 { g.h * (comp / ny).abs() } else { g.h };
            faces.push(InterfaceFace { high, low, horizontal, cell, mid, weight });
        };
        if ix + 1 < g.nx {
            push(i + 1, true);
        }
        if iy + 1 < g.ny {
            push(i + g.nx, false);
        }
    }
    faces
}

/// Smooth cutoff `chi_eps`: a tensor product of quintic smoothsteps that is
/// zero outside the union of retained cells and one at depth `width` inside it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cutoff {
    /// Union of retained cells; `None` when `J^eps` is empty.
    pub support: Option<Rect>,
    pub width: f64,
}

fn smoothstep(t: f64) -> (f64, f64, f64) {
    if t <= 0.0 {
        (0.0, 0.0, 0.0)
    } else if t >= 1.0 {
        (1.0, 0.0, 0.0)
    } else {
        let t2 = t * t;
        let t3 = t2 * t;
        (
            t3 * (10.0 - 15.0 * t + 6.0 * t2),
            30.0 * t2 * (1.0 - t) * (1.0 - t),
            60.0 * t * (1.0 - t) * (1.0 - 2.0 * t),
        )
    }
}

/// One-dimensional factor on `[a, b]` with ramps of width `w`: value and two derivatives.
fn ramp(t: f64, a: f64, b: f64, w: f64) -> (f64, f64, f64) {
    let (s, s1, s2) = smoothstep((t - a) / w);
    let (q, q1, q2) = smoothstep((b - t) / w);
    let (s1, s2) = (s1 / w, s2 / (w * w));
    let (q1, q2) = (-q1 / w, q2 / (w * w));
    (s * q, s1 * q + s * q1, s2 * q + 2.0 * s1 * q1 + s * q2)
}

impl Cutoff {
    pub fn for_medium(geom: &MediumGeometry) -> Self {
        let e = geom.epsilon;
        let support = geom.j_range.map(|(lo, hi)| Rect {
            x0: (lo[0] as f64 - 0.5) * e,
            y0: (lo[1] as f64 - 0.5) * e,
            x1: (hi[0] as f64 + 0.5) * e,
            y1: (hi[1] as f64 + 0.5) * e,
        });
        Self { support, width: (0.5 - geom.spec.r_max) * e / 2.0 }
    }

    /// `(chi, grad chi, laplacian chi)` at `x`.
    pub fn eval(&self, x: [f64; 2]) -> (f64, [f64; 2], f64) {
        let Some(r) = self.support else {
            return (0.0, [0.0, 0.0], 0.0);
        };
        let (f, f1, f2) = ramp(x[0], r.x0, r.x1, self.width);
        let (g, g1, g2) = ramp(x[1], r.y0, r.y1, self.width);
        (f * g, [f1 * g, f * g1], f2 * g + f * g2)
    }
}

/// Nodal samples of the cutoff.
#[derive(Debug, Clone)]
pub struct CutoffField {
    pub cutoff: Cutoff,
    pub values: Vec<f64>,
    pub gradient: Vec<[f64; 2]>,
    pub laplacian: Vec<f64>,
}

/// `L^2(Omega)` norms of `1 - chi`, `grad chi` and `laplacian chi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CutoffNorms {
    pub one_minus: f64,
    pub gradient: f64,
    pub laplacian: f64,
}

pub fn build_cutoff(geom: &MediumGeometry) -> CutoffField {
    let cutoff = Cutoff::for_medium(geom);
    let n = geom.grid.len();
    let mut values = Vec::with_capacity(n);
    let mut gradient = Vec::with_capacity(n);
    let mut laplacian = Vec::with_capacity(n);
    for i in 0..n {
        let (v, g, l) = cutoff.eval(geom.grid.coord(i));
        values.push(v);
        gradient.push(g);
        laplacian.push(l);
    }
    CutoffField { cutoff, values, gradient, laplacian }
}

impl CutoffField {
    /// Nodal quadrature with dual-cell weights.
    pub fn norms(&self, grid: &Grid) -> CutoffNorms {
        let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
        for i in 0..grid.len() {
            let w = grid.dual_volume(i);
            a += w * (1.0 - self.values[i]).powi(2);
            b += w * (self.gradient[i][0].powi(2) + self.gradient[i][1].powi(2));
            c += w * self.laplacian[i].powi(2);
        }
        CutoffNorms { one_minus: a.sqrt(), gradient: b.sqrt(), laplacian: c.sqrt() }
    }
}

/// First two terms of the normal expansion `nu^eps = nu0 + eps nu1 + O(eps^2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalExpansion {
    pub nu0: [f64; 2],
    pub nu1: [f64; 2],
    pub tau0: [f64; 2],
}

/// Expansion from the cell coordinate `y` and `grad_x S = -grad r(x)`.
pub fn expansion_at(y: [f64; 2], grad_r: [f64; 2]) -> Result<NormalExpansion, GeometryError> {
    let n = y[0].hypot(y[1]);
    if n == 0.0 {
        return Err(GeometryError::Degenerate);
    }
    let nu0 = [y[0] / n, y[1] / n];
    let tau0 = [-nu0[1], nu0[0]];
    let gx = [-grad_r[0], -grad_r[1]];
    // |grad_y S| = 1 for S = |y| - r(x).
    let t = tau0[0] * gx[0] + tau0[1] * gx[1];
    Ok(NormalExpansion { nu0, nu1: [t * tau0[0], t * tau0[1]], tau0 })
}

/// Normal expansion at an interface point `x`; `tol` bounds `|S(x, x/eps)|`.
pub fn normal_expansion(
    spec: &LevelSetSpec,
    x: [f64; 2],
    epsilon: f64,
    tol: f64,
) -> Result<NormalExpansion, GeometryError> {
    let (_, y) = cell_coordinates(x, epsilon);
    let s = spec.level_set(x, y);
    if s.abs() > tol {
        return Err(GeometryError::OffInterface { s: s.abs(), tol });
    }
    expansion_at(y, spec.radius.gradient(x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn oracle_cells(n: i64) -> Vec<[i64; 2]> {
        // Literal enumeration of dist(eps j, boundary) >= eps sqrt 2 on the unit square.
        let e = 1.0 / n as f64;
        let mut out = Vec::new();
        for j1 in 0..=n {
            for j0 in 0..=n {
                let c = [e * j0 as f64, e * j1 as f64];
                let d = c[0].min(1.0 - c[0]).min(c[1]).min(1.0 - c[1]);
                if d >= e * SQRT_2 {
                    out.push([j0, j1]);
                }
            }
        }
        out
    }

    #[test]
    fn retained_cells_match_enumeration() {
        let spec = LevelSetSpec::constant(0.25).unwrap();
        for (n, h) in [(4, 1.0 / 64.0), (8, 1.0 / 128.0), (16, 1.0 / 256.0)] {
            let g = build_medium(&spec, 1.0 / n as f64, h).unwrap();
            assert_eq!(g.cells, oracle_cells(n), "n = {n}");
        }
        let g = build_medium(&spec, 0.25, 1.0 / 64.0).unwrap();
        assert_eq!(g.cells, vec![[2, 2]]);
        assert_eq!(build_medium(&spec, 0.125, 1.0 / 128.0).unwrap().cells.len(), 25);
    }

    #[test]
    fn rejects_bad_resolution() {
        let spec = LevelSetSpec::constant(0.25).unwrap();
        assert!(matches!(build_medium(&spec, 0.125, 0.125), Err(GeometryError::Unresolved { .. })));
        assert!(matches!(
            build_medium(&spec, 0.125, 0.125 / 3.5),
            Err(GeometryError::SpacingMismatch { .. })
        ));
        assert!(matches!(build_medium(&spec, 0.3, 0.01), Err(GeometryError::InvalidEpsilon(_))));
        assert!(matches!(LevelSetSpec::constant(0.6), Err(GeometryError::RMaxTooLarge(_))));
    }

    #[test]
    fn low_area_approaches_disc_area() {
        let r = 0.25;
        let spec = LevelSetSpec::constant(r).unwrap();
        let e = 0.125;
        for ratio in [16, 32, 64] {
            let h = e / ratio as f64;
            let g = build_medium(&spec, e, h).unwrap();
            let exact = g.cells.len() as f64 * PI * (e * r).powi(2);
            let rel = (g.low_area() - exact).abs() / exact;
            assert!(rel <= 2.0 * h / (e * r), "ratio {ratio}: rel {rel}");
        }
    }

    #[test]
    fn classification_examples() {
        let spec = LevelSetSpec::constant(0.25).unwrap();
        let g = build_medium(&spec, 0.125, 0.125 / 32.0).unwrap();
        assert_eq!(g.classify_point([0.375, 0.375]).unwrap(), Phase::Low);
        assert_eq!(g.classify_point([0.375 + 0.0625, 0.4]).unwrap(), Phase::High);
        assert_eq!(g.classify_point([0.02, 0.5]).unwrap(), Phase::High);
        assert_eq!(g.classify_point([0.125, 0.125]).unwrap(), Phase::High);
        assert!(g.classify_point([1.5, 0.5]).is_err());
        // Nodes agree with points.
        for i in (0..g.grid.len()).step_by(97) {
            assert_eq!(g.classify_point(g.grid.coord(i)).unwrap(), g.phase[i]);
        }
    }

    #[test]
    fn topology_and_interface() {
        let spec = LevelSetSpec::new(RadiusProfile::Linear { r0: 0.2, a: 0.05 }, Rect::unit()).unwrap();
        let g = build_medium(&spec, 0.125, 0.125 / 32.0).unwrap();
        g.check_topology().unwrap();
        for f in &g.interface_faces {
            assert_eq!(g.phase[f.high], Phase::High);
            assert_eq!(g.phase[f.low], Phase::Low);
        }
        let rel = (g.interface_measure() / g.nominal_interface_measure() - 1.0).abs();
        assert!(rel < 0.05, "{rel}");
        assert_eq!(g.num_high() + g.num_low(), g.grid.len());
    }

    #[test]
    fn zero_radius_has_no_inclusions() {
        let spec = LevelSetSpec::constant(0.0).unwrap();
        let g = build_medium(&spec, 0.125, 0.125 / 32.0).unwrap();
        assert_eq!(g.num_low(), 0);
        assert!(g.interface_faces.is_empty());
        assert_eq!(g.cells.len(), 25);
    }

    #[test]
    fn cutoff_vanishes_on_ring_and_is_one_near_inclusions() {
        let spec = LevelSetSpec::constant(0.25).unwrap();
        let g = build_medium(&spec, 0.125, 0.125 / 32.0).unwrap();
        let f = build_cutoff(&g);
        let ring = f.cutoff.support.unwrap();
        assert!((ring.x0 - 0.1875).abs() < 1e-15 && (ring.x1 - 0.8125).abs() < 1e-15);
        for i in 0..g.grid.len() {
            let x = g.grid.coord(i);
            let v = f.values[i];
            assert!((0.0..=1.0).contains(&v));
            if !ring.contains(x) || ring.dist_to_boundary(x) == 0.0 {
                assert_eq!(v, 0.0);
            }
            if g.phase[i] == Phase::Low {
                assert_eq!(v, 1.0);
            }
        }
    }

    #[test]
    fn cutoff_derivatives_match_finite_differences() {
        let c = Cutoff { support: Some(Rect::new(0.1, 0.2, 0.9, 0.7).unwrap()), width: 0.05 };
        let d = 1e-5;
        for x in [[0.12, 0.23], [0.5, 0.68], [0.88, 0.4], [0.13, 0.69]] {
            let (_, g, l) = c.eval(x);
            let f = |p: [f64; 2]| c.eval(p).0;
            let gx = (f([x[0] + d, x[1]]) - f([x[0] - d, x[1]])) / (2.0 * d);
            let gy = (f([x[0], x[1] + d]) - f([x[0], x[1] - d])) / (2.0 * d);
            let lap = (f([x[0] + d, x[1]]) + f([x[0] - d, x[1]]) + f([x[0], x[1] + d]) + f([x[0], x[1] - d])
                - 4.0 * f(x))
                / (d * d);
            assert!((g[0] - gx).abs() < 1e-5 * (1.0 + gx.abs()));
            assert!((g[1] - gy).abs() < 1e-5 * (1.0 + gy.abs()));
            assert!((l - lap).abs() < 1e-3 * (1.0 + lap.abs()), "{l} {lap}");
        }
    }

    #[test]
    fn normal_expansion_examples() {
        let spec = LevelSetSpec::constant(0.25).unwrap();
        let e = 0.125;
        let x = [3.0 * e + 0.25 * e, 3.0 * e];
        let n = normal_expansion(&spec, x, e, 1e-9).unwrap();
        assert!((n.nu0[0] - 1.0).abs() < 1e-15 && n.nu0[1].abs() < 1e-15);
        assert_eq!(n.nu1, [0.0, 0.0]);
        assert!(normal_expansion(&spec, [3.0 * e, 3.0 * e], e, 10.0).is_err());
        assert!(matches!(
            normal_expansion(&spec, [3.1 * e, 3.0 * e], e, 1e-3),
            Err(GeometryError::OffInterface { .. })
        ));
    }
}
