//! Run configuration: a TOML file with `[geometry]`, `[physics]`,
//! `[discretization]` and `[run]` sections, overridable by command-line flags.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use homog_core::data::{BoundaryData, LowInit, MacroFn};
use homog_core::geometry::{LevelSetSpec, RadiusProfile, Rect};
use sha2::{Digest, Sha256};
use thiserror::Error;
use toml::{Spanned, Value};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Where a setting came from, for error messages.
#[derive(Debug, Clone, PartialEq)]
pub enum Origin {
    Line(usize),
    Flag(String),
}

impl std::fmt::Display for Origin {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Line(n) => write!(f, "line {n}"),
            Self::Flag(name) => write!(f, "flag --{name}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub origin: Option<Origin>,
    pub key: String,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.origin {
            Some(o) => write!(f, "{o}: {}: {}", self.key, self.message),
            None => write!(f, "{}: {}", self.key, self.message),
        }
    }
}

#[derive(Debug, Error)]
#[error("invalid configuration:\n{}", .0.iter().map(|v| format!("  {v}")).collect::<Vec<_>>().join("\n"))]
pub struct ConfigError(pub Vec<Violation>);

/// Fully validated settings shared by every subcommand.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub radius: RadiusProfile,
    pub r_max: Option<f64>,
    pub omega: Rect,
    pub d_h: f64,
    pub d_l: f64,
    /// Stream-function amplitude of the velocity preset.
    pub velocity: f64,
    pub boundary: BoundaryData,
    pub u_init: MacroFn,
    pub v_init: LowInit,
    pub epsilon: f64,
    pub h: f64,
    pub dt: f64,
    pub t_end: f64,
    pub h_macro: f64,
    pub m: usize,
    pub cell_n: usize,
    pub tol: f64,
    pub epsilons: Vec<f64>,
    pub radii: Vec<f64>,
    pub times: Vec<f64>,
    pub samples: usize,
    pub floor: bool,
    pub table: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub warnings: Vec<String>,
}

const KEYS: &[(&str, &[&str])] = &[
    ("geometry", &["radius", "r_max", "omega"]),
    ("physics", &["d_h", "d_l", "velocity", "boundary", "u_init", "v_init"]),
    ("discretization", &["epsilon", "h", "dt", "T", "H", "m", "n", "tol"]),
    ("run", &["epsilons", "radii", "times", "samples", "floor", "table", "out", "seed"]),
];

/// Maps a flag name to its `section.key`.
pub fn flag_key(flag: &str) -> Option<(&'static str, &'static str)> {
    let key = match flag {
        "radius-spec" => "radius",
        "r-max" => "r_max",
        "d-h" => "d_h",
        "d-l" => "d_l",
        "samples" => "samples",
        other => other,
    };
    KEYS.iter().find_map(|(s, ks)| ks.iter().find(|k| **k == key).map(|k| (*s, *k)))
}

struct Entry {
    value: Value,
    origin: Origin,
}

struct Reader {
    entries: BTreeMap<(String, String), Entry>,
    violations: Vec<Violation>,
}

impl Reader {
    fn fail(&mut self, key: &str, message: impl Into<String>) {
        let origin = self.origin(key);
        self.violations.push(Violation { origin, key: key.to_string(), message: message.into() });
    }

    fn split(key: &str) -> (String, String) {
        let (s, k) = key.split_once('.').expect("qualified key");
        (s.to_string(), k.to_string())
    }

    fn origin(&self, key: &str) -> Option<Origin> {
        self.entries.get(&Self::split(key)).map(|e| e.origin.clone())
    }

    fn get(&self, key: &str) -> Option<&Value> {
        self.entries.get(&Self::split(key)).map(|e| &e.value)
    }

    fn float(&mut self, key: &str, default: f64) -> f64 {
        match self.get(key).cloned() {
            None => default,
            Some(v) => match as_float(&v) {
                Some(x) if x.is_finite() => x,
                _ => {
                    self.fail(key, format!("expected a number, got {v}"));
                    default
                }
            },
        }
    }

    fn opt_float(&mut self, key: &str) -> Option<f64> {
        self.get(key).is_some().then(|| self.float(key, f64::NAN))
    }

    fn uint(&mut self, key: &str, default: usize) -> usize {
        match self.get(key).cloned() {
            None => default,
            Some(Value::Integer(i)) if i >= 0 => i as usize,
            Some(v) => {
                self.fail(key, format!("expected a non-negative integer, got {v}"));
                default
            }
        }
    }

    fn boolean(&mut self, key: &str, default: bool) -> bool {
        match self.get(key).cloned() {
            None => default,
            Some(Value::Boolean(b)) => b,
            Some(v) => {
                self.fail(key, format!("expected true or false, got {v}"));
                default
            }
        }
    }

    fn string(&mut self, key: &str) -> Option<String> {
        match self.get(key).cloned() {
            None => None,
            Some(Value::String(s)) => Some(s),
            // bare numbers are accepted where a spec string is expected
            Some(v @ (Value::Float(_) | Value::Integer(_))) => Some(v.to_string()),
            Some(v) => {
                self.fail(key, format!("expected a string, got {v}"));
                None
            }
        }
    }

    fn floats(&mut self, key: &str) -> Option<Vec<f64>> {
        match self.get(key).cloned() {
            None => None,
            Some(Value::Array(a)) => {
                let v: Option<Vec<f64>> = a.iter().map(as_float).collect();
                if v.is_none() {
                    self.fail(key, "expected an array of numbers");
                }
                v
            }
            Some(v) => match as_float(&v) {
                Some(x) => Some(vec![x]),
                None => {
                    self.fail(key, format!("expected an array of numbers, got {v}"));
                    None
                }
            },
        }
    }
}

fn as_float(v: &Value) -> Option<f64> {
    match v {
        Value::Float(x) => Some(*x),
        Value::Integer(i) => Some(*i as f64),
        Value::String(s) => parse_number(s),
        _ => None,
    }
}

/// Parses `0.125`, `1/8` or `1e-3`.
pub fn parse_number(s: &str) -> Option<f64> {
    let s = s.trim();
    if let Some((a, b)) = s.split_once('/') {
        let (a, b): (f64, f64) = (a.trim().parse().ok()?, b.trim().parse().ok()?);
        return (b != 0.0).then(|| a / b);
    }
    s.parse().ok()
}

fn parse_args(body: &str, n: usize) -> Result<Vec<f64>, String> {
    let v: Vec<f64> = body.split(',').map(|t| parse_number(t).ok_or_else(|| format!("bad number {t:?}"))).collect::<Result<_, _>>()?;
    if v.len() != n {
        return Err(format!("expected {n} parameters, got {}", v.len()));
    }
    Ok(v)
}

/// `0.25`, `constant:0.25`, `linear:r0,a` or `bump:r0,amp,cx,cy,width`.
pub fn parse_radius_spec(s: &str) -> Result<RadiusProfile, String> {
    let (kind, body) = s.split_once(':').unwrap_or(("constant", s));
    match kind.trim() {
        "constant" => Ok(RadiusProfile::Constant { r0: parse_args(body, 1)?[0] }),
        "linear" => {
            let v = parse_args(body, 2)?;
            Ok(RadiusProfile::Linear { r0: v[0], a: v[1] })
        }
        "bump" => {
            let v = parse_args(body, 5)?;
            Ok(RadiusProfile::RadialBump { r0: v[0], amp: v[1], center: [v[2], v[3]], width: v[4] })
        }
        other => Err(format!("unknown radius profile {other:?} (constant, linear, bump)")),
    }
}

/// `constant:c`, `decay:c0,lambda` or `separable:amp,lambda`.
pub fn parse_boundary(s: &str) -> Result<BoundaryData, String> {
    let (kind, body) = s.split_once(':').unwrap_or(("constant", s));
    match kind.trim() {
        "constant" => Ok(BoundaryData::Constant(parse_args(body, 1)?[0])),
        "decay" => {
            let v = parse_args(body, 2)?;
            Ok(BoundaryData::Decay { c0: v[0], lambda: v[1] })
        }
        "separable" => {
            let v = parse_args(body, 2)?;
            Ok(BoundaryData::Separable { amp: v[0], lambda: v[1] })
        }
        other => Err(format!("unknown boundary data {other:?} (constant, decay, separable)")),
    }
}

/// `sine:amp` or `constant:c`.
pub fn parse_macro_fn(s: &str) -> Result<MacroFn, String> {
    let (kind, body) = s.split_once(':').unwrap_or(("constant", s));
    match kind.trim() {
        "constant" => Ok(MacroFn::Constant(parse_args(body, 1)?[0])),
        "sine" => Ok(MacroFn::SineProduct { amp: parse_args(body, 1)?[0] }),
        other => Err(format!("unknown initial data {other:?} (sine, constant)")),
    }
}

/// `match` or `constant:c`.
pub fn parse_low_init(s: &str) -> Result<LowInit, String> {
    if s.trim() == "match" {
        return Ok(LowInit::MatchMacro);
    }
    let (kind, body) = s.split_once(':').unwrap_or(("constant", s));
    match kind.trim() {
        "constant" => Ok(LowInit::Constant(parse_args(body, 1)?[0])),
        other => Err(format!("unknown inclusion data {other:?} (match, constant)")),
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

fn integer_ratio(x: f64) -> Option<u64> {
    let k = x.round();
    (k >= 1.0 && (x - k).abs() <= 1e-9 * k).then_some(k as u64)
}

/// Parses and validates a config file plus flag overrides `(flag, value)`.
/// Every violation is reported, each with its line or flag.
pub fn parse_config(text: &str, overrides: &[(String, String)]) -> Result<RunConfig, ConfigError> {
    type Doc = BTreeMap<String, Spanned<BTreeMap<String, Spanned<Value>>>>;
    let mut reader = Reader { entries: BTreeMap::new(), violations: Vec::new() };
    match toml::from_str::<Doc>(text) {
        Ok(doc) => {
            for (section, table) in doc {
                let line = line_of(text, table.span().start);
                let Some((_, keys)) = KEYS.iter().find(|(s, _)| *s == section) else {
                    reader.violations.push(Violation {
                        origin: Some(Origin::Line(line)),
                        key: section.clone(),
                        message: "unknown section (geometry, physics, discretization, run)".into(),
                    });
                    continue;
                };
                for (key, value) in table.into_inner() {
                    let line = line_of(text, value.span().start);
                    if !keys.contains(&key.as_str()) {
                        reader.violations.push(Violation {
                            origin: Some(Origin::Line(line)),
                            key: format!("{section}.{key}"),
                            message: format!("unknown key (expected one of {})", keys.join(", ")),
                        });
                        continue;
                    }
                    reader.entries.insert((section.clone(), key), Entry { value: value.into_inner(), origin: Origin::Line(line) });
                }
            }
        }
        Err(e) => {
            let line = e.span().map(|s| line_of(text, s.start));
            return Err(ConfigError(vec![Violation {
                origin: line.map(Origin::Line),
                key: "syntax".into(),
                message: e.message().to_string(),
            }]));
        }
    }
    for (flag, raw) in overrides {
        let Some((section, key)) = flag_key(flag) else {
            reader.violations.push(Violation { origin: Some(Origin::Flag(flag.clone())), key: flag.clone(), message: "unknown option".into() });
            continue;
        };
        let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| Value::String(raw.clone()));
        reader.entries.insert((section.into(), key.into()), Entry { value, origin: Origin::Flag(flag.clone()) });
    }
    build(reader)
}

fn build(mut rd: Reader) -> Result<RunConfig, ConfigError> {
    let mut warnings = Vec::new();

    let radius = match rd.string("geometry.radius") {
        None => RadiusProfile::Constant { r0: 0.25 },
        Some(s) => parse_radius_spec(&s).unwrap_or_else(|m| {
            rd.fail("geometry.radius", m);
            RadiusProfile::Constant { r0: 0.25 }
        }),
    };
    let r_max = rd.opt_float("geometry.r_max");
    if let Some(r) = r_max {
        if r >= 0.5 {
            rd.fail("geometry.r_max", "r_max must be < 0.5");
        } else if r <= 0.0 {
            rd.fail("geometry.r_max", "r_max must be > 0");
        }
    }
    let omega = match rd.floats("geometry.omega") {
        None => Rect::unit(),
        Some(v) if v.len() == 4 => Rect::new(v[0], v[1], v[2], v[3]).unwrap_or_else(|e| {
            rd.fail("geometry.omega", e.to_string());
            Rect::unit()
        }),
        Some(_) => {
            rd.fail("geometry.omega", "expected [x0, y0, x1, y1]");
            Rect::unit()
        }
    };
    let spec = LevelSetSpec::new(radius.clone(), omega);
    let (r_min, r_hi) = match &spec {
        Ok(s) => (s.r_min, s.r_max),
        Err(e) => {
            rd.fail("geometry.radius", e.to_string());
            (0.25, 0.25)
        }
    };
    if let Some(bound) = r_max {
        if bound < 0.5 && r_hi > bound {
            rd.fail("geometry.radius", format!("profile reaches r = {r_hi}, above r_max = {bound}"));
        }
    }

    let d_h = rd.float("physics.d_h", 1.0);
    if !(d_h > 0.0) {
        rd.fail("physics.d_h", "D_h must be positive");
    }
    let d_l = rd.float("physics.d_l", 1.0);
    if !(d_l >= 0.0) {
        rd.fail("physics.d_l", "D_l must be non-negative");
    }
    let velocity = rd.float("physics.velocity", 0.0);
    let boundary = match rd.string("physics.boundary") {
        None => BoundaryData::Constant(0.0),
        Some(s) => parse_boundary(&s).unwrap_or_else(|m| {
            rd.fail("physics.boundary", m);
            BoundaryData::Constant(0.0)
        }),
    };
    let u_init = match rd.string("physics.u_init") {
        None => MacroFn::SineProduct { amp: 1.0 },
        Some(s) => parse_macro_fn(&s).unwrap_or_else(|m| {
            rd.fail("physics.u_init", m);
            MacroFn::SineProduct { amp: 1.0 }
        }),
    };
    let v_init = match rd.string("physics.v_init") {
        None => LowInit::MatchMacro,
        Some(s) => parse_low_init(&s).unwrap_or_else(|m| {
            rd.fail("physics.v_init", m);
            LowInit::MatchMacro
        }),
    };

    let epsilon = rd.float("discretization.epsilon", 0.125);
    let eps_ok = epsilon > 0.0 && integer_ratio(1.0 / epsilon).is_some();
    if !eps_ok {
        rd.fail("discretization.epsilon", format!("1/epsilon must be a positive integer (epsilon = {epsilon})"));
    }
    let h = rd.float("discretization.h", epsilon / 32.0);
    if !(h > 0.0) {
        rd.fail("discretization.h", "h must be positive");
    } else if eps_ok {
        match integer_ratio(epsilon / h) {
            None => rd.fail("discretization.h", format!("h = {h} does not divide epsilon = {epsilon}")),
            Some(_) if r_min > 0.0 && epsilon * r_min < 4.0 * h * (1.0 - 1e-12) => rd.fail(
                "discretization.h",
                format!("inclusions unresolved: epsilon * r_min = {} < 4h = {}", epsilon * r_min, 4.0 * h),
            ),
            Some(_) => {}
        }
    }
    let dt = rd.float("discretization.dt", h);
    let t_end = rd.float("discretization.T", 0.25);
    if !(dt > 0.0) {
        rd.fail("discretization.dt", "dt must be positive");
    }
    if !(t_end >= 0.0) {
        rd.fail("discretization.T", "T must be non-negative");
    } else if dt > 0.0 && t_end > 0.0 && integer_ratio(t_end / dt).is_none() {
        rd.fail("discretization.T", format!("T = {t_end} is not a multiple of dt = {dt}"));
    }
    if let Err(e) = boundary.validate(&omega, &[0.0, 0.5 * t_end, t_end]) {
        rd.fail("physics.boundary", e.to_string());
    }
    let h_macro = rd.float("discretization.H", 1.0 / 64.0);
    if !(h_macro > 0.0) || integer_ratio(omega.width() / h_macro).is_none() || integer_ratio(omega.height() / h_macro).is_none() {
        rd.fail("discretization.H", format!("H = {h_macro} must divide the domain"));
    }
    let m = rd.uint("discretization.m", 16);
    if m < 2 {
        rd.fail("discretization.m", "m must be at least 2");
    }
    let cell_n = rd.uint("discretization.n", 128);
    if cell_n < 32 || cell_n % 2 == 1 {
        rd.fail("discretization.n", "n must be even and at least 32");
    }
    let tol = rd.float("discretization.tol", 1e-10);
    if !(tol > 0.0 && tol < 1.0) {
        rd.fail("discretization.tol", "tol must lie in (0, 1)");
    }

    let epsilons = rd.floats("run.epsilons").unwrap_or_else(|| vec![0.125, 0.0625, 0.03125]);
    for &e in &epsilons {
        if !(e > 0.0) || integer_ratio(1.0 / e).is_none() {
            rd.fail("run.epsilons", format!("1/epsilon must be a positive integer (epsilon = {e})"));
        }
    }
    let mut sorted = epsilons.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    if sorted.windows(2).any(|w| (w[0] / w[1] - 2.0).abs() > 1e-9) {
        warnings.push("run.epsilons: values do not halve; the rate fit is still valid".to_string());
    }
    let radii = rd.floats("run.radii").unwrap_or_else(|| (1..=9).map(|k| 0.05 * k as f64).collect());
    if radii.len() < 4 || radii.windows(2).any(|w| w[1] <= w[0]) || radii.iter().any(|&r| !(0.0..0.5).contains(&r)) {
        rd.fail("run.radii", "need at least 4 increasing radii in [0, 0.5)");
    }
    let times = rd.floats("run.times").unwrap_or_else(|| vec![t_end]);
    for &t in &times {
        if !(0.0..=t_end * (1.0 + 1e-12)).contains(&t) {
            rd.fail("run.times", format!("time {t} outside [0, T]"));
        }
    }
    let samples = rd.uint("run.samples", 32);
    if samples == 0 {
        rd.fail("run.samples", "must be at least 1");
    }
    let floor = rd.boolean("run.floor", true);
    let table = rd.string("run.table").map(PathBuf::from);
    let out = rd.string("run.out").map_or_else(|| PathBuf::from("out"), PathBuf::from);
    let seed = rd.uint("run.seed", 1) as u64;

    if !rd.violations.is_empty() {
        return Err(ConfigError(rd.violations));
    }
    Ok(RunConfig {
        radius,
        r_max,
        omega,
        d_h,
        d_l,
        velocity,
        boundary,
        u_init,
        v_init,
        epsilon,
        h,
        dt,
        t_end,
        h_macro,
        m,
        cell_n,
        tol,
        epsilons,
        radii,
        times,
        samples,
        floor,
        table,
        out,
        seed,
        warnings,
    })
}

impl RunConfig {
    pub fn spec(&self) -> LevelSetSpec {
        LevelSetSpec::new(self.radius.clone(), self.omega).expect("validated")
    }

    /// Canonical text of the resolved settings; the output directory is left out
    /// so that the same physics hashes the same wherever it is written.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[geometry]\nradius = {:?}\nr_max = {:?}\nomega = {:?}", self.radius, self.r_max, self.omega);
        let _ = writeln!(
            s,
            "[physics]\nd_h = {:e}\nd_l = {:e}\nvelocity = {:e}\nboundary = {:?}\nu_init = {:?}\nv_init = {:?}",
            self.d_h, self.d_l, self.velocity, self.boundary, self.u_init, self.v_init
        );
        let _ = writeln!(
            s,
            "[discretization]\nepsilon = {:e}\nh = {:e}\ndt = {:e}\nT = {:e}\nH = {:e}\nm = {}\nn = {}\ntol = {:e}",
            self.epsilon, self.h, self.dt, self.t_end, self.h_macro, self.m, self.cell_n, self.tol
        );
        let _ = writeln!(
            s,
            "[run]\nepsilons = {:?}\nradii = {:?}\ntimes = {:?}\nsamples = {}\nfloor = {}\ntable = {:?}\nseed = {}",
            self.epsilons, self.radii, self.times, self.samples, self.floor, self.table, self.seed
        );
        s
    }

    pub fn hash(&self) -> String {
        Sha256::digest(self.echo().as_bytes()).iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// First line of every output file.
    pub fn header(&self) -> String {
        format!("# homog {VERSION} config={}", self.hash())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = parse_config("", &[]).unwrap();
        assert_eq!(c.radius, RadiusProfile::Constant { r0: 0.25 });
        assert_eq!(c.h, 0.125 / 32.0);
        assert_eq!(c.dt, c.h);
        assert_eq!((c.m, c.cell_n), (16, 128));
        assert!(c.warnings.is_empty());
    }

    #[test]
    fn all_violations_are_reported_with_lines() {
        let text = "[geometry]\nr_max = 0.6\n\n[physics]\nd_h = -1\nbogus = 3\n";
        let err = parse_config(text, &[]).unwrap_err();
        let msgs: Vec<String> = err.0.iter().map(|v| v.to_string()).collect();
        assert!(msgs.iter().any(|m| m.starts_with("line 2") && m.contains("r_max must be < 0.5")), "{msgs:?}");
        assert!(msgs.iter().any(|m| m.starts_with("line 5") && m.contains("D_h")));
        assert!(msgs.iter().any(|m| m.starts_with("line 6") && m.contains("unknown key")));
    }

    #[test]
    fn flags_override_file_values() {
        let c = parse_config("[discretization]\nepsilon = 0.25\n", &[("epsilon".into(), "1/8".into()), ("radius-spec".into(), "linear:0.2,0.05".into())]).unwrap();
        assert_eq!(c.epsilon, 0.125);
        assert_eq!(c.radius, RadiusProfile::Linear { r0: 0.2, a: 0.05 });
        let err = parse_config("", &[("h".into(), "0.3".into())]).unwrap_err();
        assert!(err.0[0].to_string().starts_with("flag --h"));
    }

    #[test]
    fn non_halving_ladder_warns() {
        let c = parse_config("[run]\nepsilons = [0.125, 0.05, 0.025]\n", &[]).unwrap();
        assert_eq!(c.warnings.len(), 1);
    }

    #[test]
    fn hash_ignores_output_directory() {
        let a = parse_config("[run]\nout = \"a\"\n", &[]).unwrap();
        let b = parse_config("[run]\nout = \"b\"\n", &[]).unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = parse_config("[physics]\nd_l = 0.5\n", &[]).unwrap();
        assert_ne!(a.hash(), c.hash());
    }
}
