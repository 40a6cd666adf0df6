//! Experiment configuration: strict JSON parsing, defaults, and validation
//! of every module precondition that can be checked before any compute.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use interlace_core::deviation::{DisconnectionSetup, ProfileEvent, SamplingMeasure, TestFunction};
use interlace_core::geometry::Region;
use interlace_core::lattice::{build_window, ClosedBox, SiteSet};
use serde::de::{DeserializeOwned, DeserializeSeed, Error as _, MapAccess, SeqAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};
use serde_json::{Map, Value};

use crate::error::{CliError, Result};

/// Largest window the samplers handle (dense equilibrium on its boundary).
const WINDOW_CAP: usize = 8192;
/// Smallest default truncation radius for the quadratic solves.
const MIN_RADIUS: u32 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    LaplaceThreeway,
    CapacityScan,
    RateFunction,
    Insulation,
    TiltedEntropy,
    Subadditivity,
    DisconnectionFrequency,
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = serde_json::to_value(self).map_err(|_| fmt::Error)?;
        f.write_str(v.as_str().unwrap_or_default())
    }
}

/// Density profile `h` on the window, in scaled coordinates `y = x / N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum Profile {
    Constant {
        value: f64,
    },
    /// `h(y) = base + gradient · y`.
    Linear {
        base: f64,
        gradient: Vec<f64>,
    },
    /// `h = (1 + (√a − 1) h_K)²` with `h_K` the equilibrium potential of the
    /// rasterised obstacle.
    EquilibriumBump {
        obstacle: Region,
        a: f64,
    },
}

#[derive(Debug, Clone)]
pub enum Experiment {
    LaplaceThreeway {
        bx: ClosedBox,
        n: u32,
        v: f64,
        u: f64,
        samples: u64,
        radius: u32,
    },
    CapacityScan {
        region: Region,
        ns: Vec<u32>,
    },
    RateFunction {
        bx: ClosedBox,
        n: u32,
        profile: Profile,
        radius: u32,
        duality_check: bool,
    },
    Insulation {
        setup: DisconnectionSetup,
        ns: Vec<u32>,
    },
    TiltedEntropy {
        bx: ClosedBox,
        n: u32,
        obstacle: Region,
        a: f64,
        eps: f64,
        u: f64,
        samples: u64,
        grid_points: usize,
    },
    Subadditivity {
        bx: ClosedBox,
        n: u32,
        event: ProfileEvent,
        t_values: Vec<f64>,
        samples: u64,
    },
    DisconnectionFrequency {
        setup: DisconnectionSetup,
        ns: Vec<u32>,
        measure: SamplingMeasure,
        samples: u64,
    },
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub kind: Kind,
    pub d: usize,
    pub seed: u64,
    pub threads: usize,
    pub out: PathBuf,
    pub green_tol: f64,
    pub experiment: Experiment,
    /// Every key with its resolved value, defaults included.
    pub echo: Map<String, Value>,
    /// Keys that were filled in by defaults.
    pub defaulted: Vec<String>,
    /// Keys overridden by command-line flags.
    pub overrides: Vec<String>,
}

/// Command-line values that take precedence over config keys.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seed = seed;
            self.set("seed", Value::from(seed));
        }
        if let Some(threads) = o.threads {
            self.threads = threads;
            self.set("threads", Value::from(threads));
        }
        if let Some(out) = &o.out {
            self.out = out.clone();
            self.set("out", Value::from(out.display().to_string()));
        }
    }

    fn set(&mut self, key: &str, value: Value) {
        self.echo.insert(key.into(), value);
        self.defaulted.retain(|k| k != key);
        if !self.overrides.iter().any(|k| k == key) {
            self.overrides.push(key.into());
        }
    }
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let value = strict_json(text).map_err(|e| CliError::Validation(vec![format!("malformed JSON: {e}")]))?;
    let Value::Object(map) = value else {
        return Err(CliError::Validation(vec!["configuration must be a JSON object".into()]));
    };
    let mut r = Reader { map, errors: Vec::new(), echo: Map::new(), defaulted: Vec::new() };
    let kind: Option<Kind> = r.required("kind");
    let d: usize = r.or("d", 3).unwrap_or(3);
    if d < 3 {
        r.errors.push(format!("d = {d}: the walk must be transient, need d >= 3"));
    }
    let seed = r.or("seed", 0u64).unwrap_or(0);
    let threads = r.or("threads", default_threads()).unwrap_or(1);
    if threads == 0 {
        r.errors.push("threads must be at least 1".into());
    }
    let out: PathBuf = r.or("out", PathBuf::from("results")).unwrap_or_default();
    let green_tol = r.or("green_tol", 1e-11f64).unwrap_or(1e-11);
    if !(green_tol > 0.0 && green_tol < 1e-3) {
        r.errors.push(format!("green_tol must lie in (0, 1e-3), got {green_tol}"));
    }
    let experiment = kind.and_then(|k| experiment(k, d, &mut r));
    if kind.is_none() {
        // Which keys are allowed depends on the kind.
        r.map.clear();
    }
    r.finish()?;
    let (Some(kind), Some(experiment)) = (kind, experiment) else {
        unreachable!("a missing field always records an error");
    };
    Ok(ExperimentConfig {
        kind,
        d,
        seed,
        threads,
        out,
        green_tol,
        experiment,
        echo: r.echo,
        defaulted: r.defaulted,
        overrides: Vec::new(),
    })
}

fn default_threads() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn unit_cube(d: usize) -> ClosedBox {
    ClosedBox::cube(d, 0.0, 1.0).expect("unit cube is a valid box")
}

fn experiment(kind: Kind, d: usize, r: &mut Reader) -> Option<Experiment> {
    let e = match kind {
        Kind::LaplaceThreeway => {
            let bx = r.or("box", unit_cube(d));
            let n = r.or("n", 3u32);
            let v = r.or("v", 0.05f64);
            let u = r.or("u", 1.0f64);
            let samples = r.or("samples", 100_000u64);
            let window = r.window(bx.as_ref(), n, d);
            let radius = r.radius(window.as_deref());
            r.check(v.is_none_or(f64::is_finite), "v must be finite");
            r.check(u.is_none_or(|u| u > 0.0 && u.is_finite()), "u must be positive");
            r.positive_samples(samples);
            Experiment::LaplaceThreeway { bx: bx?, n: n?, v: v?, u: u?, samples: samples?, radius: radius? }
        }
        Kind::CapacityScan => {
            let region = r.or("region", Region::ball(vec![0.0; d], 1.0));
            let ns = r.or("n_ladder", vec![10u32, 20, 30]);
            r.region(region.as_ref(), d, "region");
            r.ladder(ns.as_deref());
            Experiment::CapacityScan { region: region?, ns: ns? }
        }
        Kind::RateFunction => {
            let bx = r.or("box", unit_cube(d));
            let n = r.or("n", 3u32);
            let profile: Option<Profile> = r.required("profile");
            let duality_check = r.or("duality_check", true);
            let window = r.window(bx.as_ref(), n, d);
            let radius = r.radius(window.as_deref());
            if let (Some(p), Some(w), Some(n)) = (&profile, &window, n) {
                r.profile(p, w, n, d);
            }
            Experiment::RateFunction {
                bx: bx?,
                n: n?,
                profile: profile?,
                radius: radius?,
                duality_check: duality_check?,
            }
        }
        Kind::Insulation => {
            let setup = r.setup(d);
            let ns = r.or("n_ladder", vec![4u32, 8]);
            r.ladder(ns.as_deref());
            if let Some(s) = &setup {
                r.check(s.a > s.u, format!("insulation needs a > u, got a = {}, u = {}", s.a, s.u));
            }
            Experiment::Insulation { setup: setup?, ns: ns? }
        }
        Kind::TiltedEntropy => {
            let bx = r.or("box", ClosedBox::cube(d, -1.0, 1.0).ok()?);
            let n = r.or("n", 2u32);
            let obstacle = r.or("obstacle", Region::from_box(&ClosedBox::cube(d, -0.5, 0.5).ok()?));
            let a = r.or("a", 2.0f64);
            let eps = r.or("eps", 0.5f64);
            let u = r.or("u", 1.0f64);
            let samples = r.or("samples", 100_000u64);
            let grid_points = r.or("grid_points", 100usize);
            let window = r.window(bx.as_ref(), n, d);
            r.region(obstacle.as_ref(), d, "obstacle");
            if let (Some(o), Some(w), Some(n)) = (&obstacle, &window, n) {
                match o.rasterize(n) {
                    Ok(s) if s.is_empty() => r.errors.push(format!("obstacle has no lattice sites at N = {n}")),
                    Ok(s) if !s.is_subset_of(w) => r.errors.push("obstacle must lie inside the window".into()),
                    Ok(_) => {}
                    Err(e) => r.errors.push(format!("obstacle: {e}")),
                }
            }
            if let (Some(a), Some(eps), Some(u)) = (a, eps, u) {
                let ok = u > 0.0 && a >= 0.0 && eps >= 0.0 && (a + eps).is_finite() && a + eps >= u;
                r.check(ok, format!("need a, eps >= 0 and a + eps >= u > 0, got a = {a}, eps = {eps}, u = {u}"));
            }
            r.positive_samples(samples);
            r.check(grid_points.is_none_or(|g| g >= 3), "grid_points must be at least 3");
            Experiment::TiltedEntropy {
                bx: bx?,
                n: n?,
                obstacle: obstacle?,
                a: a?,
                eps: eps?,
                u: u?,
                samples: samples?,
                grid_points: grid_points?,
            }
        }
        Kind::Subadditivity => {
            let bx = r.or("box", unit_cube(d));
            let n = r.or("n", 3u32);
            let delta = r.or("delta", 0.3f64);
            let tests = r.or("tests", vec![TestFunction::One]);
            let t_values = r.or("t_values", vec![1.0f64, 2.0, 4.0]);
            let samples = r.or("samples", 20_000u64);
            r.window(bx.as_ref(), n, d);
            let event = match (tests, delta) {
                (Some(tests), Some(delta)) => {
                    let ev = ProfileEvent { tests, delta };
                    r.core(ev.validate(d), "event");
                    Some(ev)
                }
                _ => None,
            };
            if let Some(t) = &t_values {
                r.check(!t.is_empty() && t.iter().all(|t| *t > 0.0 && t.is_finite()), "t_values must be positive");
            }
            r.positive_samples(samples);
            Experiment::Subadditivity { bx: bx?, n: n?, event: event?, t_values: t_values?, samples: samples? }
        }
        Kind::DisconnectionFrequency => {
            let setup = r.setup(d);
            let ns = r.or("n_ladder", vec![4u32, 6, 8]);
            let measure = r.or("measure", SamplingMeasure::Plain);
            let samples = r.or("samples", 200u64);
            r.ladder(ns.as_deref());
            if let (Some(SamplingMeasure::Tilted { level }), Some(s)) = (&measure, &setup) {
                r.check(
                    *level >= s.u && level.is_finite(),
                    format!("tilted level {level} must be at least u = {}", s.u),
                );
            }
            if let (Some(s), Some(ns)) = (&setup, &ns) {
                for &n in ns {
                    r.window(Some(&s.b), Some(n), d);
                }
            }
            r.positive_samples(samples);
            Experiment::DisconnectionFrequency { setup: setup?, ns: ns?, measure: measure?, samples: samples? }
        }
    };
    Some(e)
}

/// Consumes keys from the raw object, collecting every violation.
struct Reader {
    map: Map<String, Value>,
    errors: Vec<String>,
    echo: Map<String, Value>,
    defaulted: Vec<String>,
}

impl Reader {
    fn take<T: DeserializeOwned + Serialize>(&mut self, key: &str) -> Option<Option<T>> {
        let raw = self.map.remove(key)?;
        match serde_json::from_value::<T>(raw) {
            Ok(v) => {
                self.echo.insert(key.into(), serde_json::to_value(&v).unwrap_or(Value::Null));
                Some(Some(v))
            }
            Err(e) => {
                self.errors.push(format!("{key}: {e}"));
                Some(None)
            }
        }
    }

    fn required<T: DeserializeOwned + Serialize>(&mut self, key: &str) -> Option<T> {
        match self.take(key) {
            Some(v) => v,
            None => {
                self.errors.push(format!("{key}: missing required key"));
                None
            }
        }
    }

    fn or<T: DeserializeOwned + Serialize>(&mut self, key: &str, default: T) -> Option<T> {
        match self.take(key) {
            Some(v) => v,
            None => {
                self.echo.insert(key.into(), serde_json::to_value(&default).unwrap_or(Value::Null));
                self.defaulted.push(key.into());
                Some(default)
            }
        }
    }

    fn check(&mut self, ok: bool, msg: impl Into<String>) {
        if !ok {
            self.errors.push(msg.into());
        }
    }

    fn core(&mut self, res: interlace_core::Result<()>, what: &str) {
        if let Err(e) = res {
            self.errors.push(format!("{what}: {e}"));
        }
    }

    fn positive_samples(&mut self, samples: Option<u64>) {
        self.check(samples.is_none_or(|s| s > 0), "samples must be at least 1");
    }

    fn ladder(&mut self, ns: Option<&[u32]>) {
        if let Some(ns) = ns {
            self.check(
                !ns.is_empty() && ns.iter().all(|&n| n > 0),
                "n_ladder must be a nonempty list of positive scales",
            );
        }
    }

    fn region(&mut self, region: Option<&Region>, d: usize, what: &str) {
        if let Some(reg) = region {
            if reg.dim() != d {
                self.errors.push(format!("{what} has dimension {}, expected {d}", reg.dim()));
            } else {
                self.core(reg.validate(), what);
            }
        }
    }

    fn window(&mut self, bx: Option<&ClosedBox>, n: Option<u32>, d: usize) -> Option<Arc<SiteSet>> {
        let (bx, n) = (bx?, n?);
        if bx.dim() != d {
            self.errors.push(format!("box has dimension {}, expected {d}", bx.dim()));
            return None;
        }
        if n == 0 {
            self.errors.push("n must be positive".into());
            return None;
        }
        match build_window(bx, n) {
            Ok(w) if w.len() > WINDOW_CAP => {
                self.errors.push(format!("window at N = {n} has {} sites, above the cap of {WINDOW_CAP}", w.len()));
                None
            }
            Ok(w) => Some(Arc::new(w)),
            Err(e) => {
                self.errors.push(format!("window: {e}"));
                None
            }
        }
    }

    /// Truncation radius: at least twice the window radius.
    fn radius(&mut self, window: Option<&SiteSet>) -> Option<u32> {
        let min = window.and_then(|w| w.center().map(|c| 2.0 * w.radius_about(&c.0)));
        let default = min.map_or(MIN_RADIUS, |m| MIN_RADIUS.max(m.ceil() as u32));
        let radius = self.or("radius", default)?;
        if let Some(m) = min {
            self.check(radius as f64 >= m, format!("radius {radius} is below twice the window radius ({m:.3})"));
        }
        Some(radius)
    }

    fn profile(&mut self, p: &Profile, window: &SiteSet, n: u32, d: usize) {
        match p {
            Profile::Constant { value } => self.check(*value >= 0.0 && value.is_finite(), "profile value must be >= 0"),
            Profile::Linear { base, gradient } => {
                if gradient.len() != d {
                    self.errors.push(format!("profile gradient has {} entries, expected {d}", gradient.len()));
                    return;
                }
                let nonneg = window
                    .iter()
                    .all(|x| base + x.iter().zip(gradient).map(|(&c, g)| g * c as f64 / n as f64).sum::<f64>() >= 0.0);
                self.check(nonneg, "linear profile is negative somewhere on the window");
            }
            Profile::EquilibriumBump { obstacle, a } => {
                self.check(*a > 0.0 && a.is_finite(), "profile a must be positive");
                self.region(Some(obstacle), d, "profile obstacle");
                if obstacle.dim() == d && obstacle.validate().is_ok() {
                    let ok = obstacle.rasterize(n).is_ok_and(|s| !s.is_empty());
                    self.check(ok, format!("profile obstacle has no lattice sites at N = {n}"));
                }
            }
        }
    }

    /// Obstacle `k`, boxes `b0 ⊂ b`, `delta`, `a`, `u` as top-level keys.
    fn setup(&mut self, d: usize) -> Option<DisconnectionSetup> {
        let k: Option<Region> = self.required("k");
        let b0: Option<ClosedBox> = self.required("b0");
        let b: Option<ClosedBox> = self.required("b");
        let delta: Option<f64> = self.required("delta");
        let a: Option<f64> = self.required("a");
        let u: Option<f64> = self.required("u");
        let setup = DisconnectionSetup { k: k?, b0: b0?, b: b?, delta: delta?, a: a?, u: u? };
        if setup.k.dim() != d {
            self.errors.push(format!("k has dimension {}, expected {d}", setup.k.dim()));
            return None;
        }
        let gap = setup.b0.face_gap_within(&setup.b);
        if setup.b0.dim() == d && setup.b.dim() == d && setup.delta >= gap {
            self.errors.push(format!(
                "delta = {} must be smaller than the distance {gap} between the faces of b0 and b",
                setup.delta
            ));
            return None;
        }
        match setup.validate() {
            Ok(()) => Some(setup),
            Err(e) => {
                self.errors.push(format!("disconnection setup: {e}"));
                None
            }
        }
    }

    fn finish(&mut self) -> Result<()> {
        let unknown: BTreeSet<&String> = self.map.keys().collect();
        for k in unknown {
            self.errors.push(format!("{k}: unknown key"));
        }
        if self.errors.is_empty() {
            Ok(())
        } else {
            Err(CliError::Validation(std::mem::take(&mut self.errors)))
        }
    }
}

/// Parse JSON, rejecting objects with a repeated key.
pub fn strict_json(text: &str) -> std::result::Result<Value, serde_json::Error> {
    let mut de = serde_json::Deserializer::from_str(text);
    let v = StrictValue.deserialize(&mut de)?;
    de.end()?;
    Ok(v)
}

struct StrictValue;

impl<'de> DeserializeSeed<'de> for StrictValue {
    type Value = Value;

    fn deserialize<D: Deserializer<'de>>(self, d: D) -> std::result::Result<Value, D::Error> {
        d.deserialize_any(self)
    }
}

impl<'de> Visitor<'de> for StrictValue {
    type Value = Value;

    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str("a JSON value")
    }

    fn visit_bool<E>(self, v: bool) -> std::result::Result<Value, E> {
        Ok(Value::Bool(v))
    }

    fn visit_i64<E>(self, v: i64) -> std::result::Result<Value, E> {
        Ok(Value::from(v))
    }

    fn visit_u64<E>(self, v: u64) -> std::result::Result<Value, E> {
        Ok(Value::from(v))
    }

    fn visit_f64<E>(self, v: f64) -> std::result::Result<Value, E> {
        Ok(Value::from(v))
    }

    fn visit_str<E>(self, v: &str) -> std::result::Result<Value, E> {
        Ok(Value::String(v.into()))
    }

    fn visit_unit<E>(self) -> std::result::Result<Value, E> {
        Ok(Value::Null)
    }

    fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> std::result::Result<Value, A::Error> {
        let mut out = Vec::new();
        while let Some(v) = seq.next_element_seed(StrictValue)? {
            out.push(v);
        }
        Ok(Value::Array(out))
    }

    fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> std::result::Result<Value, A::Error> {
        let mut out = Map::new();
        while let Some(key) = map.next_key::<String>()? {
            if out.contains_key(&key) {
                return Err(A::Error::custom(format!("duplicate key `{key}`")));
            }
            let v = map.next_value_seed(StrictValue)?;
            out.insert(key, v);
        }
        Ok(Value::Object(out))
    }
}
