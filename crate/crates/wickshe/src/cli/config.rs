//! Strict run configuration: TOML with dotted sections, every key known in
//! advance, defaults filled in and echoed back through `Serialize`.

use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;
use toml::{Table, Value};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Io { path: String, message: String },
    #[error("config parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unknown key \"{key}\"{}", suggestion.as_ref().map(|s| format!(", did you mean \"{s}\"?")).unwrap_or_default())]
    UnknownKey { key: String, suggestion: Option<String> },
    #[error("invalid value for \"{key}\": {message}")]
    Invalid { key: String, message: String },
}

type Res<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Truncation {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "J")]
    pub j: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Quadrature {
    /// Half-width of the spatial window; 0 picks one from the probes.
    #[serde(rename = "L")]
    pub half_width: f64,
    pub panels: usize,
    pub grading: f64,
    pub simplex_points: usize,
    /// Orders up to this one are computed by quadrature in `chaos` and `derivative`.
    pub max_order: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Mc {
    pub dt: f64,
    pub n_paths: usize,
    /// Δa = factor × sqrt(dt).
    pub delta_a_factor: f64,
    pub batch_size: usize,
    /// Noise draws for double averages; paths per draw = n_paths / n_noise.
    pub n_noise: usize,
    pub dump_ensembles: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InitialConditionConfig {
    pub tag: String,
    pub value: f64,
    pub amplitude: f64,
    pub frequency: f64,
    pub center: f64,
    pub width: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Propagator {
    pub dx: f64,
    pub dt: f64,
    #[serde(rename = "L")]
    pub half_width: f64,
    pub scheme: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalTime {
    pub t: f64,
    pub increment_h: Vec<f64>,
    pub increment_delta_a: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct STransform {
    pub t: f64,
    pub x: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Regularity {
    pub h_min: f64,
    pub h_max: f64,
    pub per_octave: usize,
    pub space_base_t: f64,
    /// Interior times for the truncated-chaos time curves.
    pub diagnostic_t: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderNorm {
    pub t: f64,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "J")]
    pub j: usize,
    pub lambdas: Vec<f64>,
    pub dx: f64,
    pub dt: f64,
    #[serde(rename = "L")]
    pub half_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Equivalence {
    pub t: f64,
    pub x: f64,
    pub y: Vec<f64>,
}

/// TOML integers are signed, so seeds above i64::MAX are written as strings.
fn seed_ser<S: serde::Serializer>(seed: &u64, s: S) -> std::result::Result<S::Ok, S::Error> {
    match i64::try_from(*seed) {
        Ok(v) => s.serialize_i64(v),
        Err(_) => s.serialize_str(&seed.to_string()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    #[serde(serialize_with = "seed_ser")]
    pub seed: u64,
    pub output_dir: PathBuf,
    pub probes: Vec<[f64; 2]>,
    pub truncation: Truncation,
    pub quadrature: Quadrature,
    pub mc: Mc,
    pub initial_condition: InitialConditionConfig,
    pub propagator: Propagator,
    pub localtime: LocalTime,
    pub stransform: STransform,
    pub regularity: Regularity,
    pub order_norm: OrderNorm,
    pub equivalence: Equivalence,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("wickshe-out"),
            probes: vec![[1.0, 0.0], [0.5, 0.3], [1.0, -0.7], [0.25, 1.1]],
            truncation: Truncation { n: 4, j: 6 },
            quadrature: Quadrature { half_width: 0.0, panels: 0, grading: 2.0, simplex_points: 24, max_order: 2 },
            mc: Mc { dt: 1e-3, n_paths: 100_000, delta_a_factor: 2.0, batch_size: 1024, n_noise: 200, dump_ensembles: false },
            initial_condition: InitialConditionConfig {
                tag: "constant".into(),
                value: 1.0,
                amplitude: 1.0,
                frequency: 1.0,
                center: 0.0,
                width: 1.0,
                scale: 1.0,
            },
            propagator: Propagator { dx: 0.05, dt: 0.005, half_width: 12.0, scheme: "crank-nicolson".into() },
            localtime: LocalTime { t: 1.0, increment_h: vec![0.05, 0.1, 0.2], increment_delta_a: 0.025 },
            stransform: STransform { t: 1.0, x: 0.0 },
            regularity: Regularity {
                h_min: 1.0 / 128.0,
                h_max: 0.125,
                per_octave: 2,
                space_base_t: 0.2,
                diagnostic_t: vec![0.25, 0.5],
            },
            order_norm: OrderNorm { t: 1.0, n: 14, j: 6, lambdas: vec![0.0, 1.0], dx: 0.1, dt: 0.01, half_width: 8.0 },
            equivalence: Equivalence { t: 1.0, x: 0.0, y: vec![-1.0, -0.4, 0.1, 0.6, 1.3] },
        }
    }
}

const TOP_KEYS: &[&str] = &["seed", "output_dir", "probes"];
const SECTIONS: &[(&str, &[&str])] = &[
    ("truncation", &["N", "J"]),
    ("quadrature", &["L", "panels", "grading", "simplex_points", "max_order"]),
    ("mc", &["dt", "n_paths", "delta_a_factor", "batch_size", "n_noise", "dump_ensembles"]),
    ("initial_condition", &["tag", "value", "amplitude", "frequency", "center", "width", "scale"]),
    ("propagator", &["dx", "dt", "L", "scheme"]),
    ("localtime", &["t", "increment_h", "increment_delta_a"]),
    ("stransform", &["t", "x"]),
    ("regularity", &["h_min", "h_max", "per_octave", "space_base_t", "diagnostic_t"]),
    ("order_norm", &["t", "N", "J", "lambdas", "dx", "dt", "L"]),
    ("equivalence", &["t", "x", "y"]),
];

fn known_keys() -> Vec<String> {
    let mut keys: Vec<String> = TOP_KEYS.iter().map(|k| k.to_string()).collect();
    for (section, subs) in SECTIONS {
        keys.extend(subs.iter().map(|k| format!("{section}.{k}")));
    }
    keys
}

fn unknown(key: String) -> ConfigError {
    let suggestion = known_keys()
        .into_iter()
        .map(|k| (strsim::normalized_damerau_levenshtein(&key, &k), k))
        .filter(|(score, _)| *score >= 0.6)
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, k)| k);
    ConfigError::UnknownKey { key, suggestion }
}

fn check_keys(table: &Table) -> Res<()> {
    for (key, value) in table {
        if TOP_KEYS.contains(&key.as_str()) {
            continue;
        }
        match SECTIONS.iter().find(|(s, _)| s == key) {
            Some((section, subs)) => {
                let Value::Table(inner) = value else {
                    return Err(ConfigError::Invalid { key: key.clone(), message: "expected a section".into() });
                };
                for sub in inner.keys() {
                    if !subs.contains(&sub.as_str()) {
                        return Err(unknown(format!("{section}.{sub}")));
                    }
                }
            }
            None => {
                let dotted = match value {
                    Value::Table(inner) => inner.keys().next().map_or(key.clone(), |sub| format!("{key}.{sub}")),
                    _ => key.clone(),
                };
                return Err(unknown(dotted));
            }
        }
    }
    Ok(())
}

struct Reader<'a> {
    table: &'a Table,
}

impl<'a> Reader<'a> {
    fn lookup(&self, key: &str) -> Option<&'a Value> {
        match key.split_once('.') {
            Some((section, sub)) => self.table.get(section)?.as_table()?.get(sub),
            None => self.table.get(key),
        }
    }

    fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
        ConfigError::Invalid { key: key.into(), message: message.into() }
    }

    fn float(&self, key: &str, slot: &mut f64) -> Res<()> {
        if let Some(v) = self.lookup(key) {
            *slot = match v {
                Value::Float(f) => *f,
                Value::Integer(i) => *i as f64,
                _ => return Err(Self::invalid(key, "expected a number")),
            };
            if !slot.is_finite() {
                return Err(Self::invalid(key, "must be finite"));
            }
        }
        Ok(())
    }

    fn count(&self, key: &str, slot: &mut usize) -> Res<()> {
        if let Some(v) = self.lookup(key) {
            match v {
                Value::Integer(i) if *i >= 0 => *slot = *i as usize,
                Value::Integer(i) => return Err(Self::invalid(key, format!("must be a non-negative integer, got {i}"))),
                _ => return Err(Self::invalid(key, "expected an integer")),
            }
        }
        Ok(())
    }

    fn boolean(&self, key: &str, slot: &mut bool) -> Res<()> {
        if let Some(v) = self.lookup(key) {
            *slot = v.as_bool().ok_or_else(|| Self::invalid(key, "expected true or false"))?;
        }
        Ok(())
    }

    fn string(&self, key: &str, slot: &mut String) -> Res<()> {
        if let Some(v) = self.lookup(key) {
            *slot = v.as_str().ok_or_else(|| Self::invalid(key, "expected a string"))?.to_string();
        }
        Ok(())
    }

    fn floats(&self, key: &str, slot: &mut Vec<f64>) -> Res<()> {
        if let Some(v) = self.lookup(key) {
            let arr = v.as_array().ok_or_else(|| Self::invalid(key, "expected an array of numbers"))?;
            *slot = arr
                .iter()
                .map(|x| match x {
                    Value::Float(f) if f.is_finite() => Ok(*f),
                    Value::Integer(i) => Ok(*i as f64),
                    _ => Err(Self::invalid(key, "expected an array of finite numbers")),
                })
                .collect::<Res<_>>()?;
        }
        Ok(())
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn require(ok: bool, key: &str, message: &str) -> Res<()> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError::Invalid { key: key.into(), message: message.into() })
    }
}

pub fn parse_config_str(text: &str) -> Res<RunConfig> {
    let table: Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse {
        line: e.span().map_or(1, |s| line_of(text, s.start)),
        message: e.message().trim().to_string(),
    })?;
    check_keys(&table)?;
    let r = Reader { table: &table };
    let mut c = RunConfig::default();

    if let Some(v) = r.lookup("seed") {
        c.seed = match v {
            Value::Integer(i) if *i >= 0 => *i as u64,
            Value::String(s) => s.parse().map_err(|_| Reader::invalid("seed", "expected an unsigned 64-bit integer"))?,
            _ => return Err(Reader::invalid("seed", "expected a non-negative integer")),
        };
    }
    let mut out = String::new();
    r.string("output_dir", &mut out)?;
    if !out.is_empty() {
        c.output_dir = PathBuf::from(out);
    }
    if let Some(v) = r.lookup("probes") {
        let arr = v.as_array().ok_or_else(|| Reader::invalid("probes", "expected an array of [t, x] pairs"))?;
        c.probes = arr
            .iter()
            .map(|p| {
                let pair = p.as_array().filter(|a| a.len() == 2);
                let num = |x: &Value| x.as_float().or_else(|| x.as_integer().map(|i| i as f64));
                match pair.map(|a| (num(&a[0]), num(&a[1]))) {
                    Some((Some(t), Some(x))) => Ok([t, x]),
                    _ => Err(Reader::invalid("probes", "each probe must be a pair [t, x] of numbers")),
                }
            })
            .collect::<Res<_>>()?;
    }

    r.count("truncation.N", &mut c.truncation.n)?;
    r.count("truncation.J", &mut c.truncation.j)?;
    r.float("quadrature.L", &mut c.quadrature.half_width)?;
    r.count("quadrature.panels", &mut c.quadrature.panels)?;
    r.float("quadrature.grading", &mut c.quadrature.grading)?;
    r.count("quadrature.simplex_points", &mut c.quadrature.simplex_points)?;
    r.count("quadrature.max_order", &mut c.quadrature.max_order)?;
    r.float("mc.dt", &mut c.mc.dt)?;
    r.count("mc.n_paths", &mut c.mc.n_paths)?;
    r.float("mc.delta_a_factor", &mut c.mc.delta_a_factor)?;
    r.count("mc.batch_size", &mut c.mc.batch_size)?;
    r.count("mc.n_noise", &mut c.mc.n_noise)?;
    r.boolean("mc.dump_ensembles", &mut c.mc.dump_ensembles)?;
    let ic = &mut c.initial_condition;
    r.string("initial_condition.tag", &mut ic.tag)?;
    for (k, slot) in [
        ("initial_condition.value", &mut ic.value),
        ("initial_condition.amplitude", &mut ic.amplitude),
        ("initial_condition.frequency", &mut ic.frequency),
        ("initial_condition.center", &mut ic.center),
        ("initial_condition.width", &mut ic.width),
        ("initial_condition.scale", &mut ic.scale),
    ] {
        r.float(k, slot)?;
    }
    r.float("propagator.dx", &mut c.propagator.dx)?;
    r.float("propagator.dt", &mut c.propagator.dt)?;
    r.float("propagator.L", &mut c.propagator.half_width)?;
    r.string("propagator.scheme", &mut c.propagator.scheme)?;
    r.float("localtime.t", &mut c.localtime.t)?;
    r.floats("localtime.increment_h", &mut c.localtime.increment_h)?;
    r.float("localtime.increment_delta_a", &mut c.localtime.increment_delta_a)?;
    r.float("stransform.t", &mut c.stransform.t)?;
    r.float("stransform.x", &mut c.stransform.x)?;
    r.float("regularity.h_min", &mut c.regularity.h_min)?;
    r.float("regularity.h_max", &mut c.regularity.h_max)?;
    r.count("regularity.per_octave", &mut c.regularity.per_octave)?;
    r.float("regularity.space_base_t", &mut c.regularity.space_base_t)?;
    r.floats("regularity.diagnostic_t", &mut c.regularity.diagnostic_t)?;
    r.float("order_norm.t", &mut c.order_norm.t)?;
    r.count("order_norm.N", &mut c.order_norm.n)?;
    r.count("order_norm.J", &mut c.order_norm.j)?;
    r.floats("order_norm.lambdas", &mut c.order_norm.lambdas)?;
    r.float("order_norm.dx", &mut c.order_norm.dx)?;
    r.float("order_norm.dt", &mut c.order_norm.dt)?;
    r.float("order_norm.L", &mut c.order_norm.half_width)?;
    r.float("equivalence.t", &mut c.equivalence.t)?;
    r.float("equivalence.x", &mut c.equivalence.x)?;
    r.floats("equivalence.y", &mut c.equivalence.y)?;

    validate(&c)?;
    Ok(c)
}

fn validate(c: &RunConfig) -> Res<()> {
    require(!c.probes.is_empty(), "probes", "at least one probe is needed")?;
    require(c.probes.iter().all(|p| p[0] > 0.0 && p[1].is_finite()), "probes", "probe times must be positive")?;
    require(c.truncation.n <= 20, "truncation.N", "must be at most 20")?;
    require((1..=64).contains(&c.truncation.j), "truncation.J", "must be between 1 and 64")?;
    require(c.quadrature.half_width >= 0.0, "quadrature.L", "must be non-negative (0 selects automatically)")?;
    require(c.quadrature.grading >= 1.0, "quadrature.grading", "must be at least 1")?;
    require(c.quadrature.simplex_points >= 2, "quadrature.simplex_points", "must be at least 2")?;
    require(c.quadrature.max_order <= 4, "quadrature.max_order", "must be at most 4")?;
    require(c.mc.dt > 0.0 && c.mc.dt <= 0.1, "mc.dt", "must lie in (0, 0.1]")?;
    require(c.mc.n_paths >= 100, "mc.n_paths", "must be at least 100")?;
    require(c.mc.delta_a_factor > 0.0, "mc.delta_a_factor", "must be positive")?;
    require(c.mc.batch_size >= 1, "mc.batch_size", "must be at least 1")?;
    require(c.mc.n_noise >= 2, "mc.n_noise", "must be at least 2")?;
    require(c.mc.n_paths / c.mc.n_noise >= 100, "mc.n_noise", "must leave at least 100 paths per noise draw")?;
    require(
        ["constant", "sine", "gaussian_bump", "tanh"].contains(&c.initial_condition.tag.as_str()),
        "initial_condition.tag",
        "must be one of constant, sine, gaussian_bump, tanh",
    )?;
    require(c.propagator.dx > 0.0, "propagator.dx", "must be positive")?;
    require(c.propagator.dt > 0.0, "propagator.dt", "must be positive")?;
    require(c.propagator.half_width > 1.0, "propagator.L", "must exceed 1")?;
    require(
        ["crank-nicolson", "explicit"].contains(&c.propagator.scheme.as_str()),
        "propagator.scheme",
        "must be crank-nicolson or explicit",
    )?;
    require(c.localtime.t > 0.0, "localtime.t", "must be positive")?;
    require(c.localtime.increment_h.iter().all(|&h| h >= 0.0), "localtime.increment_h", "must be non-negative")?;
    require(c.localtime.increment_delta_a > 0.0, "localtime.increment_delta_a", "must be positive")?;
    require(c.stransform.t > 0.0, "stransform.t", "must be positive")?;
    require(c.regularity.h_min > 0.0, "regularity.h_min", "must be positive")?;
    require(c.regularity.h_max > c.regularity.h_min, "regularity.h_max", "must exceed regularity.h_min")?;
    require(c.regularity.per_octave >= 1, "regularity.per_octave", "must be at least 1")?;
    require(c.regularity.space_base_t > 0.0, "regularity.space_base_t", "must be positive")?;
    require(c.regularity.diagnostic_t.iter().all(|&t| t > 0.0), "regularity.diagnostic_t", "must be positive")?;
    require(c.order_norm.t > 0.0, "order_norm.t", "must be positive")?;
    require(c.order_norm.n >= 2, "order_norm.N", "must be at least 2")?;
    require(c.order_norm.j >= 1, "order_norm.J", "must be at least 1")?;
    require(c.order_norm.dx > 0.0, "order_norm.dx", "must be positive")?;
    require(c.order_norm.dt > 0.0, "order_norm.dt", "must be positive")?;
    require(c.order_norm.half_width > 1.0, "order_norm.L", "must exceed 1")?;
    require(c.equivalence.t > 0.0, "equivalence.t", "must be positive")?;
    require(!c.equivalence.y.is_empty(), "equivalence.y", "needs at least one probe")?;
    Ok(())
}

pub fn parse_config(path: &Path) -> Res<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::Io { path: path.display().to_string(), message: e.to_string() })?;
    parse_config_str(&text)
}

impl RunConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_from_seed_only() {
        let c = parse_config_str("seed = 7\n").unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!((c.truncation.n, c.truncation.j), (4, 6));
        assert_eq!(c.mc.dt, 1e-3);
    }

    #[test]
    fn negative_paths_name_the_key() {
        let e = parse_config_str("seed = 1\n[mc]\nn_paths = -5\n").unwrap_err();
        assert!(e.to_string().contains("mc.n_paths"), "{e}");
    }

    #[test]
    fn unknown_key_suggests_the_nearest() {
        let e = parse_config_str("seed = 1\n[quadratur]\nL = 3\n").unwrap_err();
        assert_eq!(e, ConfigError::UnknownKey { key: "quadratur.L".into(), suggestion: Some("quadrature.L".into()) });
        let e = parse_config_str("[mc]\nn_path = 500\n").unwrap_err();
        assert!(e.to_string().contains("mc.n_paths"));
    }

    #[test]
    fn parse_errors_carry_lines() {
        let e = parse_config_str("seed = 1\n\n[mc]\ndt = = 3\n").unwrap_err();
        assert!(matches!(e, ConfigError::Parse { line: 4, .. }), "{e:?}");
    }

    #[test]
    fn large_seeds_roundtrip() {
        let c = RunConfig { seed: u64::MAX, ..RunConfig::default() };
        assert_eq!(parse_config_str(&c.to_toml()).unwrap().seed, u64::MAX);
    }

    #[test]
    fn echo_roundtrips() {
        let c = parse_config_str("seed = 3\nprobes = [[0.5, 0.1]]\n[truncation]\nN = 3\n").unwrap();
        assert_eq!(parse_config_str(&c.to_toml()).unwrap(), c);
    }
}
