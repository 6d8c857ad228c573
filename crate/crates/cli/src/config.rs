//! Run configuration: a flat key-value file with `[section]` headers.
//!
//! Every key has a default, so an empty file is a valid run. Keys may also
//! be written fully qualified (`crash.omega = 0.7`) outside any section,
//! which is the form used by the echo in output metadata.

use std::collections::BTreeMap;
use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Float,
    /// Float, or `auto` for a value derived from the physical defaults.
    FloatOrAuto,
    Int,
    Choice(&'static [&'static str]),
    Text,
}

pub struct KeyDef {
    pub key: &'static str,
    pub default: &'static str,
    pub kind: Kind,
    pub help: &'static str,
}

const fn def(key: &'static str, default: &'static str, kind: Kind, help: &'static str) -> KeyDef {
    KeyDef { key, default, kind, help }
}

/// All recognised keys, in echo order.
pub const KEYS: &[KeyDef] = &[
    def("run.format", "csv", Kind::Choice(&["csv", "json-like"]), "output format"),
    def("run.seed", "0", Kind::Int, "random seed for crash-mc"),
    def("run.trials", "1000000", Kind::Int, "Monte Carlo trials for crash-mc"),
    def("model.epsilon", "0.005", Kind::Float, "inertia parameter"),
    def("model.decay", "0.25", Kind::Float, "drag decay rate per row"),
    def("strategy.energy", "1.2", Kind::Float, "energy budget E*"),
    def("strategy.risk", "0.5", Kind::Float, "risk index beta"),
    def("rider.position", "5", Kind::Float, "drafting position i"),
    def("rider.cd_front", "1.43", Kind::Float, "solo drag C_{d,1}"),
    def("rider.cd_lurk", "0.46", Kind::Float, "drag at position i"),
    def("rider.mass_ratio", "1", Kind::Float, "rider mass over peloton average"),
    def("crash.omega", "0.5", Kind::Float, "crash propagation decay"),
    def("crash.intensity", "2", Kind::Float, "expected crashes per race"),
    def("crash.riders", "75", Kind::Int, "riders in the peloton"),
    def("fatigue.mu", "1", Kind::Float, "fatigue rate"),
    def("fatigue.p_sustain", "0.46", Kind::Float, "sustainable power"),
    def("terrain.course", "demo", Kind::Text, "demo, flat, grade:<slope> or a course file path"),
    def("terrain.attack_position", "0.5", Kind::Float, "attack position x_a"),
    def("terrain.attack_power", "3.6", Kind::Float, "attack power P_a"),
    def("terrain.gravity_ratio", "auto", Kind::FloatOrAuto, "gravity over drag"),
    def("terrain.method", "dopri", Kind::Choice(&["dopri", "bdf2"]), "ODE method"),
    def("terrain.rtol", "1e-10", Kind::Float, "relative tolerance"),
    def("terrain.atol", "1e-12", Kind::Float, "absolute tolerance"),
    def("terrain.samples", "201", Kind::Int, "output rows per trajectory"),
    def("crash_mc.attack_position", "0.5", Kind::Float, "attack position of the traced rider"),
    def("crash_mc.z_max", "4", Kind::Float, "largest accepted |z|"),
    def("micro.power", "2", Kind::Float, "attack power"),
    def("micro.gamma_ratio", "1", Kind::Float, "spacing factor in delta = gamma eps^2"),
    def("micro.order", "two-term", Kind::Choice(&["two-term", "leading"]), "inner layer terms"),
    def("micro.duration", "20", Kind::Float, "simulated time in units of epsilon"),
    def("micro.samples", "401", Kind::Int, "output rows"),
    def("sweep.param", "", Kind::Text, "key to sweep; empty for a single run"),
    def("sweep.lo", "0", Kind::Float, "first sweep value"),
    def("sweep.hi", "1", Kind::Float, "last sweep value"),
    def("sweep.points", "11", Kind::Int, "number of sweep values"),
    def("sweep.scale", "linear", Kind::Choice(&["linear", "log"]), "sweep spacing"),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One line per key for `--help`.
pub fn key_help() -> String {
    let width = KEYS.iter().map(|d| d.key.len()).max().unwrap_or(0);
    let lines: Vec<String> = KEYS
        .iter()
        .map(|d| format!("  {:width$}  {} (default: {})", d.key, d.help, if d.default.is_empty() { "none" } else { d.default }))
        .collect();
    format!("Configuration keys:\n{}", lines.join("\n"))
}

fn lookup(key: &str) -> Option<&'static KeyDef> {
    KEYS.iter().find(|d| d.key == key)
}

fn check(def: &KeyDef, value: &str) -> Result<(), String> {
    match def.kind {
        Kind::Float => match value.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(()),
            _ => Err(format!("expected a finite number, got `{value}`")),
        },
        Kind::FloatOrAuto if value == "auto" => Ok(()),
        Kind::FloatOrAuto => check(&KeyDef { kind: Kind::Float, ..*def }, value),
        Kind::Int => value.parse::<u64>().map(|_| ()).map_err(|_| format!("expected a non-negative integer, got `{value}`")),
        Kind::Choice(options) if options.contains(&value) => Ok(()),
        Kind::Choice(options) => Err(format!("expected one of {}, got `{value}`", options.join(", "))),
        Kind::Text => Ok(()),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    values: BTreeMap<&'static str, String>,
}

impl Default for Config {
    fn default() -> Self {
        Self { values: KEYS.iter().map(|d| (d.key, d.default.to_string())).collect() }
    }
}

impl Config {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let def = lookup(key).ok_or_else(|| ConfigError(format!("unknown key `{key}`")))?;
        check(def, value).map_err(|m| ConfigError(format!("{key}: {m}")))?;
        self.values.insert(def.key, value.to_string());
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<(), ConfigError> {
        let (k, v) = pair.split_once('=').ok_or_else(|| ConfigError(format!("expected key=value, got `{pair}`")))?;
        self.set(k.trim(), v.trim())
    }

    /// Applies the assignments in `text` on top of the current values.
    pub fn merge_text(&mut self, text: &str) -> Result<(), ConfigError> {
        let mut section = String::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let err = |m: String| ConfigError(format!("line {}: {m}", idx + 1));
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| err(format!("unterminated section header `{line}`")))?;
                section = name.trim().to_string();
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| err(format!("expected key = value, got `{line}`")))?;
            let (k, v) = (k.trim(), v.trim());
            let key = if k.contains('.') || section.is_empty() { k.to_string() } else { format!("{section}.{k}") };
            self.set(&key, v).map_err(|e| err(e.0))?;
        }
        Ok(())
    }

    pub fn str(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("unregistered key {key}"))
    }

    pub fn float(&self, key: &str) -> f64 {
        self.str(key).parse().unwrap_or_else(|_| panic!("{key} is not numeric"))
    }

    pub fn float_or_auto(&self, key: &str) -> Option<f64> {
        match self.str(key) {
            "auto" => None,
            v => Some(v.parse().unwrap_or_else(|_| panic!("{key} is not numeric"))),
        }
    }

    pub fn int(&self, key: &str) -> u64 {
        self.str(key).parse().unwrap_or_else(|_| panic!("{key} is not an integer"))
    }

    /// `key = value` lines in registry order; parsing them reproduces `self`.
    pub fn echo(&self) -> Vec<String> {
        KEYS.iter().map(|d| format!("{} = {}", d.key, self.str(d.key))).collect()
    }

    /// Sweep values, or `None` for a single run.
    pub fn sweep(&self) -> Result<Option<(&'static str, Vec<f64>)>, ConfigError> {
        let param = self.str("sweep.param");
        if param.is_empty() {
            return Ok(None);
        }
        let def = lookup(param).ok_or_else(|| ConfigError(format!("sweep.param: unknown key `{param}`")))?;
        if !matches!(def.kind, Kind::Float | Kind::FloatOrAuto | Kind::Int) || def.key.starts_with("sweep.") {
            return Err(ConfigError(format!("sweep.param: `{param}` is not a numeric model key")));
        }
        let (lo, hi, n) = (self.float("sweep.lo"), self.float("sweep.hi"), self.int("sweep.points") as usize);
        if n == 0 {
            return Err(ConfigError("sweep.points must be at least 1".into()));
        }
        let log = self.str("sweep.scale") == "log";
        if log && !(lo > 0.0 && hi > 0.0) {
            return Err(ConfigError("log sweeps need positive sweep.lo and sweep.hi".into()));
        }
        let values = (0..n)
            .map(|k| {
                let s = if n == 1 { 0.0 } else { k as f64 / (n - 1) as f64 };
                if k == 0 {
                    lo
                } else if k + 1 == n {
                    hi
                } else if log {
                    (lo.ln() + s * (hi.ln() - lo.ln())).exp()
                } else {
                    lo + s * (hi - lo)
                }
            })
            .collect();
        Ok(Some((def.key, values)))
    }

    /// Copy with `key` set to a sweep value.
    pub fn with_value(&self, key: &str, value: f64) -> Result<Config, ConfigError> {
        let mut c = self.clone();
        let text = if lookup(key).is_some_and(|d| d.kind == Kind::Int) {
            if value.fract() != 0.0 || value < 0.0 {
                return Err(ConfigError(format!("{key} takes integers, sweep produced {value}")));
            }
            format!("{}", value as u64)
        } else {
            format!("{value}")
        };
        c.set(key, &text)?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_reference_setup() {
        let c = Config::default();
        assert_eq!(c.int("crash.riders"), 75);
        assert_eq!(c.float("rider.position"), 5.0);
        assert_eq!(c.float("crash.omega"), 0.5);
        assert_eq!(c.float("crash.intensity"), 2.0);
        assert_eq!(c.float("model.decay"), 0.25);
        assert_eq!((c.float("rider.cd_front"), c.float("rider.cd_lurk")), (1.43, 0.46));
        assert_eq!(c.float("model.epsilon"), 0.005);
    }

    #[test]
    fn sections_and_qualified_keys() {
        let mut c = Config::default();
        c.merge_text("# comment\n[crash]\nomega = 0.7\n\n[strategy]\nrisk=0.25\ncrash.riders = 50\n").unwrap();
        assert_eq!(c.float("crash.omega"), 0.7);
        assert_eq!(c.float("strategy.risk"), 0.25);
        assert_eq!(c.int("crash.riders"), 50);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let mut c = Config::default();
        assert_eq!(c.merge_text("[crash]\n\nomega = x\n").unwrap_err().0, "line 3: crash.omega: expected a finite number, got `x`");
        assert!(c.merge_text("[nope]\nkey = 1\n").unwrap_err().0.contains("unknown key `nope.key`"));
        assert!(c.merge_text("[crash\n").is_err());
        assert!(c.set_pair("run.format=xml").is_err());
    }

    #[test]
    fn echo_round_trips() {
        let mut c = Config::default();
        c.set_pair("fatigue.mu=3.5").unwrap();
        c.set_pair("terrain.course = grade:0.02").unwrap();
        let mut d = Config::default();
        d.merge_text(&c.echo().join("\n")).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn sweep_grids() {
        let mut c = Config::default();
        assert!(c.sweep().unwrap().is_none());
        c.merge_text("sweep.param = fatigue.mu\nsweep.lo = 0.001\nsweep.hi = 10\nsweep.points = 5\nsweep.scale = log\n").unwrap();
        let (key, v) = c.sweep().unwrap().unwrap();
        assert_eq!(key, "fatigue.mu");
        assert_eq!(v.len(), 5);
        assert_eq!((v[0], v[4]), (0.001, 10.0));
        assert!((v[2] - 0.1).abs() < 1e-15);
        c.set_pair("sweep.param=run.format").unwrap();
        assert!(c.sweep().is_err());
        assert!(Config::default().with_value("crash.riders", 10.5).is_err());
    }
}
