//! Run configuration: a flat `key = value` file overlaid by command-line flags.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use rotvec::field::ModelSpec;

/// A configuration problem; always reported with exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub type ConfigResult<T> = Result<T, ConfigError>;

fn err<T>(msg: impl Into<String>) -> ConfigResult<T> {
    Err(ConfigError(msg.into()))
}

/// Parses `key = value` lines. Blank lines and `#` comments are skipped;
/// repeated keys are an error.
pub fn parse_config(text: &str) -> ConfigResult<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return err(format!("config line {}: expected `key = value`", n + 1));
        };
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() {
            return err(format!("config line {}: empty key", n + 1));
        }
        if out.insert(key.to_string(), value.to_string()).is_some() {
            return err(format!("config line {}: duplicate key `{key}`", n + 1));
        }
    }
    Ok(out)
}

pub fn read_config(path: &Path) -> ConfigResult<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
    parse_config(&text)
}

/// Resolved settings for one command. Every key must be consumed by a typed
/// getter; [`Settings::finish`] rejects the leftovers.
#[derive(Debug, Default)]
pub struct Settings {
    values: BTreeMap<String, String>,
    used: BTreeSet<String>,
}

impl Settings {
    /// Config-file values overlaid by flag values.
    pub fn new(file: BTreeMap<String, String>, flags: BTreeMap<String, String>) -> Self {
        let mut values = file;
        values.extend(flags);
        Self {
            values,
            used: BTreeSet::new(),
        }
    }

    pub fn from_pairs(pairs: &[(&str, &str)]) -> Self {
        let values = pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        Self::new(values, BTreeMap::new())
    }

    pub fn raw(&mut self, key: &str) -> Option<String> {
        self.used.insert(key.to_string());
        self.values.get(key).cloned()
    }

    pub fn string(&mut self, key: &str) -> Option<String> {
        self.raw(key).filter(|s| !s.is_empty())
    }

    pub fn f64(&mut self, key: &str) -> ConfigResult<Option<f64>> {
        self.string(key).map(|s| parse_number(key, &s)).transpose()
    }

    pub fn f64_or(&mut self, key: &str, default: f64) -> ConfigResult<f64> {
        Ok(self.f64(key)?.unwrap_or(default))
    }

    pub fn positive_or(&mut self, key: &str, default: f64) -> ConfigResult<f64> {
        let v = self.f64_or(key, default)?;
        if v <= 0.0 || !v.is_finite() {
            return err(format!("`{key}` must be a positive number, got {v}"));
        }
        Ok(v)
    }

    pub fn usize_or(&mut self, key: &str, default: usize) -> ConfigResult<usize> {
        match self.string(key) {
            None => Ok(default),
            Some(s) => s
                .parse()
                .map_err(|_| ConfigError(format!("`{key}` must be a non-negative integer, got `{s}`"))),
        }
    }

    pub fn u64_or(&mut self, key: &str, default: u64) -> ConfigResult<u64> {
        match self.string(key) {
            None => Ok(default),
            Some(s) => s
                .parse()
                .map_err(|_| ConfigError(format!("`{key}` must be a non-negative integer, got `{s}`"))),
        }
    }

    pub fn vec(&mut self, key: &str) -> ConfigResult<Option<Vec<f64>>> {
        self.string(key).map(|s| parse_list(key, &s)).transpose()
    }

    /// Rejects keys that no getter asked for.
    pub fn finish(&self) -> ConfigResult<()> {
        let unknown: Vec<&str> = self.values.keys().filter(|k| !self.used.contains(*k)).map(String::as_str).collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            err(format!("unknown configuration keys for this command: {}", unknown.join(", ")))
        }
    }

    /// Model spec and initial state from `model`, the parameter keys and `x0`.
    pub fn model(&mut self) -> ConfigResult<ModelChoice> {
        let Some(name) = self.string("model") else {
            return err("missing `model` (constant, circle, torus-product or winfree-type)");
        };
        let mut params = BTreeMap::new();
        for key in ["omega", "c", "eps", "kappa"] {
            if let Some(v) = self.vec(key)? {
                params.insert(key.to_string(), v);
            }
        }
        let spec = ModelSpec::from_params(&name, &params).map_err(|e| ConfigError(e.to_string()))?;
        let n = spec.dim();
        let x0 = self.vec("x0")?.unwrap_or_else(|| vec![0.0; n]);
        if x0.len() != n {
            return err(format!("`x0` has {} entries but the model has dimension {n}", x0.len()));
        }
        Ok(ModelChoice { spec, x0 })
    }
}

pub struct ModelChoice {
    pub spec: ModelSpec,
    pub x0: Vec<f64>,
}

pub fn parse_number(key: &str, s: &str) -> ConfigResult<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| ConfigError(format!("`{key}`: cannot parse `{s}` as a number")))?;
    if !v.is_finite() {
        return err(format!("`{key}` must be finite"));
    }
    Ok(v)
}

/// Comma-separated numbers.
pub fn parse_list(key: &str, s: &str) -> ConfigResult<Vec<f64>> {
    s.split(',').map(|part| parse_number(key, part)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_files() {
        let text = "# experiment\nmodel = circle\nc = 2   # speed\n\neps=0.1\n";
        let map = parse_config(text).unwrap();
        assert_eq!(map["model"], "circle");
        assert_eq!(map["c"], "2");
        assert_eq!(map["eps"], "0.1");
        assert!(parse_config("a = 1\na = 2").is_err());
        assert!(parse_config("just words").is_err());
    }

    #[test]
    fn flags_override_file() {
        let file = parse_config("model = circle\nc = 2\neps = 0.1").unwrap();
        let flags = BTreeMap::from([("eps".to_string(), "0.2".to_string())]);
        let mut s = Settings::new(file, flags);
        let m = s.model().unwrap();
        assert_eq!(m.spec, ModelSpec::Circle { c: 2.0, eps: 0.2 });
        assert_eq!(m.x0, vec![0.0]);
        s.finish().unwrap();
    }

    #[test]
    fn leftovers_are_rejected() {
        let mut s = Settings::from_pairs(&[("model", "constant"), ("omega", "1,2"), ("horizn", "10")]);
        s.model().unwrap();
        let e = s.finish().unwrap_err();
        assert!(e.0.contains("horizn"), "{e}");
    }

    #[test]
    fn typed_getters() {
        let mut s = Settings::from_pairs(&[("a", "1e-3"), ("b", "x"), ("n", "7"), ("v", "1, 2,3")]);
        assert_eq!(s.f64("a").unwrap(), Some(1e-3));
        assert!(s.f64("b").is_err());
        assert_eq!(s.usize_or("n", 0).unwrap(), 7);
        assert_eq!(s.vec("v").unwrap(), Some(vec![1.0, 2.0, 3.0]));
        assert_eq!(s.f64_or("missing", 4.0).unwrap(), 4.0);
        assert!(s.positive_or("a", 1.0).is_ok());
    }
}
