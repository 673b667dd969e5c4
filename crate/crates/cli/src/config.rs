//! Flat dotted-key experiment configuration read from TOML.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::path::Path;

use homog_core::coeffs::{
    builtin_field, CoefficientField, FieldParams, Mat, TensorMode, TrigMode, TrigSeries,
};
use homog_core::lattice::Direction;
use thiserror::Error;
use toml::Value;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config is not valid TOML: {0}")]
    Syntax(String),
    #[error("missing required key `{0}`")]
    Missing(String),
    #[error("key `{key}` must be {expected}")]
    Type { key: String, expected: &'static str },
    #[error("key `{key}`: {reason}")]
    Invalid { key: String, reason: String },
}

type Result<T> = std::result::Result<T, ConfigError>;

fn type_err(key: &str, expected: &'static str) -> ConfigError {
    ConfigError::Type {
        key: key.to_string(),
        expected,
    }
}

fn invalid(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        reason: reason.into(),
    }
}

/// Parsed config. Every key read (or defaulted) is recorded for provenance.
#[derive(Debug)]
pub struct Config {
    values: BTreeMap<String, Value>,
    used: RefCell<BTreeMap<String, String>>,
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut BTreeMap<String, Value>) {
    for (k, v) in table {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => {
                out.insert(key, other.clone());
            }
        }
    }
}

fn as_f64(key: &str, v: &Value) -> Result<f64> {
    match v {
        Value::Float(x) => Ok(*x),
        Value::Integer(i) => Ok(*i as f64),
        _ => Err(type_err(key, "a number")),
    }
}

fn as_i64(key: &str, v: &Value) -> Result<i64> {
    match v {
        Value::Integer(i) => Ok(*i),
        Value::Float(x) if x.fract() == 0.0 && x.abs() < 9e15 => Ok(*x as i64),
        _ => Err(type_err(key, "an integer")),
    }
}

fn as_array<'v>(key: &str, v: &'v Value) -> Result<&'v Vec<Value>> {
    v.as_array().ok_or_else(|| type_err(key, "an array"))
}

fn f64_list(key: &str, v: &Value) -> Result<Vec<f64>> {
    as_array(key, v)?.iter().map(|x| as_f64(key, x)).collect()
}

fn matrix(key: &str, v: &Value, d: usize) -> Result<Mat> {
    let rows = as_array(key, v)?;
    if rows.len() != d {
        return Err(invalid(key, format!("expected a {d}×{d} matrix")));
    }
    let mut m = Mat::zeros(d, d);
    for (i, r) in rows.iter().enumerate() {
        let r = f64_list(key, r)?;
        if r.len() != d {
            return Err(invalid(key, format!("expected a {d}×{d} matrix")));
        }
        for (j, x) in r.into_iter().enumerate() {
            m[(i, j)] = x;
        }
    }
    Ok(m)
}

/// Modes are `[amp, phase, k_1, ..., k_d]`.
fn trig_modes(key: &str, v: &Value, d: usize) -> Result<Vec<TrigMode>> {
    as_array(key, v)?
        .iter()
        .map(|m| {
            let xs = as_array(key, m)?;
            if xs.len() != d + 2 {
                return Err(invalid(
                    key,
                    format!("each mode is [amp, phase, k_1..k_{d}]"),
                ));
            }
            let amp = as_f64(key, &xs[0])?;
            let phase = as_f64(key, &xs[1])?;
            let k = xs[2..]
                .iter()
                .map(|x| as_i64(key, x))
                .collect::<Result<Vec<_>>>()?;
            Ok(TrigMode::new(amp, &k).with_phase(phase))
        })
        .collect()
}

fn series_from_table(key: &str, t: &toml::Table, d: usize) -> Result<TrigSeries> {
    let mean = t
        .get("mean")
        .map(|v| as_f64(key, v))
        .transpose()?
        .unwrap_or(0.0);
    let modes = match t.get("modes") {
        Some(v) => trig_modes(key, v, d)?,
        None => Vec::new(),
    };
    Ok(TrigSeries::new(mean, modes))
}

impl Config {
    pub fn from_str(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| ConfigError::Syntax(e.to_string()))?;
        let mut values = BTreeMap::new();
        flatten("", &table, &mut values);
        Ok(Config {
            values,
            used: RefCell::new(BTreeMap::new()),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_str(&text)
    }

    fn raw(&self, key: &str) -> Option<&Value> {
        let v = self.values.get(key);
        if let Some(v) = v {
            self.used
                .borrow_mut()
                .insert(key.to_string(), v.to_string());
        }
        v
    }

    fn record(&self, key: &str, shown: String) {
        self.used.borrow_mut().insert(key.to_string(), shown);
    }

    fn require(&self, key: &str) -> Result<&Value> {
        self.raw(key)
            .ok_or_else(|| ConfigError::Missing(key.to_string()))
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        as_f64(key, self.require(key)?)
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        match self.raw(key) {
            Some(v) => as_f64(key, v),
            None => {
                self.record(key, default.to_string());
                Ok(default)
            }
        }
    }

    /// Optional number; absence is recorded as `auto`.
    pub fn f64_opt(&self, key: &str) -> Result<Option<f64>> {
        match self.raw(key) {
            Some(v) => as_f64(key, v).map(Some),
            None => {
                self.record(key, "auto".into());
                Ok(None)
            }
        }
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        match self.raw(key) {
            Some(v) => {
                let i = as_i64(key, v)?;
                usize::try_from(i).map_err(|_| type_err(key, "a non-negative integer"))
            }
            None => {
                self.record(key, default.to_string());
                Ok(default)
            }
        }
    }

    pub fn string_or(&self, key: &str, default: &str) -> Result<String> {
        match self.raw(key) {
            Some(Value::String(s)) => Ok(s.clone()),
            Some(_) => Err(type_err(key, "a string")),
            None => {
                self.record(key, format!("{default:?}"));
                Ok(default.to_string())
            }
        }
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        match self.raw(key) {
            Some(Value::Boolean(b)) => Ok(*b),
            Some(_) => Err(type_err(key, "a boolean")),
            None => {
                self.record(key, default.to_string());
                Ok(default)
            }
        }
    }

    pub fn f64_list_or(&self, key: &str, default: &[f64]) -> Result<Vec<f64>> {
        match self.raw(key) {
            Some(v) => f64_list(key, v),
            None => {
                self.record(key, format!("{default:?}"));
                Ok(default.to_vec())
            }
        }
    }

    /// Grid resolution: a power of two between 16 and 512.
    pub fn grid_or(&self, key: &str, default: usize) -> Result<usize> {
        let n = self.usize_or(key, default)?;
        if !n.is_power_of_two() || !(16..=512).contains(&n) {
            return Err(invalid(
                key,
                format!("grid size {n} is not a power of two in [16, 512]"),
            ));
        }
        Ok(n)
    }

    pub fn direction(&self, key: &str) -> Result<Direction> {
        direction_from(key, self.require(key)?)
    }

    pub fn directions(&self, key: &str) -> Result<Vec<Direction>> {
        as_array(key, self.require(key)?)?
            .iter()
            .map(|v| direction_from(key, v))
            .collect()
    }

    pub fn vectors(&self, key: &str) -> Result<Vec<Vec<f64>>> {
        as_array(key, self.require(key)?)?
            .iter()
            .map(|v| f64_list(key, v))
            .collect()
    }

    pub fn matrices(&self, key: &str, d: usize) -> Result<Vec<Mat>> {
        as_array(key, self.require(key)?)?
            .iter()
            .map(|v| matrix(key, v, d))
            .collect()
    }

    fn series(&self, prefix: &str, d: usize) -> Result<Option<TrigSeries>> {
        let mean_key = format!("{prefix}.mean");
        let modes_key = format!("{prefix}.modes");
        let mean = self
            .raw(&mean_key)
            .map(|v| as_f64(&mean_key, v))
            .transpose()?;
        let modes = self
            .raw(&modes_key)
            .map(|v| trig_modes(&modes_key, v, d))
            .transpose()?;
        if mean.is_none() && modes.is_none() {
            return Ok(None);
        }
        Ok(Some(TrigSeries::new(
            mean.unwrap_or(0.0),
            modes.unwrap_or_default(),
        )))
    }

    /// Dimension from the first parameter that carries one.
    fn infer_dim(&self) -> Result<usize> {
        let mut found: Option<(String, usize)> = None;
        let mut note = |key: &str, d: usize| -> Result<()> {
            match &found {
                Some((k0, d0)) if *d0 != d => Err(invalid(
                    key,
                    format!("dimension {d} disagrees with {d0} from `{k0}`"),
                )),
                Some(_) => Ok(()),
                None => {
                    found = Some((key.to_string(), d));
                    Ok(())
                }
            }
        };
        for key in ["field.params.a0", "field.params.k", "field.params.eta"] {
            if let Some(v) = self.values.get(key) {
                note(key, as_array(key, v)?.len())?;
            }
        }
        for key in ["field.params.scalar.modes", "field.params.mobility.modes"] {
            if let Some(first) = self
                .values
                .get(key)
                .and_then(|v| v.as_array())
                .and_then(|a| a.first())
            {
                let len = as_array(key, first)?.len();
                if len < 4 {
                    return Err(invalid(
                        key,
                        "each mode is [amp, phase, k_1..k_d] with d >= 2",
                    ));
                }
                note(key, len - 2)?;
            }
        }
        if let Some(first) = self
            .values
            .get("field.params.tensor_modes")
            .and_then(|v| v.as_array())
            .and_then(|a| a.first())
        {
            let key = "field.params.tensor_modes";
            let k = first
                .get("k")
                .ok_or_else(|| invalid(key, "mode without `k`"))?;
            note(key, as_array(key, k)?.len())?;
        }
        let d = found.map(|(_, d)| d).ok_or_else(|| {
            invalid(
                "field.params",
                "cannot infer the dimension; give `field.params.a0`",
            )
        })?;
        if d < 2 {
            return Err(invalid("field.params", "dimension must be at least 2"));
        }
        Ok(d)
    }

    /// Builds the coefficient field from `field.family` and `field.params.*`.
    pub fn field(&self) -> Result<CoefficientField> {
        let family = self.string_or("field.family", "constant")?;
        let d = self.infer_dim()?;
        let a0 = self
            .raw("field.params.a0")
            .map(|v| matrix("field.params.a0", v, d))
            .transpose()?;
        let k = self
            .raw("field.params.k")
            .map(|v| {
                as_array("field.params.k", v)?
                    .iter()
                    .map(|x| as_i64("field.params.k", x))
                    .collect()
            })
            .transpose()?;
        let tensor_modes = match self.raw("field.params.tensor_modes") {
            None => Vec::new(),
            Some(v) => {
                let key = "field.params.tensor_modes";
                as_array(key, v)?
                    .iter()
                    .map(|m| {
                        let t = m
                            .as_table()
                            .ok_or_else(|| type_err(key, "an array of {s, k, phase} tables"))?;
                        let s = matrix(
                            key,
                            t.get("s").ok_or_else(|| invalid(key, "mode without `s`"))?,
                            d,
                        )?;
                        let kk = as_array(
                            key,
                            t.get("k").ok_or_else(|| invalid(key, "mode without `k`"))?,
                        )?
                        .iter()
                        .map(|x| as_i64(key, x))
                        .collect::<Result<Vec<_>>>()?;
                        let phase = t
                            .get("phase")
                            .map(|p| as_f64(key, p))
                            .transpose()?
                            .unwrap_or(0.0);
                        Ok(TensorMode { s, k: kk, phase })
                    })
                    .collect::<Result<_>>()?
            }
        };
        let drift = match self.raw("field.params.drift") {
            None => Vec::new(),
            Some(v) => {
                let key = "field.params.drift";
                let parts = as_array(key, v)?;
                if parts.len() != d {
                    return Err(invalid(key, format!("expected {d} components")));
                }
                parts
                    .iter()
                    .map(|s| {
                        let t = s
                            .as_table()
                            .ok_or_else(|| type_err(key, "an array of {mean, modes} tables"))?;
                        series_from_table(key, t, d)
                    })
                    .collect::<Result<_>>()?
            }
        };
        let params = FieldParams {
            d,
            a0,
            scalar: self.series("field.params.scalar", d)?,
            nu: self
                .raw("field.params.nu")
                .map(|v| as_f64("field.params.nu", v))
                .transpose()?,
            k,
            eta: self
                .raw("field.params.eta")
                .map(|v| f64_list("field.params.eta", v))
                .transpose()?,
            tensor_modes,
            mobility: self.series("field.params.mobility", d)?,
            drift,
        };
        builtin_field(&family, &params).map_err(|e| invalid("field.family", e.to_string()))
    }

    /// `key=value` pairs of every key consulted so far, sorted.
    pub fn provenance(&self) -> String {
        self.used
            .borrow()
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Keys present in the file but never read.
    pub fn unused_keys(&self) -> Vec<String> {
        let used = self.used.borrow();
        self.values
            .keys()
            .filter(|k| !used.contains_key(*k))
            .cloned()
            .collect()
    }
}

/// `k=[a,b,..]` strings give primitive lattice directions, `v=[x,y,..]`
/// irrational proxies.
fn direction_from(key: &str, v: &Value) -> Result<Direction> {
    let s = v
        .as_str()
        .ok_or_else(|| type_err(key, "a direction string `k=[..]` or `v=[..]`"))?;
    s.parse::<Direction>()
        .map_err(|e| invalid(key, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dotted_and_nested_keys_agree() {
        let a = Config::from_str("front.alpha = 1.5\n").unwrap();
        let b = Config::from_str("[front]\nalpha = 1.5\n").unwrap();
        assert_eq!(a.f64("front.alpha").unwrap(), b.f64("front.alpha").unwrap());
    }

    #[test]
    fn missing_key_is_named() {
        let c = Config::from_str("front.T = 1.0\n").unwrap();
        let err = c.f64("front.alpha").unwrap_err();
        assert!(err.to_string().contains("front.alpha"));
    }

    #[test]
    fn grid_sizes_are_validated() {
        let c = Config::from_str("grid.n = 48\ngrid.m = 1024\ngrid.s = 32\n").unwrap();
        assert!(c
            .grid_or("grid.n", 64)
            .unwrap_err()
            .to_string()
            .contains("grid.n"));
        assert!(c.grid_or("grid.m", 64).is_err());
        assert_eq!(c.grid_or("grid.s", 64).unwrap(), 32);
        assert_eq!(c.grid_or("grid.other", 64).unwrap(), 64);
    }

    #[test]
    fn field_from_keys() {
        let text = r#"
            field.family = "isotropic-trig"
            field.params.scalar = { mean = 2.0, modes = [[1.0, 0.0, 1, 0]] }
            field.params.mobility.mean = 1.0
            field.params.mobility.modes = [[0.5, 0.0, 0, 1]]
            field.params.drift = [{ mean = 0.0, modes = [[0.1, 0.0, 1, 0]] }, { mean = 0.0 }]
        "#;
        let c = Config::from_str(text).unwrap();
        let f = c.field().unwrap();
        let a = f.a(&[0.0, 0.3], &[0.0, 1.0]);
        assert!((a[(0, 0)] - 3.0).abs() < 1e-14);
        assert!((f.m(&[0.0, 0.0], &[1.0, 0.0]) - 1.6).abs() < 1e-14);
        assert!(c.unused_keys().is_empty());
        assert!(c.provenance().contains("field.family"));
    }

    #[test]
    fn bad_mode_shape_is_reported() {
        let c = Config::from_str(
            "field.family = \"isotropic-trig\"\nfield.params.scalar.modes = [[1.0, 0.0, 1]]\n",
        )
        .unwrap();
        assert!(c
            .field()
            .unwrap_err()
            .to_string()
            .contains("field.params.scalar.modes"));
    }

    #[test]
    fn directions_parse() {
        let c = Config::from_str(
            "a = \"k=[1,2]\"\nb = \"v=[1.0,1.618]\"\nc = [\"k=[0,1]\", \"k=[1,1]\"]\nd = [1, 2]\n",
        )
        .unwrap();
        assert!(c.direction("a").unwrap().is_rational());
        assert!(!c.direction("b").unwrap().is_rational());
        assert_eq!(c.directions("c").unwrap().len(), 2);
        assert!(c.direction("d").unwrap_err().to_string().contains("`d`"));
    }

    #[test]
    fn dimension_is_inferred() {
        let c = Config::from_str(
            "field.params.a0 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]\n",
        )
        .unwrap();
        assert_eq!(c.field().unwrap().dim(), 3);
        let c = Config::from_str("field.family = \"constant\"\n").unwrap();
        assert!(c.field().unwrap_err().to_string().contains("field.params"));
    }
}
