use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::PathBuf;

/// Names accepted in the `tolerances` map, with defaults.
pub const TOLERANCE_DEFAULTS: &[(&str, f64)] = &[
    ("profile", 1e-11),
    ("picard", 1e-10),
    ("residual", 1e-6),
    ("oracle", 1e-3),
    ("rate_slack", 0.05),
    ("steering", 0.05),
];

fn d_node_count() -> usize {
    400
}
fn d_grading() -> f64 {
    2.0
}
fn d_eigen_count() -> usize {
    8
}
fn d_cutoff() -> f64 {
    12.0
}
fn d_epsilon() -> f64 {
    1e-6
}
fn d_t0() -> f64 {
    1.0
}
fn d_dt() -> f64 {
    0.0125
}
fn d_oracle_length() -> f64 {
    6.0
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub n: usize,
    pub phi_max: f64,
    #[serde(default = "d_node_count")]
    pub node_count: usize,
    #[serde(default = "d_grading")]
    pub grading_exponent: f64,
    #[serde(default = "d_eigen_count")]
    pub eigen_count: usize,
    #[serde(default = "d_cutoff")]
    pub cutoff: f64,
    #[serde(default = "d_epsilon")]
    pub epsilon_res: f64,
    pub mu: f64,
    #[serde(default)]
    pub c: Vec<f64>,
    #[serde(default = "d_t0")]
    pub t0: f64,
    /// End of the cylinder; taken from the spectral gap at mu when absent.
    #[serde(default)]
    pub t_max: Option<f64>,
    #[serde(default = "d_dt")]
    pub dt: f64,
    #[serde(default = "d_oracle_length")]
    pub oracle_length: f64,
    /// Exponents to use for the index set instead of the computed ones.
    #[serde(default)]
    pub gammas: Option<Vec<f64>>,
    /// Move resonant exponents onto their combinations before expanding.
    #[serde(default)]
    pub snap_resonances: bool,
    #[serde(default)]
    pub tolerances: BTreeMap<String, f64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
}

fn bad(path: &str, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_string(),
        message: message.into(),
    }
}

/// Parse a JSON run configuration, fill defaults and validate every field.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let mut cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        bad(if path == "." { "" } else { &path }, e.into_inner().to_string())
    })?;
    for (name, v) in &cfg.tolerances {
        if !TOLERANCE_DEFAULTS.iter().any(|(k, _)| k == name) {
            return Err(bad(&format!("tolerances.{name}"), "unknown tolerance"));
        }
        if !(v.is_finite() && *v > 0.0) {
            return Err(bad(&format!("tolerances.{name}"), "must be positive"));
        }
    }
    for (k, v) in TOLERANCE_DEFAULTS {
        cfg.tolerances.entry(k.to_string()).or_insert(*v);
    }
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    fn validate(&self) -> Result<()> {
        if self.n < 3 {
            return Err(bad("n", format!("dimension {} must be at least 3", self.n)));
        }
        if !(self.phi_max > 0.0 && self.phi_max < std::f64::consts::PI) {
            return Err(bad("phi_max", "cap angle must lie in (0, pi)"));
        }
        if self.node_count < 20 {
            return Err(bad("node_count", "at least 20 nodes are needed"));
        }
        if !(self.grading_exponent >= 1.0 && self.grading_exponent.is_finite()) {
            return Err(bad("grading_exponent", "must be at least 1"));
        }
        if self.eigen_count < 2 {
            return Err(bad("eigen_count", "at least 2 eigenpairs are needed"));
        }
        if !(self.cutoff > 0.0 && self.cutoff.is_finite()) {
            return Err(bad("cutoff", "must be positive"));
        }
        if !(self.epsilon_res >= 0.0 && self.epsilon_res < 0.5) {
            return Err(bad("epsilon_res", "must lie in [0, 0.5)"));
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(bad("mu", "must be positive"));
        }
        if self.mu > self.cutoff {
            return Err(bad("mu", format!("exceeds the cutoff {}", self.cutoff)));
        }
        if let Some(i) = self.c.iter().position(|x| !x.is_finite()) {
            return Err(bad(&format!("c[{i}]"), "must be finite"));
        }
        if !(self.t0 >= 0.0 && self.t0.is_finite()) {
            return Err(bad("t0", "must be non-negative"));
        }
        if let Some(t) = self.t_max {
            if !(t >= self.t0 + 4.0 && t.is_finite()) {
                return Err(bad("t_max", "must exceed t0 by at least 4"));
            }
        }
        if !(self.dt > 0.0 && self.dt <= 0.25) {
            return Err(bad("dt", "must lie in (0, 0.25]"));
        }
        if !(self.oracle_length >= 4.0 && self.oracle_length.is_finite()) {
            return Err(bad("oracle_length", "must be at least 4"));
        }
        if let Some(g) = &self.gammas {
            if g.is_empty() {
                return Err(bad("gammas", "must not be empty"));
            }
            if let Some(i) = g.iter().position(|x| !(*x > 0.0 && x.is_finite())) {
                return Err(bad(&format!("gammas[{i}]"), "must be positive"));
            }
        }
        Ok(())
    }

    pub fn tolerance(&self, name: &str) -> f64 {
        self.tolerances
            .get(name)
            .copied()
            .or_else(|| TOLERANCE_DEFAULTS.iter().find(|(k, _)| *k == name).map(|(_, v)| *v))
            .expect("known tolerance name")
    }

    /// The effective configuration without the location fields, which do not
    /// influence results.
    pub fn canonical(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        let m = v.as_object_mut().expect("object");
        m.remove("output_dir");
        m.remove("cache_dir");
        v
    }

    pub fn hash(&self) -> String {
        hash_value(&self.canonical())
    }

    /// Hash over the subset of fields a stage depends on.
    pub fn stage_key(&self, stage: &str, fields: &[&str]) -> String {
        let full = self.canonical();
        let mut sub = serde_json::Map::new();
        sub.insert("stage".into(), stage.into());
        sub.insert("version".into(), env!("CARGO_PKG_VERSION").into());
        for f in fields {
            sub.insert(f.to_string(), full[*f].clone());
        }
        hash_value(&serde_json::Value::Object(sub))
    }
}

/// SHA-256 of the compact serialization; serde_json maps are ordered, so equal
/// values hash equally.
pub fn hash_value(v: &serde_json::Value) -> String {
    let text = serde_json::to_string(v).expect("value serializes");
    hex(&Sha256::digest(text.as_bytes()))
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_config(r#"{"n": 3, "phi_max": 1.5707963, "mu": 6.5, "c": [0.1]}"#).unwrap();
        assert_eq!(c.node_count, 400);
        assert_eq!(c.eigen_count, 8);
        assert_eq!(c.tolerance("picard"), 1e-10);
        assert_eq!(c.tolerances.len(), TOLERANCE_DEFAULTS.len());
        assert_eq!(c.c, vec![0.1]);
    }

    #[test]
    fn invalid_configs_name_the_key() {
        let cases = [
            (r#"{"n": 2, "phi_max": 1.0, "mu": 6.5}"#, "n"),
            (r#"{"n": 3, "phi_max": 1.0, "mu": 6.5, "colour": 1}"#, ""),
            (r#"{"n": 3, "phi_max": "wide", "mu": 6.5}"#, "phi_max"),
            (r#"{"n": 3, "phi_max": 1.0, "mu": 6.5, "tolerances": {"foo": 1.0}}"#, "tolerances.foo"),
            (r#"{"n": 3, "phi_max": 1.0, "mu": 6.5, "c": [0.1, 1e400]}"#, "c[1]"),
            (r#"{"n": 3, "phi_max": 4.0, "mu": 6.5}"#, "phi_max"),
        ];
        for (text, key) in cases {
            match parse_config(text) {
                Err(Error::Parse { path, message }) => {
                    if !key.is_empty() {
                        assert!(path == key || message.contains(key), "{text}: {path} {message}");
                    } else {
                        assert!(message.contains("colour"), "{message}");
                    }
                }
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn hash_ignores_locations_and_tracks_parameters() {
        let a = parse_config(r#"{"n": 3, "phi_max": 1.0, "mu": 6.5}"#).unwrap();
        let mut b = a.clone();
        b.output_dir = Some("elsewhere".into());
        assert_eq!(a.hash(), b.hash());
        b.node_count = 401;
        assert_ne!(a.hash(), b.hash());
        assert_ne!(a.stage_key("profile", &["node_count"]), b.stage_key("profile", &["node_count"]));
        assert_eq!(a.stage_key("spectrum", &["mu"]), b.stage_key("spectrum", &["mu"]));
    }
}
