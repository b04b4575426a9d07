//! Experiment configuration: a session template, named variants patched
//! onto it, an optional sweep axis, and replication/seed settings.
//!
//! The file is JSON. Every field has a default, so `{}` is a valid config
//! describing one streamloading session with the default parameters.
//!
//! ```json
//! {
//!   "session": { "channel": { "kind": "synthetic", "mean_rate_bps": 2e7 } },
//!   "variants": [
//!     { "name": "streamloading" },
//!     { "name": "streaming", "set": { "model": "streaming", "scheduler": "nova", "selector": "nova" } }
//!   ],
//!   "sweep": { "axis": "users", "values": [10, 20, 30] },
//!   "replications": 5,
//!   "base_seed": 1,
//!   "output": "results/fig4"
//! }
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::engine::SessionConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Users,
    BetaSl,
    /// Seconds; `null` means unlimited.
    EnhPrefetchLimit,
    BufferLimit,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Users => "users",
            SweepAxis::BetaSl => "beta_sl",
            SweepAxis::EnhPrefetchLimit => "enh_prefetch_limit",
            SweepAxis::BufferLimit => "buffer_limit",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub axis: SweepAxis,
    pub values: Vec<Option<f64>>,
}

/// A named patch applied to the session template. `set` is merged into the
/// template's JSON form key by key, recursively.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    pub name: String,
    #[serde(default = "empty_patch")]
    pub set: Value,
}

fn empty_patch() -> Value {
    Value::Object(Default::default())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub session: SessionConfig,
    /// Empty means one variant, `default`, equal to the template.
    pub variants: Vec<Variant>,
    pub sweep: Option<Sweep>,
    pub replications: usize,
    /// Replication `r` runs with seed `base_seed + r`.
    pub base_seed: u64,
    pub output: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            session: SessionConfig::default(),
            variants: Vec::new(),
            sweep: None,
            replications: 1,
            base_seed: 0,
            output: PathBuf::from("results"),
        }
    }
}

/// One fully resolved session of an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionJob {
    pub variant: usize,
    pub point: usize,
    pub replication: usize,
    pub config: SessionConfig,
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn variant_names(&self) -> Vec<String> {
        if self.variants.is_empty() {
            vec!["default".to_string()]
        } else {
            self.variants.iter().map(|v| v.name.clone()).collect()
        }
    }

    /// Sweep values; a single `None` point when there is no sweep.
    pub fn points(&self) -> Vec<Option<f64>> {
        match &self.sweep {
            Some(s) => s.values.clone(),
            None => vec![None],
        }
    }

    /// Template with variant `v` applied.
    pub fn variant_session(&self, v: usize) -> Result<SessionConfig> {
        let Some(variant) = self.variants.get(v) else {
            return Ok(self.session.clone());
        };
        let mut base = serde_json::to_value(&self.session)?;
        merge(&mut base, &variant.set);
        serde_json::from_value(base)
            .map_err(|e| Error::Config(format!("variant {}: {e}", variant.name)))
    }

    fn apply_point(&self, cfg: &mut SessionConfig, value: Option<f64>) -> Result<()> {
        let Some(sweep) = &self.sweep else {
            return Ok(());
        };
        let need = |v: Option<f64>| {
            v.ok_or_else(|| Error::Config(format!("sweep {}: null value", sweep.axis.name())))
        };
        match sweep.axis {
            SweepAxis::Users => {
                let n = need(value)?;
                if !(n >= 1.0 && n.fract() == 0.0) {
                    return Err(Error::Config(format!(
                        "sweep users: {n} is not a positive integer"
                    )));
                }
                cfg.users = n as usize;
            }
            SweepAxis::BetaSl => cfg.params.beta_sl = need(value)?,
            SweepAxis::EnhPrefetchLimit => cfg.params.enh_prefetch_limit_s = value,
            SweepAxis::BufferLimit => cfg.params.buffer_limit_s = need(value)?,
        }
        Ok(())
    }

    /// Every session in canonical order: variant, sweep point, replication.
    pub fn jobs(&self) -> Result<Vec<SessionJob>> {
        let points = self.points();
        let mut out = Vec::new();
        for variant in 0..self.variant_names().len() {
            let template = self.variant_session(variant)?;
            for (point, &value) in points.iter().enumerate() {
                let mut cfg = template.clone();
                self.apply_point(&mut cfg, value)?;
                for replication in 0..self.replications {
                    let mut config = cfg.clone();
                    config.seed = self.base_seed.wrapping_add(replication as u64);
                    out.push(SessionJob {
                        variant,
                        point,
                        replication,
                        config,
                    });
                }
            }
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::Config("replications must be >= 1".into()));
        }
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return Err(Error::Config("sweep values must be non-empty".into()));
            }
        }
        let names = self.variant_names();
        for (i, name) in names.iter().enumerate() {
            let ok = !name.is_empty()
                && name
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'));
            if !ok {
                return Err(Error::Config(format!(
                    "variant name {name:?}: use [A-Za-z0-9_.-]"
                )));
            }
            if names[..i].contains(name) {
                return Err(Error::Config(format!("duplicate variant name {name:?}")));
            }
        }
        for v in 0..names.len() {
            let template = self.variant_session(v)?;
            for value in self.points() {
                let mut cfg = template.clone();
                self.apply_point(&mut cfg, value)?;
                cfg.validate().map_err(|e| match e {
                    Error::Config(m) => Error::Config(format!("variant {}: {m}", names[v])),
                    other => Error::Config(format!("variant {}: {other}", names[v])),
                })?;
            }
        }
        Ok(())
    }
}

fn merge(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, p) => *b = p.clone(),
    }
}

/// First 16 hex digits of the SHA-256 of the session's JSON form, with the
/// seed zeroed so that replications share a hash.
pub fn config_hash(cfg: &SessionConfig) -> String {
    let mut c = cfg.clone();
    c.seed = 0;
    let json = serde_json::to_vec(&c).expect("session config serializes");
    let digest = Sha256::digest(&json);
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}
