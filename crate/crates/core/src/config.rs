//! Run configuration: a TOML file with one table per stage, overridable by
//! `section.key=value` pairs and `HGTREE_SECTION__KEY` environment variables.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generation::SamplerConfig;
use crate::metrics::{DEFAULT_EVAL_POINTS, DEFAULT_JSD_GRID};
use crate::model::ModelConfig;
use crate::ordering::OrderStrategy;
use crate::training::TrainConfig;
use crate::tree::DEFAULT_EPS_CONNECT;

pub const ENV_PREFIX: &str = "HGTREE_";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub quantizer: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    #[default]
    Elm,
    Pine,
    Sapling,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataKind {
    /// Single trees, unconditional.
    #[default]
    Tree,
    /// Ten-stage growth streams.
    Growth,
    /// Single trees with a sampled point-cloud prefix.
    Conditioned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub profile: Profile,
    pub kind: DataKind,
    pub seed: u64,
    pub count: usize,
    /// 0 means the profile default.
    pub n_max: usize,
    pub eps_connect: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { profile: Profile::Elm, kind: DataKind::Tree, seed: 0, count: 100, n_max: 0, eps_connect: DEFAULT_EPS_CONNECT }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub points_per_tree: usize,
    pub jsd_grid: usize,
    /// Derived from the quantizer's widest coordinate bin when absent.
    pub connect_eps: Option<f64>,
    /// Derived from training-set statistics when absent.
    pub delta: Option<f64>,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { points_per_tree: DEFAULT_EVAL_POINTS, jsd_grid: DEFAULT_JSD_GRID, connect_eps: None, delta: None, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub ordering: OrderStrategy,
    pub paths: Paths,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub sampler: SamplerConfig,
    pub eval: EvalConfig,
}

/// Parses `raw` as a TOML literal, falling back to a bare string.
fn literal(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Usage(format!("bad config key {key:?}")));
    }
    let (last, head) = parts.split_last().expect("nonempty split");
    let mut cur = table;
    for p in head {
        cur = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Usage(format!("config key {key:?}: {p} is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Every dotted key path of leaf values in `t`.
fn leaf_keys(t: &toml::Table, prefix: &str, out: &mut Vec<String>) {
    for (k, v) in t {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            toml::Value::Table(sub) if !sub.is_empty() => leaf_keys(sub, &key, out),
            _ => out.push(key),
        }
    }
}

impl RunConfig {
    /// Builds a config from optional file text, then `overrides` in order.
    pub fn from_parts(text: Option<&str>, overrides: &[(String, String)]) -> Result<Self> {
        let mut table: toml::Table = match text {
            Some(t) => toml::from_str(t).map_err(|e| Error::Usage(format!("config file: {e}")))?,
            None => toml::Table::new(),
        };
        for (k, v) in overrides {
            set_path(&mut table, k, literal(v))?;
        }
        let cfg: RunConfig =
            table.clone().try_into().map_err(|e: toml::de::Error| Error::Usage(format!("config: {e}")))?;
        // Reject keys that deserialization silently ignored.
        let known = toml::Table::try_from(&cfg).map_err(|e| Error::Usage(format!("config: {e}")))?;
        let mut want = Vec::new();
        leaf_keys(&table, "", &mut want);
        for key in want {
            let mut cur = Some(&known);
            let parts: Vec<&str> = key.split('.').collect();
            for (i, p) in parts.iter().enumerate() {
                let v = cur.and_then(|t| t.get(*p));
                cur = if i + 1 < parts.len() { v.and_then(|v| v.as_table()) } else { None };
                if v.is_none() {
                    return Err(Error::Usage(format!("unknown config field {key:?}")));
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// File (if any), then environment, then explicit `--set` overrides.
    pub fn load(path: Option<&Path>, sets: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => Some(
                std::fs::read_to_string(p).map_err(|e| Error::Usage(format!("config file {}: {e}", p.display())))?,
            ),
            None => None,
        };
        let mut overrides = env_overrides(std::env::vars());
        for s in sets {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| Error::Usage(format!("override {s:?} is not key=value")))?;
            overrides.push((k.trim().to_string(), v.trim().to_string()));
        }
        Self::from_parts(text.as_deref(), &overrides)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.sampler.validate()?;
        if self.eval.points_per_tree == 0 || self.eval.jsd_grid == 0 {
            return Err(Error::Usage("eval.points_per_tree and eval.jsd_grid must be positive".into()));
        }
        if !(self.data.eps_connect > 0.0) {
            return Err(Error::Usage("data.eps_connect must be positive".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

/// `HGTREE_TRAIN__EPOCHS=3` becomes `train.epochs=3`.
pub fn env_overrides(vars: impl Iterator<Item = (String, String)>) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = vars
        .filter_map(|(k, v)| {
            let rest = k.strip_prefix(ENV_PREFIX)?;
            (!rest.is_empty() && rest != "LOG").then(|| (rest.to_lowercase().replace("__", "."), v))
        })
        .collect();
    out.sort();
    out
}
