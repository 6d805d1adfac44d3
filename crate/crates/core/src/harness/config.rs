//! Run configuration: one TOML document per run, optionally patched by
//! `key.path=value` overrides. Defaults < file < overrides.

use std::path::PathBuf;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::bench::BenchConfig;
use crate::error::{Error, Result};
use crate::fbsde::{NetworkConfig, SocProblem, TrainConfig};
use crate::nn::AdamConfig;
use crate::novas::NovasConfig;
use crate::problems::{CartPole, MarketConfig};
use crate::spen::{DatasetConfig, InnerConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Spen,
    Cartpole,
    Portfolio,
    Bench,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Spen => "spen",
            Experiment::Cartpole => "cartpole",
            Experiment::Portfolio => "portfolio",
            Experiment::Bench => "bench",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Fill the wall-time columns; off by default so reruns are byte-identical.
    #[serde(default)]
    pub record_wall_time: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spen: Option<SpenSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cartpole: Option<FbsdeSection<CartPole>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub portfolio: Option<FbsdeSection<MarketConfig>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bench: Option<BenchConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpenSection {
    #[serde(default)]
    pub dataset: DatasetConfig,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub inner: InnerConfig,
    #[serde(default)]
    pub optimizer: AdamConfig,
    #[serde(default)]
    pub eval: SpenEvalConfig,
    /// Save a checkpoint every this many epochs (0: only at the end).
    #[serde(default)]
    pub checkpoint_every: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpenEvalConfig {
    pub sweep: Vec<usize>,
    pub grid_x: usize,
    pub grid_y: usize,
    /// Raw-unit `y` range of the landscape grid.
    pub y_range: [f64; 2],
}

impl Default for SpenEvalConfig {
    fn default() -> Self {
        SpenEvalConfig {
            sweep: vec![1, 2, 5, 10, 20, 50, 100],
            grid_x: 200,
            grid_y: 400,
            y_range: [-2.0 * std::f64::consts::PI, 2.0 * std::f64::consts::PI],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FbsdeSection<P> {
    #[serde(default)]
    pub problem: P,
    #[serde(default)]
    pub network: NetworkConfig,
    pub train: TrainConfig,
    /// NOVAS settings at evaluation time; the training settings if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inference: Option<NovasConfig>,
    #[serde(default)]
    pub eval: FbsdeEvalConfig,
    #[serde(default)]
    pub checkpoint_every: usize,
}

impl<P> FbsdeSection<P> {
    pub fn inference_novas(&self) -> &NovasConfig {
        self.inference.as_ref().unwrap_or(&self.train.novas)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FbsdeEvalConfig {
    pub rollouts: usize,
}

impl Default for FbsdeEvalConfig {
    fn default() -> Self {
        FbsdeEvalConfig { rollouts: 128 }
    }
}

impl RunConfig {
    /// Parse a TOML document, apply `key.path=value` overrides, and
    /// validate. The first schema violation is reported with its key path.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: toml::Value = toml::from_str(text).map_err(|e| Error::Config(format!("config syntax: {e}")))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: RunConfig = from_value(doc)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        let missing = |s: &str| Err(Error::Config(format!("experiment `{s}` needs a [{s}] section")));
        match self.experiment {
            Experiment::Spen => {
                let Some(s) = &self.spen else { return missing("spen") };
                EnergyShape(&s.hidden).validate()?;
                s.inner.validate()?;
                if !s.inner.is_differentiable() {
                    return Err(Error::Config("spen.inner.method: cem cannot be trained through".into()));
                }
                if s.dataset.train == 0 || s.dataset.batch == 0 {
                    return Err(Error::Config("spen.dataset: train and batch must be positive".into()));
                }
                let e = &s.eval;
                if !(e.y_range[0] < e.y_range[1]) || e.grid_y == 0 {
                    return Err(Error::Config("spen.eval: need y_range[0] < y_range[1] and grid_y > 0".into()));
                }
            }
            Experiment::Cartpole => {
                let Some(s) = &self.cartpole else { return missing("cartpole") };
                s.problem.validate()?;
                s.network.check_state_dim(s.problem.state_dim())?;
                validate_fbsde(s)?;
            }
            Experiment::Portfolio => {
                let Some(s) = &self.portfolio else { return missing("portfolio") };
                if s.problem.n_traded >= s.problem.n_stocks {
                    return Err(Error::Config("portfolio.problem: n_traded must be below n_stocks".into()));
                }
                s.network.check_state_dim(s.problem.n_stocks + 1)?;
                validate_fbsde(s)?;
            }
            Experiment::Bench => {
                let b = self.bench_config();
                b.novas.validate()?;
                b.cem.validate()?;
            }
        }
        Ok(())
    }

    pub fn bench_config(&self) -> BenchConfig {
        self.bench.clone().unwrap_or_default()
    }

    /// Canonical TOML of the effective configuration.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Git-style content hash (`sha256("blob <len>\0" ‖ bytes)`) of the
    /// canonical configuration. The output directory does not take part, so
    /// a run moved elsewhere keeps its identity.
    pub fn hash(&self) -> String {
        let placed = RunConfig {
            output_dir: PathBuf::new(),
            ..self.clone()
        };
        content_hash(placed.to_toml().as_bytes())
    }
}

struct EnergyShape<'a>(&'a [usize]);

impl EnergyShape<'_> {
    fn validate(&self) -> Result<()> {
        if self.0.is_empty() || self.0.contains(&0) {
            return Err(Error::Config(format!("spen.hidden: need positive widths, got {:?}", self.0)));
        }
        Ok(())
    }
}

fn validate_fbsde<P>(s: &FbsdeSection<P>) -> Result<()> {
    s.train.novas.validate()?;
    s.inference_novas().validate()?;
    if s.train.batch == 0 || s.eval.rollouts == 0 {
        return Err(Error::Config("train.batch and eval.rollouts must be positive".into()));
    }
    Ok(())
}

pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    format!("{:x}", h.finalize())
}

fn from_value<T: DeserializeOwned>(doc: toml::Value) -> Result<T> {
    serde_path_to_error::deserialize(doc).map_err(|e| {
        let path = e.path().to_string();
        let msg = e.inner().to_string();
        let prefix = if path == "." { String::new() } else { format!("{path}.") };
        match msg.strip_prefix("missing field `").and_then(|m| m.split('`').next()) {
            Some(key) => Error::Config(format!("missing required key `{prefix}{key}`")),
            None => Error::Config(format!("invalid value at `{path}`: {msg}")),
        }
    })
}

/// `a.b.c=value`: the value is read as a TOML literal, or as a bare string
/// if it does not parse as one.
fn apply_override(doc: &mut toml::Value, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{spec}` is not key=value")))?;
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("override `{spec}` has an empty key")));
    }
    let mut node = doc;
    for k in &keys[..keys.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{spec}`: `{k}` is not inside a table")))?;
        node = table
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    let table = node
        .as_table_mut()
        .ok_or_else(|| Error::Config(format!("override `{spec}`: parent is not a table")))?;
    table.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}
