//! Experiment configuration: one JSON document plus `--a.b value` overrides.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::search::SearchGrid;
use crate::dataset::synth::SynthConfig;
use crate::dataset::SplitConfig;
use crate::error::{Error, Result};
use crate::evalkit::EvalConfig;
use crate::models::{Cer, CerConfig, Efm, EfmConfig, Model, ModelKind};
use crate::robustness::{DefenseConfig, TrainingConfig};

pub const EPS_A_GRID: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    /// Label used in result tables and file names.
    pub name: String,
    /// JSON-lines reviews; a synthetic corpus is generated when absent.
    pub path: Option<PathBuf>,
    pub min_reviews_per_user: usize,
    pub rating_scale: u32,
    pub split: SplitConfig,
    pub synth: SynthConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            name: "synth".into(),
            path: None,
            min_reviews_per_user: 10,
            rating_scale: 5,
            split: SplitConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub algo: ModelKind,
    pub efm: EfmConfig,
    pub cer: CerConfig,
}

impl ModelConfig {
    pub fn build(&self, kind: ModelKind) -> Model {
        match kind {
            ModelKind::Efm => Model::Efm(Efm::new(self.efm.clone())),
            ModelKind::Cer => Model::Cer(Cer::new(self.cer.clone())),
        }
    }

    /// Hyperparameters of `kind` only.
    pub fn section(&self, kind: ModelKind) -> Value {
        match kind {
            ModelKind::Efm => serde_json::to_value(&self.efm),
            ModelKind::Cer => serde_json::to_value(&self.cer),
        }
        .expect("serializable model config")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackSection {
    pub eps_a_list: Vec<f64>,
}

impl Default for AttackSection {
    fn default() -> Self {
        Self {
            eps_a_list: EPS_A_GRID.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSpec {
    pub algorithms: Vec<ModelKind>,
    /// Must contain 0, the undefended reference.
    pub lambdas: Vec<f64>,
    pub eps_d_list: Vec<f64>,
    pub eps_a_list: Vec<f64>,
    /// Training seeds; each gets its own reference model and bed.
    pub seeds: Vec<u64>,
    /// Tune learning rate and weight decay on the reference model first.
    pub tune: bool,
    pub search: SearchGrid,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            algorithms: vec![ModelKind::Efm, ModelKind::Cer],
            lambdas: vec![0.0, 0.01, 0.05, 0.1, 0.5, 0.9],
            eps_d_list: vec![0.25, 0.5, 0.75, 1.0],
            eps_a_list: EPS_A_GRID.to_vec(),
            seeds: vec![0],
            tune: false,
            search: SearchGrid::default(),
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: &str| {
            Err(Error::Config {
                key: format!("sweep.{key}"),
                msg: msg.into(),
            })
        };
        if self.algorithms.is_empty() {
            return bad("algorithms", "no algorithm selected");
        }
        if !self.lambdas.contains(&0.0) {
            return bad("lambdas", "0 (the undefended reference) is required");
        }
        if self.seeds.is_empty() {
            return bad("seeds", "no seed given");
        }
        if self.lambdas.iter().any(|&l| l > 0.0) && self.eps_d_list.is_empty() {
            return bad("eps_d_list", "defended cells need at least one eps_d");
        }
        for &l in &self.lambdas {
            DefenseConfig { lambda: l, eps_d: 0.0 }.validate()?;
        }
        for &e in &self.eps_d_list {
            DefenseConfig { lambda: 0.0, eps_d: e }.validate()?;
        }
        for &e in &self.eps_a_list {
            crate::robustness::AttackConfig::new(e)?;
        }
        Ok(())
    }

    /// `(lambda, eps_d)` cells in run order, reference first.
    pub fn defense_cells(&self) -> Vec<DefenseConfig> {
        let mut cells = vec![DefenseConfig::vanilla()];
        for &lambda in self.lambdas.iter().filter(|&&l| l != 0.0) {
            for &eps_d in &self.eps_d_list {
                cells.push(DefenseConfig { lambda, eps_d });
            }
        }
        cells
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub training: TrainingConfig,
    pub defense: DefenseConfig,
    pub attack: AttackSection,
    pub eval: EvalConfig,
    pub sweep: SweepSpec,
}

impl ExperimentConfig {
    /// Deserialises `value`, naming the offending key on failure.
    pub fn from_value(value: Value) -> Result<Self> {
        let cfg: Self = serde_path_to_error::deserialize(value).map_err(|e| Error::Config {
            key: e.path().to_string(),
            msg: e.inner().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text)?;
        Self::from_value(value)
    }

    /// Reads `path` (or starts from defaults) and applies `overrides`.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut value = match path {
            Some(p) => {
                let bytes = fs::read(p).map_err(|e| Error::Config {
                    key: "--config".into(),
                    msg: format!("{}: {e}", p.display()),
                })?;
                serde_json::from_slice(&bytes)?
            }
            None => Value::Object(Default::default()),
        };
        for (key, raw) in overrides {
            set_path(&mut value, key, parse_override(raw))?;
        }
        Self::from_value(value)
    }

    pub fn validate(&self) -> Result<()> {
        self.training.validate()?;
        self.defense.validate()?;
        self.sweep.validate()?;
        for &e in &self.attack.eps_a_list {
            crate::robustness::AttackConfig::new(e)?;
        }
        if self.dataset.min_reviews_per_user == 0 {
            return Err(Error::Config {
                key: "dataset.min_reviews_per_user".into(),
                msg: "must be at least 1".into(),
            });
        }
        if self.dataset.rating_scale < 2 {
            return Err(Error::Config {
                key: "dataset.rating_scale".into(),
                msg: "must be at least 2".into(),
            });
        }
        Ok(())
    }
}

/// JSON when it parses, otherwise a plain string.
pub fn parse_override(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Sets `a.b.c` in `root`, creating intermediate objects.
pub fn set_path(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config {
            key: key.into(),
            msg: "empty path segment".into(),
        });
    }
    let mut node = root;
    for (i, part) in parts.iter().enumerate() {
        if !node.is_object() {
            if node.is_null() {
                *node = Value::Object(Default::default());
            } else {
                return Err(Error::Config {
                    key: parts[..i].join("."),
                    msg: "is not a section".into(),
                });
            }
        }
        let map = node.as_object_mut().expect("object");
        if i + 1 == parts.len() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        node = map.entry(part.to_string()).or_insert(Value::Null);
    }
    unreachable!("non-empty path")
}

/// Splits `--a.b value` pairs.
pub fn parse_override_args(args: &[String]) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(flag) = it.next() {
        let key = flag.strip_prefix("--").ok_or_else(|| Error::Config {
            key: flag.clone(),
            msg: "expected --section.key".into(),
        })?;
        if let Some((k, v)) = key.split_once('=') {
            out.push((k.to_string(), v.to_string()));
            continue;
        }
        let value = it.next().ok_or_else(|| Error::Config {
            key: key.to_string(),
            msg: "missing value".into(),
        })?;
        out.push((key.to_string(), value.clone()));
    }
    Ok(out)
}
