//! TOML run configuration with dotted `--set` overrides.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use dopplerkit_core::flow::FlowType;
use dopplerkit_core::metrics::{default_lambda_grid, DEFAULT_LAMBDA};
use dopplerkit_core::net::{NetworkConfig, TrainConfig};
use dopplerkit_core::synth::DatasetConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub simulate: SimulateConfig,
    pub network: NetworkConfig,
    pub train: TrainSection,
    pub eval: EvalConfig,
    pub measure: MeasureConfig,
    pub ablate: AblateConfig,
    pub sweep: SweepConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub out_dir: PathBuf,
    pub n_cases: usize,
    pub seed: u64,
    /// Flow-type fractions; empty means uniform over all types.
    pub type_mix: BTreeMap<FlowType, f64>,
    pub split_ratios: [f64; 3],
    pub n_repeats: usize,
    pub split_seed: u64,
    pub dataset: DatasetConfig,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("data"),
            n_cases: 500,
            seed: 0,
            type_mix: BTreeMap::new(),
            split_ratios: [0.8, 0.1, 0.1],
            n_repeats: 5,
            split_seed: 0,
            dataset: DatasetConfig {
                rows: 64,
                cols: 128,
                ..DatasetConfig::default()
            },
        }
    }
}

/// Training hyperparameters sit directly in `[train]` next to the paths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub model_seed: u64,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    /// Mini-batch shuffling seed.
    pub seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let p = TrainConfig::default();
        Self {
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("run"),
            model_seed: 0,
            lr: p.lr,
            batch_size: p.batch_size,
            max_epochs: p.max_epochs,
            early_stop_patience: p.early_stop_patience,
            seed: p.seed,
        }
    }
}

impl TrainSection {
    pub fn params(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            early_stop_patience: self.early_stop_patience,
            seed: self.seed,
        }
    }
}

/// Which cases of a split repeat a command runs on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitPart {
    Train,
    Val,
    #[default]
    Test,
    All,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub data_dir: PathBuf,
    pub checkpoint: PathBuf,
    pub out_dir: PathBuf,
    pub split: SplitPart,
    /// Score the ground-truth masks themselves instead of predictions.
    pub use_gt_masks: bool,
    pub lambda: f64,
    pub lambdas: Vec<f64>,
    pub batch_size: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data"),
            checkpoint: PathBuf::from("run/model.ckpt"),
            out_dir: PathBuf::from("eval"),
            split: SplitPart::Test,
            use_gt_masks: false,
            lambda: DEFAULT_LAMBDA,
            lambdas: default_lambda_grid(),
            batch_size: 16,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeasureConfig {
    pub mask: PathBuf,
    pub sidecar: PathBuf,
    /// CSV destination; the report is printed to standard output either way.
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateConfig {
    pub data_dir: PathBuf,
    pub checkpoint_aa: PathBuf,
    pub checkpoint_plain: PathBuf,
    pub out_dir: PathBuf,
    pub split: SplitPart,
    pub shifts: Vec<i64>,
    pub batch_size: usize,
}

impl Default for AblateConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data"),
            checkpoint_aa: PathBuf::from("run_aa/model.ckpt"),
            checkpoint_plain: PathBuf::from("run_plain/model.ckpt"),
            out_dir: PathBuf::from("ablate"),
            split: SplitPart::Test,
            shifts: vec![-16, -8, -4, 0, 4, 8, 16],
            batch_size: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// `ed.json` written by `eval`.
    pub ed_file: PathBuf,
    pub out_dir: PathBuf,
    pub lambdas: Vec<f64>,
    /// Restrict to these flow types; empty keeps all.
    pub flow_types: Vec<FlowType>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            ed_file: PathBuf::from("eval/ed.json"),
            out_dir: PathBuf::from("sweep"),
            lambdas: default_lambda_grid(),
            flow_types: Vec::new(),
        }
    }
}

impl RunConfig {
    /// Parses `text`, then applies `key=value` overrides. Values are read
    /// as TOML when possible and as bare strings otherwise.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut value: toml::Value = text
            .parse::<toml::Table>()
            .map(toml::Value::Table)
            .map_err(|e| CliError::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        value
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text, overrides)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Writes the effective configuration as `config.toml` in `dir`.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        let path = dir.join("config.toml");
        fs::write(&path, self.to_toml()?).map_err(|e| CliError::io(path, e))
    }
}

fn apply_override(root: &mut toml::Value, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {spec:?} is not key=value")))?;
    let parsed = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let mut node = root;
    for (i, part) in parts.iter().enumerate() {
        let table = node
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override {key:?}: {part:?} is not inside a table")))?;
        if i + 1 == parts.len() {
            table.insert(part.to_string(), parsed);
            return Ok(());
        }
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    Err(CliError::Config(format!("empty override key in {spec:?}")))
}
