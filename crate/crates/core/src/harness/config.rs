use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::{MemoryBudget, Selection};
use crate::model::{HeadKind, Predictor};
use crate::scenario::ScenarioKind;
use crate::training::{AuxLoss, TrainConfig};

/// When set, relative `output_dir` values are resolved under this directory.
pub const OUTPUT_ROOT_ENV: &str = "LTCIL_OUTPUT_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Synthetic {
        #[serde(default = "default_num_classes")]
        num_classes: usize,
        /// Examples generated per class before the test split.
        #[serde(default = "default_per_class")]
        per_class: usize,
        #[serde(default = "default_feature_dim")]
        feature_dim: usize,
        #[serde(default = "default_spread")]
        cluster_spread: f64,
    },
    Csv {
        path: PathBuf,
        /// Separate test file; when absent the test split is drawn from `path`.
        #[serde(default)]
        test_path: Option<PathBuf>,
    },
}

fn default_num_classes() -> usize {
    20
}
fn default_per_class() -> usize {
    220
}
fn default_feature_dim() -> usize {
    16
}
fn default_spread() -> f64 {
    0.25
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default = "default_n_max")]
    pub n_max: usize,
    #[serde(default = "default_num_tasks")]
    pub num_tasks: usize,
    /// Defaults to half the classes, rounded up.
    #[serde(default)]
    pub base_classes: Option<usize>,
}

fn default_rho() -> f64 {
    0.01
}
fn default_n_max() -> usize {
    200
}
fn default_num_tasks() -> usize {
    5
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryMode {
    #[default]
    PerClass,
    Total,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemorySpec {
    pub mode: MemoryMode,
    pub budget: usize,
    pub selection: Selection,
}

impl Default for MemorySpec {
    fn default() -> Self {
        Self {
            mode: MemoryMode::PerClass,
            budget: 20,
            selection: Selection::Herding,
        }
    }
}

impl MemorySpec {
    pub fn budget(&self) -> MemoryBudget {
        match self.mode {
            MemoryMode::PerClass => MemoryBudget::PerClass(self.budget),
            MemoryMode::Total => MemoryBudget::Total(self.budget),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub hidden: Vec<usize>,
    pub head: HeadKind,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            hidden: vec![64],
            head: HeadKind::Linear,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    #[serde(default = "default_test_per_class")]
    pub test_per_class: usize,
    pub scenario: ScenarioSpec,
    #[serde(default)]
    pub memory: MemorySpec,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub strategy: AuxLoss,
    #[serde(default = "default_true")]
    pub two_stage: bool,
    #[serde(default)]
    pub predictor: Predictor,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Also write `model_final.json` per seed.
    #[serde(default)]
    pub save_model: bool,
}

fn default_test_per_class() -> usize {
    20
}
fn default_true() -> bool {
    true
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

impl ExperimentConfig {
    /// Checks every cross-field constraint. Errors carry the key path.
    pub fn validate(&self) -> Result<()> {
        let s = &self.scenario;
        if !(s.rho > 0.0 && s.rho <= 1.0) {
            return Err(Error::config("scenario.rho", format!("must lie in (0, 1], got {}", s.rho)));
        }
        if s.kind == ScenarioKind::Conventional && s.rho != 1.0 {
            return Err(Error::config(
                "scenario.rho",
                format!("conventional scenarios require rho = 1, got {}", s.rho),
            ));
        }
        if s.num_tasks == 0 {
            return Err(Error::config("scenario.num_tasks", "must be at least 1"));
        }
        if s.n_max == 0 {
            return Err(Error::config("scenario.n_max", "must be at least 1"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "must list at least one seed"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("seeds", "must not repeat"));
        }
        if self.memory.budget == 0 {
            return Err(Error::config("memory.budget", "must be at least 1"));
        }
        if self.model.hidden.contains(&0) {
            return Err(Error::config("model.hidden", "layer widths must be at least 1"));
        }
        if let DatasetSpec::Synthetic {
            num_classes,
            per_class,
            feature_dim,
            cluster_spread,
        } = self.dataset
        {
            if num_classes == 0 {
                return Err(Error::config("dataset.num_classes", "must be at least 1"));
            }
            if feature_dim == 0 {
                return Err(Error::config("dataset.feature_dim", "must be at least 1"));
            }
            if !(cluster_spread > 0.0 && cluster_spread.is_finite()) {
                return Err(Error::config("dataset.cluster_spread", "must be positive"));
            }
            if per_class <= self.test_per_class {
                return Err(Error::config(
                    "dataset.per_class",
                    format!("must exceed test_per_class ({})", self.test_per_class),
                ));
            }
            if let Some(base) = s.base_classes {
                if s.num_tasks > 1 && (base == 0 || base >= num_classes) {
                    return Err(Error::config("scenario.base_classes", format!("must lie in 1..{num_classes}")));
                }
            }
        }
        let mut train = self.train.clone();
        train.aux = self.strategy;
        train.check().map_err(|(field, msg)| {
            let path = match field {
                "temperature" | "lambda_base" => format!("strategy.{field}"),
                _ => format!("train.{field}"),
            };
            Error::config(path, msg)
        })
    }

    /// The training configuration with the strategy's auxiliary loss filled in.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            aux: self.strategy,
            ..self.train.clone()
        }
    }

    /// `output_dir`, resolved under the override root when one is set.
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) if self.output_dir.is_relative() => Path::new(&root).join(&self.output_dir),
            _ => self.output_dir.clone(),
        }
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }
}

/// Parses and validates a configuration document.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::config(if path == "." { "<root>".to_string() } else { path }, e.into_inner().to_string())
    })?;
    cfg.validate()?;
    Ok(cfg)
}

/// Reads, parses and validates a configuration file. Relative CSV paths are
/// resolved against the file's directory.
pub fn parse_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cfg = parse_config_str(&text)?;
    if let DatasetSpec::Csv { path: data, test_path } = &mut cfg.dataset {
        let dir = path.parent().unwrap_or(Path::new(""));
        if data.is_relative() {
            *data = dir.join(&*data);
        }
        if let Some(t) = test_path.as_mut().filter(|t| t.is_relative()) {
            *t = dir.join(&*t);
        }
    }
    Ok(cfg)
}
