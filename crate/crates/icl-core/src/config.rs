//! Run configuration: a version-tagged JSON tree covering data source,
//! model, optimizer, curriculum, ranking, validation, and decoding.
//! Unknown keys are rejected everywhere.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::curriculum::Strategy;
use crate::data::{SynthTask, TokenizeMode};
use crate::decode::DecodeConfig;
use crate::error::{IclError, Result};
use crate::loss::{Criterion, Weighting};
use crate::metrics::Direction;
use crate::model::ModelConfig;
use crate::ranking::RankStrategy;

pub const CONFIG_FORMAT: &str = "icl-config-v1";
pub const COMPARE_FORMAT: &str = "icl-compare-v1";

fn default_format() -> String {
    CONFIG_FORMAT.to_string()
}
fn default_seed() -> u64 {
    42
}
fn default_max_epochs() -> usize {
    50
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_format")]
    pub format: String,
    /// Master seed for model init and training-time randomness (shuffles,
    /// random-strategy draws). The corpus has its own seed under `data`.
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Cap for the all-improving corner case the patience rule never stops.
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub optim: OptimConfig,
    #[serde(default)]
    pub curriculum: CurriculumConfig,
    #[serde(default)]
    pub ranking: RankingConfig,
    #[serde(default)]
    pub validation: ValidationConfig,
    #[serde(default)]
    pub decode: DecodeConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jsonl: Option<JsonlConfig>,
    #[serde(default = "default_mode")]
    pub mode: TokenizeMode,
}

fn default_mode() -> TokenizeMode {
    TokenizeMode::Whitespace
}

fn default_alphabet() -> usize {
    12
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub task: SynthTask,
    #[serde(default = "default_alphabet")]
    pub alphabet_size: usize,
    pub len_range: (usize, usize),
    pub train: usize,
    pub val: usize,
    #[serde(default)]
    pub test: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JsonlConfig {
    pub train: PathBuf,
    pub val: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimConfig {
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
}

fn default_lr() -> f64 {
    1e-3
}
fn default_batch() -> usize {
    32
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr: default_lr(),
            batch_size: default_batch(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    None,
    Icl,
    Tcl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Epoch,
    Batch,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurriculumConfig {
    #[serde(default = "default_algorithm")]
    pub algorithm: Algorithm,
    #[serde(default = "default_criterion")]
    pub criterion: Criterion,
    /// Defaults by data source: 0.5 for synthetic tasks, 0.6 for corpora
    /// (guideline for single- vs multi-sentence outputs).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_start: Option<f64>,
    /// Defaults alongside p_start: 0.5 synthetic, 0.3 corpora.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<f64>,
    #[serde(default = "default_strategy")]
    pub strategy: Strategy,
    #[serde(default = "default_patience")]
    pub patience_limit: u32,
    /// Curriculum window for the token-wise schedule, in optimizer steps;
    /// 0 derives two epochs' worth.
    #[serde(default)]
    pub tcl_steps: u64,
    #[serde(default = "default_f0")]
    pub f0: f64,
    #[serde(default = "default_granularity")]
    pub random_granularity: Granularity,
    #[serde(default = "default_weighting")]
    pub weighting: Weighting,
}

fn default_algorithm() -> Algorithm {
    Algorithm::None
}
fn default_criterion() -> Criterion {
    Criterion::Sc
}
fn default_strategy() -> Strategy {
    Strategy::Decrease
}
fn default_patience() -> u32 {
    3
}
fn default_f0() -> f64 {
    0.1
}
fn default_granularity() -> Granularity {
    Granularity::Epoch
}
fn default_weighting() -> Weighting {
    Weighting::Hard
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        CurriculumConfig {
            algorithm: default_algorithm(),
            criterion: default_criterion(),
            p_start: None,
            stride: None,
            strategy: default_strategy(),
            patience_limit: default_patience(),
            tcl_steps: 0,
            f0: default_f0(),
            random_granularity: default_granularity(),
            weighting: default_weighting(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RankingConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<RankStrategy>,
    #[serde(default = "default_sorted_epochs")]
    pub sorted_epochs: usize,
}

fn default_sorted_epochs() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValMetric {
    Loss,
    Perplexity,
    Rouge1F1,
    Rouge2F1,
    RougelF1,
    Bleu1,
    Bleu2,
    Bleu3,
    Bleu4,
    ExactMatch,
}

impl ValMetric {
    pub fn name(&self) -> &'static str {
        match self {
            ValMetric::Loss => "loss",
            ValMetric::Perplexity => "perplexity",
            ValMetric::Rouge1F1 => "rouge1_f1",
            ValMetric::Rouge2F1 => "rouge2_f1",
            ValMetric::RougelF1 => "rougel_f1",
            ValMetric::Bleu1 => "bleu1",
            ValMetric::Bleu2 => "bleu2",
            ValMetric::Bleu3 => "bleu3",
            ValMetric::Bleu4 => "bleu4",
            ValMetric::ExactMatch => "exact_match",
        }
    }

    pub fn default_direction(&self) -> Direction {
        match self {
            ValMetric::Loss | ValMetric::Perplexity => Direction::LowerBetter,
            _ => Direction::HigherBetter,
        }
    }

    /// Does computing this metric require decoding the validation set?
    pub fn needs_generation(&self) -> bool {
        !matches!(self, ValMetric::Loss | ValMetric::Perplexity)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub every_epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub every_steps: Option<u64>,
    #[serde(default = "default_metric")]
    pub metric: ValMetric,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Direction>,
}

fn default_metric() -> ValMetric {
    ValMetric::Loss
}

impl Default for ValidationConfig {
    fn default() -> Self {
        ValidationConfig {
            every_epochs: Some(1),
            every_steps: None,
            metric: default_metric(),
            direction: None,
        }
    }
}

/// Resolved validation cadence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cadence {
    Epochs(usize),
    Steps(u64),
}

impl ValidationConfig {
    pub fn cadence(&self) -> Result<Cadence> {
        match (self.every_epochs, self.every_steps) {
            (Some(_), Some(_)) => Err(IclError::Config(
                "set either validation.every_epochs or validation.every_steps, not both"
                    .to_string(),
            )),
            (Some(k), None) if k >= 1 => Ok(Cadence::Epochs(k)),
            (None, Some(m)) if m >= 1 => Ok(Cadence::Steps(m)),
            (None, None) => Ok(Cadence::Epochs(1)),
            _ => Err(IclError::Config("validation cadence must be >= 1".to_string())),
        }
    }

    pub fn direction(&self) -> Direction {
        self.direction.unwrap_or_else(|| self.metric.default_direction())
    }
}

impl RunConfig {
    pub fn from_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != CONFIG_FORMAT {
            return Err(IclError::Config(format!(
                "config format must be {:?}, got {:?}",
                CONFIG_FORMAT, self.format
            )));
        }
        match (&self.data.synthetic, &self.data.jsonl) {
            (Some(_), Some(_)) => {
                return Err(IclError::Config(
                    "data: set either synthetic or jsonl, not both".to_string(),
                ))
            }
            (None, None) => {
                return Err(IclError::Config(
                    "data: one of synthetic or jsonl is required".to_string(),
                ))
            }
            _ => {}
        }
        if let Some(s) = &self.data.synthetic {
            if s.train < 1 || s.val < 1 {
                return Err(IclError::Config(
                    "synthetic train and val counts must be >= 1".to_string(),
                ));
            }
        }
        if self.max_epochs < 1 {
            return Err(IclError::Config("max_epochs must be >= 1".to_string()));
        }
        if !(self.optim.lr > 0.0) {
            return Err(IclError::Config("optim.lr must be positive".to_string()));
        }
        if self.optim.batch_size < 1 {
            return Err(IclError::Config("optim.batch_size must be >= 1".to_string()));
        }
        for (name, v) in [
            ("curriculum.p_start", self.curriculum.p_start),
            ("curriculum.stride", self.curriculum.stride),
        ] {
            if let Some(v) = v {
                if !(0.0..=1.0).contains(&v) {
                    return Err(IclError::Config(format!("{} must be in [0, 1]", name)));
                }
            }
        }
        if !(self.curriculum.f0 > 0.0 && self.curriculum.f0 <= 1.0) {
            return Err(IclError::Config("curriculum.f0 must be in (0, 1]".to_string()));
        }
        self.validation.cadence()?;
        self.decode.validate().map_err(|e| IclError::Config(e.to_string()))?;
        Ok(())
    }

    /// p_start and stride with the per-source defaults applied.
    pub fn resolved_schedule(&self) -> (f64, f64) {
        let synthetic = self.data.synthetic.is_some();
        let p_start = self
            .curriculum
            .p_start
            .unwrap_or(if synthetic { 0.5 } else { 0.6 });
        let stride = self
            .curriculum
            .stride
            .unwrap_or(if synthetic { 0.5 } else { 0.3 });
        (p_start, stride)
    }
}

/// Variant matrix: one base config, a seed list, and per-variant
/// curriculum/ranking overrides.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    pub format: String,
    pub base: RunConfig,
    pub seeds: Vec<u64>,
    pub variants: Vec<VariantSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curriculum: Option<CurriculumConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ranking: Option<RankingConfig>,
}

impl CompareConfig {
    pub fn from_str(text: &str) -> Result<Self> {
        let cfg: CompareConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != COMPARE_FORMAT {
            return Err(IclError::Config(format!(
                "compare format must be {:?}, got {:?}",
                COMPARE_FORMAT, self.format
            )));
        }
        if self.seeds.is_empty() {
            return Err(IclError::Config("seeds must be non-empty".to_string()));
        }
        if self.variants.is_empty() {
            return Err(IclError::Config("variants must be non-empty".to_string()));
        }
        let mut names: Vec<&str> = self.variants.iter().map(|v| v.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.variants.len() {
            return Err(IclError::Config("variant names must be unique".to_string()));
        }
        self.base.validate()
    }

    /// The run config for one (variant, seed) cell.
    pub fn cell_config(&self, variant: &VariantSpec, seed: u64) -> RunConfig {
        let mut cfg = self.base.clone();
        cfg.seed = seed;
        if let Some(c) = &variant.curriculum {
            cfg.curriculum = c.clone();
        }
        if let Some(r) = &variant.ranking {
            cfg.ranking = r.clone();
        }
        cfg
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_json() -> String {
        r#"{
            "format": "icl-config-v1",
            "data": {"synthetic": {"task": "reverse", "len_range": [2, 5], "train": 10, "val": 4}}
        }"#
        .to_string()
    }

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = RunConfig::from_str(&minimal_json()).unwrap();
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.optim.batch_size, 32);
        assert_eq!(cfg.curriculum.algorithm, Algorithm::None);
        assert_eq!(cfg.validation.metric, ValMetric::Loss);
        assert_eq!(cfg.resolved_schedule(), (0.5, 0.5));
        assert_eq!(cfg.validation.cadence().unwrap(), Cadence::Epochs(1));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = r#"{
            "format": "icl-config-v1",
            "data": {"synthetic": {"task": "reverse", "len_range": [2, 5], "train": 10, "val": 4}},
            "no_such_key": 1
        }"#;
        assert!(RunConfig::from_str(text).is_err());
        let nested = r#"{
            "format": "icl-config-v1",
            "data": {"synthetic": {"task": "reverse", "len_range": [2, 5], "train": 10, "val": 4}},
            "optim": {"lr": 0.001, "bogus": true}
        }"#;
        assert!(RunConfig::from_str(nested).is_err());
    }

    #[test]
    fn format_tag_is_enforced() {
        let text = minimal_json().replace("icl-config-v1", "icl-config-v0");
        let err = RunConfig::from_str(&text).unwrap_err().to_string();
        assert!(err.contains("icl-config-v1"), "{err}");
    }

    #[test]
    fn data_source_is_exclusive() {
        let text = r#"{
            "format": "icl-config-v1",
            "data": {
                "synthetic": {"task": "reverse", "len_range": [2, 5], "train": 10, "val": 4},
                "jsonl": {"train": "a.jsonl", "val": "b.jsonl"}
            }
        }"#;
        assert!(RunConfig::from_str(text).is_err());
        let empty = r#"{"format": "icl-config-v1", "data": {}}"#;
        assert!(RunConfig::from_str(empty).is_err());
    }

    #[test]
    fn cadence_is_exclusive() {
        let mut cfg = RunConfig::from_str(&minimal_json()).unwrap();
        cfg.validation.every_steps = Some(100);
        assert!(cfg.validation.cadence().is_err());
        cfg.validation.every_epochs = None;
        assert_eq!(cfg.validation.cadence().unwrap(), Cadence::Steps(100));
    }

    #[test]
    fn jsonl_source_defaults_to_corpus_schedule() {
        let text = r#"{
            "format": "icl-config-v1",
            "data": {"jsonl": {"train": "t.jsonl", "val": "v.jsonl"}}
        }"#;
        let cfg = RunConfig::from_str(text).unwrap();
        assert_eq!(cfg.resolved_schedule(), (0.6, 0.3));
    }

    #[test]
    fn compare_config_round_trip_and_cells() {
        let base = RunConfig::from_str(&minimal_json()).unwrap();
        let cmp = CompareConfig {
            format: COMPARE_FORMAT.to_string(),
            base,
            seeds: vec![1, 2],
            variants: vec![
                VariantSpec {
                    name: "wo_cl".to_string(),
                    curriculum: None,
                    ranking: None,
                },
                VariantSpec {
                    name: "icl_sc".to_string(),
                    curriculum: Some(CurriculumConfig {
                        algorithm: Algorithm::Icl,
                        ..CurriculumConfig::default()
                    }),
                    ranking: None,
                },
            ],
        };
        cmp.validate().unwrap();
        let cell = cmp.cell_config(&cmp.variants[1], 2);
        assert_eq!(cell.seed, 2);
        assert_eq!(cell.curriculum.algorithm, Algorithm::Icl);
        let text = serde_json::to_string(&cmp).unwrap();
        let back = CompareConfig::from_str(&text).unwrap();
        assert_eq!(back.variants.len(), 2);
    }
}
