//! Run configuration: one TOML file with sections `[data]`, `[model]`,
//! `[loss_weights]`, `[optimizer]` and `[schedule]`. Every field has a
//! default, so an empty file is a valid configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::SyntheticConfig;
use crate::losses::{AdversarialKind, LossWeights};
use crate::model::ModelConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Training manifest; when absent the synthetic generator is used.
    pub manifest: Option<PathBuf>,
    /// Evaluation manifest (manifest mode). Without it, and without a
    /// holdout, evaluation reuses the training set.
    pub test_manifest: Option<PathBuf>,
    /// Attribute whose `holdout_values` form the test split.
    pub holdout_attribute: Option<String>,
    pub holdout_values: Vec<usize>,
    pub synthetic: SyntheticConfig,
    /// Seed of the separately generated synthetic test set.
    pub test_seed: u64,
    pub test_count_per_combination: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            test_manifest: None,
            holdout_attribute: None,
            holdout_values: Vec::new(),
            synthetic: SyntheticConfig::default(),
            test_seed: 1007,
            test_count_per_combination: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub name: String,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Learning rate for classifier pretraining and joint-mode updates.
    pub classifier_learning_rate: f64,
    /// Only `constant` is implemented.
    pub lr_schedule: String,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            name: "adam".into(),
            learning_rate: 1e-4,
            beta1: 0.5,
            beta2: 0.999,
            epsilon: 1e-8,
            classifier_learning_rate: 1e-4,
            lr_schedule: "constant".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierMode {
    /// Pretrain on real images, then keep fixed.
    #[default]
    PretrainFrozen,
    /// Pretrain, then keep updating on real images once per step.
    Joint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShuffleMode {
    #[default]
    Permutation,
    WithReplacement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub batch_size: usize,
    /// Generator steps.
    pub steps: u64,
    pub critic_steps_per_gen: usize,
    pub classifier_mode: ClassifierMode,
    pub shuffle_mode: ShuffleMode,
    pub adversarial: AdversarialKind,
    pub seed: u64,
    pub checkpoint_every: u64,
    pub log_every: u64,
    pub pretrain_steps: u64,
    pub pretrain_target_accuracy: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            steps: 10_000,
            critic_steps_per_gen: 5,
            classifier_mode: ClassifierMode::PretrainFrozen,
            shuffle_mode: ShuffleMode::Permutation,
            adversarial: AdversarialKind::WassersteinGp,
            seed: 0,
            checkpoint_every: 1000,
            log_every: 10,
            pretrain_steps: 2000,
            pretrain_target_accuracy: 0.99,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub loss_weights: LossWeights,
    pub optimizer: OptimizerConfig,
    pub schedule: ScheduleConfig,
}

impl RunConfig {
    /// Every invariant violation, one message each.
    pub fn problems(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let s = &self.schedule;
        if s.batch_size < 2 {
            errs.push(format!(
                "schedule.batch_size must be >= 2: shuffling needs at least two samples (got {})",
                s.batch_size
            ));
        }
        if s.critic_steps_per_gen < 1 {
            errs.push("schedule.critic_steps_per_gen must be >= 1".into());
        }
        if s.checkpoint_every < 1 {
            errs.push("schedule.checkpoint_every must be >= 1".into());
        }
        if s.log_every < 1 {
            errs.push("schedule.log_every must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&s.pretrain_target_accuracy) {
            errs.push("schedule.pretrain_target_accuracy must be in [0, 1]".into());
        }
        errs.extend(self.loss_weights.problems());
        let o = &self.optimizer;
        if o.name != "adam" {
            errs.push(format!("optimizer.name '{}' unsupported (only 'adam')", o.name));
        }
        if o.lr_schedule != "constant" {
            errs.push(format!("optimizer.lr_schedule '{}' unsupported (only 'constant')", o.lr_schedule));
        }
        for (n, v) in [
            ("learning_rate", o.learning_rate),
            ("classifier_learning_rate", o.classifier_learning_rate),
            ("epsilon", o.epsilon),
        ] {
            if !(v.is_finite() && v > 0.0) {
                errs.push(format!("optimizer.{n} must be > 0 (got {v})"));
            }
        }
        for (n, v) in [("beta1", o.beta1), ("beta2", o.beta2)] {
            if !(0.0..1.0).contains(&v) {
                errs.push(format!("optimizer.{n} must be in [0, 1) (got {v})"));
            }
        }
        for e in [self.model.validate().err()].into_iter().flatten() {
            match e {
                Error::ConfigList(list) => errs.extend(list),
                Error::Config(m) => errs.push(m),
                other => errs.push(other.to_string()),
            }
        }
        let d = &self.data;
        if d.manifest.is_none() {
            if let Err(e) = d.synthetic.validate() {
                match e {
                    Error::ConfigList(list) => errs.extend(list.into_iter().map(|m| format!("data.synthetic: {m}"))),
                    Error::Config(m) => errs.push(format!("data.synthetic: {m}")),
                    other => errs.push(format!("data.synthetic: {other}")),
                }
            }
            if d.synthetic.image_size != self.model.image_size {
                errs.push(format!(
                    "data.synthetic.image_size {} differs from model.image_size {}",
                    d.synthetic.image_size, self.model.image_size
                ));
            }
            if d.test_count_per_combination < 1 {
                errs.push("data.test_count_per_combination must be >= 1".into());
            }
        }
        if d.holdout_attribute.is_some() && d.holdout_values.is_empty() {
            errs.push("data.holdout_values must be nonempty when holdout_attribute is set".into());
        }
        errs
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = self.problems();
        match errs.len() {
            0 => Ok(()),
            1 => Err(Error::Config(errs.remove(0))),
            _ => Err(Error::ConfigList(errs)),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }
}

/// Parses and validates configuration text, filling defaults.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Reads, parses and validates a configuration file.
pub fn validate_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}
