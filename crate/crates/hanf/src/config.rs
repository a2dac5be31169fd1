//! Experiment configuration: a single JSON document with defaults for
//! every knob. Validation reports the offending field by name.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bandit::UnsampledRule;
use crate::error::{HanfError, Result};
use crate::fedsim::{BanditParams, StageParams};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetConfig {
    /// Class-conditional Gaussian blobs.
    Synthetic {
        classes: usize,
        height: usize,
        width: usize,
        samples: usize,
        noise_sigma: f64,
    },
    /// IDX image/label pairs (optionally gzipped), with an optional test
    /// pair, per-split sample limits, and a downsampling hook.
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        #[serde(default)]
        test_images: Option<PathBuf>,
        #[serde(default)]
        test_labels: Option<PathBuf>,
        #[serde(default)]
        downsample_to: Option<usize>,
        #[serde(default)]
        train_limit: Option<usize>,
        #[serde(default)]
        test_limit: Option<usize>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum PartitionConfig {
    Iid,
    LabelSkew { fraction: f64, label: usize },
}

fn default_search_rounds() -> usize {
    120
}
fn default_search_batch() -> usize {
    64
}
fn default_cells() -> usize {
    8
}
fn default_nodes() -> usize {
    5
}
fn default_channels() -> usize {
    8
}
fn default_space() -> usize {
    120
}
fn default_exploit_rounds() -> usize {
    10
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SearchStageConfig {
    #[serde(default = "default_search_rounds")]
    pub rounds: usize,
    #[serde(default = "default_search_batch")]
    pub batch_size: usize,
    #[serde(default = "default_cells")]
    pub cells: usize,
    #[serde(default = "default_nodes")]
    pub nodes: usize,
    #[serde(default = "default_channels")]
    pub channels: usize,
    #[serde(default = "default_space")]
    pub space_size: usize,
    #[serde(default = "default_exploit_rounds")]
    pub nas_rounds: usize,
}

impl Default for SearchStageConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults")
    }
}

fn default_eval_rounds() -> usize {
    1500
}
fn default_eval_batch() -> usize {
    96
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvalStageConfig {
    #[serde(default = "default_eval_rounds")]
    pub rounds: usize,
    #[serde(default = "default_eval_batch")]
    pub batch_size: usize,
    /// Defaults to twice the search depth.
    #[serde(default)]
    pub cells: Option<usize>,
    /// Defaults to the search width.
    #[serde(default)]
    pub channels: Option<usize>,
    #[serde(default = "default_space")]
    pub space_size: usize,
    #[serde(default = "default_exploit_rounds")]
    pub exploit_rounds: usize,
}

impl Default for EvalStageConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults")
    }
}

fn default_alpha() -> f64 {
    0.1
}
fn default_beta() -> f64 {
    4.0
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BanditConfig {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default)]
    pub kappa_max: Option<usize>,
    /// Ablation switch: grow unsampled rewards instead of decaying them.
    #[serde(default)]
    pub literal_unsampled_update: bool,
}

impl Default for BanditConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults")
    }
}

fn default_clients() -> usize {
    2
}
fn default_train_fraction() -> f64 {
    0.5
}
fn default_clip() -> f64 {
    5.0
}
fn default_k() -> usize {
    2
}
fn default_participation() -> f64 {
    1.0
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("hanf-out")
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    #[serde(default = "default_clients")]
    pub clients: usize,
    #[serde(default = "default_partition")]
    pub partition: PartitionConfig,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub search: SearchStageConfig,
    #[serde(default)]
    pub eval: EvalStageConfig,
    #[serde(default)]
    pub bandit: BanditConfig,
    #[serde(default = "default_clip")]
    pub clip_norm: f64,
    #[serde(default = "default_k")]
    pub genotype_k: usize,
    #[serde(default = "default_participation")]
    pub participation: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

fn default_partition() -> PartitionConfig {
    PartitionConfig::Iid
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: ExperimentConfig = serde_json::from_str(text)?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            HanfError::config("config", format!("cannot read {}: {e}", path.display()))
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |value: usize, field: &str| -> Result<()> {
            if value == 0 {
                return Err(HanfError::config(field, "must be positive"));
            }
            Ok(())
        };
        match &self.dataset {
            DatasetConfig::Synthetic { classes, height, width, samples, noise_sigma } => {
                positive(*classes, "dataset.classes")?;
                positive(*height, "dataset.height")?;
                positive(*width, "dataset.width")?;
                positive(*samples, "dataset.samples")?;
                if !noise_sigma.is_finite() || *noise_sigma < 0.0 {
                    return Err(HanfError::config("dataset.noise_sigma", "must be a non-negative real"));
                }
            }
            DatasetConfig::Idx { train_images, train_labels, test_images, test_labels, .. } => {
                for (field, path) in [
                    ("dataset.train_images", Some(train_images)),
                    ("dataset.train_labels", Some(train_labels)),
                    ("dataset.test_images", test_images.as_ref()),
                    ("dataset.test_labels", test_labels.as_ref()),
                ] {
                    if let Some(p) = path {
                        if !p.exists() {
                            return Err(HanfError::config(field, format!("file not found: {}", p.display())));
                        }
                    }
                }
                if test_images.is_some() != test_labels.is_some() {
                    return Err(HanfError::config(
                        "dataset.test_labels",
                        "test images and labels must be given together",
                    ));
                }
            }
        }
        positive(self.clients, "clients")?;
        if let PartitionConfig::LabelSkew { fraction, .. } = self.partition {
            if !(fraction > 0.0 && fraction < 1.0) {
                return Err(HanfError::config("partition.fraction", "must lie in (0, 1)"));
            }
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(HanfError::config("train_fraction", "must lie in (0, 1)"));
        }
        positive(self.search.rounds, "search.rounds")?;
        positive(self.search.batch_size, "search.batch_size")?;
        positive(self.search.nas_rounds, "search.nas_rounds")?;
        positive(self.search.space_size, "search.space_size")?;
        if self.search.cells < 2 {
            return Err(HanfError::config("search.cells", "need at least 2 cells"));
        }
        if self.search.nodes < 3 {
            return Err(HanfError::config("search.nodes", "need at least 3 nodes"));
        }
        positive(self.search.channels, "search.channels")?;
        positive(self.eval.rounds, "eval.rounds")?;
        positive(self.eval.batch_size, "eval.batch_size")?;
        positive(self.eval.exploit_rounds, "eval.exploit_rounds")?;
        positive(self.eval.space_size, "eval.space_size")?;
        if let Some(cells) = self.eval.cells {
            if cells < 2 {
                return Err(HanfError::config("eval.cells", "need at least 2 cells"));
            }
        }
        if !(self.bandit.alpha > 0.0 && self.bandit.alpha < 1.0) {
            return Err(HanfError::config("bandit.alpha", "must lie in (0, 1)"));
        }
        if !(self.bandit.beta > 0.0 && self.bandit.beta.is_finite()) {
            return Err(HanfError::config("bandit.beta", "must be a positive real"));
        }
        if !(self.clip_norm > 0.0 && self.clip_norm.is_finite()) {
            return Err(HanfError::config("clip_norm", "must be a positive real"));
        }
        if self.genotype_k == 0 || self.genotype_k > 2 {
            return Err(HanfError::config("genotype_k", "must be 1 or 2"));
        }
        if !(self.participation > 0.0 && self.participation <= 1.0) {
            return Err(HanfError::config("participation", "must lie in (0, 1]"));
        }
        Ok(())
    }

    pub fn bandit_params(&self) -> BanditParams {
        BanditParams {
            alpha: self.bandit.alpha,
            beta: self.bandit.beta,
            kappa_max: self.bandit.kappa_max,
            unsampled_rule: if self.bandit.literal_unsampled_update {
                UnsampledRule::Literal
            } else {
                UnsampledRule::Decay
            },
        }
    }

    pub fn search_stage_params(&self) -> StageParams {
        StageParams {
            rounds: self.search.rounds,
            exploit_rounds: self.search.nas_rounds,
            batch_size: self.search.batch_size,
            clip_norm: self.clip_norm,
            genotype_k: self.genotype_k,
            participation: self.participation,
            bandit: self.bandit_params(),
        }
    }

    pub fn eval_stage_params(&self) -> StageParams {
        StageParams {
            rounds: self.eval.rounds,
            exploit_rounds: self.eval.exploit_rounds,
            batch_size: self.eval.batch_size,
            clip_norm: self.clip_norm,
            genotype_k: self.genotype_k,
            participation: self.participation,
            bandit: self.bandit_params(),
        }
    }

    /// Evaluation-network depth: configured, or twice the search depth.
    pub fn eval_cells(&self) -> usize {
        self.eval.cells.unwrap_or(2 * self.search.cells)
    }

    pub fn eval_channels(&self) -> usize {
        self.eval.channels.unwrap_or(self.search.channels)
    }
}
