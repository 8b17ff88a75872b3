//! JSON experiment configuration.
//!
//! One `ExperimentSpec` file drives every CLI command; each command
//! reads the sections it needs and validates the full grid before any
//! training starts.

use std::fs;
use std::path::{Path, PathBuf};

use normlab_core::{GammaTarget, NormKind, NormScheme, WeightDecayConfig};
use serde::Deserialize;

use crate::dataset::SyntheticSpec;
use crate::derive_seed;
use crate::error::{HarnessError, HarnessResult};
use crate::model::ModelSpec;
use crate::train::{SamplerKind, TrainConfig};

fn default_channels() -> usize {
    4
}
fn default_spatial() -> usize {
    8
}
fn default_lr() -> f64 {
    0.1
}
fn default_momentum() -> f64 {
    0.9
}
fn default_rho() -> f64 {
    normlab_core::moments::DEFAULT_RHO
}
fn default_epsilon() -> f64 {
    normlab_core::layers::DEFAULT_EPSILON
}
fn default_gamma_target() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub n_classes: usize,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
    #[serde(default = "default_channels")]
    pub channels: usize,
    #[serde(default = "default_spatial")]
    pub height: usize,
    #[serde(default = "default_spatial")]
    pub width: usize,
    pub separation: f64,
    pub noise: f64,
    /// Fixed data seed; derived from the master seed when absent.
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub block_widths: Vec<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            block_widths: vec![16, 16],
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WdSection {
    pub delta: f64,
    pub gamma_target: f64,
    pub norm_params: bool,
    pub weights: bool,
}

impl Default for WdSection {
    fn default() -> Self {
        Self {
            delta: 0.0,
            gamma_target: default_gamma_target(),
            norm_params: false,
            weights: false,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    pub epochs: usize,
    /// Scheme string: `batch`, `ghost:B'`, `group:G`, `batchgroup:E:G`.
    pub scheme: String,
    /// Inference example weight attached to the scheme.
    #[serde(default)]
    pub alpha: f64,
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub wd: WdSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectMetric {
    Accuracy,
    Xent,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Example weights evaluated on validation during training.
    pub alpha_grid: Vec<f64>,
    /// Metric used to pick the tuned alpha on validation.
    pub select_metric: SelectMetric,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            alpha_grid: vec![0.0],
            select_metric: SelectMetric::Accuracy,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TightnessSection {
    pub group_size: usize,
    pub magnitudes: Vec<f64>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

impl Default for TightnessSection {
    fn default() -> Self {
        Self {
            group_size: 32,
            magnitudes: (-3..=6).map(|e| 10f64.powi(e)).collect(),
            epsilon: default_epsilon(),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    /// Example-weight grid for retroactive sweeps and tuning.
    pub alphas: Vec<f64>,
    pub ghost_sizes: Vec<usize>,
    pub batch_sizes: Vec<usize>,
    pub schemes: Vec<String>,
    pub classes_per_batch: Option<usize>,
    /// Also run an i.i.d. control per scheme in the non-i.i.d. command.
    pub iid_control: Option<bool>,
    pub tightness: Option<TightnessSection>,
}

/// Everything a CLI command needs, parsed from one JSON file.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub dataset: DatasetSection,
    #[serde(default)]
    pub model: ModelSection,
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub sweep: SweepSection,
    /// Existing checkpoint directory to evaluate retroactively.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    /// Save the trained model under the output directory.
    #[serde(default)]
    pub save_checkpoint: bool,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl ExperimentSpec {
    pub fn from_path(path: &Path) -> HarnessResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| HarnessError::Input(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
    }

    pub fn from_json(text: &str) -> HarnessResult<Self> {
        serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// Synthetic-data spec with the seed resolved against the master.
    pub fn dataset_spec(&self, master_seed: u64) -> SyntheticSpec {
        let d = &self.dataset;
        SyntheticSpec {
            n_classes: d.n_classes,
            train_per_class: d.train_per_class,
            val_per_class: d.val_per_class,
            test_per_class: d.test_per_class,
            channels: d.channels,
            height: d.height,
            width: d.width,
            separation: d.separation,
            noise: d.noise,
            seed: d.seed.unwrap_or_else(|| derive_seed(master_seed, 0xda7a)),
        }
    }

    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec {
            in_channels: self.dataset.channels,
            height: self.dataset.height,
            width: self.dataset.width,
            block_widths: self.model.block_widths.clone(),
            n_classes: self.dataset.n_classes,
        }
    }

    /// The training scheme with its configured example weight.
    pub fn scheme(&self) -> HarnessResult<NormScheme> {
        parse_scheme(&self.train.scheme, self.train.alpha)
    }

    pub fn weight_decay(&self) -> HarnessResult<WeightDecayConfig> {
        let wd = &self.train.wd;
        let target = GammaTarget::from_config(wd.gamma_target).map_err(HarnessError::from)?;
        WeightDecayConfig::new(wd.delta, target, wd.norm_params, wd.weights)
            .map_err(HarnessError::from)
    }

    /// Builds a training config for one run of a sweep.
    pub fn train_config(
        &self,
        scheme: NormScheme,
        batch_size: usize,
        sampler: SamplerKind,
        seed: u64,
    ) -> HarnessResult<TrainConfig> {
        Ok(TrainConfig {
            batch_size,
            lr: self.train.lr,
            momentum: self.train.momentum,
            epochs: self.train.epochs,
            wd: self.weight_decay()?,
            scheme,
            alpha_eval_grid: self.eval.alpha_grid.clone(),
            rho: self.train.rho,
            epsilon: self.train.epsilon,
            sampler,
            track_ranges: false,
            seed,
        })
    }
}

/// Parses a scheme string and attaches an example weight.
pub fn parse_scheme(text: &str, alpha: f64) -> HarnessResult<NormScheme> {
    let kind: NormKind = text.parse().map_err(HarnessError::from)?;
    NormScheme::new(kind).with_alpha(alpha).map_err(HarnessError::from)
}
