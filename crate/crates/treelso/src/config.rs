//! Run configuration: a TOML file whose every key is optional. Unknown keys
//! are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use treelso_core::eval::FeatureMap;
use treelso_core::lso::{AnchorSampling, LsoConfig, RetrainMode};
use treelso_core::{GbtConfig, QaeConfig};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Output root; `TREELSO_OUT` and then `treelso-out` when unset.
    pub out_dir: Option<PathBuf>,
    pub task: TaskSettings,
    pub qae: QaeSettings,
    pub gbt: GbtSettings,
    pub lso: LsoSettings,
    pub eval: EvalSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSettings {
    /// Training set size.
    pub n: usize,
    /// Training faces have smile degree at most this.
    pub max_degree: f64,
    pub seed: u64,
}

impl Default for TaskSettings {
    fn default() -> Self {
        TaskSettings {
            n: 500,
            max_degree: 2.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QaeSettings {
    pub hidden: usize,
    pub latent_dim: usize,
    pub codebook_size: usize,
    pub beta: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Seeds initialization and pretraining batches.
    pub seed: u64,
    pub pretrain_epochs: usize,
}

impl Default for QaeSettings {
    fn default() -> Self {
        let c = QaeConfig::default();
        QaeSettings {
            hidden: c.hidden,
            latent_dim: c.latent_dim,
            codebook_size: c.codebook_size,
            beta: c.beta,
            learning_rate: c.learning_rate,
            batch_size: c.batch_size,
            seed: c.seed,
            pretrain_epochs: 60,
        }
    }
}

impl QaeSettings {
    pub fn to_config(&self) -> QaeConfig {
        QaeConfig {
            hidden: self.hidden,
            latent_dim: self.latent_dim,
            codebook_size: self.codebook_size,
            beta: self.beta,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            seed: self.seed,
            ..QaeConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbtSettings {
    pub n_trees: usize,
    pub interaction_depth: usize,
    pub min_samples_leaf: usize,
    pub max_leaves: usize,
    pub shrinkage: f64,
    pub seed: u64,
}

impl Default for GbtSettings {
    fn default() -> Self {
        let c = GbtConfig::default();
        GbtSettings {
            n_trees: c.n_trees,
            interaction_depth: c.interaction_depth,
            min_samples_leaf: c.min_samples_leaf,
            max_leaves: c.max_leaves,
            shrinkage: c.shrinkage,
            seed: c.seed,
        }
    }
}

impl GbtSettings {
    pub fn to_config(&self) -> GbtConfig {
        GbtConfig {
            n_trees: self.n_trees,
            interaction_depth: self.interaction_depth,
            min_samples_leaf: self.min_samples_leaf,
            max_leaves: self.max_leaves,
            shrinkage: self.shrinkage,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum RetrainSetting {
    Weighted,
    Uniform,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum AnchorSetting {
    Uniform,
    Weighted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LsoSettings {
    pub query_budget: usize,
    pub retrain_every: usize,
    pub free_vars: usize,
    pub weight_k: f64,
    pub seed: u64,
    pub finetune_epochs: usize,
    pub retrain: RetrainSetting,
    pub anchor: AnchorSetting,
}

impl Default for LsoSettings {
    fn default() -> Self {
        let c = LsoConfig::default();
        LsoSettings {
            query_budget: c.query_budget,
            retrain_every: c.retrain_every,
            free_vars: c.free_vars,
            weight_k: c.weight_k,
            seed: c.seed,
            finetune_epochs: c.finetune_epochs,
            retrain: RetrainSetting::Weighted,
            anchor: AnchorSetting::Uniform,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    /// `flatten` or `downsample4`.
    pub feature_map: String,
    /// Size of the high-smile reference set for the FID-like score.
    pub reference_n: usize,
    /// Reference faces have degree in `[reference_min_degree, 5]`.
    pub reference_min_degree: f64,
    pub reference_seed: u64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            feature_map: FeatureMap::Downsample4.name().to_owned(),
            reference_n: 500,
            reference_min_degree: 3.0,
            reference_seed: 7919,
        }
    }
}

impl EvalSettings {
    pub fn feature_map(&self) -> Result<FeatureMap> {
        FeatureMap::from_name(&self.feature_map)
            .ok_or_else(|| CliError::Usage(format!("unknown feature map `{}`", self.feature_map)))
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Usage(m) => CliError::Usage(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    /// Unknown keys and ill-typed values are usage errors.
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Usage(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn lso_config(&self) -> LsoConfig {
        let s = &self.lso;
        LsoConfig {
            query_budget: s.query_budget,
            retrain_every: s.retrain_every,
            free_vars: s.free_vars,
            weight_k: s.weight_k,
            seed: s.seed,
            finetune_epochs: s.finetune_epochs,
            retrain: match s.retrain {
                RetrainSetting::Weighted => RetrainMode::Weighted,
                RetrainSetting::Uniform => RetrainMode::Uniform,
                RetrainSetting::None => RetrainMode::Disabled,
            },
            anchor: match s.anchor {
                AnchorSetting::Uniform => AnchorSampling::Uniform,
                AnchorSetting::Weighted => AnchorSampling::Weighted,
            },
            surrogate: self.gbt.to_config(),
        }
    }

    /// Checks everything that can be checked without data.
    pub fn validate(&self) -> Result<()> {
        if self.task.n == 0 {
            return Err(CliError::Usage("task.n must be at least 1".into()));
        }
        if !(0.0..=treelso_core::task::MAX_DEGREE).contains(&self.task.max_degree) {
            return Err(CliError::Usage("task.max_degree must lie in [0, 5]".into()));
        }
        let qae = self.qae.to_config();
        qae.validate()?;
        self.lso_config().validate(qae.num_latents())?;
        self.eval.feature_map()?;
        Ok(())
    }

    /// Sets every seed to `seed`.
    pub fn reseed(&mut self, seed: u64) {
        self.task.seed = seed;
        self.qae.seed = seed;
        self.lso.seed = seed;
    }

    pub fn out_root(&self) -> PathBuf {
        self.out_dir
            .clone()
            .or_else(|| std::env::var_os("TREELSO_OUT").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("treelso-out"))
    }
}
