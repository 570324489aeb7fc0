//! TOML experiment configuration.

use std::path::{Path, PathBuf};

use dualnet_core::autodiff::Activation;
use dualnet_core::optim::AdamConfig;
use dualnet_core::{BenchmarkSpec, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: BenchmarkSpec,
    pub model: ModelSection,
    pub training: TrainingSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub bnn_hidden: Vec<usize>,
    pub bnn_activation: Activation,
    pub vnet_hidden: Vec<usize>,
    pub vnet_activation: Activation,
    pub prior_sigma: f64,
    pub likelihood_sigma: f64,
    pub init_posterior_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub bnn_learning_rate: f64,
    pub vnet_learning_rate: f64,
    pub adam: AdamConfig,
    pub mc_train_samples: usize,
    pub predict_samples: usize,
    pub residual_samples: usize,
    pub eval_interval: usize,
    pub eval_samples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kl_weight: Option<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub plots: bool,
    /// Rows of the training set drawn in the feature pair plot.
    pub pair_plot_points: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            bnn_hidden: t.bnn_hidden,
            bnn_activation: t.bnn_activation,
            vnet_hidden: t.vnet_hidden,
            vnet_activation: t.vnet_activation,
            prior_sigma: t.prior_sigma,
            likelihood_sigma: t.likelihood_sigma,
            init_posterior_sigma: t.init_posterior_sigma,
        }
    }
}

impl Default for TrainingSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            bnn_learning_rate: t.bnn_learning_rate,
            vnet_learning_rate: t.vnet_learning_rate,
            adam: t.adam,
            mc_train_samples: t.mc_train_samples,
            predict_samples: t.predict_samples,
            residual_samples: t.residual_samples,
            eval_interval: t.eval_interval,
            eval_samples: t.eval_samples,
            kl_weight: t.kl_weight,
            seed: t.seed,
        }
    }
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            plots: true,
            pair_plot_points: 300,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml(&text)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.train_config().validate()?;
        Ok(())
    }

    /// Replaces both the data and the training seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.data.features.seed = seed;
        self.training.seed = seed;
        self
    }

    pub fn train_config(&self) -> TrainConfig {
        let (m, t) = (&self.model, &self.training);
        TrainConfig {
            bnn_hidden: m.bnn_hidden.clone(),
            bnn_activation: m.bnn_activation,
            vnet_hidden: m.vnet_hidden.clone(),
            vnet_activation: m.vnet_activation,
            prior_sigma: m.prior_sigma,
            likelihood_sigma: m.likelihood_sigma,
            init_posterior_sigma: m.init_posterior_sigma,
            epochs: t.epochs,
            batch_size: t.batch_size,
            bnn_learning_rate: t.bnn_learning_rate,
            vnet_learning_rate: t.vnet_learning_rate,
            adam: t.adam,
            mc_train_samples: t.mc_train_samples,
            predict_samples: t.predict_samples,
            residual_samples: t.residual_samples,
            eval_interval: t.eval_interval,
            eval_samples: t.eval_samples,
            kl_weight: t.kl_weight,
            seed: t.seed,
        }
    }

    /// SHA-256 over everything that affects results (the output section is
    /// excluded), as lowercase hex.
    pub fn hash(&self) -> String {
        let body = serde_json::to_vec(&(&self.data, &self.model, &self.training))
            .expect("config serializes to JSON");
        format!("{:x}", Sha256::digest(&body))
    }
}
