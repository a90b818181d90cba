use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use proctor_core::face::FaceConfig;
use proctor_core::pipeline::ExperimentConfig;
use proctor_core::static_proctor::GbdtParams;
use proctor_core::temporal::LstmParams;

/// Settings file layout. Every section is optional; flags override it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub face: FaceConfig,
    pub gbdt: GbdtParams,
    pub lstm: LstmParams,
    pub smote_k: Option<usize>,
    pub seed: Option<u64>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("config file {}: {e}", path.display()))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| anyhow::anyhow!("config file {}: {e}", path.display()))?;
        cfg.face
            .validate()
            .map_err(|e| anyhow::anyhow!("config file {}: {e}", path.display()))?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArg {
    /// JSON settings file (face geometry, model parameters, seed).
    #[arg(long, env = "PROCTOR_CONFIG", global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ModelFlags {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub smote_k: Option<usize>,
    #[arg(long)]
    pub n_trees: Option<usize>,
    #[arg(long)]
    pub max_depth: Option<usize>,
    /// Boosting shrinkage.
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub min_samples_leaf: Option<usize>,
    #[arg(long)]
    pub l2_lambda: Option<f64>,
    /// Sliding window length `w`.
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub fc1_dim: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Adam step size for the LSTM.
    #[arg(long)]
    pub lstm_learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

impl ModelFlags {
    pub fn resolve(&self, cfg: &RunConfig) -> ExperimentConfig {
        let base = ExperimentConfig::default();
        let g = cfg.gbdt;
        let l = cfg.lstm;
        ExperimentConfig {
            gbdt: GbdtParams {
                n_trees: self.n_trees.unwrap_or(g.n_trees),
                max_depth: self.max_depth.unwrap_or(g.max_depth),
                learning_rate: self.learning_rate.unwrap_or(g.learning_rate),
                min_samples_leaf: self.min_samples_leaf.unwrap_or(g.min_samples_leaf),
                l2_lambda: self.l2_lambda.unwrap_or(g.l2_lambda),
            },
            lstm: LstmParams {
                window: self.window.unwrap_or(l.window),
                hidden: self.hidden.unwrap_or(l.hidden),
                fc1_dim: self.fc1_dim.unwrap_or(l.fc1_dim),
                dropout_rate: self.dropout.unwrap_or(l.dropout_rate),
                learning_rate: self.lstm_learning_rate.unwrap_or(l.learning_rate),
                batch_size: self.batch_size.unwrap_or(l.batch_size),
                max_epochs: self.epochs.unwrap_or(l.max_epochs),
                ..l
            },
            smote_k: self.smote_k.or(cfg.smote_k).unwrap_or(base.smote_k),
            seed: self.seed.or(cfg.seed).unwrap_or(base.seed),
        }
    }
}
