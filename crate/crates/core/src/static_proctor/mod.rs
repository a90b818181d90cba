//! Single-frame classifier: borderline-SMOTE rebalancing and boosted trees.

mod gbdt;
mod smote;

pub use gbdt::{
    sigmoid, train_gbdt, train_gbdt_with_history, GbdtModel, GbdtParams, GbdtTraining, Node,
    RegressionTree, MODEL_FORMAT, MODEL_FORMAT_VERSION,
};
pub use smote::{borderline_smote, SmoteNotice, SmoteOutcome};

pub use crate::metrics::{select_threshold, ThresholdChoice};

/// SMOTE neighbourhood size used by the training pipeline.
pub const DEFAULT_SMOTE_K: usize = 5;

#[derive(Debug, thiserror::Error)]
pub enum StaticError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("training labels contain a single class")]
    SingleClass,
    #[error("minority class has {minority} rows, need more than k = {k}")]
    TooFewMinority { minority: usize, k: usize },
    #[error("non-finite feature value")]
    NonFiniteFeature,
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("model file: {0}")]
    Persist(String),
}

impl GbdtModel {
    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<(), StaticError> {
        std::fs::write(path.as_ref(), self.to_json())
            .map_err(|e| StaticError::Persist(format!("{}: {e}", path.as_ref().display())))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, StaticError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| StaticError::Persist(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_json(&text)
    }
}
