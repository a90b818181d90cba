//! Sliding-window LSTM classifier and its streaming scorer.

mod lstm;
mod stream;
mod train;

pub use lstm::{
    bce_loss, dropout_mask, forward_with_mask, lstm_backward, lstm_forward, ForwardCache,
    LstmWeights, PROB_CLAMP,
};
pub use stream::{stream_predict, StreamScorer};
pub use train::{predict_batch, train_lstm, AdamState, EpochRecord, LstmTraining};

use serde::{Deserialize, Serialize};

use crate::features::{DEFAULT_WINDOW, NUM_FEATURES, SCHEMA_VERSION};

#[derive(Debug, thiserror::Error)]
pub enum TemporalError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite input")]
    NonFiniteInput,
    #[error("training sequences contain a single class")]
    SingleClass,
    #[error("no training sequences")]
    EmptyDataset,
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("model was trained behind preprocessor {expected}, got {found}")]
    HashMismatch { expected: String, found: String },
    #[error("model file: {0}")]
    Persist(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LstmParams {
    pub input_dim: usize,
    pub hidden: usize,
    pub fc1_dim: usize,
    pub dropout_rate: f64,
    pub window: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for LstmParams {
    fn default() -> Self {
        Self {
            input_dim: NUM_FEATURES,
            hidden: 64,
            fc1_dim: 32,
            dropout_rate: 0.35,
            window: DEFAULT_WINDOW,
            learning_rate: 1e-3,
            batch_size: 64,
            max_epochs: 30,
            seed: 0,
        }
    }
}

impl LstmParams {
    pub fn validate(&self) -> Result<(), TemporalError> {
        let ok = self.input_dim > 0
            && self.hidden > 0
            && self.fc1_dim > 0
            && self.window > 0
            && self.batch_size > 0
            && self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && (0.0..1.0).contains(&self.dropout_rate);
        if ok {
            Ok(())
        } else {
            Err(TemporalError::InvalidParams(format!("{self:?}")))
        }
    }
}

pub const MODEL_FORMAT: &str = "proctor-lstm";
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmModel {
    pub format: String,
    pub format_version: u32,
    pub schema_version: u32,
    pub params: LstmParams,
    pub preprocessor_hash: Option<String>,
    pub threshold: Option<f64>,
    pub weights: LstmWeights,
}

impl LstmModel {
    pub fn new(params: LstmParams, weights: LstmWeights) -> Self {
        Self {
            format: MODEL_FORMAT.into(),
            format_version: MODEL_FORMAT_VERSION,
            schema_version: SCHEMA_VERSION,
            params,
            preprocessor_hash: None,
            threshold: None,
            weights,
        }
    }

    /// Inference-mode probability for one scaled window.
    pub fn predict(&self, window: &[Vec<f64>]) -> Result<f64, TemporalError> {
        Ok(forward_with_mask(&self.params, &self.weights, window, None)?.p)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, TemporalError> {
        let m: Self =
            serde_json::from_str(text).map_err(|e| TemporalError::Persist(e.to_string()))?;
        if m.format != MODEL_FORMAT || m.format_version != MODEL_FORMAT_VERSION {
            return Err(TemporalError::Persist(format!(
                "unsupported model format {} v{}",
                m.format, m.format_version
            )));
        }
        if m.schema_version != SCHEMA_VERSION {
            return Err(TemporalError::SchemaMismatch(format!(
                "model schema_version {} differs from {SCHEMA_VERSION}",
                m.schema_version
            )));
        }
        m.params.validate()?;
        if !m.weights.shapes_match(&m.params) {
            return Err(TemporalError::Persist("tensor shapes do not match params".into()));
        }
        if !m.weights.all_finite() {
            return Err(TemporalError::Persist("non-finite weight".into()));
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<(), TemporalError> {
        std::fs::write(path.as_ref(), self.to_json())
            .map_err(|e| TemporalError::Persist(format!("{}: {e}", path.as_ref().display())))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, TemporalError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| TemporalError::Persist(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_json(&text)
    }
}
