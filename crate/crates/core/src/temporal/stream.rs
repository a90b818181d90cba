use super::{LstmModel, TemporalError};
use crate::features::{Preprocessor, WindowBuffer};

/// Real-time scorer for one session: keeps the last `w` unscaled frame
/// vectors and scores the normalized window once the buffer is full.
#[derive(Debug, Clone)]
pub struct StreamScorer<'a> {
    model: &'a LstmModel,
    preprocessor: &'a Preprocessor,
    buffer: WindowBuffer<Vec<Option<f64>>>,
}

impl<'a> StreamScorer<'a> {
    /// Fails if the model pins a different preprocessor than the one given.
    pub fn new(model: &'a LstmModel, preprocessor: &'a Preprocessor) -> Result<Self, TemporalError> {
        if model.params.input_dim != preprocessor.feature_names.len() {
            return Err(TemporalError::SchemaMismatch(format!(
                "model takes {} features, preprocessor produces {}",
                model.params.input_dim,
                preprocessor.feature_names.len()
            )));
        }
        if let Some(pinned) = &model.preprocessor_hash {
            let actual = preprocessor.hash();
            if *pinned != actual {
                return Err(TemporalError::HashMismatch {
                    expected: pinned.clone(),
                    found: actual,
                });
            }
        }
        Ok(Self {
            model,
            preprocessor,
            buffer: WindowBuffer::new(model.params.window),
        })
    }

    pub fn window(&self) -> usize {
        self.buffer.capacity()
    }

    pub fn buffered(&self) -> usize {
        self.buffer.len()
    }

    pub fn reset(&mut self) {
        self.buffer.clear();
    }

    /// Pushes one frame and returns `P_cheat` once `w` frames are buffered.
    pub fn push(&mut self, frame: &[Option<f64>]) -> Result<Option<f64>, TemporalError> {
        if frame.len() != self.model.params.input_dim {
            return Err(TemporalError::SchemaMismatch(format!(
                "frame has {} features, expected {}",
                frame.len(),
                self.model.params.input_dim
            )));
        }
        self.buffer.push(frame.to_vec());
        if !self.buffer.is_full() {
            return Ok(None);
        }
        let window = self
            .buffer
            .iter()
            .map(|f| self.preprocessor.transform(f))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| TemporalError::SchemaMismatch(e.to_string()))?;
        self.model.predict(&window).map(Some)
    }
}

pub fn stream_predict(
    scorer: &mut StreamScorer<'_>,
    frame: &[Option<f64>],
) -> Result<Option<f64>, TemporalError> {
    scorer.push(frame)
}
