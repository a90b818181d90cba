//! Multi-modal exam proctoring engine.
//!
//! Per-frame perception records (face mesh, hand landmarks, item
//! detections, identity embeddings) are turned into a fixed 27-feature
//! vector, then scored by a single-frame boosted-tree model and by a
//! sliding-window LSTM.

pub mod face;
pub mod hand;
pub mod ingest;
pub mod par;
pub mod features;
pub mod metrics;
pub mod static_proctor;
pub mod temporal;
pub mod synth;
pub mod pipeline;
