//! End-to-end plumbing: records to feature rows, and the static vs
//! temporal experiment on a train / validation / test split.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::face::{analyze_face_frame, FaceConfig, FaceGeometryReport};
use crate::features::{assemble, build_sequences, FeatureError, FeatureSchema, LabeledSequence, Preprocessor};
use crate::hand::analyze_hands;
use crate::ingest::{FrameRecord, SessionStream};
use crate::metrics::{evaluate, select_threshold, EvalReport, MetricsError};
use crate::par;
use crate::static_proctor::{borderline_smote, train_gbdt, GbdtModel, GbdtParams, StaticError, DEFAULT_SMOTE_K};
use crate::temporal::{predict_batch, train_lstm, EpochRecord, LstmModel, LstmParams, TemporalError};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Static(#[from] StaticError),
    #[error(transparent)]
    Temporal(#[from] TemporalError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{0}")]
    Data(String),
}

/// Feature rows for one session, one per frame, still unimputed.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionFeatures {
    pub session_id: String,
    pub frame_indices: Vec<u64>,
    pub rows: Vec<Vec<Option<f64>>>,
    pub labels: Vec<Option<bool>>,
    /// Frames whose face payload could not be analyzed; their face
    /// features are left missing.
    pub face_failures: usize,
}

impl SessionFeatures {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Per-session extraction state: holds the enrolled reference embedding.
#[derive(Debug, Clone)]
pub struct FrameExtractor<'a> {
    cfg: &'a FaceConfig,
    schema: FeatureSchema,
    reference: Option<Vec<f64>>,
}

impl<'a> FrameExtractor<'a> {
    pub fn new(cfg: &'a FaceConfig) -> Self {
        Self {
            cfg,
            schema: FeatureSchema::default(),
            reference: None,
        }
    }

    pub fn reference(&self) -> Option<&[f64]> {
        self.reference.as_deref()
    }

    /// The first frame showing exactly one face with an embedding enrolls
    /// the reference identity. Face analysis failures degrade to missing
    /// face features; the `bool` reports whether that happened.
    pub fn extract(&mut self, record: &FrameRecord) -> (FaceGeometryReport, Vec<Option<f64>>, bool) {
        if self.reference.is_none() && record.face_count == 1 {
            self.reference = record.live_embedding.clone();
        }
        let (face, failed) = match analyze_face_frame(record, self.cfg, self.reference.as_deref()) {
            Ok(r) => (r, false),
            Err(_) => (
                FaceGeometryReport {
                    frame_index: record.frame_index,
                    face_count: record.face_count,
                    pose: None,
                    gaze: None,
                    mouth: None,
                    identity: None,
                    single_face_ok: record.face_count == 1,
                },
                true,
            ),
        };
        let hand = analyze_hands(&record.hands, &record.detections);
        let v = assemble(&face, &hand, &self.schema).expect("built-in schema");
        (face, v.values, failed)
    }
}

pub fn extract_session(session: &SessionStream, cfg: &FaceConfig) -> SessionFeatures {
    let mut ex = FrameExtractor::new(cfg);
    let mut out = SessionFeatures {
        session_id: session.session_id.clone(),
        frame_indices: Vec::with_capacity(session.len()),
        rows: Vec::with_capacity(session.len()),
        labels: Vec::with_capacity(session.len()),
        face_failures: 0,
    };
    for f in &session.frames {
        let (_, row, failed) = ex.extract(f);
        out.face_failures += failed as usize;
        out.frame_indices.push(f.frame_index);
        out.rows.push(row);
        out.labels.push(f.label);
    }
    out
}

/// Sessions are independent, so they are processed in parallel.
pub fn extract_sessions(sessions: &[SessionStream], cfg: &FaceConfig) -> Vec<SessionFeatures> {
    par::map_slice(sessions, |s| extract_session(s, cfg))
}

fn labeled(sessions: &[SessionFeatures]) -> Result<(Vec<&Vec<Option<f64>>>, Vec<bool>), PipelineError> {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for s in sessions {
        for (i, (r, l)) in s.rows.iter().zip(&s.labels).enumerate() {
            let l = l.ok_or_else(|| PipelineError::Data(format!("{} frame {i} has no label", s.session_id)))?;
            rows.push(r);
            labels.push(l);
        }
    }
    Ok((rows, labels))
}

pub fn fit_preprocessor(train: &[SessionFeatures]) -> Result<Preprocessor, PipelineError> {
    let rows: Vec<Vec<Option<f64>>> = train.iter().flat_map(|s| s.rows.iter().cloned()).collect();
    Ok(Preprocessor::fit(&rows)?)
}

/// Scaled frame matrix and labels for the static model.
pub fn static_dataset(
    sessions: &[SessionFeatures],
    pre: &Preprocessor,
) -> Result<(Vec<Vec<f64>>, Vec<bool>), PipelineError> {
    let (rows, labels) = labeled(sessions)?;
    let x = rows.iter().map(|r| pre.transform(r)).collect::<Result<Vec<_>, _>>()?;
    Ok((x, labels))
}

/// Windows of `w` scaled frames per session; a window never spans two
/// sessions.
pub fn sequence_dataset(
    sessions: &[SessionFeatures],
    pre: &Preprocessor,
    w: usize,
) -> Result<Vec<LabeledSequence>, PipelineError> {
    let mut out = Vec::new();
    for s in sessions {
        let scaled = s.rows.iter().map(|r| pre.transform(r)).collect::<Result<Vec<_>, _>>()?;
        out.extend(build_sequences(&scaled, &s.labels, w)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub gbdt: GbdtParams,
    pub lstm: LstmParams,
    pub smote_k: usize,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            gbdt: GbdtParams::default(),
            lstm: LstmParams::default(),
            smote_k: DEFAULT_SMOTE_K,
            seed: 7,
        }
    }
}

/// Rebalances with borderline-SMOTE, fits the boosted trees and stores the
/// F1-optimal threshold on `validation` (when given) in the model.
pub fn train_static(
    train: &[SessionFeatures],
    validation: &[SessionFeatures],
    pre: &Preprocessor,
    cfg: &ExperimentConfig,
) -> Result<GbdtModel, PipelineError> {
    let (x, y) = static_dataset(train, pre)?;
    let balanced = borderline_smote(&x, &y, cfg.smote_k, cfg.seed)?;
    let mut model = train_gbdt(&balanced.x, &balanced.y, &cfg.gbdt, cfg.seed)?;
    model.preprocessor_hash = Some(pre.hash());
    if !validation.is_empty() {
        let (vx, vy) = static_dataset(validation, pre)?;
        let scores = score_static(&model, &vx)?;
        model.threshold = Some(select_threshold(&scores, &vy)?.threshold);
    }
    Ok(model)
}

pub fn score_static(model: &GbdtModel, x: &[Vec<f64>]) -> Result<Vec<f64>, PipelineError> {
    Ok(par::map_slice(x, |r| model.predict_proba(r)).into_iter().collect::<Result<Vec<_>, _>>()?)
}

pub struct TemporalFit {
    pub model: LstmModel,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub initial_loss: f64,
}

pub fn train_temporal(
    train: &[SessionFeatures],
    validation: &[SessionFeatures],
    pre: &Preprocessor,
    cfg: &ExperimentConfig,
) -> Result<TemporalFit, PipelineError> {
    let params = LstmParams {
        seed: cfg.seed,
        ..cfg.lstm
    };
    let seqs = sequence_dataset(train, pre, params.window)?;
    let val = sequence_dataset(validation, pre, params.window)?;
    let fit = train_lstm(&seqs, (!val.is_empty()).then_some(&val[..]), &params)?;
    let mut model = fit.model;
    model.preprocessor_hash = Some(pre.hash());
    if !val.is_empty() {
        let scores = predict_batch(&model, &val)?;
        let labels: Vec<bool> = val.iter().map(|s| s.target).collect();
        model.threshold = Some(select_threshold(&scores, &labels)?.threshold);
    }
    Ok(TemporalFit {
        model,
        history: fit.history,
        best_epoch: fit.best_epoch,
        initial_loss: fit.initial_loss,
    })
}

/// Frame-level report for the static model on `sessions`.
pub fn evaluate_static(
    model: &GbdtModel,
    sessions: &[SessionFeatures],
    pre: &Preprocessor,
) -> Result<EvalReport, PipelineError> {
    let (x, y) = static_dataset(sessions, pre)?;
    let scores = score_static(model, &x)?;
    let threshold = match model.threshold {
        Some(t) => t,
        None => select_threshold(&scores, &y)?.threshold,
    };
    Ok(evaluate("static_gbdt", "frame", &scores, &y, threshold)?)
}

/// Sequence-level report for the temporal model on `sessions`.
pub fn evaluate_temporal(
    model: &LstmModel,
    sessions: &[SessionFeatures],
    pre: &Preprocessor,
) -> Result<EvalReport, PipelineError> {
    let seqs = sequence_dataset(sessions, pre, model.params.window)?;
    let scores = predict_batch(model, &seqs)?;
    let y: Vec<bool> = seqs.iter().map(|s| s.target).collect();
    let threshold = match model.threshold {
        Some(t) => t,
        None => select_threshold(&scores, &y)?.threshold,
    };
    Ok(evaluate("temporal_lstm", "sequence", &scores, &y, threshold)?)
}

pub struct ExperimentOutcome {
    pub preprocessor: Preprocessor,
    pub static_model: GbdtModel,
    pub temporal: TemporalFit,
    pub static_report: EvalReport,
    pub temporal_report: EvalReport,
    pub static_train_secs: f64,
    pub temporal_train_secs: f64,
}

/// Fits the preprocessor on `train`, trains both models (thresholds chosen
/// on `validation`) and reports both on `test`.
pub fn run_experiment(
    train: &[SessionFeatures],
    validation: &[SessionFeatures],
    test: &[SessionFeatures],
    cfg: &ExperimentConfig,
) -> Result<ExperimentOutcome, PipelineError> {
    let pre = fit_preprocessor(train)?;
    let t0 = Instant::now();
    let static_model = train_static(train, validation, &pre, cfg)?;
    let static_train_secs = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let temporal = train_temporal(train, validation, &pre, cfg)?;
    let temporal_train_secs = t1.elapsed().as_secs_f64();
    let static_report = evaluate_static(&static_model, test, &pre)?;
    let temporal_report = evaluate_temporal(&temporal.model, test, &pre)?;
    Ok(ExperimentOutcome {
        preprocessor: pre,
        static_model,
        temporal,
        static_report,
        temporal_report,
        static_train_secs,
        temporal_train_secs,
    })
}
