//! Fused per-frame feature vectors, mean imputation, standardization and
//! sliding-window sequence construction.
//!
//! The 27-entry layout is fixed; categorical readings are encoded ordinally
//! (`pose_zone`, `mouth_state`) or signed (`gaze_code`: left -1, center 0,
//! right +1). Any change to names or order must bump [`SCHEMA_VERSION`].

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::face::FaceGeometryReport;
use crate::hand::InteractionReport;

pub const SCHEMA_VERSION: u32 = 1;
pub const NUM_FEATURES: usize = 27;
pub const DEFAULT_WINDOW: usize = 15;

pub const FEATURE_NAMES: [&str; NUM_FEATURES] = [
    "face_count",
    "identity_similarity",
    "pitch",
    "yaw",
    "roll",
    "radial",
    "pose_zone",
    "iris_ratio_left",
    "iris_ratio_right",
    "gaze_code",
    "mouth_area_norm",
    "mouth_state",
    "conf_cell_phone",
    "conf_chits",
    "conf_closed_book",
    "conf_headphone",
    "conf_sheet",
    "conf_watch",
    "dist_cell_phone",
    "dist_chits",
    "dist_closed_book",
    "dist_headphone",
    "dist_sheet",
    "dist_watch",
    "global_min_distance",
    "num_hands",
    "num_items",
];

/// Column offsets into the feature vector.
pub mod col {
    pub const FACE_COUNT: usize = 0;
    pub const IDENTITY: usize = 1;
    pub const PITCH: usize = 2;
    pub const YAW: usize = 3;
    pub const ROLL: usize = 4;
    pub const RADIAL: usize = 5;
    pub const POSE_ZONE: usize = 6;
    pub const IRIS_LEFT: usize = 7;
    pub const IRIS_RIGHT: usize = 8;
    pub const GAZE: usize = 9;
    pub const MOUTH_AREA: usize = 10;
    pub const MOUTH_STATE: usize = 11;
    pub const CONF: usize = 12;
    pub const DIST: usize = 18;
    pub const GLOBAL_MIN: usize = 24;
    pub const NUM_HANDS: usize = 25;
    pub const NUM_ITEMS: usize = 26;
}

#[derive(Error, Debug)]
pub enum FeatureError {
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("feature {name} (column {index}) is missing in every training row")]
    AllMissingFeature { index: usize, name: String },
    #[error("no rows to fit")]
    EmptyInput,
    #[error("frame {0} has no label")]
    MissingLabel(usize),
    #[error("window size must be positive")]
    InvalidWindow,
    #[error("{rows} rows but {labels} labels")]
    LengthMismatch { rows: usize, labels: usize },
    #[error("preprocessor file: {0}")]
    Persist(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub names: Vec<String>,
    pub schema_version: u32,
}

impl Default for FeatureSchema {
    fn default() -> Self {
        Self {
            names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            schema_version: SCHEMA_VERSION,
        }
    }
}

impl FeatureSchema {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn check(&self) -> Result<(), FeatureError> {
        if *self != FeatureSchema::default() {
            return Err(FeatureError::SchemaMismatch(format!(
                "schema v{} with {} features is not the built-in v{SCHEMA_VERSION} layout",
                self.schema_version,
                self.names.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub frame_index: u64,
    pub values: Vec<Option<f64>>,
    pub label: Option<bool>,
}

pub fn assemble(
    face: &FaceGeometryReport,
    hand: &InteractionReport,
    schema: &FeatureSchema,
) -> Result<FeatureVector, FeatureError> {
    schema.check()?;
    let mut v: Vec<Option<f64>> = vec![None; NUM_FEATURES];
    v[col::FACE_COUNT] = Some(face.face_count as f64);
    v[col::IDENTITY] = face.identity.map(|i| i.similarity);
    if let Some(p) = face.pose {
        v[col::PITCH] = Some(p.pitch);
        v[col::YAW] = Some(p.yaw);
        v[col::ROLL] = Some(p.roll);
        v[col::RADIAL] = Some(p.radial);
        v[col::POSE_ZONE] = Some(p.zone as u8 as f64);
    }
    if let Some(g) = face.gaze {
        v[col::IRIS_LEFT] = Some(g.ratio_left);
        v[col::IRIS_RIGHT] = Some(g.ratio_right);
        v[col::GAZE] = Some(g.gaze_class.code());
    }
    if let Some(m) = face.mouth {
        v[col::MOUTH_AREA] = Some(m.area_norm);
        v[col::MOUTH_STATE] = Some(m.state as u8 as f64);
    }
    for c in 0..6 {
        v[col::CONF + c] = Some(hand.per_class_confidence[c]);
        v[col::DIST + c] = hand.per_class_min_distance[c];
    }
    v[col::GLOBAL_MIN] = hand.global_min_distance;
    v[col::NUM_HANDS] = Some(hand.num_hands as f64);
    v[col::NUM_ITEMS] = Some(hand.num_items as f64);
    Ok(FeatureVector {
        frame_index: face.frame_index,
        values: v,
        label: None,
    })
}

fn check_width(len: usize) -> Result<(), FeatureError> {
    if len != NUM_FEATURES {
        return Err(FeatureError::SchemaMismatch(format!(
            "row has {len} values, expected {NUM_FEATURES}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputerState {
    pub means: Vec<f64>,
    pub counts: Vec<usize>,
}

pub fn fit_imputer(rows: &[Vec<Option<f64>>]) -> Result<ImputerState, FeatureError> {
    let width = rows.first().map_or(NUM_FEATURES, Vec::len);
    let mut sums = vec![0.0; width];
    let mut counts = vec![0usize; width];
    for row in rows {
        if row.len() != width {
            return Err(FeatureError::SchemaMismatch("ragged rows".into()));
        }
        for (j, v) in row.iter().enumerate() {
            if let Some(x) = v {
                sums[j] += x;
                counts[j] += 1;
            }
        }
    }
    if let Some(j) = counts.iter().position(|&c| c == 0) {
        return Err(FeatureError::AllMissingFeature {
            index: j,
            name: FEATURE_NAMES.get(j).map_or_else(|| format!("#{j}"), |s| s.to_string()),
        });
    }
    let means = sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect();
    Ok(ImputerState { means, counts })
}

pub fn apply_imputer(state: &ImputerState, row: &[Option<f64>]) -> Vec<f64> {
    row.iter()
        .zip(&state.means)
        .map(|(v, m)| v.unwrap_or(*m))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerState {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

/// Population statistics; a constant column gets `std = 1` so it maps to zeros.
pub fn fit_scaler(rows: &[Vec<f64>]) -> Result<ScalerState, FeatureError> {
    let first = rows.first().ok_or(FeatureError::EmptyInput)?;
    let width = first.len();
    let n = rows.len() as f64;
    let mut means = vec![0.0; width];
    for row in rows {
        for (m, x) in means.iter_mut().zip(row) {
            *m += x;
        }
    }
    means.iter_mut().for_each(|m| *m /= n);
    let mut vars = vec![0.0; width];
    for row in rows {
        for ((v, x), m) in vars.iter_mut().zip(row).zip(&means) {
            *v += (x - m) * (x - m);
        }
    }
    let stds = vars
        .iter()
        .zip(&means)
        .map(|(v, m)| {
            let s = (v / n).sqrt();
            if s <= 1e-12 * m.abs().max(1.0) {
                1.0
            } else {
                s
            }
        })
        .collect();
    Ok(ScalerState { means, stds })
}

pub fn apply_scaler(state: &ScalerState, row: &[f64]) -> Vec<f64> {
    row.iter()
        .zip(state.means.iter().zip(&state.stds))
        .map(|(x, (m, s))| (x - m) / s)
        .collect()
}

/// Imputer and scaler fitted together on training rows and frozen for
/// inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    pub schema_version: u32,
    pub feature_names: Vec<String>,
    pub imputer: ImputerState,
    pub scaler: ScalerState,
}

impl Preprocessor {
    pub fn fit(rows: &[Vec<Option<f64>>]) -> Result<Self, FeatureError> {
        if rows.is_empty() {
            return Err(FeatureError::EmptyInput);
        }
        for r in rows {
            check_width(r.len())?;
        }
        let imputer = fit_imputer(rows)?;
        let imputed: Vec<Vec<f64>> = rows.iter().map(|r| apply_imputer(&imputer, r)).collect();
        let scaler = fit_scaler(&imputed)?;
        Ok(Self {
            schema_version: SCHEMA_VERSION,
            feature_names: FeatureSchema::default().names,
            imputer,
            scaler,
        })
    }

    pub fn transform(&self, row: &[Option<f64>]) -> Result<Vec<f64>, FeatureError> {
        check_width(row.len())?;
        Ok(apply_scaler(&self.scaler, &apply_imputer(&self.imputer, row)))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("preprocessor serializes")
    }

    /// SHA-256 of the serialized state; model files pin this value.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }

    pub fn from_json(text: &str) -> Result<Self, FeatureError> {
        let p: Self =
            serde_json::from_str(text).map_err(|e| FeatureError::Persist(e.to_string()))?;
        if p.schema_version != SCHEMA_VERSION {
            return Err(FeatureError::SchemaMismatch(format!(
                "preprocessor schema_version {} but this build uses {SCHEMA_VERSION}",
                p.schema_version
            )));
        }
        FeatureSchema {
            names: p.feature_names.clone(),
            schema_version: p.schema_version,
        }
        .check()?;
        let w = NUM_FEATURES;
        if p.imputer.means.len() != w || p.scaler.means.len() != w || p.scaler.stds.len() != w {
            return Err(FeatureError::SchemaMismatch("state vectors have wrong width".into()));
        }
        Ok(p)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), FeatureError> {
        std::fs::write(path.as_ref(), self.to_json())
            .map_err(|e| FeatureError::Persist(format!("{}: {e}", path.as_ref().display())))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, FeatureError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| FeatureError::Persist(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_json(&text)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSequence {
    /// `w` rows of scaled features.
    pub rows: Vec<Vec<f64>>,
    pub target: bool,
}

/// Sequence `i` covers rows `[i, i + w)` and targets the label of row `i + w`,
/// giving `max(0, N - w)` sequences.
pub fn build_sequences(
    rows: &[Vec<f64>],
    labels: &[Option<bool>],
    w: usize,
) -> Result<Vec<LabeledSequence>, FeatureError> {
    if w == 0 {
        return Err(FeatureError::InvalidWindow);
    }
    if rows.len() != labels.len() {
        return Err(FeatureError::LengthMismatch {
            rows: rows.len(),
            labels: labels.len(),
        });
    }
    if rows.len() <= w {
        return Ok(Vec::new());
    }
    (0..rows.len() - w)
        .map(|i| {
            let target = labels[i + w].ok_or(FeatureError::MissingLabel(i + w))?;
            Ok(LabeledSequence {
                rows: rows[i..i + w].to_vec(),
                target,
            })
        })
        .collect()
}

/// Fixed-capacity FIFO of the most recent frames.
#[derive(Debug, Clone)]
pub struct WindowBuffer<T> {
    capacity: usize,
    items: VecDeque<T>,
}

impl<T> WindowBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "window capacity must be positive");
        Self {
            capacity,
            items: VecDeque::with_capacity(capacity + 1),
        }
    }

    /// Appends `v`, returning the evicted oldest item once capacity is exceeded.
    pub fn push(&mut self, v: T) -> Option<T> {
        self.items.push_back(v);
        if self.items.len() > self.capacity {
            self.items.pop_front()
        } else {
            None
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.items.len() == self.capacity
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.items.iter()
    }

    pub fn clear(&mut self) {
        self.items.clear();
    }
}
