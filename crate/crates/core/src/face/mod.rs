//! Face-cam geometry: head pose, gaze, mouth opening, face count and
//! identity verification for one frame.

mod pose;

pub use pose::{
    classify_pose_zone, euler_angles, radial_deviation, rotation_from_euler, solve_head_pose,
    CameraIntrinsics, CanonicalFaceModel, ModelPoint, PoseSolution, PoseZone, SolverSettings,
    ZoneThresholds,
};

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{FrameRecord, LandmarkSet, EMBEDDING_NORM_TOL};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum FaceError {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("non-finite input")]
    NonFiniteInput,
    #[error("not a rotation: {0}")]
    NotARotation(String),
    #[error("eye corner points coincide")]
    DegenerateEye,
    #[error("polygon needs at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("embedding is not L2-normalized (norm {0})")]
    NotNormalized(f64),
    #[error("embedding dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid face model: {0}")]
    InvalidModel(String),
    #[error("invalid face config: {0}")]
    InvalidConfig(String),
    #[error("frame {frame_index}: {source}")]
    Frame {
        frame_index: u64,
        #[source]
        source: Box<FaceError>,
    },
}

/// Landmark indices for one eye. `right_corner` is the corner nearer the
/// subject's right (image-left); the iris centre is the mean of
/// `iris_points`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EyeLandmarks {
    pub right_corner: usize,
    pub left_corner: usize,
    pub iris_points: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GazeConfig {
    pub lower: f64,
    pub upper: f64,
    pub right_eye: EyeLandmarks,
    pub left_eye: EyeLandmarks,
}

impl Default for GazeConfig {
    fn default() -> Self {
        Self {
            lower: 0.35,
            upper: 0.65,
            right_eye: EyeLandmarks {
                right_corner: 33,
                left_corner: 133,
                iris_points: vec![159, 145],
            },
            left_eye: EyeLandmarks {
                right_corner: 362,
                left_corner: 263,
                iris_points: vec![386, 374],
            },
        }
    }
}

pub const INNER_LIP: [usize; 20] = [
    78, 191, 80, 81, 82, 13, 312, 311, 310, 415, 308, 324, 318, 402, 317, 14, 87, 178, 88, 95,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MouthConfig {
    /// `area_norm` at or above this is partially open.
    pub partial_at: f64,
    /// `area_norm` at or above this is fully open.
    pub open_at: f64,
    pub inner_lip: Vec<usize>,
    /// Landmarks whose distance normalizes the area (outer eye corners).
    pub interocular: [usize; 2],
}

impl Default for MouthConfig {
    fn default() -> Self {
        Self {
            partial_at: 0.02,
            open_at: 0.06,
            inner_lip: INNER_LIP.to_vec(),
            interocular: [33, 263],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FaceConfig {
    pub intrinsics: CameraIntrinsics,
    pub model: CanonicalFaceModel,
    pub solver: SolverSettings,
    pub zones: ZoneThresholds,
    pub gaze: GazeConfig,
    pub mouth: MouthConfig,
    pub identity_threshold: f64,
}

impl Default for FaceConfig {
    fn default() -> Self {
        Self {
            intrinsics: CameraIntrinsics::default(),
            model: CanonicalFaceModel::default(),
            solver: SolverSettings::default(),
            zones: ZoneThresholds::default(),
            gaze: GazeConfig::default(),
            mouth: MouthConfig::default(),
            identity_threshold: 0.55,
        }
    }
}

impl FaceConfig {
    pub fn validate(&self) -> Result<(), FaceError> {
        self.intrinsics.validate()?;
        self.model.validate()?;
        let n = crate::ingest::FACE_LANDMARKS;
        let eye_ok = |e: &EyeLandmarks| {
            e.right_corner < n
                && e.left_corner < n
                && !e.iris_points.is_empty()
                && e.iris_points.iter().all(|&i| i < n)
        };
        if !eye_ok(&self.gaze.right_eye) || !eye_ok(&self.gaze.left_eye) {
            return Err(FaceError::InvalidConfig("eye landmark indices".into()));
        }
        if self.mouth.inner_lip.len() < 3
            || self.mouth.inner_lip.iter().chain(&self.mouth.interocular).any(|&i| i >= n)
        {
            return Err(FaceError::InvalidConfig("mouth landmark indices".into()));
        }
        if !(self.gaze.lower < self.gaze.upper)
            || !(self.mouth.partial_at < self.mouth.open_at)
            || !(self.zones.yellow_above < self.zones.red_above)
        {
            return Err(FaceError::InvalidConfig("thresholds out of order".into()));
        }
        Ok(())
    }

    /// Reads a JSON config; absent fields take their defaults.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, FaceError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| FaceError::InvalidConfig(format!("{}: {e}", path.display())))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| FaceError::InvalidConfig(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadPose {
    pub pitch: f64,
    pub yaw: f64,
    pub roll: f64,
    pub radial: f64,
    pub zone: PoseZone,
    pub reproj_rmse: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GazeClass {
    Left,
    Center,
    Right,
}

impl GazeClass {
    /// Signed encoding: left -1, center 0, right +1.
    pub fn code(self) -> f64 {
        match self {
            GazeClass::Left => -1.0,
            GazeClass::Center => 0.0,
            GazeClass::Right => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GazeReading {
    pub ratio_left: f64,
    pub ratio_right: f64,
    pub gaze_class: GazeClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MouthState {
    Closed = 0,
    Partial = 1,
    Open = 2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MouthReading {
    pub area_norm: f64,
    pub state: MouthState,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentityReading {
    pub similarity: f64,
    #[serde(rename = "match")]
    pub is_match: bool,
    pub threshold_used: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceGeometryReport {
    pub frame_index: u64,
    pub face_count: u32,
    pub pose: Option<HeadPose>,
    pub gaze: Option<GazeReading>,
    pub mouth: Option<MouthReading>,
    pub identity: Option<IdentityReading>,
    pub single_face_ok: bool,
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Normalized iris position between the eye corners:
/// `|c - p_right| / |p_left - p_right|`, clamped to `[0, 1]`.
pub fn iris_ratio(c: [f64; 2], p_left: [f64; 2], p_right: [f64; 2]) -> Result<f64, FaceError> {
    let span = dist2(p_left, p_right);
    if span < 1e-9 {
        return Err(FaceError::DegenerateEye);
    }
    Ok((dist2(c, p_right) / span).clamp(0.0, 1.0))
}

pub fn classify_gaze(ratio_left: f64, ratio_right: f64, cfg: &GazeConfig) -> GazeClass {
    let m = (ratio_left + ratio_right) / 2.0;
    if m < cfg.lower {
        GazeClass::Right
    } else if m > cfg.upper {
        GazeClass::Left
    } else {
        GazeClass::Center
    }
}

/// Shoelace area of a closed polygon given in traversal order.
pub fn mouth_area(polygon: &[[f64; 2]]) -> Result<f64, FaceError> {
    let n = polygon.len();
    if n < 3 {
        return Err(FaceError::TooFewPoints(n));
    }
    let twice: f64 = (0..n)
        .map(|i| {
            let [x0, y0] = polygon[i];
            let [x1, y1] = polygon[(i + 1) % n];
            x0 * y1 - y0 * x1
        })
        .sum();
    Ok(0.5 * twice.abs())
}

pub fn classify_mouth(area_norm: f64, cfg: &MouthConfig) -> MouthState {
    if area_norm >= cfg.open_at {
        MouthState::Open
    } else if area_norm >= cfg.partial_at {
        MouthState::Partial
    } else {
        MouthState::Closed
    }
}

fn check_unit(v: &[f64]) -> Result<(), FaceError> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !n.is_finite() || (n - 1.0).abs() > EMBEDDING_NORM_TOL {
        return Err(FaceError::NotNormalized(n));
    }
    Ok(())
}

/// Cosine similarity of two unit embeddings against a match threshold.
pub fn verify_identity(
    live: &[f64],
    reference: &[f64],
    threshold: f64,
) -> Result<IdentityReading, FaceError> {
    if live.len() != reference.len() {
        return Err(FaceError::DimensionMismatch(live.len(), reference.len()));
    }
    check_unit(live)?;
    check_unit(reference)?;
    let similarity = live
        .iter()
        .zip(reference)
        .map(|(a, b)| a * b)
        .sum::<f64>()
        .clamp(-1.0, 1.0);
    Ok(IdentityReading {
        similarity,
        is_match: similarity >= threshold,
        threshold_used: threshold,
    })
}

fn pixel(face: &LandmarkSet, cfg: &FaceConfig, i: usize) -> [f64; 2] {
    cfg.intrinsics.to_pixels(face.xy(i))
}

pub fn estimate_head_pose(face: &LandmarkSet, cfg: &FaceConfig) -> Result<HeadPose, FaceError> {
    let image: Vec<[f64; 2]> = cfg
        .model
        .landmark_indices()
        .into_iter()
        .map(|i| pixel(face, cfg, i))
        .collect();
    let sol = solve_head_pose(&image, &cfg.model.positions(), &cfg.intrinsics, &cfg.solver)?;
    let (pitch, yaw, roll) = euler_angles(&sol.rotation)?;
    let radial = radial_deviation(pitch, yaw, roll);
    Ok(HeadPose {
        pitch,
        yaw,
        roll,
        radial,
        zone: classify_pose_zone(radial, &cfg.zones),
        reproj_rmse: sol.reproj_rmse,
        converged: sol.converged,
    })
}

pub fn read_gaze(face: &LandmarkSet, cfg: &FaceConfig) -> Result<GazeReading, FaceError> {
    let eye = |e: &EyeLandmarks| {
        let n = e.iris_points.len() as f64;
        let c = e.iris_points.iter().fold([0.0, 0.0], |acc, &i| {
            let p = pixel(face, cfg, i);
            [acc[0] + p[0] / n, acc[1] + p[1] / n]
        });
        iris_ratio(c, pixel(face, cfg, e.left_corner), pixel(face, cfg, e.right_corner))
    };
    let ratio_right = eye(&cfg.gaze.right_eye)?;
    let ratio_left = eye(&cfg.gaze.left_eye)?;
    Ok(GazeReading {
        ratio_left,
        ratio_right,
        gaze_class: classify_gaze(ratio_left, ratio_right, &cfg.gaze),
    })
}

pub fn read_mouth(face: &LandmarkSet, cfg: &FaceConfig) -> Result<MouthReading, FaceError> {
    let poly: Vec<[f64; 2]> = cfg.mouth.inner_lip.iter().map(|&i| pixel(face, cfg, i)).collect();
    let area = mouth_area(&poly)?;
    let [a, b] = cfg.mouth.interocular;
    let d_io = dist2(pixel(face, cfg, a), pixel(face, cfg, b));
    if d_io < 1e-9 {
        return Err(FaceError::DegenerateInput("interocular distance is zero".into()));
    }
    let area_norm = area / (d_io * d_io);
    Ok(MouthReading {
        area_norm,
        state: classify_mouth(area_norm, &cfg.mouth),
    })
}

/// Runs every face analysis that the payload supports. With several faces
/// in view the record's mesh (the largest face) is still analyzed and
/// `single_face_ok` reports the violation.
pub fn analyze_face_frame(
    record: &FrameRecord,
    cfg: &FaceConfig,
    reference_embedding: Option<&[f64]>,
) -> Result<FaceGeometryReport, FaceError> {
    let in_frame = |source: FaceError| FaceError::Frame {
        frame_index: record.frame_index,
        source: Box::new(source),
    };
    let mut report = FaceGeometryReport {
        frame_index: record.frame_index,
        face_count: record.face_count,
        pose: None,
        gaze: None,
        mouth: None,
        identity: None,
        single_face_ok: record.face_count == 1,
    };
    let face = match (&record.face_landmarks, record.face_count) {
        (Some(face), n) if n >= 1 => face,
        _ => return Ok(report),
    };
    report.pose = Some(estimate_head_pose(face, cfg).map_err(in_frame)?);
    report.gaze = Some(read_gaze(face, cfg).map_err(in_frame)?);
    report.mouth = Some(read_mouth(face, cfg).map_err(in_frame)?);
    if let (Some(live), Some(reference)) = (&record.live_embedding, reference_embedding) {
        report.identity =
            Some(verify_identity(live, reference, cfg.identity_threshold).map_err(in_frame)?);
    }
    Ok(report)
}
