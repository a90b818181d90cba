//! Deterministic synthetic exam sessions with ground-truth labels.
//!
//! Generation works backwards from the feature semantics: a 3D face
//! template is posed and projected through the default camera, eye and lip
//! landmarks are placed so the geometry modules read back the scripted
//! gaze and mouth opening, and item boxes are positioned relative to the
//! hands to produce the scripted interaction distances.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::face::{rotation_from_euler, CameraIntrinsics, INNER_LIP};
use crate::features::DEFAULT_WINDOW;
use crate::ingest::{
    BBox, Camera, DetectionRecord, FrameRecord, LandmarkKind, LandmarkSet, ObjectClass,
    SessionStream, DEFAULT_FRAME_RATE_HZ, EMBEDDING_DIM, FACE_LANDMARKS, HAND_LANDMARKS,
};
use crate::par;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("script has {frames} frames, need at least {min}")]
    ScriptTooShort { frames: usize, min: usize },
    #[error("invalid script: {0}")]
    InvalidScript(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Behavior {
    Normal,
    LookAway,
    PhoneUse,
    Talking,
    Impostor,
    NotesPeek,
}

impl Behavior {
    pub const ALL: [Behavior; 6] = [
        Behavior::Normal,
        Behavior::LookAway,
        Behavior::PhoneUse,
        Behavior::Talking,
        Behavior::Impostor,
        Behavior::NotesPeek,
    ];
    pub const CHEATING: [Behavior; 5] = [
        Behavior::LookAway,
        Behavior::PhoneUse,
        Behavior::Talking,
        Behavior::Impostor,
        Behavior::NotesPeek,
    ];

    pub fn is_cheating(self) -> bool {
        self != Behavior::Normal
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorSegment {
    pub behavior: Behavior,
    pub duration_frames: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseLevels {
    /// Gaussian jitter on every landmark coordinate, normalized units.
    pub landmark_jitter: f64,
    /// Probability that any one detection or hand is missing from a frame.
    pub detection_dropout: f64,
    /// Per-frame probability that a short benign event (glance, yawn,
    /// spurious detection, identity flicker) starts during normal behavior.
    pub benign_event_rate: f64,
    /// Probability that a normal frame has no face at all.
    pub face_loss_rate: f64,
}

impl Default for NoiseLevels {
    fn default() -> Self {
        Self {
            landmark_jitter: 0.002,
            detection_dropout: 0.05,
            benign_event_rate: 0.06,
            face_loss_rate: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioScript {
    pub session_id: String,
    pub segments: Vec<BehaviorSegment>,
    #[serde(default = "default_rate")]
    pub frame_rate_hz: f64,
    #[serde(default)]
    pub noise: NoiseLevels,
    #[serde(default)]
    pub seed: u64,
    /// Benign items (closed book, headphones, watch) lying on the desk away
    /// from the hands for the whole session.
    #[serde(default)]
    pub desk_clutter: bool,
}

fn default_rate() -> f64 {
    DEFAULT_FRAME_RATE_HZ
}

impl ScenarioScript {
    pub fn total_frames(&self) -> usize {
        self.segments.iter().map(|s| s.duration_frames).sum()
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidScript(m.to_string()));
        if self.session_id.is_empty() {
            return bad("empty session_id");
        }
        if self.segments.iter().any(|s| s.duration_frames == 0) {
            return bad("segment with zero duration");
        }
        if !(self.frame_rate_hz > 0.0 && self.frame_rate_hz.is_finite()) {
            return bad("frame_rate_hz must be positive");
        }
        let n = &self.noise;
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if !(n.landmark_jitter >= 0.0 && n.landmark_jitter < 0.05)
            || !prob(n.detection_dropout)
            || !prob(n.benign_event_rate)
            || !prob(n.face_loss_rate)
        {
            return bad("noise levels out of range");
        }
        let frames = self.total_frames();
        let min = DEFAULT_WINDOW + 1;
        if frames < min {
            return Err(SynthError::ScriptTooShort { frames, min });
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, SynthError> {
        let s: Self =
            serde_json::from_str(text).map_err(|e| SynthError::InvalidScript(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SynthError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| SynthError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }
}

/// Scripts may be given singly or as a list.
pub fn load_scripts(path: impl AsRef<Path>) -> Result<Vec<ScenarioScript>, SynthError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| SynthError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let scripts: Vec<ScenarioScript> = match serde_json::from_str::<Vec<ScenarioScript>>(&text) {
        Ok(v) => v,
        Err(_) => vec![ScenarioScript::from_json(&text)?],
    };
    for s in &scripts {
        s.validate()?;
    }
    Ok(scripts)
}

// Face template, same axes and units as the canonical PnP model.
const EYE_Y: f64 = -170.0;
const EYE_Z: f64 = 135.0;
const RIGHT_EYE_X: (f64, f64) = (-225.0, -75.0);
const LEFT_EYE_X: (f64, f64) = (75.0, 225.0);
const MOUTH_Y: f64 = 150.0;
const MOUTH_HALF_WIDTH: f64 = 110.0;
const INTEROCULAR: f64 = 450.0;
const FACE_DEPTH: f64 = 2400.0;

/// Mouth half-opening (template units) giving the requested normalized
/// inner-lip area for a frontal face.
pub fn lip_opening_for_area(area_norm: f64) -> f64 {
    let n = INNER_LIP.len() as f64;
    let polygon_factor = 0.5 * n * (2.0 * PI / n).sin();
    area_norm * INTEROCULAR * INTEROCULAR / (polygon_factor * MOUTH_HALF_WIDTH)
}

#[derive(Debug, Clone, Copy)]
struct FaceState {
    pitch: f64,
    yaw: f64,
    roll: f64,
    /// Iris position between the corners, 0 = image-left corner.
    gaze_ratio: f64,
    lip_opening: f64,
    offset: [f64; 2],
}

fn face_template(s: &FaceState) -> Vec<[f64; 3]> {
    let mut pts = vec![[f64::NAN; 3]; FACE_LANDMARKS];
    pts[1] = [0.0, 0.0, 0.0];
    pts[152] = [0.0, 330.0, 65.0];
    pts[33] = [RIGHT_EYE_X.0, EYE_Y, EYE_Z];
    pts[133] = [RIGHT_EYE_X.1, EYE_Y, EYE_Z];
    pts[362] = [LEFT_EYE_X.0, EYE_Y, EYE_Z];
    pts[263] = [LEFT_EYE_X.1, EYE_Y, EYE_Z];
    pts[61] = [-150.0, MOUTH_Y, 125.0];
    pts[291] = [150.0, MOUTH_Y, 125.0];
    for (eye, upper, lower) in [(RIGHT_EYE_X, 159, 145), (LEFT_EYE_X, 386, 374)] {
        let x = eye.0 + (eye.1 - eye.0) * s.gaze_ratio;
        pts[upper] = [x, EYE_Y - 15.0, EYE_Z];
        pts[lower] = [x, EYE_Y + 15.0, EYE_Z];
    }
    let n = INNER_LIP.len();
    for (k, &idx) in INNER_LIP.iter().enumerate() {
        let t = 2.0 * PI * k as f64 / n as f64;
        pts[idx] = [
            -MOUTH_HALF_WIDTH * t.cos(),
            MOUTH_Y - s.lip_opening * t.sin(),
            // same depth as the eye corners so the area ratio is exact frontally
            EYE_Z,
        ];
    }
    let filler: Vec<usize> = (0..FACE_LANDMARKS).filter(|&i| pts[i][0].is_nan()).collect();
    let m = filler.len();
    for (j, &idx) in filler.iter().enumerate() {
        let ring = 1.0 - 0.15 * (j % 3) as f64;
        let t = 2.0 * PI * j as f64 / m as f64;
        pts[idx] = [270.0 * ring * t.cos(), -20.0 + 360.0 * ring * t.sin(), 150.0 - 80.0 * ring];
    }
    pts
}

/// Rotates the template about the nose tip, places it in front of the
/// camera and returns normalized image coordinates with jitter.
fn project_face(s: &FaceState, k: &CameraIntrinsics, jitter: &mut impl FnMut() -> f64) -> Vec<[f64; 3]> {
    let r = rotation_from_euler(s.pitch, s.yaw, s.roll);
    let t = Vector3::new(s.offset[0], s.offset[1], FACE_DEPTH);
    face_template(s)
        .into_iter()
        .map(|p| {
            let cam = r * Vector3::new(p[0], p[1], p[2]) + t;
            let uv = k.project(&cam).expect("face in front of camera");
            [
                (uv[0] / k.image_w + jitter()).clamp(0.0, 1.0),
                (uv[1] / k.image_h + jitter()).clamp(0.0, 1.0),
                (cam.z - FACE_DEPTH) / FACE_DEPTH,
            ]
        })
        .collect()
}

/// Rises over the first `n` frames of a segment and falls over the last
/// `n`: `min((k + 1) / n, (len - k) / n, 1)`.
fn ramp(k: usize, len: usize, n: usize) -> f64 {
    let up = (k + 1) as f64 / n as f64;
    let down = (len - k) as f64 / n as f64;
    up.min(down).min(1.0)
}

/// Image-x direction the face points toward, from its forward axis.
fn facing_sign(pitch: f64, yaw: f64, roll: f64) -> f64 {
    let fwd = rotation_from_euler(pitch, yaw, roll) * Vector3::new(0.0, 0.0, -1.0);
    fwd.x.signum()
}

fn hand_landmarks(center: [f64; 2], jitter: &mut impl FnMut() -> f64) -> Vec<[f64; 3]> {
    (0..HAND_LANDMARKS)
        .map(|k| {
            let dx = ((k % 5) as f64 - 2.0) * 0.012;
            let dy = ((k / 5) as f64 - 2.0) * 0.015;
            [
                (center[0] + dx + jitter()).clamp(0.0, 1.0),
                (center[1] + dy + jitter()).clamp(0.0, 1.0),
                0.0,
            ]
        })
        .collect()
}

fn item_box(center: [f64; 2], half: [f64; 2]) -> BBox {
    let x0 = (center[0] - half[0]).clamp(0.0, 1.0 - 2.0 * half[0]);
    let y0 = (center[1] - half[1]).clamp(0.0, 1.0 - 2.0 * half[1]);
    BBox::normalized(x0, y0, x0 + 2.0 * half[0], y0 + 2.0 * half[1]).expect("box inside frame")
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// Unit vector with cosine `sim` to `anchor`, in the plane of `anchor` and
/// `other`.
fn at_similarity(anchor: &[f64], other: &[f64], sim: f64) -> Vec<f64> {
    let proj: f64 = anchor.iter().zip(other).map(|(a, b)| a * b).sum();
    let orth = unit(other.iter().zip(anchor).map(|(o, a)| o - proj * a).collect());
    let s = (1.0 - sim * sim).max(0.0).sqrt();
    unit(anchor.iter().zip(&orth).map(|(a, o)| sim * a + s * o).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum BenignEvent {
    Glance { yaw: f64 },
    Yawn { area: f64 },
    SpuriousPhone { dist: f64, conf: f64 },
    IdentityFlicker { sim: f64 },
}

struct SessionGen<'a> {
    script: &'a ScenarioScript,
    rng: ChaCha8Rng,
    normal: Normal<f64>,
    intrinsics: CameraIntrinsics,
    identity: Vec<f64>,
    /// Slowly wandering head pose and hand positions.
    drift_pose: [f64; 3],
    drift_offset: [f64; 2],
    hands: [[f64; 2]; 2],
    clutter: Vec<(ObjectClass, [f64; 2], Camera)>,
}

struct SegmentPlan {
    behavior: Behavior,
    /// look_away target yaw; notes_peek pitch
    angle: f64,
    item: ObjectClass,
    item_pos: [f64; 2],
    approach_dir: [f64; 2],
    sim: f64,
    period: f64,
    phase: f64,
}

impl SessionGen<'_> {
    fn gauss(&mut self) -> f64 {
        self.normal.sample(&mut self.rng)
    }

    fn embedding_noise(&mut self, base: &[f64], sigma: f64) -> Vec<f64> {
        let v: Vec<f64> = base.iter().map(|b| b + sigma * self.gauss()).collect();
        unit(v)
    }

    fn plan(&mut self, behavior: Behavior) -> SegmentPlan {
        let sign = if self.rng.random::<bool>() { 1.0 } else { -1.0 };
        let angle = match behavior {
            Behavior::LookAway => sign * self.rng.random_range(35.0..55.0),
            Behavior::NotesPeek => self.rng.random_range(14.0..24.0),
            _ => 0.0,
        };
        let item = if self.rng.random::<bool>() { ObjectClass::Chits } else { ObjectClass::Sheet };
        let theta = self.rng.random_range(0.0..2.0 * PI);
        SegmentPlan {
            behavior,
            angle,
            item,
            item_pos: [self.rng.random_range(0.4..0.6), self.rng.random_range(0.45..0.6)],
            approach_dir: [theta.cos(), theta.sin()],
            sim: self.rng.random_range(0.2..0.4),
            period: self.rng.random_range(6.0..10.0),
            phase: self.rng.random_range(0.0..2.0 * PI),
        }
    }

    fn wander(&mut self) {
        for a in 0..3 {
            let spread = [3.0, 4.0, 2.0][a];
            self.drift_pose[a] = 0.9 * self.drift_pose[a] + 0.1 * spread * self.gauss() * 3.0f64.sqrt();
        }
        for a in 0..2 {
            self.drift_offset[a] = 0.95 * self.drift_offset[a] + 4.0 * self.gauss();
        }
        let rest = [[0.3, 0.72], [0.7, 0.72]];
        for h in 0..2 {
            for a in 0..2 {
                let g = self.gauss();
                self.hands[h][a] += 0.1 * (rest[h][a] - self.hands[h][a]) + 0.004 * g;
            }
        }
    }

    /// Benign one-frame events are drawn from the same distributions as
    /// the steady state of a cheating behavior, so a single frame cannot
    /// tell them apart; only the surrounding frames can.
    fn random_benign(&mut self) -> BenignEvent {
        match self.rng.random_range(0..4) {
            0 => {
                let sign = if self.rng.random::<bool>() { 1.0 } else { -1.0 };
                BenignEvent::Glance {
                    yaw: sign * self.rng.random_range(35.0..55.0),
                }
            }
            1 => BenignEvent::Yawn {
                area: self.rng.random_range(0.075..0.145),
            },
            2 => BenignEvent::SpuriousPhone {
                dist: self.rng.random_range(0.015..0.04),
                conf: self.rng.random_range(0.6..0.95),
            },
            _ => BenignEvent::IdentityFlicker {
                sim: self.rng.random_range(0.2..0.4),
            },
        }
    }

    fn frame(
        &mut self,
        index: usize,
        plan: &SegmentPlan,
        k: usize,
        len: usize,
        event: Option<BenignEvent>,
    ) -> FrameRecord {
        self.wander();
        let noise = self.script.noise;
        let [dp, dy, dr] = self.drift_pose;
        let mut face = FaceState {
            pitch: dp,
            yaw: dy,
            roll: dr,
            gaze_ratio: 0.5 + 0.04 * self.gauss(),
            lip_opening: lip_opening_for_area(self.rng.random_range(0.002..0.008)),
            offset: self.drift_offset,
        };
        let mut detections = Vec::new();
        let mut sim = None;
        let mut face_count = 1;
        let conf = |rng: &mut ChaCha8Rng| rng.random_range(0.6..0.95);

        if self.script.desk_clutter {
            for (class, pos, camera) in self.clutter.clone() {
                let c = conf(&mut self.rng);
                detections.push(DetectionRecord {
                    class_id: class,
                    confidence: c,
                    bbox: item_box(pos, [0.05, 0.05]),
                    camera,
                });
            }
        }
        match plan.behavior {
            Behavior::Normal => {
                match event {
                    Some(BenignEvent::Glance { yaw }) => {
                        face.yaw = yaw;
                        face.gaze_ratio = 0.5 + 0.3 * facing_sign(face.pitch, yaw, face.roll);
                    }
                    Some(BenignEvent::Yawn { area }) => face.lip_opening = lip_opening_for_area(area),
                    Some(BenignEvent::SpuriousPhone { dist, conf }) => {
                        let h = self.hands[1];
                        let [ux, uy] = plan.approach_dir;
                        detections.push(DetectionRecord {
                            class_id: ObjectClass::CellPhone,
                            confidence: conf,
                            bbox: item_box([h[0] + dist * ux, h[1] + dist * uy], [0.04, 0.06]),
                            camera: Camera::HandCam,
                        });
                    }
                    Some(BenignEvent::IdentityFlicker { sim: s }) => sim = Some(s),
                    None => {}
                }
                if index >= 5 && self.rng.random::<f64>() < noise.face_loss_rate {
                    face_count = 0;
                }
            }
            Behavior::LookAway => {
                face.yaw = dy + plan.angle * ramp(k, len, 3);
                if ramp(k, len, 3) >= 1.0 {
                    face.gaze_ratio = 0.5 + 0.3 * facing_sign(face.pitch, face.yaw, face.roll);
                }
            }
            Behavior::PhoneUse => {
                // Approaches from afar, settles in the hand, leaves over the
                // last four frames.
                let h = self.hands[1];
                let leaving = (k + 5).saturating_sub(len) as f64;
                let d = 0.02 + 0.26 * (-(k as f64) / 4.0).exp() + 0.06 * leaving;
                let c = [h[0] + d * plan.approach_dir[0], h[1] + d * plan.approach_dir[1]];
                face.pitch = dp + 8.0 * ramp(k, len, 2);
                let confidence = conf(&mut self.rng);
                detections.push(DetectionRecord {
                    class_id: ObjectClass::CellPhone,
                    confidence,
                    bbox: item_box(c, [0.04, 0.06]),
                    camera: Camera::HandCam,
                });
            }
            Behavior::Talking => {
                let area = match ramp(k, len, 3) {
                    r if r < 1.0 => 0.01 + 0.05 * r,
                    _ => 0.11 + 0.035 * (2.0 * PI * k as f64 / plan.period + plan.phase).sin(),
                };
                face.lip_opening = lip_opening_for_area(area);
            }
            Behavior::Impostor => {
                // The swap shows as the face leaving the frame for two frames
                // at either end.
                if k < 2 || k + 2 >= len {
                    face_count = 0;
                } else {
                    sim = Some(plan.sim);
                }
            }
            Behavior::NotesPeek => {
                face.pitch = dp + plan.angle * ramp(k, len, 3);
                let near = ((2.0 * PI * k as f64 / (2.0 * plan.period) + plan.phase).sin()) > 0.0;
                if near {
                    let p = plan.item_pos;
                    self.hands[1] = [p[0] + 0.02 * self.gauss(), p[1] + 0.03 + 0.02 * self.gauss()];
                }
                let confidence = conf(&mut self.rng);
                detections.push(DetectionRecord {
                    class_id: plan.item,
                    confidence,
                    bbox: item_box(plan.item_pos, [0.07, 0.05]),
                    camera: Camera::HandCam,
                });
            }
        }

        let jitter_sigma = noise.landmark_jitter;
        let mut jit = {
            let normal = self.normal;
            let rng = &mut self.rng;
            move || jitter_sigma * normal.sample(rng)
        };
        let face_landmarks = (face_count > 0).then(|| {
            let pts = project_face(&face, &self.intrinsics, &mut jit);
            LandmarkSet::new(LandmarkKind::Face468, pts).expect("face landmarks valid")
        });
        let hands_now = self.hands;
        let hand_sets: Vec<LandmarkSet> = hands_now
            .iter()
            .map(|&c| LandmarkSet::new(LandmarkKind::Hand21, hand_landmarks(c, &mut jit)).expect("hand landmarks valid"))
            .collect();
        let hands: Vec<LandmarkSet> = hand_sets
            .into_iter()
            .filter(|_| self.rng.random::<f64>() >= noise.detection_dropout)
            .collect();
        let detections: Vec<DetectionRecord> = detections
            .into_iter()
            .filter(|_| self.rng.random::<f64>() >= noise.detection_dropout)
            .collect();
        let live_embedding = (face_count > 0).then(|| {
            let identity = self.identity.clone();
            let genuine = self.embedding_noise(&identity, 0.0214);
            match sim {
                Some(s) => {
                    let other: Vec<f64> = (0..EMBEDDING_DIM).map(|_| self.gauss()).collect();
                    at_similarity(&identity, &other, s)
                }
                None => genuine,
            }
        });
        FrameRecord {
            session_id: self.script.session_id.clone(),
            frame_index: index as u64,
            timestamp_ms: (index as f64 * 1000.0 / self.script.frame_rate_hz).round() as u64,
            face_landmarks,
            face_count,
            live_embedding,
            hands,
            detections,
            label: Some(plan.behavior.is_cheating()),
        }
    }
}

/// Generates one labeled session. Frames inside non-normal segments are
/// labeled 1. Output is a pure function of the script.
pub fn generate_session(script: &ScenarioScript) -> Result<SessionStream, SynthError> {
    script.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(script.seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let identity = unit((0..EMBEDDING_DIM).map(|_| normal.sample(&mut rng)).collect());
    let clutter_classes = [
        (ObjectClass::ClosedBook, [0.1, 0.15], Camera::HandCam),
        (ObjectClass::Headphone, [0.88, 0.12], Camera::HandCam),
        (ObjectClass::Watch, [0.92, 0.2], Camera::HandCam),
    ];
    let mut g = SessionGen {
        script,
        rng,
        normal,
        intrinsics: CameraIntrinsics::default(),
        identity,
        drift_pose: [0.0; 3],
        drift_offset: [0.0; 2],
        hands: [[0.3, 0.72], [0.7, 0.72]],
        clutter: clutter_classes.to_vec(),
    };
    let mut frames = Vec::with_capacity(script.total_frames());
    let mut index = 0;
    for seg in &script.segments {
        let plan = g.plan(seg.behavior);
        for k in 0..seg.duration_frames {
            let event = (seg.behavior == Behavior::Normal
                && index >= 10
                && g.rng.random::<f64>() < script.noise.benign_event_rate)
                .then(|| g.random_benign());
            frames.push(g.frame(index, &plan, k, seg.duration_frames, event));
            index += 1;
        }
    }
    Ok(SessionStream {
        session_id: script.session_id.clone(),
        frame_rate_hz: script.frame_rate_hz,
        frames,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedSession {
    pub script: ScenarioScript,
    pub split: Split,
}

pub const DEFAULT_BENCHMARK_SEED: u64 = 20_240_917;
pub const BENCHMARK_SESSIONS: usize = 10;
pub const BENCHMARK_SESSION_FRAMES: usize = 600;
const CHEATS_PER_SESSION: usize = 4;

/// Ten fixed-seed scripts of 600 frames each. Sessions 0-6 train, 7
/// validates (both inside the 80% training duration), 8-9 test. Every
/// session opens with normal behavior and holds four cheating segments,
/// assigned round-robin so that each behavior recurs across the splits,
/// separated by normal gaps.
pub fn benchmark_plan(seed: u64) -> Vec<PlannedSession> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cheats = Behavior::CHEATING;
    (0..BENCHMARK_SESSIONS)
        .map(|s| {
            let mut mine: Vec<Behavior> = (0..CHEATS_PER_SESSION)
                .map(|j| cheats[(s * CHEATS_PER_SESSION + j) % cheats.len()])
                .collect();
            mine.shuffle(&mut rng);
            let cheat_len: Vec<usize> = mine.iter().map(|_| rng.random_range(55..80)).collect();
            let first = rng.random_range(50..70);
            let mut left = BENCHMARK_SESSION_FRAMES - first - cheat_len.iter().sum::<usize>();
            let mut segments = vec![BehaviorSegment {
                behavior: Behavior::Normal,
                duration_frames: first,
            }];
            for (j, (&b, &len)) in mine.iter().zip(&cheat_len).enumerate() {
                segments.push(BehaviorSegment { behavior: b, duration_frames: len });
                let gaps_left = CHEATS_PER_SESSION - j;
                let gap = if gaps_left == 1 {
                    left
                } else {
                    let even = left / gaps_left;
                    rng.random_range(even * 4 / 5..=even * 6 / 5)
                };
                left -= gap;
                segments.push(BehaviorSegment { behavior: Behavior::Normal, duration_frames: gap });
            }
            let jitter = [0.0015, 0.002, 0.0025][s % 3];
            let split = match s {
                0..=6 => Split::Train,
                7 => Split::Validation,
                _ => Split::Test,
            };
            PlannedSession {
                script: ScenarioScript {
                    session_id: format!("session_{s:02}"),
                    segments,
                    frame_rate_hz: DEFAULT_FRAME_RATE_HZ,
                    noise: NoiseLevels {
                        landmark_jitter: jitter,
                        ..NoiseLevels::default()
                    },
                    seed: seed.wrapping_mul(1000).wrapping_add(s as u64),
                    desk_clutter: s % 2 == 0,
                },
                split,
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Benchmark {
    pub train: Vec<SessionStream>,
    pub validation: Vec<SessionStream>,
    pub test: Vec<SessionStream>,
}

impl Benchmark {
    pub fn generate(plan: &[PlannedSession]) -> Result<Self, SynthError> {
        let sessions = par::map_slice(plan, |p| generate_session(&p.script));
        let mut b = Benchmark {
            train: Vec::new(),
            validation: Vec::new(),
            test: Vec::new(),
        };
        for (p, s) in plan.iter().zip(sessions) {
            let s = s?;
            match p.split {
                Split::Train => b.train.push(s),
                Split::Validation => b.validation.push(s),
                Split::Test => b.test.push(s),
            }
        }
        Ok(b)
    }

    /// Share of frames in train + validation.
    pub fn train_fraction(&self) -> f64 {
        let count = |v: &[SessionStream]| v.iter().map(|s| s.len()).sum::<usize>() as f64;
        let fit = count(&self.train) + count(&self.validation);
        fit / (fit + count(&self.test))
    }

    /// SHA-256 over every session's serialized records, in split order.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for s in self.train.iter().chain(&self.validation).chain(&self.test) {
            h.update(s.to_jsonl().as_bytes());
        }
        hex::encode(h.finalize())
    }
}

pub fn default_benchmark() -> Benchmark {
    Benchmark::generate(&benchmark_plan(DEFAULT_BENCHMARK_SEED)).expect("built-in scripts are valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::face::{analyze_face_frame, FaceConfig, GazeClass, MouthState, PoseZone};
    use crate::hand::analyze_hands;

    fn script(segments: &[(Behavior, usize)], seed: u64) -> ScenarioScript {
        ScenarioScript {
            session_id: "t".into(),
            segments: segments
                .iter()
                .map(|&(behavior, duration_frames)| BehaviorSegment { behavior, duration_frames })
                .collect(),
            frame_rate_hz: 10.0,
            noise: NoiseLevels::default(),
            seed,
            desk_clutter: false,
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let s = script(&[(Behavior::Normal, 40), (Behavior::PhoneUse, 40)], 3);
        assert_eq!(generate_session(&s).unwrap().to_jsonl(), generate_session(&s).unwrap().to_jsonl());
        let other = ScenarioScript { seed: 4, ..s.clone() };
        assert_ne!(generate_session(&s).unwrap().to_jsonl(), generate_session(&other).unwrap().to_jsonl());
    }

    #[test]
    fn labels_follow_segments() {
        let s = script(&[(Behavior::Normal, 300), (Behavior::PhoneUse, 300)], 1);
        let out = generate_session(&s).unwrap();
        assert_eq!(out.len(), 600);
        assert_eq!(out.frames.iter().filter(|f| f.label == Some(true)).count(), 300);
        assert!(out.frames[..300].iter().all(|f| f.label == Some(false)));
    }

    #[test]
    fn records_pass_ingest_validation_and_round_trip() {
        let s = script(&[(Behavior::Normal, 30), (Behavior::NotesPeek, 30), (Behavior::Impostor, 20)], 2);
        let out = generate_session(&s).unwrap();
        for f in &out.frames {
            f.validate().unwrap();
            let back = crate::ingest::parse_frame_record(&f.to_json_line()).unwrap();
            assert_eq!(&back, f);
        }
    }

    #[test]
    fn short_script_rejected() {
        let s = script(&[(Behavior::Normal, 10)], 0);
        assert!(matches!(generate_session(&s), Err(SynthError::ScriptTooShort { frames: 10, .. })));
    }

    #[test]
    fn lip_opening_inverts_area() {
        let face = FaceState {
            pitch: 0.0,
            yaw: 0.0,
            roll: 0.0,
            gaze_ratio: 0.5,
            lip_opening: lip_opening_for_area(0.1),
            offset: [0.0, 0.0],
        };
        let pts = project_face(&face, &CameraIntrinsics::default(), &mut || 0.0);
        let set = LandmarkSet::new(LandmarkKind::Face468, pts).unwrap();
        let m = crate::face::read_mouth(&set, &FaceConfig::default()).unwrap();
        assert!((m.area_norm - 0.1).abs() < 1e-9, "{}", m.area_norm);
        let g = crate::face::read_gaze(&set, &FaceConfig::default()).unwrap();
        assert!((g.ratio_left - 0.5).abs() < 1e-9 && (g.ratio_right - 0.5).abs() < 1e-9);
    }

    /// Per behavior, fraction of frames whose recomputed features fall in the
    /// behavior's characteristic range.
    #[test]
    fn behaviors_hit_characteristic_ranges() {
        let cfg = FaceConfig::default();
        for (i, &b) in Behavior::ALL.iter().enumerate() {
            let s = script(&[(Behavior::Normal, 20), (b, 200)], 10 + i as u64);
            let out = generate_session(&s).unwrap();
            let reference = out.frames[0].live_embedding.clone().unwrap();
            let frames = &out.frames[20..];
            let hits = frames
                .iter()
                .filter(|f| {
                    let face = analyze_face_frame(f, &cfg, Some(&reference)).unwrap();
                    let hand = analyze_hands(&f.hands, &f.detections);
                    let pose = face.pose;
                    match b {
                        Behavior::Normal => {
                            pose.is_some_and(|p| p.zone == PoseZone::White)
                                && face.gaze.is_some_and(|g| g.gaze_class == GazeClass::Center)
                        }
                        Behavior::LookAway => pose.is_some_and(|p| p.zone == PoseZone::Red),
                        Behavior::PhoneUse => hand.per_class_confidence[ObjectClass::CellPhone.index()] > 0.0,
                        Behavior::Talking => face.mouth.is_some_and(|m| m.state == MouthState::Open),
                        Behavior::Impostor => face.identity.is_some_and(|id| !id.is_match),
                        Behavior::NotesPeek => {
                            pose.is_some_and(|p| p.pitch > 10.0)
                                && (hand.per_class_confidence[ObjectClass::Chits.index()] > 0.0
                                    || hand.per_class_confidence[ObjectClass::Sheet.index()] > 0.0)
                        }
                    }
                })
                .count();
            let frac = hits as f64 / frames.len() as f64;
            assert!(frac >= 0.9, "{b:?}: {frac}");
        }
        // Look-away reaches the red zone once the ramp completes.
        let s = script(&[(Behavior::Normal, 20), (Behavior::LookAway, 100)], 30);
        let out = generate_session(&s).unwrap();
        let red = out.frames[23..117]
            .iter()
            .filter(|f| {
                analyze_face_frame(f, &cfg, None)
                    .unwrap()
                    .pose
                    .is_some_and(|p| p.zone == PoseZone::Red)
            })
            .count();
        assert!(red as f64 >= 0.9 * 94.0, "{red}");
    }

    #[test]
    fn phone_converges_toward_hand() {
        let s = ScenarioScript {
            desk_clutter: true,
            ..script(&[(Behavior::Normal, 200), (Behavior::PhoneUse, 200)], 5)
        };
        let out = generate_session(&s).unwrap();
        let mean = |fs: &[FrameRecord]| {
            let d: Vec<f64> = fs
                .iter()
                .filter_map(|f| analyze_hands(&f.hands, &f.detections).global_min_distance)
                .collect();
            d.iter().sum::<f64>() / d.len().max(1) as f64
        };
        let normal = mean(&out.frames[..200]);
        let phone = mean(&out.frames[200..]);
        assert!(phone < normal || normal == 0.0, "{phone} vs {normal}");
        let first = analyze_hands(&out.frames[200].hands, &out.frames[200].detections);
        let late = analyze_hands(&out.frames[350].hands, &out.frames[350].detections);
        if let (Some(a), Some(b)) = (first.per_class_min_distance[0], late.per_class_min_distance[0]) {
            assert!(b < a);
        }
    }

    #[test]
    fn benchmark_shape() {
        let plan = benchmark_plan(DEFAULT_BENCHMARK_SEED);
        assert_eq!(plan.len(), 10);
        let b = Benchmark::generate(&plan).unwrap();
        assert!((b.train_fraction() - 0.8).abs() <= 0.02);
        for split in [&b.train, &b.validation, &b.test] {
            let labels: Vec<bool> = split.iter().flat_map(|s| s.frames.iter().map(|f| f.label.unwrap())).collect();
            assert!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
        }
        for p in &plan {
            assert_eq!(p.script.segments[0].behavior, Behavior::Normal);
            assert_eq!(p.script.total_frames(), BENCHMARK_SESSION_FRAMES);
        }
        assert_eq!(b.content_hash(), Benchmark::generate(&plan).unwrap().content_hash());
    }
}
