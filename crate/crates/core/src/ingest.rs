//! Frame-record schema and newline-delimited session streams.
//!
//! One JSON object per line with the fields `session_id`, `frame_index`,
//! `timestamp_ms`, `face_landmarks`, `face_count`, `live_embedding`, `hands`,
//! `detections` and `label`. Landmark sets are flat arrays of `x, y, z`
//! triples; boxes are `[x_min, y_min, x_max, y_max]` in normalized image
//! coordinates.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FACE_LANDMARKS: usize = 468;
pub const HAND_LANDMARKS: usize = 21;
pub const EMBEDDING_DIM: usize = 512;
pub const EMBEDDING_NORM_TOL: f64 = 1e-6;
pub const DEFAULT_FRAME_RATE_HZ: f64 = 10.0;

#[derive(Error, Debug)]
pub enum IngestError {
    #[error("malformed record: {0}")]
    MalformedRecord(String),
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("frame_index {found} at record {record} does not follow {previous}")]
    OrderViolation {
        record: usize,
        previous: u64,
        found: u64,
    },
    #[error("record {record} belongs to session {found:?}, expected {expected:?}")]
    SessionMismatch {
        record: usize,
        expected: String,
        found: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LandmarkKind {
    Face468,
    Hand21,
}

impl LandmarkKind {
    pub fn expected_len(self) -> usize {
        match self {
            LandmarkKind::Face468 => FACE_LANDMARKS,
            LandmarkKind::Hand21 => HAND_LANDMARKS,
        }
    }
}

/// Landmarks in normalized image coordinates; `z` is a unitless depth proxy.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet {
    kind: LandmarkKind,
    points: Vec<[f64; 3]>,
}

impl LandmarkSet {
    pub fn new(kind: LandmarkKind, points: Vec<[f64; 3]>) -> Result<Self, IngestError> {
        if points.len() != kind.expected_len() {
            return Err(IngestError::SchemaViolation(format!(
                "{kind:?} landmark set has {} points, expected {}",
                points.len(),
                kind.expected_len()
            )));
        }
        for (i, p) in points.iter().enumerate() {
            if !p.iter().all(|v| v.is_finite()) {
                return Err(IngestError::SchemaViolation(format!(
                    "{kind:?} landmark {i} is not finite"
                )));
            }
            if !(0.0..=1.0).contains(&p[0]) || !(0.0..=1.0).contains(&p[1]) {
                return Err(IngestError::SchemaViolation(format!(
                    "{kind:?} landmark {i} at ({}, {}) lies outside [0, 1]",
                    p[0], p[1]
                )));
            }
        }
        Ok(Self { kind, points })
    }

    fn from_flat(kind: LandmarkKind, flat: &[f64]) -> Result<Self, IngestError> {
        if flat.len() % 3 != 0 {
            return Err(IngestError::SchemaViolation(format!(
                "{kind:?} landmark array length {} is not a multiple of 3",
                flat.len()
            )));
        }
        let points = flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        Self::new(kind, points)
    }

    fn to_flat(&self) -> Vec<f64> {
        self.points.iter().flatten().copied().collect()
    }

    pub fn kind(&self) -> LandmarkKind {
        self.kind
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn xy(&self, index: usize) -> [f64; 2] {
        let p = self.points[index];
        [p[0], p[1]]
    }
}

/// The six prohibited item classes, in feature-schema order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectClass {
    CellPhone,
    Chits,
    ClosedBook,
    Headphone,
    Sheet,
    Watch,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; 6] = [
        ObjectClass::CellPhone,
        ObjectClass::Chits,
        ObjectClass::ClosedBook,
        ObjectClass::Headphone,
        ObjectClass::Sheet,
        ObjectClass::Watch,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ObjectClass::CellPhone => "cell_phone",
            ObjectClass::Chits => "chits",
            ObjectClass::ClosedBook => "closed_book",
            ObjectClass::Headphone => "headphone",
            ObjectClass::Sheet => "sheet",
            ObjectClass::Watch => "watch",
        }
    }
}

impl fmt::Display for ObjectClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Camera {
    FaceCam,
    HandCam,
}

/// Axis-aligned box. Construction enforces `x_min < x_max` and `y_min < y_max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, IngestError> {
        let b = Self {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        if !b.as_array().iter().all(|v| v.is_finite()) {
            return Err(IngestError::SchemaViolation("bbox has non-finite corner".into()));
        }
        if !(x_min < x_max && y_min < y_max) {
            return Err(IngestError::SchemaViolation(format!(
                "bbox [{x_min}, {y_min}, {x_max}, {y_max}] is inverted or empty"
            )));
        }
        Ok(b)
    }

    /// Like [`BBox::new`] but additionally requires every corner in `[0, 1]`.
    pub fn normalized(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, IngestError> {
        let b = Self::new(x_min, y_min, x_max, y_max)?;
        if !b.as_array().iter().all(|v| (0.0..=1.0).contains(v)) {
            return Err(IngestError::SchemaViolation(format!(
                "bbox [{x_min}, {y_min}, {x_max}, {y_max}] leaves normalized range"
            )));
        }
        Ok(b)
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    pub fn center(&self) -> [f64; 2] {
        [
            (self.x_min + self.x_max) / 2.0,
            (self.y_min + self.y_max) / 2.0,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRecord {
    pub class_id: ObjectClass,
    pub confidence: f64,
    pub bbox: BBox,
    pub camera: Camera,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub session_id: String,
    pub frame_index: u64,
    pub timestamp_ms: u64,
    pub face_landmarks: Option<LandmarkSet>,
    pub face_count: u32,
    pub live_embedding: Option<Vec<f64>>,
    pub hands: Vec<LandmarkSet>,
    pub detections: Vec<DetectionRecord>,
    pub label: Option<bool>,
}

// Wire shapes. Field names are part of the file format.

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireDetection {
    class_id: ObjectClass,
    confidence: f64,
    bbox: [f64; 4],
    camera: Camera,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireFrame {
    session_id: String,
    frame_index: u64,
    timestamp_ms: u64,
    face_landmarks: Option<Vec<f64>>,
    face_count: u32,
    live_embedding: Option<Vec<f64>>,
    hands: Vec<Vec<f64>>,
    detections: Vec<WireDetection>,
    label: Option<bool>,
}

pub fn validate_embedding(e: &[f64]) -> Result<(), IngestError> {
    if e.len() != EMBEDDING_DIM {
        return Err(IngestError::SchemaViolation(format!(
            "embedding has {} dimensions, expected {EMBEDDING_DIM}",
            e.len()
        )));
    }
    let norm = e.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !norm.is_finite() || (norm - 1.0).abs() > EMBEDDING_NORM_TOL {
        return Err(IngestError::SchemaViolation(format!(
            "embedding L2 norm {norm} is not 1"
        )));
    }
    Ok(())
}

impl FrameRecord {
    /// Checks the cross-field invariants that the typed fields cannot express.
    pub fn validate(&self) -> Result<(), IngestError> {
        if let Some(e) = &self.live_embedding {
            validate_embedding(e)?;
        }
        if self.face_count == 0 && self.face_landmarks.is_some() {
            return Err(IngestError::SchemaViolation(
                "face_landmarks present with face_count 0".into(),
            ));
        }
        if let Some(f) = &self.face_landmarks {
            if f.kind() != LandmarkKind::Face468 {
                return Err(IngestError::SchemaViolation("face landmarks of hand kind".into()));
            }
        }
        if self.hands.iter().any(|h| h.kind() != LandmarkKind::Hand21) {
            return Err(IngestError::SchemaViolation("hand landmarks of face kind".into()));
        }
        for d in &self.detections {
            if !(0.0..=1.0).contains(&d.confidence) {
                return Err(IngestError::SchemaViolation(format!(
                    "detection confidence {} outside [0, 1]",
                    d.confidence
                )));
            }
            let b = d.bbox;
            BBox::normalized(b.x_min, b.y_min, b.x_max, b.y_max)?;
        }
        Ok(())
    }

    pub fn to_json_line(&self) -> String {
        let wire = WireFrame {
            session_id: self.session_id.clone(),
            frame_index: self.frame_index,
            timestamp_ms: self.timestamp_ms,
            face_landmarks: self.face_landmarks.as_ref().map(LandmarkSet::to_flat),
            face_count: self.face_count,
            live_embedding: self.live_embedding.clone(),
            hands: self.hands.iter().map(LandmarkSet::to_flat).collect(),
            detections: self
                .detections
                .iter()
                .map(|d| WireDetection {
                    class_id: d.class_id,
                    confidence: d.confidence,
                    bbox: d.bbox.as_array(),
                    camera: d.camera,
                })
                .collect(),
            label: self.label,
        };
        serde_json::to_string(&wire).expect("frame record serializes")
    }
}

pub fn parse_frame_record(line: &str) -> Result<FrameRecord, IngestError> {
    let wire: WireFrame =
        serde_json::from_str(line).map_err(|e| IngestError::MalformedRecord(e.to_string()))?;
    let face_landmarks = wire
        .face_landmarks
        .as_deref()
        .map(|f| LandmarkSet::from_flat(LandmarkKind::Face468, f))
        .transpose()?;
    let hands = wire
        .hands
        .iter()
        .map(|h| LandmarkSet::from_flat(LandmarkKind::Hand21, h))
        .collect::<Result<Vec<_>, _>>()?;
    let detections = wire
        .detections
        .into_iter()
        .map(|d| {
            let [a, b, c, e] = d.bbox;
            Ok(DetectionRecord {
                class_id: d.class_id,
                confidence: d.confidence,
                bbox: BBox::normalized(a, b, c, e)?,
                camera: d.camera,
            })
        })
        .collect::<Result<Vec<_>, IngestError>>()?;
    let record = FrameRecord {
        session_id: wire.session_id,
        frame_index: wire.frame_index,
        timestamp_ms: wire.timestamp_ms,
        face_landmarks,
        face_count: wire.face_count,
        live_embedding: wire.live_embedding,
        hands,
        detections,
        label: wire.label,
    };
    record.validate()?;
    Ok(record)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionStream {
    pub session_id: String,
    pub frame_rate_hz: f64,
    pub frames: Vec<FrameRecord>,
}

impl SessionStream {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for f in &self.frames {
            writeln!(out, "{}", f.to_json_line())?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for f in &self.frames {
            s.push_str(&f.to_json_line());
            s.push('\n');
        }
        s
    }
}

/// Streaming reader enforcing strictly increasing `frame_index` and a
/// single `session_id` per source. Blank lines are skipped.
pub struct SessionReader<R> {
    lines: std::io::Lines<R>,
    record: usize,
    previous: Option<u64>,
    session_id: Option<String>,
    failed: bool,
}

impl<R: BufRead> SessionReader<R> {
    pub fn new(reader: R) -> Self {
        Self {
            lines: reader.lines(),
            record: 0,
            previous: None,
            session_id: None,
            failed: false,
        }
    }

    pub fn session_id(&self) -> Option<&str> {
        self.session_id.as_deref()
    }
}

impl<R: BufRead> Iterator for SessionReader<R> {
    type Item = Result<FrameRecord, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => {
                    self.failed = true;
                    return Some(Err(IngestError::Io {
                        path: "<stream>".into(),
                        source: e,
                    }));
                }
            };
            if line.trim().is_empty() {
                continue;
            }
            self.record += 1;
            let result = parse_frame_record(&line).and_then(|rec| {
                if let Some(prev) = self.previous {
                    if rec.frame_index <= prev {
                        return Err(IngestError::OrderViolation {
                            record: self.record,
                            previous: prev,
                            found: rec.frame_index,
                        });
                    }
                }
                match &self.session_id {
                    Some(sid) if *sid != rec.session_id => {
                        return Err(IngestError::SessionMismatch {
                            record: self.record,
                            expected: sid.clone(),
                            found: rec.session_id.clone(),
                        })
                    }
                    None => self.session_id = Some(rec.session_id.clone()),
                    _ => {}
                }
                self.previous = Some(rec.frame_index);
                Ok(rec)
            });
            if result.is_err() {
                self.failed = true;
            }
            return Some(result);
        }
    }
}

pub fn read_session(path: impl AsRef<Path>) -> Result<SessionStream, IngestError> {
    read_session_with_rate(path, DEFAULT_FRAME_RATE_HZ)
}

pub fn read_session_with_rate(
    path: impl AsRef<Path>,
    frame_rate_hz: f64,
) -> Result<SessionStream, IngestError> {
    let path = path.as_ref();
    let io_err = |source| IngestError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = File::open(path).map_err(io_err)?;
    let mut reader = SessionReader::new(BufReader::new(file));
    let mut frames = Vec::new();
    for rec in reader.by_ref() {
        frames.push(rec.map_err(|e| match e {
            IngestError::Io { source, .. } => io_err(source),
            other => other,
        })?);
    }
    let session_id = reader
        .session_id()
        .map(str::to_owned)
        .or_else(|| path.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .unwrap_or_default();
    Ok(SessionStream {
        session_id,
        frame_rate_hz,
        frames,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use std::io::Cursor;

    pub(crate) fn unit_embedding(seed: usize) -> Vec<f64> {
        let mut e: Vec<f64> = (0..EMBEDDING_DIM)
            .map(|i| (((i + 1) * (seed + 3)) as f64).sin())
            .collect();
        let n = e.iter().map(|v| v * v).sum::<f64>().sqrt();
        e.iter_mut().for_each(|v| *v /= n);
        e
    }

    pub(crate) fn sample_record(index: u64) -> FrameRecord {
        let face = (0..FACE_LANDMARKS)
            .map(|i| [0.3 + 0.4 * (i as f64 / 468.0), 0.5, -0.01])
            .collect();
        let hand = (0..HAND_LANDMARKS)
            .map(|i| [0.5 + 0.001 * i as f64, 0.6, 0.0])
            .collect();
        FrameRecord {
            session_id: "s1".into(),
            frame_index: index,
            timestamp_ms: index * 100,
            face_landmarks: Some(LandmarkSet::new(LandmarkKind::Face468, face).unwrap()),
            face_count: 1,
            live_embedding: Some(unit_embedding(1)),
            hands: vec![LandmarkSet::new(LandmarkKind::Hand21, hand).unwrap()],
            detections: vec![],
            label: Some(false),
        }
    }

    #[test]
    fn hand_written_record_round_trips() {
        let rec = sample_record(0);
        let line = rec.to_json_line();
        let back = parse_frame_record(&line).unwrap();
        assert_eq!(back, rec);
        assert_eq!(back.face_count, 1);
        assert_eq!(back.hands.len(), 1);
        assert!(back.detections.is_empty());
    }

    #[test]
    fn wrong_face_point_count_is_schema_violation() {
        let rec = sample_record(0);
        let mut v: serde_json::Value = serde_json::from_str(&rec.to_json_line()).unwrap();
        let arr = v["face_landmarks"].as_array_mut().unwrap();
        arr.truncate(467 * 3);
        let err = parse_frame_record(&v.to_string()).unwrap_err();
        assert!(matches!(err, IngestError::SchemaViolation(_)), "{err}");
    }

    #[test]
    fn half_norm_embedding_is_schema_violation() {
        let mut rec = sample_record(0);
        rec.live_embedding = Some(unit_embedding(2).iter().map(|v| v * 0.5).collect());
        let err = parse_frame_record(&rec.to_json_line()).unwrap_err();
        assert!(matches!(err, IngestError::SchemaViolation(_)));
    }

    #[test]
    fn inverted_bbox_and_unknown_class_rejected() {
        let base = sample_record(0).to_json_line();
        let with_det = |det: &str| base.replace("\"detections\":[]", &format!("\"detections\":[{det}]"));
        let inverted = with_det(
            r#"{"class_id":"cell_phone","confidence":0.9,"bbox":[0.5,0.2,0.4,0.3],"camera":"hand_cam"}"#,
        );
        assert!(matches!(
            parse_frame_record(&inverted),
            Err(IngestError::SchemaViolation(_))
        ));
        let unknown = with_det(
            r#"{"class_id":"laptop","confidence":0.9,"bbox":[0.1,0.2,0.4,0.3],"camera":"hand_cam"}"#,
        );
        assert!(parse_frame_record(&unknown).is_err());
        let ok = with_det(
            r#"{"class_id":"watch","confidence":0.9,"bbox":[0.1,0.2,0.4,0.3],"camera":"face_cam"}"#,
        );
        let rec = parse_frame_record(&ok).unwrap();
        assert_eq!(rec.detections[0].class_id, ObjectClass::Watch);
    }

    #[test]
    fn bad_syntax_is_malformed() {
        assert!(matches!(
            parse_frame_record("{not json"),
            Err(IngestError::MalformedRecord(_))
        ));
    }

    #[test]
    fn missing_face_is_valid() {
        let mut rec = sample_record(3);
        rec.face_landmarks = None;
        rec.face_count = 0;
        rec.live_embedding = None;
        rec.label = None;
        assert_eq!(parse_frame_record(&rec.to_json_line()).unwrap(), rec);
    }

    fn stream_of(indices: &[u64]) -> String {
        indices
            .iter()
            .map(|&i| sample_record(i).to_json_line() + "\n")
            .collect()
    }

    #[test]
    fn reader_accepts_ordered_stream() {
        let text = stream_of(&[0, 1, 2]);
        let recs: Result<Vec<_>, _> = SessionReader::new(Cursor::new(text)).collect();
        assert_eq!(recs.unwrap().len(), 3);
    }

    #[test]
    fn reader_flags_out_of_order_at_third_record() {
        let text = stream_of(&[0, 2, 1]);
        let recs: Vec<_> = SessionReader::new(Cursor::new(text)).collect();
        assert_eq!(recs.len(), 3);
        assert!(recs[0].is_ok() && recs[1].is_ok());
        match &recs[2] {
            Err(IngestError::OrderViolation { record, .. }) => assert_eq!(*record, 3),
            other => panic!("expected order violation, got {other:?}"),
        }
    }

    #[test]
    fn read_session_from_files() {
        let dir = tempfile::tempdir().unwrap();
        let empty = dir.path().join("empty.jsonl");
        std::fs::write(&empty, "").unwrap();
        let s = read_session(&empty).unwrap();
        assert!(s.is_empty());
        assert_eq!(s.session_id, "empty");

        let ok = dir.path().join("ok.jsonl");
        std::fs::write(&ok, stream_of(&[0, 1, 2])).unwrap();
        assert_eq!(read_session(&ok).unwrap().len(), 3);

        let bad = dir.path().join("bad.jsonl");
        std::fs::write(&bad, stream_of(&[0, 2, 1])).unwrap();
        assert!(matches!(
            read_session(&bad),
            Err(IngestError::OrderViolation { record: 3, .. })
        ));

        assert!(matches!(
            read_session(dir.path().join("nope.jsonl")),
            Err(IngestError::Io { .. })
        ));
    }
}
