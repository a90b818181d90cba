//! Hand-object interaction features from hand landmarks and item detections.

use serde::{Deserialize, Serialize};

use crate::ingest::{BBox, Camera, DetectionRecord, LandmarkSet};

/// Diagonal of the unit image square; divides normalized distances into `[0, 1]`.
pub const FRAME_DIAGONAL: f64 = std::f64::consts::SQRT_2;

#[derive(Debug, Clone, PartialEq)]
pub struct HandObservation {
    pub bbox: BBox,
    pub center: [f64; 2],
}

impl HandObservation {
    /// Axis-aligned hull of the landmarks. A hull with zero width or height
    /// (all points collinear on an axis) is padded by a hair so the box
    /// invariant holds.
    pub fn from_landmarks(hand: &LandmarkSet) -> Self {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in hand.points() {
            for a in 0..2 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        for a in 0..2 {
            if hi[a] <= lo[a] {
                hi[a] = lo[a] + 1e-12;
            }
        }
        let bbox = BBox {
            x_min: lo[0],
            y_min: lo[1],
            x_max: hi[0],
            y_max: hi[1],
        };
        Self {
            center: bbox_center(&bbox),
            bbox,
        }
    }
}

pub fn bbox_center(b: &BBox) -> [f64; 2] {
    b.center()
}

pub fn euclidean_distance(p1: [f64; 2], p2: [f64; 2]) -> f64 {
    ((p2[0] - p1[0]).powi(2) + (p2[1] - p1[1]).powi(2)).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionReport {
    pub per_class_confidence: [f64; 6],
    pub per_class_min_distance: [Option<f64>; 6],
    pub global_min_distance: Option<f64>,
    pub num_hands: u32,
    pub num_items: u32,
}

impl InteractionReport {
    pub fn empty() -> Self {
        Self {
            per_class_confidence: [0.0; 6],
            per_class_min_distance: [None; 6],
            global_min_distance: None,
            num_hands: 0,
            num_items: 0,
        }
    }
}

/// Per class, the smallest hand-to-item centre distance over hand-cam
/// detections, divided by the frame diagonal. Confidence is the per-class
/// maximum over both cameras.
pub fn min_class_distances(
    hands: &[HandObservation],
    detections: &[DetectionRecord],
) -> InteractionReport {
    let mut report = InteractionReport::empty();
    report.num_hands = hands.len() as u32;
    report.num_items = detections.len() as u32;
    for det in detections {
        let c = det.class_id.index();
        report.per_class_confidence[c] = report.per_class_confidence[c].max(det.confidence);
        if det.camera != Camera::HandCam {
            continue;
        }
        let item = bbox_center(&det.bbox);
        for hand in hands {
            let d = euclidean_distance(hand.center, item) / FRAME_DIAGONAL;
            let slot = &mut report.per_class_min_distance[c];
            *slot = Some(slot.map_or(d, |cur: f64| cur.min(d)));
        }
    }
    report.global_min_distance = report
        .per_class_min_distance
        .iter()
        .flatten()
        .copied()
        .reduce(f64::min);
    report
}

pub fn analyze_hands(hands: &[LandmarkSet], detections: &[DetectionRecord]) -> InteractionReport {
    let obs: Vec<HandObservation> = hands.iter().map(HandObservation::from_landmarks).collect();
    min_class_distances(&obs, detections)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::ObjectClass;
    use proptest::prelude::*;

    fn hand_at(cx: f64, cy: f64) -> HandObservation {
        let bbox = BBox::new(cx - 0.05, cy - 0.05, cx + 0.05, cy + 0.05).unwrap();
        HandObservation {
            center: bbox.center(),
            bbox,
        }
    }

    fn det(class: ObjectClass, cx: f64, cy: f64, conf: f64, camera: Camera) -> DetectionRecord {
        DetectionRecord {
            class_id: class,
            confidence: conf,
            bbox: BBox::new(cx - 0.04, cy - 0.06, cx + 0.04, cy + 0.06).unwrap(),
            camera,
        }
    }

    #[test]
    fn bbox_center_examples() {
        assert_eq!(bbox_center(&BBox::new(0.0, 0.0, 10.0, 20.0).unwrap()), [5.0, 10.0]);
        let c = bbox_center(&BBox::new(0.2, 0.2, 0.4, 0.6).unwrap());
        assert!((c[0] - 0.3).abs() < 1e-15 && (c[1] - 0.4).abs() < 1e-15);
        assert!(BBox::new(0.5, 0.5, 0.5, 0.6).is_err());
    }

    #[test]
    fn distance_examples() {
        assert_eq!(euclidean_distance([0.0, 0.0], [3.0, 4.0]), 5.0);
        assert_eq!(euclidean_distance([0.3, 0.7], [0.3, 0.7]), 0.0);
    }

    #[test]
    fn coincident_hand_and_phone() {
        let r = min_class_distances(
            &[hand_at(0.5, 0.5)],
            &[det(ObjectClass::CellPhone, 0.5, 0.5, 0.9, Camera::HandCam)],
        );
        assert_eq!(r.per_class_min_distance[0], Some(0.0));
        assert_eq!(r.global_min_distance, Some(0.0));
        assert_eq!(r.per_class_confidence[0], 0.9);
    }

    #[test]
    fn nothing_detected() {
        let r = min_class_distances(&[hand_at(0.5, 0.5)], &[]);
        assert_eq!(r.per_class_min_distance, [None; 6]);
        assert_eq!(r.per_class_confidence, [0.0; 6]);
        assert_eq!(r.num_items, 0);
        assert_eq!(r.num_hands, 1);
        assert_eq!(r.global_min_distance, None);
    }

    #[test]
    fn face_cam_items_give_confidence_only() {
        let r = min_class_distances(
            &[hand_at(0.5, 0.5)],
            &[det(ObjectClass::Headphone, 0.5, 0.5, 0.7, Camera::FaceCam)],
        );
        assert_eq!(r.per_class_confidence[3], 0.7);
        assert_eq!(r.per_class_min_distance[3], None);
    }

    #[test]
    fn two_hands_three_items_match_brute_force() {
        let hands = [hand_at(0.2, 0.7), hand_at(0.75, 0.65)];
        let dets = [
            det(ObjectClass::CellPhone, 0.6, 0.5, 0.8, Camera::HandCam),
            det(ObjectClass::Sheet, 0.3, 0.4, 0.6, Camera::HandCam),
            det(ObjectClass::CellPhone, 0.25, 0.75, 0.5, Camera::HandCam),
        ];
        let r = min_class_distances(&hands, &dets);
        // Exhaustive pairwise enumeration.
        for class in ObjectClass::ALL {
            let mut best: Option<f64> = None;
            for h in &hands {
                for d in dets.iter().filter(|d| d.class_id == class) {
                    let c = d.bbox.center();
                    let dist = ((h.center[0] - c[0]).powi(2) + (h.center[1] - c[1]).powi(2)).sqrt()
                        / 2f64.sqrt();
                    best = Some(best.map_or(dist, |b| b.min(dist)));
                }
            }
            assert_eq!(r.per_class_min_distance[class.index()], best, "{class}");
        }
        assert_eq!(r.per_class_confidence[0], 0.8);
        assert_eq!(r.num_items, 3);
    }

    #[test]
    fn hand_hull_center() {
        let pts: Vec<[f64; 3]> = (0..21)
            .map(|i| [0.4 + 0.01 * (i % 5) as f64, 0.6 + 0.01 * (i / 5) as f64, 0.0])
            .collect();
        let set = LandmarkSet::new(crate::ingest::LandmarkKind::Hand21, pts).unwrap();
        let h = HandObservation::from_landmarks(&set);
        assert!((h.center[0] - 0.42).abs() < 1e-12 && (h.center[1] - 0.62).abs() < 1e-12);
        assert!(h.bbox.x_min <= 0.4 && h.bbox.y_max >= 0.64);
    }

    fn arb_det() -> impl Strategy<Value = DetectionRecord> {
        (0usize..6, 0.06f64..0.94, 0.08f64..0.92, 0.0f64..1.0, any::<bool>()).prop_map(
            |(c, x, y, conf, hand_cam)| {
                det(
                    ObjectClass::ALL[c],
                    x,
                    y,
                    conf,
                    if hand_cam { Camera::HandCam } else { Camera::FaceCam },
                )
            },
        )
    }

    proptest! {
        #[test]
        fn report_invariants(
            hands in prop::collection::vec((0.06f64..0.94, 0.06f64..0.94), 0..4),
            dets in prop::collection::vec(arb_det(), 0..8),
            extra in arb_det(),
            rot in 0usize..8,
        ) {
            let hands: Vec<_> = hands.into_iter().map(|(x, y)| hand_at(x, y)).collect();
            let r = min_class_distances(&hands, &dets);
            for d in r.per_class_min_distance.iter().flatten() {
                prop_assert!((0.0..=1.0).contains(d));
                prop_assert!(r.global_min_distance.unwrap() <= *d);
            }
            let mut more = dets.clone();
            more.push(extra);
            let r2 = min_class_distances(&hands, &more);
            for (a, b) in r.per_class_min_distance.iter().zip(&r2.per_class_min_distance) {
                if let Some(a) = a {
                    prop_assert!(b.unwrap() <= *a);
                }
            }
            let mut h2 = hands.clone();
            h2.reverse();
            let mut d2 = dets.clone();
            if !d2.is_empty() {
                let k = rot % d2.len();
                d2.rotate_left(k);
            }
            prop_assert_eq!(min_class_distances(&h2, &d2), r);
        }
    }
}
