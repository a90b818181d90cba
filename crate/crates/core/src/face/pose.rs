//! Head pose from 2D-3D correspondences.
//!
//! Camera frame follows the usual pinhole convention: `x` right, `y` down,
//! `z` into the scene. The canonical face model is expressed in the same
//! axes so that the identity rotation is a face looking straight into the
//! camera; positive pitch tips the chin down, positive yaw turns the face
//! toward image-right.

use nalgebra::{DMatrix, Matrix3, Matrix6, Rotation3, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use super::FaceError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub image_w: f64,
    pub image_h: f64,
}

impl CameraIntrinsics {
    /// Webcam approximation: focal length equal to image width, principal
    /// point at the image centre, no distortion.
    pub fn approximate(image_w: f64, image_h: f64) -> Self {
        Self {
            fx: image_w,
            fy: image_w,
            cx: image_w / 2.0,
            cy: image_h / 2.0,
            image_w,
            image_h,
        }
    }

    pub fn validate(&self) -> Result<(), FaceError> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx > 0.0
            && self.cx < self.image_w
            && self.cy > 0.0
            && self.cy < self.image_h;
        if ok {
            Ok(())
        } else {
            Err(FaceError::InvalidIntrinsics(format!("{self:?}")))
        }
    }

    /// Pinhole projection; `None` when the point is at or behind the camera.
    pub fn project(&self, p: &Vector3<f64>) -> Option<[f64; 2]> {
        if p.z <= 0.0 {
            return None;
        }
        Some([self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy])
    }

    pub fn to_pixels(&self, xy: [f64; 2]) -> [f64; 2] {
        [xy[0] * self.image_w, xy[1] * self.image_h]
    }
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self::approximate(640.0, 480.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelPoint {
    pub name: String,
    /// Index into the 468-point face mesh.
    pub landmark: usize,
    pub position: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanonicalFaceModel {
    pub points: Vec<ModelPoint>,
}

impl CanonicalFaceModel {
    pub fn validate(&self) -> Result<(), FaceError> {
        if self.points.len() < 6 {
            return Err(FaceError::InvalidModel(format!(
                "{} model points, need at least 6",
                self.points.len()
            )));
        }
        if self
            .points
            .iter()
            .any(|p| p.landmark >= crate::ingest::FACE_LANDMARKS)
        {
            return Err(FaceError::InvalidModel("landmark index out of range".into()));
        }
        let n = self.points.len();
        let mean = self
            .points
            .iter()
            .fold(Vector3::zeros(), |acc, p| acc + Vector3::from(p.position))
            / n as f64;
        let centered = DMatrix::from_fn(n, 3, |r, c| self.points[r].position[c] - mean[c]);
        let sv = centered.singular_values();
        let max = sv.max();
        if !(max > 0.0) || sv.min() <= 1e-9 * max {
            return Err(FaceError::InvalidModel("model points are coplanar".into()));
        }
        Ok(())
    }

    pub fn positions(&self) -> Vec<[f64; 3]> {
        self.points.iter().map(|p| p.position).collect()
    }

    pub fn landmark_indices(&self) -> Vec<usize> {
        self.points.iter().map(|p| p.landmark).collect()
    }
}

impl Default for CanonicalFaceModel {
    /// The common six-point head model (nose tip, chin, outer eye corners,
    /// mouth corners) with `y` and `z` flipped into camera axes, paired with
    /// face-mesh landmarks. "right" is the subject's right, which appears on
    /// image-left.
    fn default() -> Self {
        let p = |name: &str, landmark, position| ModelPoint {
            name: name.into(),
            landmark,
            position,
        };
        Self {
            points: vec![
                p("nose_tip", 1, [0.0, 0.0, 0.0]),
                p("chin", 152, [0.0, 330.0, 65.0]),
                p("right_eye_outer", 33, [-225.0, -170.0, 135.0]),
                p("left_eye_outer", 263, [225.0, -170.0, 135.0]),
                p("mouth_right", 61, [-150.0, 150.0, 125.0]),
                p("mouth_left", 291, [150.0, 150.0, 125.0]),
            ],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub max_iterations: usize,
    pub step_tolerance: f64,
    pub initial_damping: f64,
    /// Starting depth along the optical axis, model units.
    pub initial_depth: f64,
    /// When the identity start ends above this RMSE (pixels), the solver
    /// retries from a small ring of rotated starts and keeps the best.
    pub restart_rmse_px: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            step_tolerance: 1e-8,
            initial_damping: 1e-3,
            initial_depth: 1000.0,
            restart_rmse_px: 4.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseSolution {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub reproj_rmse: f64,
    pub converged: bool,
    pub iterations: usize,
}

struct Problem<'a> {
    image: &'a [[f64; 2]],
    model: Vec<Vector3<f64>>,
    k: &'a CameraIntrinsics,
}

impl Problem<'_> {
    fn cost(&self, r: &Matrix3<f64>, t: &Vector3<f64>) -> f64 {
        let mut sum = 0.0;
        for (m, obs) in self.model.iter().zip(self.image) {
            match self.k.project(&(r * m + t)) {
                Some(uv) => sum += (uv[0] - obs[0]).powi(2) + (uv[1] - obs[1]).powi(2),
                None => return f64::INFINITY,
            }
        }
        sum
    }

    /// Normal equations for a left-multiplied rotation increment
    /// `R <- exp([dw]x) R` and additive translation increment.
    fn normal_equations(&self, r: &Matrix3<f64>, t: &Vector3<f64>) -> (Matrix6<f64>, Vector6<f64>) {
        let mut jtj = Matrix6::zeros();
        let mut jtr = Vector6::zeros();
        for (m, obs) in self.model.iter().zip(self.image) {
            let rm = r * m;
            let p = rm + t;
            let iz = 1.0 / p.z;
            let u = self.k.fx * p.x * iz + self.k.cx;
            let v = self.k.fy * p.y * iz + self.k.cy;
            let du_dp = Vector3::new(self.k.fx * iz, 0.0, -self.k.fx * p.x * iz * iz);
            let dv_dp = Vector3::new(0.0, self.k.fy * iz, -self.k.fy * p.y * iz * iz);
            // dP/dw = -[Rm]x, so row . dP/dw = (Rm x row)
            let ju_w = rm.cross(&du_dp);
            let jv_w = rm.cross(&dv_dp);
            let ju = Vector6::new(ju_w.x, ju_w.y, ju_w.z, du_dp.x, du_dp.y, du_dp.z);
            let jv = Vector6::new(jv_w.x, jv_w.y, jv_w.z, dv_dp.x, dv_dp.y, dv_dp.z);
            let ru = u - obs[0];
            let rv = v - obs[1];
            jtj += ju * ju.transpose() + jv * jv.transpose();
            jtr += ju * ru + jv * rv;
        }
        (jtj, jtr)
    }

    fn run(&self, r0: Matrix3<f64>, t0: Vector3<f64>, cfg: &SolverSettings) -> PoseSolution {
        let mut r = r0;
        let mut t = t0;
        let mut cost = self.cost(&r, &t);
        let mut lambda = cfg.initial_damping;
        let mut converged = false;
        let mut iterations = 0;
        while iterations < cfg.max_iterations {
            iterations += 1;
            let (jtj, jtr) = self.normal_equations(&r, &t);
            let mut a = jtj;
            for i in 0..6 {
                a[(i, i)] += lambda * (jtj[(i, i)] + 1e-12);
            }
            let step = match a.cholesky() {
                Some(ch) => ch.solve(&(-jtr)),
                None => {
                    lambda *= 10.0;
                    continue;
                }
            };
            if step.norm() < cfg.step_tolerance {
                converged = true;
                break;
            }
            let dw = Vector3::new(step[0], step[1], step[2]);
            let r_new = Rotation3::from_scaled_axis(dw).matrix() * r;
            let t_new = t + Vector3::new(step[3], step[4], step[5]);
            let cost_new = self.cost(&r_new, &t_new);
            if cost_new < cost {
                r = r_new;
                t = t_new;
                cost = cost_new;
                lambda /= 10.0;
            } else {
                lambda *= 10.0;
            }
            if cost == 0.0 {
                converged = true;
                break;
            }
        }
        PoseSolution {
            rotation: Rotation3::from_matrix(&r).into_inner(),
            translation: t,
            reproj_rmse: (cost / self.image.len() as f64).sqrt(),
            converged,
            iterations,
        }
    }
}

/// Minimizes the summed squared pixel reprojection error over rotation and
/// translation with Levenberg-Marquardt, starting from the identity rotation
/// at `(0, 0, initial_depth)`. The best iterate is returned even when the
/// iteration budget runs out.
pub fn solve_head_pose(
    points2d: &[[f64; 2]],
    model: &[[f64; 3]],
    k: &CameraIntrinsics,
    cfg: &SolverSettings,
) -> Result<PoseSolution, FaceError> {
    if points2d.len() != model.len() {
        return Err(FaceError::DegenerateInput(format!(
            "{} image points for {} model points",
            points2d.len(),
            model.len()
        )));
    }
    if points2d.len() < 4 {
        return Err(FaceError::DegenerateInput(format!(
            "{} correspondences, need at least 4",
            points2d.len()
        )));
    }
    if points2d.iter().flatten().chain(model.iter().flatten()).any(|v| !v.is_finite()) {
        return Err(FaceError::NonFiniteInput);
    }
    k.validate()?;
    let problem = Problem {
        image: points2d,
        model: model.iter().map(|p| Vector3::from(*p)).collect(),
        k,
    };
    let t0 = Vector3::new(0.0, 0.0, cfg.initial_depth);
    let mut best = problem.run(Matrix3::identity(), t0, cfg);
    if best.reproj_rmse > cfg.restart_rmse_px {
        const STARTS: [(f64, f64); 8] = [
            (0.0, 45.0),
            (0.0, -45.0),
            (45.0, 0.0),
            (-45.0, 0.0),
            (35.0, 35.0),
            (35.0, -35.0),
            (-35.0, 35.0),
            (-35.0, -35.0),
        ];
        for (pitch, yaw) in STARTS {
            let r0 = rotation_from_euler(pitch, yaw, 0.0);
            let candidate = problem.run(r0, t0, cfg);
            if candidate.reproj_rmse < best.reproj_rmse {
                best = candidate;
            }
        }
    }
    Ok(best)
}

/// `R = Rz(roll) * Ry(yaw) * Rx(pitch)`, angles in degrees.
pub fn rotation_from_euler(pitch: f64, yaw: f64, roll: f64) -> Matrix3<f64> {
    let rx = Rotation3::from_axis_angle(&Vector3::x_axis(), pitch.to_radians());
    let ry = Rotation3::from_axis_angle(&Vector3::y_axis(), yaw.to_radians());
    let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), roll.to_radians());
    (rz * ry * rx).into_inner()
}

fn wrap_degrees(a: f64) -> f64 {
    if a <= -180.0 {
        a + 360.0
    } else {
        a
    }
}

/// Tait-Bryan decomposition matching [`rotation_from_euler`]; returns
/// `(pitch, yaw, roll)` in degrees within `(-180, 180]`. At gimbal lock
/// (`|yaw| = 90`) roll is pinned to zero.
pub fn euler_angles(r: &Matrix3<f64>) -> Result<(f64, f64, f64), FaceError> {
    if r.iter().any(|v| !v.is_finite()) {
        return Err(FaceError::NotARotation("non-finite entry".into()));
    }
    let err = (r.transpose() * r - Matrix3::identity()).amax();
    let det = r.determinant();
    if err > 1e-6 || (det - 1.0).abs() > 1e-6 {
        return Err(FaceError::NotARotation(format!(
            "orthonormality error {err:e}, determinant {det}"
        )));
    }
    let sin_yaw = (-r[(2, 0)]).clamp(-1.0, 1.0);
    let (pitch, yaw, roll) = if sin_yaw.abs() < 1.0 - 1e-12 {
        (
            r[(2, 1)].atan2(r[(2, 2)]),
            sin_yaw.asin(),
            r[(1, 0)].atan2(r[(0, 0)]),
        )
    } else if sin_yaw > 0.0 {
        (r[(0, 1)].atan2(r[(1, 1)]), std::f64::consts::FRAC_PI_2, 0.0)
    } else {
        ((-r[(0, 1)]).atan2(r[(1, 1)]), -std::f64::consts::FRAC_PI_2, 0.0)
    };
    Ok((
        wrap_degrees(pitch.to_degrees()),
        wrap_degrees(yaw.to_degrees()),
        wrap_degrees(roll.to_degrees()),
    ))
}

pub fn radial_deviation(pitch: f64, yaw: f64, roll: f64) -> f64 {
    (pitch * pitch + yaw * yaw + roll * roll).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoseZone {
    White = 0,
    Yellow = 1,
    Red = 2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZoneThresholds {
    /// `r` at or below this is white.
    pub yellow_above: f64,
    /// `r` above this is red.
    pub red_above: f64,
}

impl Default for ZoneThresholds {
    fn default() -> Self {
        Self {
            yellow_above: 15.0,
            red_above: 30.0,
        }
    }
}

pub fn classify_pose_zone(r: f64, th: &ZoneThresholds) -> PoseZone {
    if r > th.red_above {
        PoseZone::Red
    } else if r > th.yellow_above {
        PoseZone::Yellow
    } else {
        PoseZone::White
    }
}
