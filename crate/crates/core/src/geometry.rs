//! Rigid transforms, pinhole projection and reprojection error.
//!
//! A [`Pose`] maps model-frame points into the camera frame. The camera looks
//! down +Z with image x to the right and image y down; pixel `(i, j)` covers
//! `[i, i+1) x [j, j+1)` so its center sits at `(i + 0.5, j + 0.5)`.

use nalgebra::{Matrix3, Matrix4, Quaternion, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec2 = Vector2<f64>;
pub type Vec3 = Vector3<f64>;

/// Points with camera-frame depth at or below this value are behind the camera.
pub const Z_MIN: f64 = 1e-6;

/// Penalty distance, in image diagonals, charged for a point behind the camera.
pub const BEHIND_CAMERA_PENALTY_DIAGONALS: f64 = 10.0;

/// Rigid transform from the model frame to the camera frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "PoseRecord", into = "PoseRecord")]
pub struct Pose {
    rotation: UnitQuaternion<f64>,
    translation: Vec3,
}

#[derive(Serialize, Deserialize)]
struct PoseRecord {
    rotation_wxyz: [f64; 4],
    translation: [f64; 3],
}

impl From<PoseRecord> for Pose {
    fn from(r: PoseRecord) -> Self {
        let [w, x, y, z] = r.rotation_wxyz;
        Pose::from_quaternion(Quaternion::new(w, x, y, z), Vec3::from(r.translation))
    }
}

impl From<Pose> for PoseRecord {
    fn from(p: Pose) -> Self {
        PoseRecord {
            rotation_wxyz: p.rotation_wxyz(),
            translation: p.translation.into(),
        }
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: UnitQuaternion::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vec3) -> Self {
        Self::from_quaternion(rotation.into_inner(), translation)
    }

    /// Builds a pose from a possibly non-normalized quaternion.
    pub fn from_quaternion(q: Quaternion<f64>, translation: Vec3) -> Self {
        Pose {
            rotation: canonical(q),
            translation,
        }
    }

    pub fn from_axis_angle(axis_angle: Vec3, translation: Vec3) -> Self {
        Self::new(UnitQuaternion::from_scaled_axis(axis_angle), translation)
    }

    /// Projects an arbitrary 3x3 matrix onto SO(3) before building the pose.
    pub fn from_matrix(rotation: &Matrix3<f64>, translation: Vec3) -> Self {
        let rot = nalgebra::Rotation3::from_matrix(rotation);
        Self::new(UnitQuaternion::from_rotation_matrix(&rot), translation)
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn rotation_wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&self.rotation_matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn transform(&self, x: &Vec3) -> Vec3 {
        self.rotation * x + self.translation
    }

    /// `compose(a, b)` applies `b` first, then `a`.
    pub fn compose(&self, b: &Pose) -> Pose {
        Pose::from_quaternion(
            self.rotation.into_inner() * b.rotation.into_inner(),
            self.rotation * b.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.rotation.inverse();
        Pose::new(inv, -(inv * self.translation))
    }

    /// Left-multiplies the rotation by `exp(delta_rot)` and adds `delta_t`.
    pub(crate) fn retract(&self, delta_rot: &Vec3, delta_t: &Vec3) -> Pose {
        let dq = UnitQuaternion::from_scaled_axis(*delta_rot);
        Pose::from_quaternion(
            dq.into_inner() * self.rotation.into_inner(),
            self.translation + delta_t,
        )
    }

    /// Geodesic angle between the two rotations, in radians.
    pub fn rotation_angle_to(&self, other: &Pose) -> f64 {
        // Twice the angle between the unit quaternions on the near hemisphere,
        // in a form that is exactly zero for equal rotations.
        let a = self.rotation.into_inner().coords;
        let mut b = other.rotation.into_inner().coords;
        if a.dot(&b) < 0.0 {
            b = -b;
        }
        4.0 * (a - b).norm().atan2((a + b).norm())
    }

    pub fn translation_distance_to(&self, other: &Pose) -> f64 {
        (self.translation - other.translation).norm()
    }
}

// Renormalizes and picks the hemisphere w >= 0 (first nonzero component
// positive when w == 0) so equal rotations have equal components.
fn canonical(q: Quaternion<f64>) -> UnitQuaternion<f64> {
    let n = q.norm();
    // Leaves already-unit input bit-identical so serialized poses round-trip.
    let q = if (n - 1.0).abs() <= 4.0 * f64::EPSILON { q } else { q / n };
    let flip = match [q.w, q.i, q.j, q.k].into_iter().find(|c| *c != 0.0) {
        Some(c) => c < 0.0,
        None => false,
    };
    UnitQuaternion::new_unchecked(if flip { -q } else { q })
}

/// Pinhole intrinsics without distortion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraRecord", into = "CameraRecord")]
pub struct CameraIntrinsics {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: usize,
    height: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraRecord {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: usize,
    height: usize,
}

impl TryFrom<CameraRecord> for CameraIntrinsics {
    type Error = Error;

    fn try_from(r: CameraRecord) -> Result<Self> {
        CameraIntrinsics::new(r.fx, r.fy, r.cx, r.cy, r.width, r.height)
    }
}

impl From<CameraIntrinsics> for CameraRecord {
    fn from(c: CameraIntrinsics) -> Self {
        CameraRecord {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
        }
    }
}

impl Default for CameraIntrinsics {
    /// 640x480 with a 500 px focal length.
    fn default() -> Self {
        CameraIntrinsics {
            fx: 500.0,
            fy: 500.0,
            cx: 320.0,
            cy: 240.0,
            width: 640,
            height: 480,
        }
    }
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(Error::InvalidCamera(format!(
                "focal lengths must be positive (fx={fx}, fy={fy})"
            )));
        }
        if !(0.0..width as f64).contains(&cx) || !(0.0..height as f64).contains(&cy) {
            return Err(Error::InvalidCamera(format!(
                "principal point ({cx}, {cy}) outside {width}x{height} image"
            )));
        }
        Ok(CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    pub fn fx(&self) -> f64 {
        self.fx
    }
    pub fn fy(&self) -> f64 {
        self.fy
    }
    pub fn cx(&self) -> f64 {
        self.cx
    }
    pub fn cy(&self) -> f64 {
        self.cy
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn diagonal(&self) -> f64 {
        (self.width as f64).hypot(self.height as f64)
    }

    /// Projects a camera-frame point; `None` when it lies at or behind `Z_MIN`.
    pub fn project_camera_point(&self, p: &Vec3) -> Option<Vec2> {
        if p.z <= Z_MIN {
            return None;
        }
        Some(Vec2::new(
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        ))
    }

    /// Inverse of projection at a known depth.
    pub fn back_project(&self, pixel: &Vec2, depth: f64) -> Vec3 {
        Vec3::new(
            (pixel.x - self.cx) / self.fx * depth,
            (pixel.y - self.cy) / self.fy * depth,
            depth,
        )
    }

    /// Normalized image-plane coordinates of a pixel.
    pub fn normalize(&self, pixel: &Vec2) -> Vec2 {
        Vec2::new((pixel.x - self.cx) / self.fx, (pixel.y - self.cy) / self.fy)
    }

    pub fn contains(&self, pixel: &Vec2) -> bool {
        pixel.x >= 0.0
            && pixel.y >= 0.0
            && pixel.x < self.width as f64
            && pixel.y < self.height as f64
    }
}

/// Projects a model-frame point through `pose`; `None` means behind the camera.
pub fn project(camera: &CameraIntrinsics, pose: &Pose, point: &Vec3) -> Option<Vec2> {
    camera.project_camera_point(&pose.transform(point))
}

/// Standard deviations of `points` along their principal axes, largest
/// first. Zero for fewer than two points.
pub fn principal_spreads(points: &[Vec3]) -> [f64; 3] {
    if points.len() < 2 {
        return [0.0; 3];
    }
    let n = points.len() as f64;
    let centroid = points.iter().sum::<Vec3>() / n;
    let scatter = points
        .iter()
        .map(|p| (p - centroid) * (p - centroid).transpose())
        .sum::<Matrix3<f64>>()
        / n;
    let mut ev: Vec<f64> = scatter.symmetric_eigenvalues().iter().map(|e| e.max(0.0).sqrt()).collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    [ev[0], ev[1], ev[2]]
}

/// One model keypoint: semantic identity, owning edge and model-frame position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint3D {
    pub semantic_id: u32,
    pub edge_id: u32,
    pub position: Vec3,
}

/// Model keypoints indexed by semantic id (ids are `0..len`).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct KeypointSet3D {
    points: Vec<Keypoint3D>,
}

impl KeypointSet3D {
    pub fn new(mut points: Vec<Keypoint3D>) -> Result<Self> {
        points.sort_by_key(|p| p.semantic_id);
        for (i, p) in points.iter().enumerate() {
            if p.semantic_id as usize != i {
                return Err(Error::InvalidKeypoints(format!(
                    "semantic ids must be unique and contiguous from 0; expected {i}, found {}",
                    p.semantic_id
                )));
            }
        }
        Ok(KeypointSet3D { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn get(&self, semantic_id: u32) -> Option<&Keypoint3D> {
        self.points.get(semantic_id as usize)
    }

    pub fn points(&self) -> &[Keypoint3D] {
        &self.points
    }

    pub fn edge_of(&self, semantic_id: u32) -> Option<u32> {
        self.get(semantic_id).map(|p| p.edge_id)
    }

    /// Distinct edge ids in ascending order.
    pub fn edge_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.points.iter().map(|p| p.edge_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

/// A weighted 2D-3D match. The weight is the detection confidence in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub semantic_id: u32,
    pub point3d: Vec3,
    pub point2d: Vec2,
    pub weight: f64,
}

impl Correspondence {
    pub fn new(semantic_id: u32, point3d: Vec3, point2d: Vec2, weight: f64) -> Self {
        debug_assert!((0.0..=1.0).contains(&weight), "weight {weight} outside [0,1]");
        Correspondence {
            semantic_id,
            point3d,
            point2d,
            weight,
        }
    }
}

/// Pixel residual of one correspondence; behind-camera points get the fixed penalty.
pub(crate) fn residual_norm_sq(camera: &CameraIntrinsics, pose: &Pose, c: &Correspondence) -> f64 {
    match project(camera, pose, &c.point3d) {
        Some(uv) => (uv - c.point2d).norm_squared(),
        None => behind_camera_penalty_sq(camera),
    }
}

pub(crate) fn behind_camera_penalty_sq(camera: &CameraIntrinsics) -> f64 {
    let p = BEHIND_CAMERA_PENALTY_DIAGONALS * camera.diagonal();
    p * p
}

/// Weighted RMS pixel error `sqrt(sum w |proj - uv|^2 / sum w)`.
pub fn reprojection_error(
    camera: &CameraIntrinsics,
    pose: &Pose,
    correspondences: &[Correspondence],
) -> Result<f64> {
    if correspondences.is_empty() {
        return Err(Error::NoCorrespondences);
    }
    let (num, den) = correspondences.iter().fold((0.0, 0.0), |(n, d), c| {
        (n + c.weight * residual_norm_sq(camera, pose, c), d + c.weight)
    });
    if den <= 0.0 {
        return Err(Error::ZeroTotalWeight);
    }
    Ok((num / den).sqrt())
}
