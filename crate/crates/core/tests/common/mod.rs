#![allow(dead_code)]
pub mod oracle;

use clusterpose::{project, CameraIntrinsics, Correspondence, Pose, Vec2, Vec3};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Uniform rotation (Shoemake) with translation at a random depth in front.
pub fn random_pose(rng: &mut impl Rng, depth: std::ops::Range<f64>) -> Pose {
    let (u1, u2, u3): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
    let tau = std::f64::consts::TAU;
    let q = nalgebra::Quaternion::new(
        (1.0 - u1).sqrt() * (tau * u2).sin(),
        (1.0 - u1).sqrt() * (tau * u2).cos(),
        u1.sqrt() * (tau * u3).sin(),
        u1.sqrt() * (tau * u3).cos(),
    );
    let z = rng.random_range(depth);
    let t = Vec3::new(rng.random_range(-0.1..0.1) * z, rng.random_range(-0.08..0.08) * z, z);
    Pose::from_quaternion(q, t)
}

pub fn random_points(rng: &mut impl Rng, n: usize, half: f64) -> Vec<Vec3> {
    (0..n)
        .map(|_| {
            Vec3::new(
                rng.random_range(-half..half),
                rng.random_range(-half..half),
                rng.random_range(-half..half),
            )
        })
        .collect()
}

pub fn exact_correspondences(camera: &CameraIntrinsics, pose: &Pose, points: &[Vec3]) -> Vec<Correspondence> {
    points
        .iter()
        .enumerate()
        .map(|(i, p)| Correspondence::new(i as u32, *p, project(camera, pose, p).unwrap(), 1.0))
        .collect()
}

pub fn add_noise(rng: &mut impl Rng, corr: &mut [Correspondence], sigma: f64) {
    let n = Normal::new(0.0, sigma).unwrap();
    for c in corr {
        c.point2d += Vec2::new(n.sample(rng), n.sample(rng));
    }
}

pub fn rot_err_deg(a: &Pose, b: &Pose) -> f64 {
    a.rotation_angle_to(b).to_degrees()
}

pub fn trans_err(a: &Pose, b: &Pose) -> f64 {
    a.translation_distance_to(b)
}

/// Axis-aligned cube with its twelve edges numbered 1..=12.
pub fn cube_model(half: f64, keypoints: usize) -> clusterpose::PartModel {
    let mut v = Vec::new();
    for i in 0..8 {
        let s = |b: usize| if i & b != 0 { half } else { -half };
        v.push(Vec3::new(s(1), s(2), s(4)));
    }
    let quads = [[0, 1, 3, 2], [4, 6, 7, 5], [0, 4, 5, 1], [2, 3, 7, 6], [0, 2, 6, 4], [1, 5, 7, 3]];
    let tris = quads
        .iter()
        .flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]])
        .collect();
    let mesh = clusterpose::TriangleMesh::new(v, tris).unwrap();
    let pairs = [(0, 1), (2, 3), (4, 5), (6, 7), (0, 2), (1, 3), (4, 6), (5, 7), (0, 4), (1, 5), (2, 6), (3, 7)];
    let edges = pairs
        .iter()
        .enumerate()
        .map(|(k, &(a, b))| clusterpose::EdgePolyline { edge_id: k as u32 + 1, vertices: vec![a, b] })
        .collect();
    clusterpose::PartModel::new("cube", mesh, edges, keypoints).unwrap()
}
