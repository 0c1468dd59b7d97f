//! Deterministic fixtures shared by the benchmarks.

use clusterpose::synth::{generate_scene, SceneAnnotation, SceneSpec};
use clusterpose::{project, CameraIntrinsics, Correspondence, PartModel, Pose, Vec2, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn bracket() -> PartModel {
    PartModel::bracket(clusterpose::mesh::DEFAULT_KEYPOINT_COUNT)
}

pub fn reference_pose() -> Pose {
    Pose::from_axis_angle(Vec3::new(0.6, -0.4, 0.3), Vec3::new(0.01, -0.02, 0.55))
}

/// Bracket keypoints seen at [`reference_pose`] with Gaussian pixel noise and
/// a fraction of uniformly random outliers.
pub fn bracket_correspondences(sigma: f64, outlier_fraction: f64, seed: u64) -> Vec<Correspondence> {
    let cam = CameraIntrinsics::default();
    let pose = reference_pose();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    bracket()
        .keypoints
        .points()
        .iter()
        .map(|k| {
            let uv = if rng.random::<f64>() < outlier_fraction {
                Vec2::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0))
            } else {
                project(&cam, &pose, &k.position).expect("in front")
                    + Vec2::new(noise.sample(&mut rng), noise.sample(&mut rng))
            };
            Correspondence::new(k.semantic_id, k.position, uv, 1.0)
        })
        .collect()
}

pub fn scene(seed: u64) -> (Vec<PartModel>, SceneAnnotation) {
    let models = vec![bracket()];
    let spec = SceneSpec { seed, ..Default::default() };
    let ann = generate_scene(&spec, &models, 0).expect("default scene is placeable");
    (models, ann)
}
