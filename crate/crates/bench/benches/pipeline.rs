use std::hint::black_box;

use clusterpose::multi::{estimate_scene, simulate_detections, EstimatorConfig, SimulatedDetectorConfig};
use clusterpose::pnp::{refine_pose, solve_pnp_ransac, RansacConfig, RefineConfig};
use clusterpose::raster::{compose_index_mask, rasterize, InstanceLayer};
use clusterpose::{CameraIntrinsics, Pose, Vec3};
use clusterpose_bench::{bracket, bracket_correspondences, reference_pose, scene};
use criterion::{criterion_group, criterion_main, Criterion};

fn pnp(c: &mut Criterion) {
    let cam = CameraIntrinsics::default();
    let clean = bracket_correspondences(2.0, 0.0, 1);
    let dirty = bracket_correspondences(2.0, 0.3, 1);
    c.bench_function("ransac_700_noisy", |b| {
        b.iter(|| solve_pnp_ransac(black_box(&clean), &cam, &RansacConfig::default()).unwrap())
    });
    c.bench_function("ransac_700_30pct_outliers", |b| {
        b.iter(|| solve_pnp_ransac(black_box(&dirty), &cam, &RansacConfig::default()).unwrap())
    });
    let start = Pose::from_axis_angle(Vec3::new(0.05, 0.0, -0.03), Vec3::new(0.01, 0.0, 0.0)).compose(&reference_pose());
    c.bench_function("refine_700", |b| {
        b.iter(|| refine_pose(&cam, black_box(&start), &clean, &RefineConfig::default()).unwrap())
    });
}

fn labeling(c: &mut Criterion) {
    let cam = CameraIntrinsics::default();
    let part = bracket();
    c.bench_function("rasterize_bracket_640x480", |b| {
        b.iter(|| rasterize(&part.mesh, black_box(&reference_pose()), &cam))
    });
    let (_, ann) = scene(3);
    let layers: Vec<InstanceLayer> = ann
        .instances
        .iter()
        .map(|i| InstanceLayer::render(i.id, &part.mesh, &i.pose, &cam))
        .collect();
    c.bench_function("compose_index_mask_scene", |b| b.iter(|| compose_index_mask(black_box(&layers)).unwrap()));
}

fn scene_estimation(c: &mut Criterion) {
    let cam = CameraIntrinsics::default();
    let (models, ann) = scene(5);
    let det = simulate_detections(&ann, &models, &cam, &SimulatedDetectorConfig::default()).unwrap();
    c.bench_function("estimate_scene_default_noise", |b| {
        b.iter(|| estimate_scene(black_box(&det), &models, &cam, &EstimatorConfig::default()).unwrap())
    });
}

criterion_group!(benches, pnp, labeling, scene_estimation);
criterion_main!(benches);
