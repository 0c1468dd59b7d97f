mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use clusterpose::error::Error;
use clusterpose::synth::{
    annotate_scene, check_annotation, generate_scene, generate_scenes, random_rotation,
    read_annotation, read_manifest, sample_scene, DatasetWriter, PlacedInstance, Scene, SceneSpec,
};
use clusterpose::{CameraIntrinsics, PartModel, Pose, Vec3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn bracket() -> Vec<PartModel> {
    vec![PartModel::bracket(700)]
}

fn spec(seed: u64) -> SceneSpec {
    SceneSpec { seed, ..Default::default() }
}

fn scene(instances: &[(u16, Pose)]) -> Scene {
    Scene {
        id: "t".into(),
        instances: instances.iter().map(|&(id, pose)| PlacedInstance { id, model: 0, pose }).collect(),
    }
}

#[test]
fn same_seed_same_scene() {
    let models = bracket();
    let a = generate_scene(&spec(11), &models, 3).unwrap();
    let b = generate_scene(&spec(11), &models, 3).unwrap();
    assert_eq!(a, b);
    let c = generate_scene(&spec(12), &models, 3).unwrap();
    assert_ne!(a.instances[0].pose, c.instances[0].pose);
}

#[test]
fn rotations_are_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let n = 1000;
    let mut mean = [0.0; 4];
    let mut second = [0.0; 4];
    for _ in 0..n {
        let q = random_rotation(&mut rng);
        let c = [q.w, q.i, q.j, q.k];
        assert!((c.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
        for k in 0..4 {
            mean[k] += c[k] / n as f64;
            second[k] += c[k] * c[k] / n as f64;
        }
    }
    // Uniform on S^3: each component has mean 0 and variance 1/4, so the
    // sample mean has standard deviation 1/(2 sqrt(n)) ~ 0.016.
    for k in 0..4 {
        assert!(mean[k].abs() < 0.06, "component {k} mean {}", mean[k]);
        assert!((second[k] - 0.25).abs() < 0.03, "component {k} second moment {}", second[k]);
    }
}

#[test]
fn bounding_spheres_never_intersect() {
    let models = bracket();
    let r = models[0].radius();
    for s in generate_scenes(&spec(3), &models, 30).unwrap() {
        assert!((5..=6).contains(&s.instances.len()));
        for (i, a) in s.instances.iter().enumerate() {
            for b in &s.instances[i + 1..] {
                assert!((a.pose.translation() - b.pose.translation()).norm() > 2.0 * r);
            }
        }
    }
}

// Principal spreads from the singular values of the centered point matrix.
fn spread_ratio(points: &[Vec3]) -> f64 {
    let c = points.iter().sum::<Vec3>() / points.len() as f64;
    let m = nalgebra::DMatrix::from_fn(points.len(), 3, |r, k| points[r][k] - c[k]);
    let mut sv: Vec<f64> = m.svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv[1] / sv[0]
}

#[test]
fn every_part_is_well_observed() {
    let models = bracket();
    let s = spec(21);
    for scene in generate_scenes(&s, &models, 30).unwrap() {
        for inst in &scene.instances {
            assert!(inst.keypoints.len() >= s.min_visible_keypoints);
            let pts: Vec<Vec3> = inst
                .keypoints
                .iter()
                .map(|k| models[0].keypoints.get(k.semantic_id).unwrap().position)
                .collect();
            assert!(spread_ratio(&pts) >= s.min_keypoint_spread);
        }
    }
    let bad = SceneSpec { min_keypoint_spread: 1.5, ..spec(0) };
    assert!(matches!(generate_scene(&bad, &models, 0), Err(Error::InvalidConfig(_))));
}

#[test]
fn sampling_counts_attempts() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut attempts = 0;
    let placed = sample_scene(&spec(0), &[0.055], &mut rng, &mut attempts).unwrap();
    assert!(attempts >= placed.len());
}

#[test]
fn single_centered_part_has_tight_box() {
    let cam = CameraIntrinsics::default();
    let pose = Pose::from_axis_angle(Vec3::new(0.4, 0.3, 0.1), Vec3::new(0.0, 0.0, 0.5));
    let ann = annotate_scene(&scene(&[(1, pose)]), &bracket(), &cam).unwrap();
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
    for y in 0..cam.height() {
        for x in 0..cam.width() {
            if ann.mask.get(x, y) == 1 {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
        }
    }
    let b = ann.instances[0].bbox.unwrap();
    assert_eq!((b.x_min, b.y_min, b.x_max, b.y_max), (x0, y0, x1, y1));
}

#[test]
fn disjoint_parts_annotate_independently() {
    let cam = CameraIntrinsics::default();
    let models = bracket();
    let a = Pose::from_axis_angle(Vec3::new(0.3, -0.2, 0.5), Vec3::new(-0.1, 0.0, 0.6));
    let b = Pose::from_axis_angle(Vec3::new(-1.0, 0.4, 0.2), Vec3::new(0.1, 0.02, 0.6));
    let both = annotate_scene(&scene(&[(1, a), (2, b)]), &models, &cam).unwrap();
    assert!(!both.instances[0].bbox.unwrap().intersects(&both.instances[1].bbox.unwrap()));
    let only_a = annotate_scene(&scene(&[(1, a)]), &models, &cam).unwrap();
    let only_b = annotate_scene(&scene(&[(2, b)]), &models, &cam).unwrap();
    assert_eq!(both.instances[0].keypoints, only_a.instances[0].keypoints);
    assert_eq!(both.instances[1].keypoints, only_b.instances[0].keypoints);
}

#[test]
fn fully_occluded_part_is_unlabeled() {
    let cam = CameraIntrinsics::default();
    let models = vec![common::cube_model(0.03, 120)];
    let near = Pose::from_axis_angle(Vec3::zeros(), Vec3::new(0.0, 0.0, 0.4));
    let far = Pose::from_axis_angle(Vec3::zeros(), Vec3::new(0.0, 0.0, 0.9));
    let ann = annotate_scene(&scene(&[(1, near), (2, far)]), &models, &cam).unwrap();
    assert!(ann.instances[1].keypoints.is_empty());
    assert_eq!(ann.mask.pixel_count(2), 0);
    assert_eq!(ann.instances[1].bbox, None);
    assert!(!ann.instances[0].keypoints.is_empty());
}

fn dataset_bytes(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().display().to_string(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn write(root: &Path, seed: u64, n: usize, background: Option<&image::RgbImage>) -> clusterpose::synth::Manifest {
    let models = bracket();
    let s = spec(seed);
    let scenes = generate_scenes(&s, &models, n).unwrap();
    DatasetWriter {
        camera: &s.camera,
        seed,
        split_fraction: 0.9,
        model_names: vec!["bracket".into()],
        background,
    }
    .write(root, &scenes)
    .unwrap()
}

#[test]
fn dataset_split_and_determinism() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let m = write(a.path(), 9, 10, None);
    assert_eq!((m.train.len(), m.test.len()), (9, 1));
    write(b.path(), 9, 10, None);
    let (ba, bb) = (dataset_bytes(a.path()), dataset_bytes(b.path()));
    assert_eq!(ba.len(), 21);
    assert_eq!(ba, bb);
}

#[test]
fn dataset_round_trip_and_labels_verify() {
    let dir = tempfile::tempdir().unwrap();
    let models = bracket();
    let s = spec(21);
    let scenes = generate_scenes(&s, &models, 4).unwrap();
    let bg = image::RgbImage::from_pixel(32, 24, image::Rgb([30, 60, 90]));
    DatasetWriter {
        camera: &s.camera,
        seed: 21,
        split_fraction: 0.5,
        model_names: vec!["bracket".into()],
        background: Some(&bg),
    }
    .write(dir.path(), &scenes)
    .unwrap();
    let manifest = read_manifest(dir.path()).unwrap();
    assert_eq!(manifest.camera, s.camera);
    for sc in &scenes {
        let back = read_annotation(dir.path(), &sc.scene_id).unwrap();
        assert_eq!(&back, sc);
        assert!(check_annotation(&back, &models, &s.camera).unwrap().is_empty());
        assert!(dir.path().join("scenes").join(&sc.scene_id).join("image.png").exists());
        for inst in &back.instances {
            let Some(b) = inst.bbox else { continue };
            let (mut touches, mut inside) = ([false; 4], true);
            for y in 0..back.mask.height() {
                for x in 0..back.mask.width() {
                    if back.mask.get(x, y) != inst.id {
                        continue;
                    }
                    inside &= x >= b.x_min && x <= b.x_max && y >= b.y_min && y <= b.y_max;
                    touches[0] |= x == b.x_min;
                    touches[1] |= x == b.x_max;
                    touches[2] |= y == b.y_min;
                    touches[3] |= y == b.y_max;
                }
            }
            assert!(inside && touches.iter().all(|&t| t));
        }
    }
}

#[test]
fn tampered_annotation_fails_check() {
    let models = bracket();
    let s = spec(4);
    let mut ann = generate_scene(&s, &models, 0).unwrap();
    assert!(check_annotation(&ann, &models, &s.camera).unwrap().is_empty());
    ann.instances[0].keypoints.pop();
    if let Some(b) = ann.instances[1].bbox.as_mut() {
        b.x_max += 1;
    }
    assert_eq!(check_annotation(&ann, &models, &s.camera).unwrap().len(), 2);
}

#[test]
fn duplicate_scene_ids_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let models = bracket();
    let s = spec(1);
    let one = generate_scene(&s, &models, 0).unwrap();
    let err = DatasetWriter {
        camera: &s.camera,
        seed: 1,
        split_fraction: 0.9,
        model_names: vec![],
        background: None,
    }
    .write(dir.path(), &[one.clone(), one])
    .unwrap_err();
    assert!(matches!(err, Error::DuplicateScene(id) if id == "00000"));
}
