mod common;

use clusterpose::raster::{compose_index_mask, rasterize, InstanceLayer};
use clusterpose::{CameraIntrinsics, Pose};
use common::oracle;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cam64() -> CameraIntrinsics {
    CameraIntrinsics::new(60.0, 60.0, 32.0, 32.0, 64, 64).unwrap()
}

#[test]
fn depth_matches_ray_casting() {
    let cam = cam64();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..30 {
        let n = rng.random_range(1..6);
        let tris = oracle::random_soup(&mut rng, n);
        let r = rasterize(&oracle::soup_mesh(&tris), &Pose::identity(), &cam);
        let reference = oracle::cast(&tris, &cam);
        for y in 0..64 {
            for x in 0..64 {
                let (a, b) = (r.depth.get(x, y), reference[y * 64 + x]);
                assert_eq!(a.is_finite(), b.is_finite(), "coverage at ({x},{y})");
                if a.is_finite() {
                    assert!((a - b).abs() <= 1e-9 * b, "depth at ({x},{y}): {a} vs {b}");
                }
            }
        }
    }
}

#[test]
fn index_masks_match_brute_force() {
    let cam = cam64();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for trial in 0..100 {
        let parts: Vec<_> = (0..rng.random_range(1..5))
            .map(|_| {
                let n = rng.random_range(1..5);
                oracle::random_soup(&mut rng, n)
            })
            .collect();
        let layers: Vec<InstanceLayer> = parts
            .iter()
            .enumerate()
            .map(|(k, t)| InstanceLayer::render(k as u16 + 1, &oracle::soup_mesh(t), &Pose::identity(), &cam))
            .collect();
        let mask = compose_index_mask(&layers).unwrap();
        let reference = oracle::index_mask(&parts, &cam);
        let differing = mask.labels().iter().zip(&reference).filter(|(a, b)| a != b).count();
        assert_eq!(differing, 0, "trial {trial}");
    }
}
