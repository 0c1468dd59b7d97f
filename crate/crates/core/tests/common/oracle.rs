//! Brute-force labeling reference: per-pixel ray casting, border flood fill
//! and nearest-surface composition, sharing no code with the rasterizer.

use clusterpose::{CameraIntrinsics, TriangleMesh, Vec3};
use rand::Rng;

/// Möller-Trumbore intersection of the ray `t * d` (origin at the camera
/// center) with a triangle. With `d.z == 1`, `t` is the camera depth.
pub fn ray_triangle(d: &Vec3, v: &[Vec3; 3]) -> Option<f64> {
    let e1 = v[1] - v[0];
    let e2 = v[2] - v[0];
    let p = d.cross(&e2);
    let det = e1.dot(&p);
    if det == 0.0 {
        return None;
    }
    let inv = 1.0 / det;
    let s = -v[0];
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let w = d.dot(&q) * inv;
    if w < 0.0 || u + w > 1.0 {
        return None;
    }
    let t = e2.dot(&q) * inv;
    (t > 1e-6).then_some(t)
}

/// Nearest hit per pixel (infinity where nothing is hit); vertices are
/// already in the camera frame.
pub fn cast(triangles: &[[Vec3; 3]], camera: &CameraIntrinsics) -> Vec<f64> {
    let (w, h) = (camera.width(), camera.height());
    let mut depth = vec![f64::INFINITY; w * h];
    for y in 0..h {
        for x in 0..w {
            let d = Vec3::new(
                (x as f64 + 0.5 - camera.cx()) / camera.fx(),
                (y as f64 + 0.5 - camera.cy()) / camera.fy(),
                1.0,
            );
            for tri in triangles {
                if let Some(t) = ray_triangle(&d, tri) {
                    depth[y * w + x] = depth[y * w + x].min(t);
                }
            }
        }
    }
    depth
}

/// Pixels not reachable from the border through uncovered pixels.
pub fn fill(covered: &[bool], w: usize, h: usize) -> Vec<bool> {
    let mut reach = vec![false; w * h];
    let mut stack: Vec<(usize, usize)> = Vec::new();
    for x in 0..w {
        stack.push((x, 0));
        stack.push((x, h - 1));
    }
    for y in 0..h {
        stack.push((0, y));
        stack.push((w - 1, y));
    }
    while let Some((x, y)) = stack.pop() {
        let i = y * w + x;
        if covered[i] || reach[i] {
            continue;
        }
        reach[i] = true;
        if x > 0 {
            stack.push((x - 1, y));
        }
        if x + 1 < w {
            stack.push((x + 1, y));
        }
        if y > 0 {
            stack.push((x, y - 1));
        }
        if y + 1 < h {
            stack.push((x, y + 1));
        }
    }
    reach.iter().map(|r| !r).collect()
}

/// Index labels for instances `1..=n`, each given as camera-frame triangles.
pub fn index_mask(instances: &[Vec<[Vec3; 3]>], camera: &CameraIntrinsics) -> Vec<u16> {
    let (w, h) = (camera.width(), camera.height());
    let mut best = vec![(f64::INFINITY, 0u16); w * h];
    for (k, tris) in instances.iter().enumerate() {
        let id = k as u16 + 1;
        let depth = cast(tris, camera);
        let covered: Vec<bool> = depth.iter().map(|d| d.is_finite()).collect();
        let filled = fill(&covered, w, h);
        for i in 0..w * h {
            if filled[i] && (best[i].1 == 0 || depth[i] < best[i].0) {
                best[i] = (depth[i], id);
            }
        }
    }
    best.iter().map(|b| b.1).collect()
}

/// A random soup of triangles in front of (and occasionally straddling) the
/// camera plane, roughly filling a 64x64 view.
pub fn random_soup(rng: &mut impl Rng, triangles: usize) -> Vec<[Vec3; 3]> {
    (0..triangles)
        .map(|_| {
            let center = Vec3::new(
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(0.8..2.0),
            );
            let size = rng.random_range(0.1..0.8);
            let straddle = rng.random::<f64>() < 0.05;
            [0, 1, 2].map(|_| {
                let mut p = center
                    + Vec3::new(
                        rng.random_range(-size..size),
                        rng.random_range(-size..size),
                        rng.random_range(-size..size) * 0.5,
                    );
                if straddle && rng.random::<bool>() {
                    p.z = -p.z;
                }
                p
            })
        })
        .collect()
}

pub fn soup_mesh(tris: &[[Vec3; 3]]) -> TriangleMesh {
    let vertices = tris.iter().flatten().copied().collect();
    let faces = (0..tris.len() as u32).map(|k| [3 * k, 3 * k + 1, 3 * k + 2]).collect();
    TriangleMesh::new(vertices, faces).unwrap()
}
