//! Geometry-exact labeling: silhouettes, depth, index masks, keypoint
//! visibility and heatmap targets.
//!
//! Triangles are rasterized in homogeneous form: for a pixel-center ray `d`
//! and camera-frame vertices `v0, v1, v2`, the edge functions
//! `E_i = d . (v_j x v_k)` are the barycentric weights scaled by `det / t`,
//! so coverage and depth come out without near-plane clipping. Both windings
//! are rendered. A pixel center lying exactly on an edge belongs to the
//! triangle for which that edge is a top or left edge.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, KeypointSet3D, Pose, Vec2, Vec3, Z_MIN};
use crate::mesh::TriangleMesh;

/// Depth slack for keypoint visibility, meters.
pub const DEFAULT_DEPTH_EPS: f64 = 1e-4;

/// Default heatmap spread, pixels.
pub const DEFAULT_HEATMAP_SIGMA: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryImage {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl BinaryImage {
    pub fn new(width: usize, height: usize) -> Self {
        BinaryImage {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut img = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                img.data[y * width + x] = f(x, y);
            }
        }
        img
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.data
    }

    /// Whether the pixel containing `p` is set; points outside the image are not.
    pub fn contains_point(&self, p: &Vec2) -> bool {
        if !(p.x >= 0.0 && p.y >= 0.0) {
            return false;
        }
        let (x, y) = (p.x as usize, p.y as usize);
        x < self.width && y < self.height && self.get(x, y)
    }

    pub fn union_with(&mut self, other: &BinaryImage) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a |= *b;
        }
    }

    /// Square (Chebyshev) dilation by `radius` pixels.
    pub fn dilate(&self, radius: usize) -> BinaryImage {
        if radius == 0 {
            return self.clone();
        }
        let (w, h) = (self.width, self.height);
        let mut rows = vec![false; w * h];
        for y in 0..h {
            for x in 0..w {
                let lo = x.saturating_sub(radius);
                let hi = (x + radius).min(w - 1);
                rows[y * w + x] = (lo..=hi).any(|xx| self.data[y * w + xx]);
            }
        }
        let mut out = BinaryImage::new(w, h);
        for y in 0..h {
            let lo = y.saturating_sub(radius);
            let hi = (y + radius).min(h - 1);
            for x in 0..w {
                out.data[y * w + x] = (lo..=hi).any(|yy| rows[yy * w + x]);
            }
        }
        out
    }
}

/// Per-pixel nearest depth in meters; `+inf` where nothing was drawn.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthBuffer {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl DepthBuffer {
    pub fn new(width: usize, height: usize) -> Self {
        DepthBuffer {
            width,
            height,
            data: vec![f64::INFINITY; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Pixel-wise minimum over several buffers of equal size.
    pub fn min_of<'a>(buffers: impl IntoIterator<Item = &'a DepthBuffer>) -> Result<DepthBuffer> {
        let mut iter = buffers.into_iter();
        let first = iter
            .next()
            .ok_or_else(|| Error::InvalidConfig("no depth buffers to combine".into()))?;
        let mut out = first.clone();
        for b in iter {
            check_dims((out.width, out.height), (b.width, b.height))?;
            for (o, d) in out.data.iter_mut().zip(&b.data) {
                *o = o.min(*d);
            }
        }
        Ok(out)
    }
}

fn check_dims(expected: (usize, usize), got: (usize, usize)) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// Coverage and depth of a single rendered mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub coverage: BinaryImage,
    pub depth: DepthBuffer,
}

/// Renders `mesh` at `pose`. A pixel is covered when some triangle contains its
/// center at a depth greater than `Z_MIN`; depth keeps the nearest hit.
pub fn rasterize(mesh: &TriangleMesh, pose: &Pose, camera: &CameraIntrinsics) -> Raster {
    let (w, h) = (camera.width(), camera.height());
    let mut depth = DepthBuffer::new(w, h);
    let cam_vertices: Vec<Vec3> = mesh.vertices().iter().map(|v| pose.transform(v)).collect();
    let (fx, fy, cx, cy) = (camera.fx(), camera.fy(), camera.cx(), camera.cy());

    for tri in mesh.triangles() {
        let v = tri.map(|i| cam_vertices[i as usize]);
        let det = v[0].dot(&v[1].cross(&v[2]));
        if det == 0.0 || v.iter().all(|p| p.z <= Z_MIN) {
            continue;
        }
        let s = det.signum();
        // Edge i is opposite vertex i; normals oriented so the inside is positive.
        let normals = [
            v[1].cross(&v[2]) * s,
            v[2].cross(&v[0]) * s,
            v[0].cross(&v[1]) * s,
        ];
        // Pixel-space gradient of each edge function decides tie ownership.
        let owns_ties = normals.map(|n| {
            let (a, b) = (n.x / fx, n.y / fy);
            b > 0.0 || (b == 0.0 && a > 0.0)
        });

        let (x0, x1, y0, y1) = match pixel_bounds(&v, camera) {
            Some(b) => b,
            None => continue,
        };
        for py in y0..y1 {
            let dy = (py as f64 + 0.5 - cy) / fy;
            for px in x0..x1 {
                let d = Vec3::new((px as f64 + 0.5 - cx) / fx, dy, 1.0);
                let e = [normals[0].dot(&d), normals[1].dot(&d), normals[2].dot(&d)];
                let inside = (0..3).all(|i| e[i] > 0.0 || (e[i] == 0.0 && owns_ties[i]));
                if !inside {
                    continue;
                }
                let sum = e[0] + e[1] + e[2];
                if sum <= 0.0 {
                    continue;
                }
                let z = det.abs() / sum;
                if z > Z_MIN {
                    let slot = &mut depth.data[py * w + px];
                    if z < *slot {
                        *slot = z;
                    }
                }
            }
        }
    }
    let coverage = BinaryImage {
        width: w,
        height: h,
        data: depth.data.iter().map(|d| d.is_finite()).collect(),
    };
    Raster { coverage, depth }
}

// Pixel rectangle [x0, x1) x [y0, y1) that can contain the triangle. Triangles
// crossing the camera plane may cover anything, so they scan the full image.
fn pixel_bounds(v: &[Vec3; 3], camera: &CameraIntrinsics) -> Option<(usize, usize, usize, usize)> {
    let (w, h) = (camera.width(), camera.height());
    if v.iter().any(|p| p.z <= Z_MIN) {
        return Some((0, w, 0, h));
    }
    let pts: Vec<Vec2> = v
        .iter()
        .map(|p| camera.project_camera_point(p).expect("in front"))
        .collect();
    let (mut lo_x, mut hi_x, mut lo_y, mut hi_y) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for p in &pts {
        lo_x = lo_x.min(p.x);
        hi_x = hi_x.max(p.x);
        lo_y = lo_y.min(p.y);
        hi_y = hi_y.max(p.y);
    }
    // Pixel centers at i + 0.5 within [lo, hi], padded by one pixel for rounding.
    let clamp = |v: f64, max: usize| -> usize { v.max(0.0).min(max as f64) as usize };
    let x0 = clamp((lo_x - 0.5).floor() - 1.0, w);
    let x1 = clamp((hi_x - 0.5).ceil() + 2.0, w);
    let y0 = clamp((lo_y - 0.5).floor() - 1.0, h);
    let y1 = clamp((hi_y - 0.5).ceil() + 2.0, h);
    (x0 < x1 && y0 < y1).then_some((x0, x1, y0, y1))
}

/// Fills the external contour: every pixel that cannot reach the image border
/// through unset pixels (4-connectivity) is set.
pub fn mask_from_silhouette(coverage: &BinaryImage) -> BinaryImage {
    let (w, h) = (coverage.width, coverage.height);
    let mut outside = vec![false; w * h];
    let mut queue = VecDeque::new();
    let seed = |x: usize, y: usize, outside: &mut Vec<bool>, q: &mut VecDeque<usize>| {
        let i = y * w + x;
        if !coverage.data[i] && !outside[i] {
            outside[i] = true;
            q.push_back(i);
        }
    };
    for x in 0..w {
        seed(x, 0, &mut outside, &mut queue);
        if h > 1 {
            seed(x, h - 1, &mut outside, &mut queue);
        }
    }
    for y in 0..h {
        seed(0, y, &mut outside, &mut queue);
        if w > 1 {
            seed(w - 1, y, &mut outside, &mut queue);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = (i % w, i / w);
        if x > 0 {
            seed(x - 1, y, &mut outside, &mut queue);
        }
        if x + 1 < w {
            seed(x + 1, y, &mut outside, &mut queue);
        }
        if y > 0 {
            seed(x, y - 1, &mut outside, &mut queue);
        }
        if y + 1 < h {
            seed(x, y + 1, &mut outside, &mut queue);
        }
    }
    BinaryImage {
        width: w,
        height: h,
        data: outside.into_iter().map(|o| !o).collect(),
    }
}

/// Inclusive pixel-index bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: usize,
    pub y_min: usize,
    pub x_max: usize,
    pub y_max: usize,
}

impl BoundingBox {
    pub fn contains(&self, p: &Vec2) -> bool {
        p.x >= self.x_min as f64
            && p.y >= self.y_min as f64
            && p.x < (self.x_max + 1) as f64
            && p.y < (self.y_max + 1) as f64
    }

    pub fn intersects(&self, o: &BoundingBox) -> bool {
        self.x_min <= o.x_max && o.x_min <= self.x_max && self.y_min <= o.y_max && o.y_min <= self.y_max
    }

    pub fn width(&self) -> usize {
        self.x_max - self.x_min + 1
    }

    pub fn height(&self) -> usize {
        self.y_max - self.y_min + 1
    }
}

/// Per-pixel instance labels; 0 is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexMask {
    width: usize,
    height: usize,
    labels: Vec<u16>,
}

impl IndexMask {
    pub fn new(width: usize, height: usize) -> Self {
        IndexMask {
            width,
            height,
            labels: vec![0; width * height],
        }
    }

    pub fn from_labels(width: usize, height: usize, labels: Vec<u16>) -> Result<Self> {
        check_dims((width * height, 1), (labels.len(), 1))?;
        Ok(IndexMask {
            width,
            height,
            labels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.labels[y * self.width + x]
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    /// Sorted nonzero labels present in the mask.
    pub fn instance_ids(&self) -> Vec<u16> {
        let mut ids: Vec<u16> = self.labels.iter().copied().filter(|&l| l != 0).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn pixel_count(&self, id: u16) -> usize {
        self.labels.iter().filter(|&&l| l == id).count()
    }

    pub fn instance_mask(&self, id: u16) -> BinaryImage {
        BinaryImage {
            width: self.width,
            height: self.height,
            data: self.labels.iter().map(|&l| l == id).collect(),
        }
    }

    /// Tight box around the pixels labeled `id`, if any.
    pub fn bounding_box(&self, id: u16) -> Option<BoundingBox> {
        let mut b: Option<BoundingBox> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) != id {
                    continue;
                }
                b = Some(match b {
                    None => BoundingBox {
                        x_min: x,
                        y_min: y,
                        x_max: x,
                        y_max: y,
                    },
                    Some(b) => BoundingBox {
                        x_min: b.x_min.min(x),
                        y_min: b.y_min.min(y),
                        x_max: b.x_max.max(x),
                        y_max: b.y_max.max(y),
                    },
                });
            }
        }
        b
    }
}

/// One instance's contribution to the index mask.
#[derive(Debug, Clone)]
pub struct InstanceLayer {
    pub id: u16,
    pub mask: BinaryImage,
    pub depth: DepthBuffer,
}

impl InstanceLayer {
    /// Rasterizes and fills one instance.
    pub fn render(id: u16, mesh: &TriangleMesh, pose: &Pose, camera: &CameraIntrinsics) -> Self {
        let raster = rasterize(mesh, pose, camera);
        InstanceLayer {
            id,
            mask: mask_from_silhouette(&raster.coverage),
            depth: raster.depth,
        }
    }
}

/// Labels each pixel with the nearest instance whose mask covers it. Filled
/// holes carry infinite depth, so any rendered surface wins over them and
/// hole-versus-hole (or equal-depth) ties go to the smaller id.
pub fn compose_index_mask(layers: &[InstanceLayer]) -> Result<IndexMask> {
    let first = layers
        .first()
        .ok_or_else(|| Error::InvalidConfig("no instance layers".into()))?;
    let (w, h) = (first.mask.width, first.mask.height);
    for l in layers {
        if l.id == 0 {
            return Err(Error::InvalidConfig("instance id 0 is reserved".into()));
        }
        check_dims((w, h), (l.mask.width, l.mask.height))?;
        check_dims((w, h), (l.depth.width, l.depth.height))?;
    }
    let mut out = IndexMask::new(w, h);
    for i in 0..w * h {
        let mut best: Option<(f64, u16)> = None;
        for l in layers.iter().filter(|l| l.mask.data[i]) {
            let key = (l.depth.data[i], l.id);
            let better = match best {
                None => true,
                Some(b) => key.0 < b.0 || (key.0 == b.0 && key.1 < b.1),
            };
            if better {
                best = Some(key);
            }
        }
        if let Some((_, id)) = best {
            out.labels[i] = id;
        }
    }
    Ok(out)
}

/// Relabels every pixel of `id` as background.
pub fn erase_instance(mask: &IndexMask, id: u16) -> Result<IndexMask> {
    if id == 0 || !mask.labels.contains(&id) {
        return Err(Error::UnknownInstance(id));
    }
    let mut out = mask.clone();
    for l in out.labels.iter_mut().filter(|l| **l == id) {
        *l = 0;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VisibleKeypoint {
    pub semantic_id: u32,
    /// Projection in pixels; `None` when behind the camera.
    pub pixel: Option<Vec2>,
    pub visible: bool,
}

impl VisibleKeypoint {
    /// The pixel containing the projection.
    pub fn annotated_pixel(&self) -> Option<(usize, usize)> {
        self.pixel
            .filter(|p| p.x >= 0.0 && p.y >= 0.0)
            .map(|p| (p.x as usize, p.y as usize))
    }
}

/// Depth-tests every keypoint against the full-scene depth buffer. A keypoint
/// is visible when it projects inside the image and is no deeper than the
/// scene surface at its pixel plus `depth_eps`.
pub fn visible_keypoints(
    keypoints: &KeypointSet3D,
    pose: &Pose,
    camera: &CameraIntrinsics,
    scene_depth: &DepthBuffer,
    depth_eps: f64,
) -> Vec<VisibleKeypoint> {
    keypoints
        .points()
        .iter()
        .map(|kp| {
            let pc = pose.transform(&kp.position);
            let pixel = camera.project_camera_point(&pc);
            let visible = match pixel {
                Some(uv) if camera.contains(&uv) => {
                    let (x, y) = (uv.x as usize, uv.y as usize);
                    x < scene_depth.width
                        && y < scene_depth.height
                        && pc.z <= scene_depth.get(x, y) + depth_eps
                }
                _ => false,
            };
            VisibleKeypoint {
                semantic_id: kp.semantic_id,
                pixel,
                visible,
            }
        })
        .collect()
}

/// Gaussian keypoint target centered on the annotated pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub semantic_id: u32,
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Heatmap {
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// Location and value of the maximum (first in row-major order on ties).
    pub fn peak(&self) -> (usize, usize, f32) {
        let (i, v) = self
            .data
            .iter()
            .enumerate()
            .fold((0, f32::MIN), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
        (i % self.width, i / self.width, v)
    }
}

/// One map per keypoint, `exp(-r^2 / (2 sigma^2))` around its annotated pixel;
/// invisible keypoints get all-zero maps.
pub fn render_heatmaps(
    keypoints: &[VisibleKeypoint],
    width: usize,
    height: usize,
    sigma: f64,
) -> Result<Vec<Heatmap>> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidConfig(format!("heatmap sigma must be positive, got {sigma}")));
    }
    let denom = 2.0 * sigma * sigma;
    Ok(keypoints
        .iter()
        .map(|kp| {
            let mut data = vec![0.0f32; width * height];
            let center = kp
                .annotated_pixel()
                .filter(|&(x, y)| kp.visible && x < width && y < height);
            if let Some((u, v)) = center {
                for y in 0..height {
                    for x in 0..width {
                        let dx = x as f64 - u as f64;
                        let dy = y as f64 - v as f64;
                        data[y * width + x] = (-(dx * dx + dy * dy) / denom).exp().clamp(0.0, 1.0) as f32;
                    }
                }
            }
            Heatmap {
                semantic_id: kp.semantic_id,
                width,
                height,
                data,
            }
        })
        .collect())
}
