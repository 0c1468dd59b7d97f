//! Randomized multi-part scenes, their labels, and the on-disk dataset.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma, Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{principal_spreads, CameraIntrinsics, Pose, Vec2, Vec3};
use crate::mesh::PartModel;
use crate::raster::{
    compose_index_mask, visible_keypoints, BoundingBox, DepthBuffer, IndexMask, InstanceLayer,
    DEFAULT_DEPTH_EPS,
};

pub const DEFAULT_SPLIT_FRACTION: f64 = 0.9;

/// Stream reserved for the train/test shuffle; scenes use their index.
const SPLIT_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub min_parts: usize,
    pub max_parts: usize,
    /// Translation box in the camera frame, meters.
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
    pub z_range: [f64; 2],
    /// Scenes where some part shows fewer keypoints are redrawn.
    pub min_visible_keypoints: usize,
    /// Scenes are also redrawn when some part's visible keypoints are close
    /// to a line: the second principal spread over the first must reach this.
    pub min_keypoint_spread: f64,
    pub max_attempts: usize,
    #[serde(skip)]
    pub camera: CameraIntrinsics,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            min_parts: 5,
            max_parts: 6,
            x_range: [-0.12, 0.12],
            y_range: [-0.08, 0.08],
            z_range: [0.3, 1.0],
            min_visible_keypoints: 30,
            min_keypoint_spread: 0.25,
            max_attempts: 1000,
            camera: CameraIntrinsics::default(),
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.min_parts == 0 || self.min_parts > self.max_parts {
            return bad("part count range must satisfy 1 <= min_parts <= max_parts");
        }
        if self.max_parts >= u16::MAX as usize {
            return bad("too many parts per scene");
        }
        for (name, r) in [("x_range", self.x_range), ("y_range", self.y_range), ("z_range", self.z_range)] {
            if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]) {
                return Err(Error::InvalidConfig(format!("{name} must be an ordered finite interval")));
            }
        }
        if self.z_range[0] <= 0.0 {
            return bad("translation box must lie strictly in front of the camera");
        }
        if !(0.0..=1.0).contains(&self.min_keypoint_spread) {
            return bad("min_keypoint_spread must lie in [0, 1]");
        }
        if self.max_attempts == 0 {
            return bad("max_attempts must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlacedInstance {
    /// Index-mask label, starting at 1.
    pub id: u16,
    /// Index into the model list.
    pub model: usize,
    pub pose: Pose,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub id: String,
    pub instances: Vec<PlacedInstance>,
}

/// Uniformly distributed rotation (Shoemake's subgroup algorithm).
pub fn random_rotation(rng: &mut impl Rng) -> nalgebra::UnitQuaternion<f64> {
    let (u1, u2, u3): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
    let tau = std::f64::consts::TAU;
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
        b * (tau * u3).cos(),
        a * (tau * u2).sin(),
        a * (tau * u2).cos(),
        b * (tau * u3).sin(),
    ))
}

fn sample_in(rng: &mut impl Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

/// Draws non-penetrating poses (bounding spheres may not intersect). Every
/// rejected draw counts against `spec.max_attempts`.
pub fn sample_scene(
    spec: &SceneSpec,
    radii: &[f64],
    rng: &mut impl Rng,
    attempts: &mut usize,
) -> Result<Vec<PlacedInstance>> {
    if radii.is_empty() {
        return Err(Error::InvalidConfig("no part models".into()));
    }
    let count = rng.random_range(spec.min_parts..=spec.max_parts);
    let mut placed: Vec<PlacedInstance> = Vec::with_capacity(count);
    while placed.len() < count {
        if *attempts >= spec.max_attempts {
            return Err(Error::CannotPlaceParts(spec.max_attempts));
        }
        *attempts += 1;
        let model = rng.random_range(0..radii.len());
        let t = Vec3::new(
            sample_in(rng, spec.x_range),
            sample_in(rng, spec.y_range),
            sample_in(rng, spec.z_range),
        );
        let pose = Pose::new(random_rotation(rng), t);
        let clear = placed.iter().all(|p| {
            (p.pose.translation() - t).norm() > radii[p.model] + radii[model]
        });
        if clear {
            placed.push(PlacedInstance {
                id: placed.len() as u16 + 1,
                model,
                pose,
            });
        }
    }
    Ok(placed)
}

/// Scene `index` of the dataset seeded by `spec.seed`. Each index owns its
/// own random stream, so scenes can be built in any order.
pub fn generate_scene(spec: &SceneSpec, models: &[PartModel], index: u64) -> Result<SceneAnnotation> {
    spec.validate()?;
    let radii: Vec<f64> = models.iter().map(PartModel::radius).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index);
    let mut attempts = 0;
    loop {
        let instances = sample_scene(spec, &radii, &mut rng, &mut attempts)?;
        let scene = Scene {
            id: scene_id(index),
            instances,
        };
        let ann = annotate_scene(&scene, models, &spec.camera)?;
        if ann.instances.iter().all(|i| well_observed(i, models, spec)) {
            return Ok(ann);
        }
        if attempts >= spec.max_attempts {
            return Err(Error::CannotPlaceParts(spec.max_attempts));
        }
        attempts += 1;
    }
}

fn well_observed(inst: &InstanceAnnotation, models: &[PartModel], spec: &SceneSpec) -> bool {
    if inst.keypoints.len() < spec.min_visible_keypoints {
        return false;
    }
    let Some(model) = models.get(inst.model) else { return false };
    let points: Vec<Vec3> = inst
        .keypoints
        .iter()
        .filter_map(|k| model.keypoints.get(k.semantic_id).map(|kp| kp.position))
        .collect();
    let [s0, s1, _] = principal_spreads(&points);
    s1 >= spec.min_keypoint_spread * s0
}

pub fn generate_scenes(spec: &SceneSpec, models: &[PartModel], count: usize) -> Result<Vec<SceneAnnotation>> {
    (0..count as u64)
        .into_par_iter()
        .map(|i| generate_scene(spec, models, i))
        .collect()
}

pub fn scene_id(index: u64) -> String {
    format!("{index:05}")
}

/// A visible keypoint's projection, serialized as `[semantic_id, u, v]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "(u32, f64, f64)", into = "(u32, f64, f64)")]
pub struct Keypoint2D {
    pub semantic_id: u32,
    pub pixel: Vec2,
}

impl From<(u32, f64, f64)> for Keypoint2D {
    fn from((semantic_id, u, v): (u32, f64, f64)) -> Self {
        Keypoint2D {
            semantic_id,
            pixel: Vec2::new(u, v),
        }
    }
}

impl From<Keypoint2D> for (u32, f64, f64) {
    fn from(k: Keypoint2D) -> Self {
        (k.semantic_id, k.pixel.x, k.pixel.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceAnnotation {
    pub id: u16,
    pub model: usize,
    pub pose: Pose,
    /// Tight box of the instance's index-mask pixels; `None` when fully hidden.
    pub bbox: Option<BoundingBox>,
    /// Visible keypoints only.
    pub keypoints: Vec<Keypoint2D>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneAnnotation {
    pub scene_id: String,
    pub instances: Vec<InstanceAnnotation>,
    pub mask: IndexMask,
}

#[derive(Serialize, Deserialize)]
struct AnnotationFile {
    scene_id: String,
    width: usize,
    height: usize,
    instances: Vec<InstanceAnnotation>,
}

impl SceneAnnotation {
    pub fn instance(&self, id: u16) -> Option<&InstanceAnnotation> {
        self.instances.iter().find(|i| i.id == id)
    }
}

/// Renders every instance, composes the index mask and records the visible
/// keypoints and tight boxes.
pub fn annotate_scene(scene: &Scene, models: &[PartModel], camera: &CameraIntrinsics) -> Result<SceneAnnotation> {
    let model_of = |i: &PlacedInstance| {
        models
            .get(i.model)
            .ok_or_else(|| Error::InvalidConfig(format!("instance {} names unknown model {}", i.id, i.model)))
    };
    let layers = scene
        .instances
        .iter()
        .map(|i| Ok(InstanceLayer::render(i.id, &model_of(i)?.mesh, &i.pose, camera)))
        .collect::<Result<Vec<_>>>()?;
    let (mask, depth) = if layers.is_empty() {
        (
            IndexMask::new(camera.width(), camera.height()),
            DepthBuffer::new(camera.width(), camera.height()),
        )
    } else {
        (compose_index_mask(&layers)?, DepthBuffer::min_of(layers.iter().map(|l| &l.depth))?)
    };
    let instances = scene
        .instances
        .iter()
        .map(|inst| {
            let model = model_of(inst)?;
            let keypoints = visible_keypoints(&model.keypoints, &inst.pose, camera, &depth, DEFAULT_DEPTH_EPS)
                .into_iter()
                .filter(|k| k.visible)
                .filter_map(|k| {
                    k.pixel.map(|pixel| Keypoint2D {
                        semantic_id: k.semantic_id,
                        pixel,
                    })
                })
                .collect();
            Ok(InstanceAnnotation {
                id: inst.id,
                model: inst.model,
                pose: inst.pose,
                bbox: mask.bounding_box(inst.id),
                keypoints,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SceneAnnotation {
        scene_id: scene.id.clone(),
        instances,
        mask,
    })
}

/// Re-derives the labels of a stored annotation from its poses and lists
/// every disagreement. An empty list means the annotation is exact.
pub fn check_annotation(ann: &SceneAnnotation, models: &[PartModel], camera: &CameraIntrinsics) -> Result<Vec<String>> {
    let mut problems = Vec::new();
    let scene = Scene {
        id: ann.scene_id.clone(),
        instances: ann
            .instances
            .iter()
            .map(|i| PlacedInstance {
                id: i.id,
                model: i.model,
                pose: i.pose,
            })
            .collect(),
    };
    let fresh = annotate_scene(&scene, models, camera)?;
    if fresh.mask != ann.mask {
        let differing = fresh
            .mask
            .labels()
            .iter()
            .zip(ann.mask.labels())
            .filter(|(a, b)| a != b)
            .count();
        problems.push(format!("{}: index mask differs in {differing} pixels", ann.scene_id));
    }
    for (stored, redone) in ann.instances.iter().zip(&fresh.instances) {
        if stored.keypoints != redone.keypoints {
            problems.push(format!("{}: instance {} keypoints differ from re-rasterization", ann.scene_id, stored.id));
        }
        let tight = tight_box(&ann.mask, stored.id);
        if stored.bbox != tight {
            problems.push(format!("{}: instance {} bounding box is not tight", ann.scene_id, stored.id));
        }
    }
    Ok(problems)
}

fn tight_box(mask: &IndexMask, id: u16) -> Option<BoundingBox> {
    let mut b: Option<BoundingBox> = None;
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.get(x, y) == id {
                let nb = b.get_or_insert(BoundingBox {
                    x_min: x,
                    y_min: y,
                    x_max: x,
                    y_max: y,
                });
                nb.x_min = nb.x_min.min(x);
                nb.x_max = nb.x_max.max(x);
                nb.y_min = nb.y_min.min(y);
                nb.y_max = nb.y_max.max(y);
            }
        }
    }
    b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub split_fraction: f64,
    pub camera: CameraIntrinsics,
    pub models: Vec<String>,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

impl Manifest {
    pub fn scene_ids(&self) -> Vec<String> {
        let mut all: Vec<String> = self.train.iter().chain(&self.test).cloned().collect();
        all.sort();
        all
    }
}

/// Seeded Fisher-Yates split; `round(fraction * n)` scenes go to training.
pub fn split_scenes(ids: &[String], fraction: f64, seed: u64) -> (Vec<String>, Vec<String>) {
    let mut shuffled = ids.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SPLIT_STREAM);
    shuffled.shuffle(&mut rng);
    let n_train = (fraction * ids.len() as f64).round() as usize;
    let mut test = shuffled.split_off(n_train.min(ids.len()));
    shuffled.sort();
    test.sort();
    (shuffled, test)
}

pub fn manifest_path(root: &Path) -> PathBuf {
    root.join("manifest.json")
}

pub fn scene_dir(root: &Path, id: &str) -> PathBuf {
    root.join("scenes").join(id)
}

pub struct DatasetWriter<'a> {
    pub camera: &'a CameraIntrinsics,
    pub seed: u64,
    pub split_fraction: f64,
    pub model_names: Vec<String>,
    /// Optional backdrop for `image.png`; labels never depend on it.
    pub background: Option<&'a RgbImage>,
}

impl DatasetWriter<'_> {
    pub fn write(&self, root: &Path, scenes: &[SceneAnnotation]) -> Result<Manifest> {
        if !(0.0..=1.0).contains(&self.split_fraction) {
            return Err(Error::InvalidConfig(format!(
                "split fraction must be in [0, 1], got {}",
                self.split_fraction
            )));
        }
        let mut seen = BTreeSet::new();
        for s in scenes {
            if !seen.insert(s.scene_id.clone()) {
                return Err(Error::DuplicateScene(s.scene_id.clone()));
            }
        }
        scenes.par_iter().try_for_each(|s| self.write_scene(root, s))?;
        let ids: Vec<String> = seen.into_iter().collect();
        let (train, test) = split_scenes(&ids, self.split_fraction, self.seed);
        let manifest = Manifest {
            seed: self.seed,
            split_fraction: self.split_fraction,
            camera: *self.camera,
            models: self.model_names.clone(),
            train,
            test,
        };
        write_json(&manifest_path(root), &manifest)?;
        Ok(manifest)
    }

    fn write_scene(&self, root: &Path, s: &SceneAnnotation) -> Result<()> {
        let dir = scene_dir(root, &s.scene_id);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_mask(&dir.join("mask.png"), &s.mask)?;
        write_json(
            &dir.join("annotation.json"),
            &AnnotationFile {
                scene_id: s.scene_id.clone(),
                width: s.mask.width(),
                height: s.mask.height(),
                instances: s.instances.clone(),
            },
        )?;
        if let Some(bg) = self.background {
            let path = dir.join("image.png");
            composite(bg, &s.mask)
                .save(&path)
                .map_err(|source| Error::Image { path, source })?;
        }
        Ok(())
    }
}

// Parts are painted flat gray, shaded by label, over the resized backdrop.
fn composite(background: &RgbImage, mask: &IndexMask) -> RgbImage {
    let (w, h) = (mask.width() as u32, mask.height() as u32);
    let mut img = image::imageops::resize(background, w, h, image::imageops::FilterType::Triangle);
    for (x, y, px) in img.enumerate_pixels_mut() {
        let id = mask.get(x as usize, y as usize);
        if id != 0 {
            let g = 110 + (id as u32 * 37 % 120) as u8;
            *px = Rgb([g, g, g]);
        }
    }
    img
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_mask(path: &Path, mask: &IndexMask) -> Result<()> {
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(mask.width() as u32, mask.height() as u32, mask.labels().to_vec())
            .expect("label buffer matches dimensions");
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_mask(path: &Path) -> Result<IndexMask> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .into_luma16();
    let (w, h) = img.dimensions();
    IndexMask::from_labels(w as usize, h as usize, img.into_raw())
}

pub fn read_manifest(root: &Path) -> Result<Manifest> {
    read_json(&manifest_path(root))
}

pub fn read_annotation(root: &Path, id: &str) -> Result<SceneAnnotation> {
    let dir = scene_dir(root, id);
    let file: AnnotationFile = read_json(&dir.join("annotation.json"))?;
    let mask = read_mask(&dir.join("mask.png"))?;
    if (mask.width(), mask.height()) != (file.width, file.height) {
        return Err(Error::DimensionMismatch {
            expected: (file.width, file.height),
            got: (mask.width(), mask.height()),
        });
    }
    Ok(SceneAnnotation {
        scene_id: file.scene_id,
        instances: file.instances,
        mask,
    })
}
