//! Per-instance poses from multi-part keypoint detections: a detector
//! stand-in, candidate clustering and occlusion-aware sequential estimation.

use std::path::{Path, PathBuf};

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{project, CameraIntrinsics, Correspondence, KeypointSet3D, Pose, Vec2};
use crate::mesh::PartModel;
use crate::pnp::{solve_pnp_ransac, PnPResult, RansacConfig, MIN_LINEAR_POINTS};
use crate::raster::{mask_from_silhouette, rasterize, BinaryImage, BoundingBox};
use crate::synth::{read_json, SceneAnnotation};

pub const DEFAULT_ACCEPTANCE_THRESHOLD: f64 = 5.0;
pub const DEFAULT_CANDIDATE_CAP: usize = 3;
pub const DEFAULT_ERASE_MARGIN: usize = 4;
pub const DEFAULT_ERASE_RADIUS: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeypointDetection {
    pub semantic_id: u32,
    pub pixel: Vec2,
    /// Heatmap-peak style localization confidence in [0, 1].
    pub confidence: f64,
    /// Instance that actually produced the detection, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<u16>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionDetections {
    /// Label of the detected part; estimates are reported under it.
    pub instance_id: u16,
    /// Index into the model list (the detected class).
    pub model: usize,
    pub bbox: BoundingBox,
    pub confidence: f64,
    pub keypoints: Vec<KeypointDetection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorOutput {
    pub scene_id: String,
    pub regions: Vec<RegionDetections>,
}

/// Anything that can produce detections for a labeled scene.
pub trait DetectionSource: Sync {
    fn detect(&self, scene: &SceneAnnotation) -> Result<DetectorOutput>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulatedDetectorConfig {
    /// Keypoint noise standard deviation, pixels.
    pub sigma: f64,
    pub dropout: f64,
    /// Fraction of a region's keypoints leaked from overlapping instances.
    pub contamination: f64,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for SimulatedDetectorConfig {
    fn default() -> Self {
        SimulatedDetectorConfig {
            sigma: 2.0,
            dropout: 0.1,
            contamination: 0.1,
            seed: 0,
        }
    }
}

impl SimulatedDetectorConfig {
    pub fn noiseless(seed: u64) -> Self {
        SimulatedDetectorConfig {
            sigma: 0.0,
            dropout: 0.0,
            contamination: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidConfig(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        for (name, p) in [("dropout", self.dropout), ("contamination", self.contamination)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidConfig(format!("{name} must be in [0, 1], got {p}")));
            }
        }
        Ok(())
    }
}

pub struct SimulatedDetector<'a> {
    pub config: SimulatedDetectorConfig,
    pub models: &'a [PartModel],
    pub camera: CameraIntrinsics,
}

impl DetectionSource for SimulatedDetector<'_> {
    fn detect(&self, scene: &SceneAnnotation) -> Result<DetectorOutput> {
        simulate_detections(scene, self.models, &self.camera, &self.config)
    }
}

/// Reads `<dir>/<scene_id>.json` detection files.
pub struct FileDetections {
    pub dir: PathBuf,
}

impl DetectionSource for FileDetections {
    fn detect(&self, scene: &SceneAnnotation) -> Result<DetectorOutput> {
        let out: DetectorOutput = read_json(&self.dir.join(format!("{}.json", scene.scene_id)))?;
        if out.scene_id != scene.scene_id {
            return Err(Error::parse(
                self.dir.join(format!("{}.json", scene.scene_id)),
                format!("scene_id is {}, expected {}", out.scene_id, scene.scene_id),
            ));
        }
        Ok(out)
    }
}

pub fn write_detections(path: &Path, out: &DetectorOutput) -> Result<()> {
    crate::synth::write_json(path, out)
}

// FNV-1a, so every scene draws from its own stream independent of run order.
fn scene_stream(scene_id: &str) -> u64 {
    scene_id
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

fn jitter_box(rng: &mut impl Rng, b: &BoundingBox, camera: &CameraIntrinsics) -> BoundingBox {
    let mut side = |v: usize, extent: usize, max: usize| {
        let d = rng.random_range(-0.05..=0.05) * extent as f64;
        ((v as f64 + d).round().max(0.0) as usize).min(max)
    };
    let (w, h) = (b.width(), b.height());
    let (wm, hm) = (camera.width() - 1, camera.height() - 1);
    let (x0, x1) = (side(b.x_min, w, wm), side(b.x_max, w, wm));
    let (y0, y1) = (side(b.y_min, h, hm), side(b.y_max, h, hm));
    BoundingBox {
        x_min: x0.min(x1),
        y_min: y0.min(y1),
        x_max: x0.max(x1),
        y_max: y0.max(y1),
    }
}

fn noisy(rng: &mut impl Rng, pixel: Vec2, sigma: f64, normal: Option<&Normal<f64>>) -> (Vec2, f64) {
    match normal {
        None => (pixel, 1.0),
        Some(n) => {
            let off = Vec2::new(n.sample(rng), n.sample(rng));
            (pixel + off, (-off.norm_squared() / (2.0 * sigma * sigma)).exp())
        }
    }
}

/// Oracle-driven detector stand-in. One region per instance with a mask; each
/// visible keypoint survives dropout and is perturbed by Gaussian noise with
/// confidence `exp(-offset^2 / (2 sigma^2))`. Contamination adds keypoints of
/// other instances whose boxes overlap, taken from inside the region's box,
/// so that they make up the configured fraction of the region's list.
pub fn simulate_detections(
    scene: &SceneAnnotation,
    models: &[PartModel],
    camera: &CameraIntrinsics,
    config: &SimulatedDetectorConfig,
) -> Result<DetectorOutput> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(scene_stream(&scene.scene_id));
    let normal = (config.sigma > 0.0).then(|| Normal::new(0.0, config.sigma).expect("sigma is valid"));
    let mut regions = Vec::new();
    for inst in &scene.instances {
        let Some(gt_box) = inst.bbox else { continue };
        let total = models
            .get(inst.model)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown model {}", inst.model)))?
            .keypoints
            .len();
        let bbox = jitter_box(&mut rng, &gt_box, camera);
        let mut keypoints = Vec::new();
        for kp in &inst.keypoints {
            if rng.random::<f64>() < config.dropout {
                continue;
            }
            let (pixel, confidence) = noisy(&mut rng, kp.pixel, config.sigma, normal.as_ref());
            keypoints.push(KeypointDetection {
                semantic_id: kp.semantic_id,
                pixel,
                confidence,
                origin: Some(inst.id),
            });
        }
        if config.contamination > 0.0 {
            let pool: Vec<(u16, &crate::synth::Keypoint2D)> = scene
                .instances
                .iter()
                .filter(|o| o.id != inst.id && o.bbox.is_some_and(|b| b.intersects(&gt_box)))
                .flat_map(|o| o.keypoints.iter().map(move |k| (o.id, k)))
                .filter(|(_, k)| bbox.contains(&k.pixel))
                .collect();
            let c = config.contamination;
            let wanted = if c >= 1.0 {
                pool.len() as f64
            } else {
                c / (1.0 - c) * keypoints.len() as f64
            };
            let mut n = wanted.floor() as usize;
            if rng.random::<f64>() < wanted - wanted.floor() {
                n += 1;
            }
            let n = n.min(pool.len());
            for i in index::sample(&mut rng, pool.len(), n).into_vec() {
                let (origin, k) = pool[i];
                let (pixel, confidence) = noisy(&mut rng, k.pixel, config.sigma, normal.as_ref());
                keypoints.push(KeypointDetection {
                    semantic_id: k.semantic_id,
                    pixel,
                    confidence,
                    origin: Some(origin),
                });
            }
            keypoints.shuffle(&mut rng);
        }
        regions.push(RegionDetections {
            instance_id: inst.id,
            model: inst.model,
            bbox,
            confidence: inst.keypoints.len() as f64 / total.max(1) as f64,
            keypoints,
        });
    }
    Ok(DetectorOutput {
        scene_id: scene.scene_id.clone(),
        regions,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    pub ransac: RansacConfig,
    /// Maximum weighted reprojection error of an accepted pose, pixels.
    pub acceptance_threshold: f64,
    pub candidate_cap: usize,
    /// Remove detections covered by already-solved parts.
    pub erase: bool,
    /// Dilation of a solved part's footprint, pixels.
    pub erase_margin: usize,
    /// A detection inside the footprint is erased when the solved part's own
    /// keypoint with the same id projects within this many pixels of it.
    pub erase_radius: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            ransac: RansacConfig::default(),
            acceptance_threshold: DEFAULT_ACCEPTANCE_THRESHOLD,
            candidate_cap: DEFAULT_CANDIDATE_CAP,
            erase: true,
            erase_margin: DEFAULT_ERASE_MARGIN,
            erase_radius: DEFAULT_ERASE_RADIUS,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        self.ransac.validate()?;
        if !(self.acceptance_threshold > 0.0) {
            return Err(Error::InvalidConfig("acceptance_threshold must be positive".into()));
        }
        if self.candidate_cap == 0 {
            return Err(Error::InvalidConfig("candidate_cap must be at least 1".into()));
        }
        if !(self.erase_radius >= 0.0) {
            return Err(Error::InvalidConfig("erase_radius must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceEstimate {
    pub instance_id: u16,
    pub model: usize,
    /// Best candidate; `None` when no candidate reached consensus.
    pub result: Option<PnPResult>,
    pub accepted: bool,
    pub reprojection_error: Option<f64>,
    /// Detections left after erasure, i.e. what the solver saw.
    pub detections_used: usize,
}

impl InstanceEstimate {
    pub fn pose(&self) -> Option<&Pose> {
        self.result.as_ref().map(|r| &r.pose)
    }
}

fn correspondences(detections: &[KeypointDetection], keypoints: &KeypointSet3D) -> (Vec<Correspondence>, Vec<usize>) {
    let mut corr = Vec::with_capacity(detections.len());
    let mut source = Vec::with_capacity(detections.len());
    for (i, d) in detections.iter().enumerate() {
        if let Some(kp) = keypoints.get(d.semantic_id) {
            corr.push(Correspondence::new(d.semantic_id, kp.position, d.pixel, d.confidence.clamp(0.0, 1.0)));
            source.push(i);
        }
    }
    (corr, source)
}

/// One pose hypothesis for a region.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub result: PnPResult,
    /// Confidence-weighted RMS over every detection of the region, each
    /// residual capped at the RANSAC threshold. Hypotheses that explain more
    /// of the region score lower.
    pub region_error: f64,
}

fn region_error(pose: &Pose, corr: &[Correspondence], camera: &CameraIntrinsics, cap: f64) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for c in corr {
        let r = project(camera, pose, &c.point3d).map_or(cap, |uv| (uv - c.point2d).norm().min(cap));
        num += c.weight * r * r;
        den += c.weight;
    }
    if den > 0.0 {
        (num / den).sqrt()
    } else {
        cap
    }
}

/// Peels pose candidates off a region: RANSAC on everything, then again on
/// the outliers, up to `cap` candidates. Inlier indices refer to
/// `detections`. Sorted by region error, then larger inlier count, then
/// discovery order.
pub fn cluster_and_select(
    detections: &[KeypointDetection],
    keypoints: &KeypointSet3D,
    camera: &CameraIntrinsics,
    ransac: &RansacConfig,
    cap: usize,
) -> Vec<Candidate> {
    let (corr, source) = correspondences(detections, keypoints);
    let mut remaining: Vec<usize> = (0..corr.len()).collect();
    let mut found = Vec::new();
    while found.len() < cap && remaining.len() >= MIN_LINEAR_POINTS {
        let subset: Vec<Correspondence> = remaining.iter().map(|&i| corr[i]).collect();
        let Ok(mut r) = solve_pnp_ransac(&subset, camera, ransac) else { break };
        let taken: Vec<usize> = r.inliers.iter().map(|&i| remaining[i]).collect();
        r.inliers = taken.iter().map(|&i| source[i]).collect();
        remaining.retain(|i| taken.binary_search(i).is_err());
        found.push(Candidate {
            region_error: region_error(&r.pose, &corr, camera, ransac.threshold),
            result: r,
        });
    }
    let mut order: Vec<usize> = (0..found.len()).collect();
    order.sort_by(|&a, &b| {
        found[a]
            .region_error
            .total_cmp(&found[b].region_error)
            .then(found[b].result.inliers.len().cmp(&found[a].result.inliers.len()))
            .then(a.cmp(&b))
    });
    let mut slots: Vec<Option<Candidate>> = found.into_iter().map(Some).collect();
    order.into_iter().filter_map(|i| slots[i].take()).collect()
}

/// Pixels covered by a part at `pose`, grown by `margin`.
pub fn footprint(model: &PartModel, pose: &Pose, camera: &CameraIntrinsics, margin: usize) -> BinaryImage {
    mask_from_silhouette(&rasterize(&model.mesh, pose, camera).coverage).dilate(margin)
}

/// What an accepted estimate accounts for in the image: its dilated
/// footprint and the projection of each of its keypoints.
#[derive(Debug, Clone)]
pub struct SolvedPart {
    pub footprint: BinaryImage,
    projections: Vec<Option<Vec2>>,
}

impl SolvedPart {
    pub fn new(model: &PartModel, pose: &Pose, camera: &CameraIntrinsics, margin: usize) -> Self {
        SolvedPart {
            footprint: footprint(model, pose, camera, margin),
            projections: model
                .keypoints
                .points()
                .iter()
                .map(|k| project(camera, pose, &k.position))
                .collect(),
        }
    }

    /// Inside the footprint and matching the part's own projection of the
    /// same keypoint.
    pub fn explains(&self, d: &KeypointDetection, radius: f64) -> bool {
        self.footprint.contains_point(&d.pixel)
            && self
                .projections
                .get(d.semantic_id as usize)
                .copied()
                .flatten()
                .is_some_and(|uv| (uv - d.pixel).norm() <= radius)
    }
}

/// Splits detections into those kept and those explained by a solved part.
pub fn split_erased(
    detections: &[KeypointDetection],
    solved: &[SolvedPart],
    radius: f64,
) -> (Vec<KeypointDetection>, Vec<KeypointDetection>) {
    detections
        .iter()
        .partition(|d| !solved.iter().any(|s| s.explains(d, radius)))
}

/// Regions in processing order: descending confidence, ties by position.
pub fn processing_order(output: &DetectorOutput) -> Vec<usize> {
    let mut order: Vec<usize> = (0..output.regions.len()).collect();
    order.sort_by(|&a, &b| {
        output.regions[b]
            .confidence
            .total_cmp(&output.regions[a].confidence)
            .then(a.cmp(&b))
    });
    order
}

/// Solves regions one by one, most confident first. After each accepted pose
/// the detections it explains inside its footprint are dropped from every
/// later region. Estimates come back in processing order.
pub fn estimate_scene(
    output: &DetectorOutput,
    models: &[PartModel],
    camera: &CameraIntrinsics,
    config: &EstimatorConfig,
) -> Result<Vec<InstanceEstimate>> {
    config.validate()?;
    let mut solved = Vec::new();
    let mut estimates = Vec::with_capacity(output.regions.len());
    for idx in processing_order(output) {
        let region = &output.regions[idx];
        let model = models
            .get(region.model)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown model {}", region.model)))?;
        let (kept, _) = split_erased(&region.keypoints, &solved, config.erase_radius);
        let candidates = cluster_and_select(&kept, &model.keypoints, camera, &config.ransac, config.candidate_cap);
        let best = candidates.into_iter().next().map(|c| c.result);
        let error = best.as_ref().map(|r| r.reprojection_error);
        let accepted = error.is_some_and(|e| e <= config.acceptance_threshold);
        if accepted && config.erase {
            let pose = best.as_ref().expect("accepted implies a candidate").pose;
            solved.push(SolvedPart::new(model, &pose, camera, config.erase_margin));
        }
        estimates.push(InstanceEstimate {
            instance_id: region.instance_id,
            model: region.model,
            result: best,
            accepted,
            reprojection_error: error,
            detections_used: kept.len(),
        });
    }
    Ok(estimates)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceMetrics {
    pub scene_id: String,
    pub instance_id: u16,
    pub estimated: bool,
    pub accepted: bool,
    pub rotation_error_deg: Option<f64>,
    pub translation_error_m: Option<f64>,
    /// Mean pixel distance between annotated keypoints and their projection
    /// under the estimated pose.
    pub keypoint_error_px: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
}

impl Summary {
    fn of(values: &[f64]) -> Option<Summary> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        };
        Some(Summary {
            mean: v.iter().sum::<f64>() / n as f64,
            median,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub instances: usize,
    pub estimated: usize,
    pub accepted: usize,
    pub misses: usize,
    pub unmatched_estimates: usize,
    pub acceptance_rate: f64,
    /// Accepted instances within 5 degrees and 5 cm, over all instances.
    pub within_5deg_5cm: f64,
    pub rotation_error_deg: Option<Summary>,
    pub translation_error_m: Option<Summary>,
    pub keypoint_error_px: Option<Summary>,
    pub per_instance: Vec<InstanceMetrics>,
}

/// Scores estimates against ground truth. Instances are matched by id; a
/// ground-truth instance without an estimated pose is a miss, an estimate
/// naming no ground-truth instance is unmatched. Error summaries cover every
/// estimated instance, accepted or not.
pub fn evaluate(
    scenes: &[(&SceneAnnotation, &[InstanceEstimate])],
    models: &[PartModel],
    camera: &CameraIntrinsics,
) -> Metrics {
    let mut per_instance = Vec::new();
    let mut unmatched = 0;
    for (gt, estimates) in scenes {
        unmatched += estimates
            .iter()
            .filter(|e| gt.instance(e.instance_id).is_none())
            .count();
        for inst in &gt.instances {
            let est = estimates.iter().find(|e| e.instance_id == inst.id);
            let pose = est.and_then(|e| e.pose());
            let keypoint_error_px = pose.and_then(|p| {
                let errs: Vec<f64> = inst
                    .keypoints
                    .iter()
                    .map(|k| {
                        models
                            .get(inst.model)
                            .and_then(|m| m.keypoints.get(k.semantic_id))
                            .and_then(|kp| project(camera, p, &kp.position))
                            .map_or(camera.diagonal(), |uv| (uv - k.pixel).norm())
                    })
                    .collect();
                (!errs.is_empty()).then(|| errs.iter().sum::<f64>() / errs.len() as f64)
            });
            per_instance.push(InstanceMetrics {
                scene_id: gt.scene_id.clone(),
                instance_id: inst.id,
                estimated: pose.is_some(),
                accepted: est.is_some_and(|e| e.accepted),
                rotation_error_deg: pose.map(|p| p.rotation_angle_to(&inst.pose).to_degrees()),
                translation_error_m: pose.map(|p| p.translation_distance_to(&inst.pose)),
                keypoint_error_px,
            });
        }
    }
    let n = per_instance.len();
    let estimated = per_instance.iter().filter(|m| m.estimated).count();
    let accepted = per_instance.iter().filter(|m| m.accepted).count();
    let within = per_instance
        .iter()
        .filter(|m| {
            m.accepted
                && m.rotation_error_deg.is_some_and(|r| r < 5.0)
                && m.translation_error_m.is_some_and(|t| t < 0.05)
        })
        .count();
    let collect = |f: fn(&InstanceMetrics) -> Option<f64>| -> Vec<f64> { per_instance.iter().filter_map(f).collect() };
    let rate = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
    Metrics {
        instances: n,
        estimated,
        accepted,
        misses: n - estimated,
        unmatched_estimates: unmatched,
        acceptance_rate: rate(accepted),
        within_5deg_5cm: rate(within),
        rotation_error_deg: Summary::of(&collect(|m| m.rotation_error_deg)),
        translation_error_m: Summary::of(&collect(|m| m.translation_error_m)),
        keypoint_error_px: Summary::of(&collect(|m| m.keypoint_error_px)),
        per_instance,
    }
}
