use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clusterpose::mesh::edges_to_text;
use clusterpose::multi::{
    estimate_scene, evaluate as evaluate_estimates, DetectionSource, FileDetections, InstanceEstimate, Metrics,
    SimulatedDetector, Summary,
};
use clusterpose::synth::{
    check_annotation, generate_scenes, read_annotation, read_manifest, scene_dir, DatasetWriter, Manifest,
    SceneAnnotation,
};
use clusterpose::PartModel;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::overlay;
use crate::CliError;

pub const ESTIMATES_FILE: &str = "estimates.json";
pub const TIMINGS_FILE: &str = "timings.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const REPORT_FILE: &str = "report.txt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatesFile {
    pub seed: u64,
    pub scenes: Vec<SceneEstimates>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneEstimates {
    pub scene_id: String,
    pub estimates: Vec<InstanceEstimate>,
}

/// Wall-clock seconds per stage, summed over scenes (the stages of one scene
/// run back to back, scenes run in parallel).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub scenes: usize,
    pub instances: usize,
    pub load_s: f64,
    pub detect_s: f64,
    pub pose_s: f64,
    pub overlay_s: f64,
    pub wall_s: f64,
}

impl Timings {
    pub fn pose_per_instance_s(&self) -> f64 {
        if self.instances == 0 {
            0.0
        } else {
            self.pose_s / self.instances as f64
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn with_scene(id: &str) -> impl Fn(clusterpose::Error) -> CliError + '_ {
    move |e| CliError::Runtime(format!("scene {id}: {e}"))
}

pub struct GenerateSummary {
    pub manifest: PathBuf,
    pub manifest_data: Manifest,
    pub instances: usize,
    pub elapsed: Duration,
}

pub fn generate(cfg: &RunConfig) -> Result<GenerateSummary, CliError> {
    let start = Instant::now();
    let model = cfg.load_model()?;
    let background = match &cfg.paths.background {
        Some(p) => Some(
            image::open(p)
                .map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))?
                .into_rgb8(),
        ),
        None => None,
    };
    let models = [model];
    let scenes = cfg
        .thread_pool()?
        .install(|| generate_scenes(&cfg.scene, &models, cfg.scenes))?;
    create_dir(&cfg.paths.dataset)?;
    let manifest_data = cfg.thread_pool()?.install(|| {
        DatasetWriter {
            camera: &cfg.camera,
            seed: cfg.seed,
            split_fraction: cfg.split_fraction,
            model_names: models.iter().map(|m| m.name.clone()).collect(),
            background: background.as_ref(),
        }
        .write(&cfg.paths.dataset, &scenes)
    })?;
    Ok(GenerateSummary {
        manifest: clusterpose::synth::manifest_path(&cfg.paths.dataset),
        manifest_data,
        instances: scenes.iter().map(|s| s.instances.len()).sum(),
        elapsed: start.elapsed(),
    })
}

pub struct EstimateSummary {
    pub estimates: EstimatesFile,
    pub timings: Timings,
    pub accepted: usize,
    pub instances: usize,
}

impl EstimateSummary {
    pub fn acceptance_rate(&self) -> f64 {
        if self.instances == 0 {
            0.0
        } else {
            self.accepted as f64 / self.instances as f64
        }
    }
}

fn load_dataset(dataset: &Path) -> Result<(Manifest, Vec<String>), CliError> {
    if !dataset.is_dir() {
        return Err(CliError::Runtime(format!("dataset not found: {}", dataset.display())));
    }
    let manifest = read_manifest(dataset)?;
    let ids = manifest.scene_ids();
    Ok((manifest, ids))
}

struct SceneRun {
    estimates: SceneEstimates,
    instances: usize,
    load: Duration,
    detect: Duration,
    pose: Duration,
    overlay: Duration,
}

pub fn estimate(cfg: &RunConfig, dataset: &Path, output: &Path) -> Result<EstimateSummary, CliError> {
    let wall = Instant::now();
    let (manifest, ids) = load_dataset(dataset)?;
    let models = vec![cfg.load_model()?];
    let camera = manifest.camera;
    let simulated = SimulatedDetector {
        config: cfg.detector,
        models: &models,
        camera,
    };
    let from_files = cfg.paths.detections.as_ref().map(|dir| FileDetections { dir: dir.clone() });
    let source: &dyn DetectionSource = match &from_files {
        Some(f) => f,
        None => &simulated,
    };
    let overlays = output.join("overlays");
    create_dir(&overlays)?;

    let runs: Vec<SceneRun> = cfg.thread_pool()?.install(|| {
        ids.par_iter()
            .map(|id| {
                let t0 = Instant::now();
                let ann = read_annotation(dataset, id).map_err(with_scene(id))?;
                let t1 = Instant::now();
                let detections = source.detect(&ann).map_err(with_scene(id))?;
                let t2 = Instant::now();
                let estimates = estimate_scene(&detections, &models, &camera, &cfg.estimator).map_err(with_scene(id))?;
                let t3 = Instant::now();
                write_overlay(dataset, &overlays, &ann, &estimates, &models, &camera)?;
                let t4 = Instant::now();
                Ok(SceneRun {
                    instances: ann.instances.len(),
                    estimates: SceneEstimates {
                        scene_id: id.clone(),
                        estimates,
                    },
                    load: t1 - t0,
                    detect: t2 - t1,
                    pose: t3 - t2,
                    overlay: t4 - t3,
                })
            })
            .collect::<Result<Vec<_>, CliError>>()
    })?;

    let mut timings = Timings {
        scenes: runs.len(),
        ..Default::default()
    };
    let mut accepted = 0;
    for r in &runs {
        timings.instances += r.estimates.estimates.len();
        timings.load_s += r.load.as_secs_f64();
        timings.detect_s += r.detect.as_secs_f64();
        timings.pose_s += r.pose.as_secs_f64();
        timings.overlay_s += r.overlay.as_secs_f64();
        accepted += r.estimates.estimates.iter().filter(|e| e.accepted).count();
    }
    let instances = runs.iter().map(|r| r.instances).sum();
    let estimates = EstimatesFile {
        seed: cfg.seed,
        scenes: runs.into_iter().map(|r| r.estimates).collect(),
    };
    write_json(&output.join(ESTIMATES_FILE), &estimates)?;
    timings.wall_s = wall.elapsed().as_secs_f64();
    write_json(&output.join(TIMINGS_FILE), &timings)?;
    Ok(EstimateSummary {
        estimates,
        timings,
        accepted,
        instances,
    })
}

fn write_overlay(
    dataset: &Path,
    overlays: &Path,
    ann: &SceneAnnotation,
    estimates: &[InstanceEstimate],
    models: &[PartModel],
    camera: &clusterpose::CameraIntrinsics,
) -> Result<(), CliError> {
    let image_path = scene_dir(dataset, &ann.scene_id).join("image.png");
    let mut canvas = match image::open(&image_path) {
        Ok(img) => img.into_rgb8(),
        Err(_) => overlay::mask_backdrop(&ann.mask),
    };
    overlay::draw_estimates(&mut canvas, estimates, models, camera);
    let path = overlays.join(format!("{}.png", ann.scene_id));
    canvas
        .save(&path)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

pub fn read_estimates(path: &Path) -> Result<EstimatesFile, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

pub fn evaluate(cfg: &RunConfig, estimates_path: &Path, dataset: &Path, output: &Path) -> Result<Metrics, CliError> {
    let estimates = read_estimates(estimates_path)?;
    let (manifest, ids) = load_dataset(dataset)?;
    let models = vec![cfg.load_model()?];
    let annotations = ids
        .iter()
        .map(|id| read_annotation(dataset, id).map_err(with_scene(id)))
        .collect::<Result<Vec<_>, _>>()?;
    for s in &estimates.scenes {
        if !ids.contains(&s.scene_id) {
            return Err(CliError::Runtime(format!("estimates name unknown scene {}", s.scene_id)));
        }
    }
    let pairs: Vec<(&SceneAnnotation, &[InstanceEstimate])> = annotations
        .iter()
        .map(|a| {
            let est = estimates
                .scenes
                .iter()
                .find(|s| s.scene_id == a.scene_id)
                .map_or(&[][..], |s| s.estimates.as_slice());
            (a, est)
        })
        .collect();
    let metrics = evaluate_estimates(&pairs, &models, &manifest.camera);
    create_dir(output)?;
    write_json(&output.join(METRICS_FILE), &metrics)?;
    let timings: Option<Timings> = estimates_path
        .parent()
        .map(|d| d.join(TIMINGS_FILE))
        .and_then(|p| fs::read_to_string(p).ok())
        .and_then(|t| serde_json::from_str(&t).ok());
    write_text(&output.join(REPORT_FILE), &report(&metrics, timings.as_ref()))?;
    Ok(metrics)
}

fn summary_row(out: &mut String, name: &str, unit: &str, s: Option<Summary>) {
    match s {
        Some(s) => writeln!(out, "{name:<22} {:>12.6} {:>12.6}  {unit}", s.mean, s.median),
        None => writeln!(out, "{name:<22} {:>12} {:>12}  {unit}", "-", "-"),
    }
    .expect("writing to a String");
}

pub fn report(m: &Metrics, timings: Option<&Timings>) -> String {
    let mut out = String::new();
    let w = &mut out;
    writeln!(w, "instances              {}", m.instances).unwrap();
    writeln!(w, "estimated              {}", m.estimated).unwrap();
    writeln!(w, "accepted               {}", m.accepted).unwrap();
    writeln!(w, "misses                 {}", m.misses).unwrap();
    writeln!(w, "unmatched estimates    {}", m.unmatched_estimates).unwrap();
    writeln!(w, "acceptance rate        {:.2}%", 100.0 * m.acceptance_rate).unwrap();
    writeln!(w, "within 5 deg / 5 cm    {:.2}%", 100.0 * m.within_5deg_5cm).unwrap();
    writeln!(w).unwrap();
    writeln!(w, "{:<22} {:>12} {:>12}", "error", "mean", "median").unwrap();
    summary_row(w, "rotation", "deg", m.rotation_error_deg);
    summary_row(w, "translation", "m", m.translation_error_m);
    summary_row(w, "keypoint reprojection", "px", m.keypoint_error_px);
    if let Some(t) = timings {
        writeln!(w).unwrap();
        writeln!(w, "stage timings (s, summed over {} scenes)", t.scenes).unwrap();
        writeln!(w, "  load                 {:.3}", t.load_s).unwrap();
        writeln!(w, "  detect               {:.3}", t.detect_s).unwrap();
        writeln!(w, "  pose optimization    {:.3}", t.pose_s).unwrap();
        writeln!(w, "  overlay              {:.3}", t.overlay_s).unwrap();
        writeln!(w, "  wall clock           {:.3}", t.wall_s).unwrap();
        writeln!(w, "  pose per instance    {:.4}", t.pose_per_instance_s()).unwrap();
    }
    out
}

pub struct LabelReport {
    pub scenes: usize,
    pub problems: Vec<String>,
}

pub fn label_check(cfg: &RunConfig, dataset: &Path) -> Result<LabelReport, CliError> {
    let (manifest, ids) = load_dataset(dataset)?;
    let models = vec![cfg.load_model()?];
    let problems: Vec<Vec<String>> = cfg.thread_pool()?.install(|| {
        ids.par_iter()
            .map(|id| {
                let ann = read_annotation(dataset, id).map_err(with_scene(id))?;
                check_annotation(&ann, &models, &manifest.camera).map_err(with_scene(id))
            })
            .collect::<Result<_, CliError>>()
    })?;
    Ok(LabelReport {
        scenes: ids.len(),
        problems: problems.into_iter().flatten().collect(),
    })
}

/// Writes the built-in bracket as `bracket.obj` and `bracket.edges`.
pub fn make_part(dir: &Path) -> Result<(PathBuf, PathBuf), CliError> {
    create_dir(dir)?;
    let part = PartModel::bracket(clusterpose::mesh::DEFAULT_KEYPOINT_COUNT);
    let obj = dir.join("bracket.obj");
    let edges = dir.join("bracket.edges");
    write_text(&obj, &part.mesh.to_obj())?;
    write_text(&edges, &edges_to_text(&part.edges))?;
    Ok((obj, edges))
}
