//! Run configuration: one TOML file per experiment.

use std::path::{Path, PathBuf};

use clusterpose::multi::{EstimatorConfig, SimulatedDetectorConfig};
use clusterpose::synth::{SceneSpec, DEFAULT_SPLIT_FRACTION};
use clusterpose::{CameraIntrinsics, PartModel};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Root of every random stream in the run. Required.
    pub seed: u64,
    #[serde(default = "default_scenes")]
    pub scenes: usize,
    #[serde(default = "default_split")]
    pub split_fraction: f64,
    /// Keypoints sampled along the model edges.
    #[serde(default = "default_keypoints")]
    pub keypoints: usize,
    /// Worker threads for scene-level parallelism; 0 picks the core count.
    #[serde(default)]
    pub workers: usize,
    pub paths: Paths,
    #[serde(default)]
    pub camera: CameraIntrinsics,
    #[serde(default)]
    pub scene: SceneSpec,
    #[serde(default)]
    pub detector: SimulatedDetectorConfig,
    #[serde(default)]
    pub estimator: EstimatorConfig,
}

/// Relative paths are resolved against the config file's directory.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub mesh: PathBuf,
    pub edges: PathBuf,
    pub dataset: PathBuf,
    pub output: PathBuf,
    /// Backdrop for composited scene images.
    pub background: Option<PathBuf>,
    /// Directory of `<scene_id>.json` detection files; replaces the simulator.
    pub detections: Option<PathBuf>,
}

fn default_scenes() -> usize {
    200
}

fn default_split() -> f64 {
    DEFAULT_SPLIT_FRACTION
}

fn default_keypoints() -> usize {
    clusterpose::mesh::DEFAULT_KEYPOINT_COUNT
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub scenes: Option<usize>,
    pub parts: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve(base);
        cfg.apply(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let p = &mut self.paths;
        for path in [&mut p.mesh, &mut p.edges, &mut p.dataset, &mut p.output] {
            *path = base.join(&*path);
        }
        for path in [&mut p.background, &mut p.detections].into_iter().flatten() {
            *path = base.join(&*path);
        }
    }

    fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(n) = o.scenes {
            self.scenes = n;
        }
        if let Some(n) = o.parts {
            self.scene.min_parts = n;
            self.scene.max_parts = n;
        }
        self.scene.camera = self.camera;
        self.scene.seed = self.seed;
        self.detector.seed = self.seed;
        self.estimator.ransac.seed = self.seed;
    }

    fn validate(&self) -> Result<(), CliError> {
        if !self.paths.mesh.is_file() {
            return Err(CliError::Usage(format!("mesh not found: {}", self.paths.mesh.display())));
        }
        if !self.paths.edges.is_file() {
            return Err(CliError::Usage(format!("edge file not found: {}", self.paths.edges.display())));
        }
        if let Some(bg) = &self.paths.background {
            if !bg.is_file() {
                return Err(CliError::Usage(format!("background not found: {}", bg.display())));
            }
        }
        if !(0.0..=1.0).contains(&self.split_fraction) {
            return Err(CliError::Usage(format!("split_fraction must be in [0, 1], got {}", self.split_fraction)));
        }
        let usage = |e: clusterpose::Error| CliError::Usage(e.to_string());
        self.scene.validate().map_err(usage)?;
        self.detector.validate().map_err(usage)?;
        self.estimator.validate().map_err(usage)?;
        Ok(())
    }

    pub fn load_model(&self) -> Result<PartModel, CliError> {
        Ok(PartModel::load(&self.paths.mesh, &self.paths.edges, self.keypoints)?)
    }

    pub fn thread_pool(&self) -> Result<rayon::ThreadPool, CliError> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| CliError::Runtime(format!("cannot start worker pool: {e}")))
    }
}
