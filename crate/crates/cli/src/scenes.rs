//! Resolving a scene batch into renderable jobs.

use std::path::{Path, PathBuf};

use aec_core::scene::{render_template, sample_random_scene, IrPool, Scene};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, SceneSource};
use crate::CliError;

pub const MANIFEST_FORMAT: &str = "aec-scene-manifest";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub seed: u64,
    /// Directory relative to the manifest.
    pub dir: PathBuf,
    pub duration_s: f64,
    pub ser_db: Option<f64>,
    pub senr_db: Option<f64>,
    pub change_time_s: Option<f64>,
    pub fade_duration_s: f64,
    pub far_end_masked: bool,
    pub near_end_masked: bool,
}

impl ManifestEntry {
    pub fn describe(name: String, scene: &Scene) -> Self {
        let c = &scene.config;
        Self {
            dir: PathBuf::from(&name),
            name,
            seed: c.rng_seed,
            duration_s: c.duration_s,
            ser_db: c.ser_db,
            senr_db: c.senr_db,
            change_time_s: c.change_time_s,
            fade_duration_s: c.fade_duration_s,
            far_end_masked: c.masking.far_end.is_some(),
            near_end_masked: c.masking.near_end.is_some(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub scenes: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(scenes: Vec<ManifestEntry>) -> Self {
        Self {
            format: MANIFEST_FORMAT.into(),
            version: MANIFEST_VERSION,
            scenes,
        }
    }

    pub fn load(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join("manifest.json");
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let m: Manifest =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if m.format != MANIFEST_FORMAT || m.version != MANIFEST_VERSION {
            return Err(CliError::Config(format!(
                "{}: expected {MANIFEST_FORMAT} v{MANIFEST_VERSION}, found {} v{}",
                path.display(),
                m.format,
                m.version
            )));
        }
        Ok(m)
    }
}

pub fn scene_name(seed: u64) -> String {
    format!("scene_{seed:06}")
}

#[derive(Debug, Clone)]
enum JobKind {
    Generated,
    Stored(PathBuf),
}

/// One scene of a batch, rendered on demand.
#[derive(Debug, Clone)]
pub struct SceneJob {
    pub name: String,
    pub seed: u64,
    kind: JobKind,
}

/// Everything needed to render the jobs of a batch.
#[derive(Debug)]
pub struct SceneBatchPlan {
    pub jobs: Vec<SceneJob>,
    source: SceneSource,
    pool: Option<IrPool>,
}

impl SceneBatchPlan {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self, CliError> {
        let source = cfg.scenes.source.clone();
        let (jobs, pool) = match &source {
            SceneSource::Directory { path } => {
                let manifest = Manifest::load(path)?;
                let wanted = cfg.scenes.seeds.as_ref();
                let jobs = manifest
                    .scenes
                    .iter()
                    .filter(|e| wanted.is_none_or(|w| w.contains(&e.seed)))
                    .map(|e| SceneJob {
                        name: e.name.clone(),
                        seed: e.seed,
                        kind: JobKind::Stored(path.join(&e.dir)),
                    })
                    .collect();
                (jobs, None)
            }
            SceneSource::Random { spec } => {
                let pool = cfg.ir_pool.build(spec.sample_rate)?;
                (generated(cfg), Some(pool))
            }
            SceneSource::Template { config, .. } => {
                config.validate().map_err(CliError::config)?;
                (generated(cfg), None)
            }
        };
        Ok(Self { jobs, source, pool })
    }

    pub fn render(&self, job: &SceneJob) -> aec_core::Result<Scene> {
        match (&job.kind, &self.source) {
            (JobKind::Stored(dir), _) => Scene::read_wav_set(dir),
            (JobKind::Generated, SceneSource::Random { spec }) => {
                sample_random_scene(job.seed, self.pool.as_ref().expect("random batches own a pool"), spec)
            }
            (
                JobKind::Generated,
                SceneSource::Template {
                    config,
                    far_end,
                    near_end,
                    noise,
                },
            ) => render_template(config, far_end, near_end, noise, job.seed),
            (JobKind::Generated, SceneSource::Directory { .. }) => unreachable!("directory jobs are stored"),
        }
    }
}

fn generated(cfg: &ExperimentConfig) -> Vec<SceneJob> {
    cfg.seeds()
        .into_iter()
        .map(|seed| SceneJob {
            name: scene_name(seed),
            seed,
            kind: JobKind::Generated,
        })
        .collect()
}
