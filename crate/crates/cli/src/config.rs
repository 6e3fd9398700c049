//! Experiment configuration: one JSON file describing scenes, controllers,
//! STFT, outputs and tracing.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use aec_core::classic::{
    ErrorAwareNlms, ErrorAwareParams, InterferenceSource, KalmanController, KalmanParams, MinSystemDistanceNlms,
    MinSystemDistanceParams, OracleGradNlms, OracleGradParams, StallOrAdaptNlms, StallOrAdaptParams,
};
use aec_core::metrics::{Linkage, StateNormalization};
use aec_core::neural::{BundleSpec, Network, NeuralController, NeuralOptions, StateSelection, Topology, WeightBundle};
use aec_core::scene::{IrPool, RandomSceneSpec, SceneConfig, SourceKind, SyntheticIrSpec};
use aec_core::{AdaptationController, FrozenController, StftSpec, DEFAULT_TAPS};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const WORKERS_ENV: &str = "AECCTL_WORKERS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenes: SceneBatch,
    #[serde(default)]
    pub ir_pool: IrPoolSpec,
    #[serde(default)]
    pub controllers: Vec<ControllerSpec>,
    #[serde(default)]
    pub stft: StftSpec,
    #[serde(default = "default_taps")]
    pub taps: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub reports: ReportSpec,
    /// Parallel scene workers. Falls back to `AECCTL_WORKERS`, then to the
    /// number of CPUs.
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub trace: Option<TraceSpec>,
}

fn default_taps() -> usize {
    DEFAULT_TAPS
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("aecctl-out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneBatch {
    #[serde(default = "default_count")]
    pub count: usize,
    /// Explicit seeds; overrides `count` and `base_seed`.
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub source: SceneSource,
}

fn default_count() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum SceneSource {
    /// Scenes drawn from a random distribution.
    Random {
        #[serde(default)]
        spec: RandomSceneSpec,
    },
    /// One fixed configuration rendered with per-seed source signals.
    Template {
        config: SceneConfig,
        #[serde(default = "white")]
        far_end: SourceKind,
        #[serde(default = "white")]
        near_end: SourceKind,
        #[serde(default = "white")]
        noise: SourceKind,
    },
    /// Scenes previously written by `generate`.
    Directory { path: PathBuf },
}

fn oracle_kalman_params<'de, D: serde::Deserializer<'de>>(d: D) -> Result<KalmanParams, D::Error> {
    use serde::de::Error as _;
    let given = serde_json::Map::<String, serde_json::Value>::deserialize(d)?;
    let mut merged = match serde_json::to_value(KalmanParams::oracle_interference()).map_err(D::Error::custom)? {
        serde_json::Value::Object(m) => m,
        _ => unreachable!("parameters serialize to an object"),
    };
    merged.extend(given);
    serde_json::from_value(serde_json::Value::Object(merged)).map_err(D::Error::custom)
}

fn white() -> SourceKind {
    SourceKind::White
}

impl Default for SceneSource {
    fn default() -> Self {
        SceneSource::Random {
            spec: RandomSceneSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum IrPoolSpec {
    Synthetic {
        #[serde(default = "default_pool_size")]
        count: usize,
        #[serde(default)]
        spec: SyntheticIrSpec,
        #[serde(default = "default_pool_seed")]
        seed: u64,
    },
    /// Every WAV file in a directory, in file-name order.
    Directory { path: PathBuf },
}

fn default_pool_size() -> usize {
    16
}

fn default_pool_seed() -> u64 {
    7
}

impl Default for IrPoolSpec {
    fn default() -> Self {
        IrPoolSpec::Synthetic {
            count: default_pool_size(),
            spec: SyntheticIrSpec::default(),
            seed: default_pool_seed(),
        }
    }
}

impl IrPoolSpec {
    pub fn build(&self, sample_rate: u32) -> Result<IrPool, CliError> {
        match self {
            IrPoolSpec::Synthetic { count, spec, seed } => IrPool::synthetic(*count, spec, *seed),
            IrPoolSpec::Directory { path } => IrPool::from_dir(path, sample_rate),
        }
        .map_err(CliError::config)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UntrainedSpec {
    pub topology: Topology,
    #[serde(default)]
    pub seed: u64,
    /// Full shape; defaults to the standard shape of `topology`.
    #[serde(default)]
    pub bundle: Option<BundleSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum ControllerSpec {
    Frozen {
        #[serde(default)]
        label: Option<String>,
    },
    StallOrAdapt {
        #[serde(default)]
        label: Option<String>,
        #[serde(default)]
        params: StallOrAdaptParams,
    },
    EaNlms {
        #[serde(default)]
        label: Option<String>,
        #[serde(default)]
        params: ErrorAwareParams,
    },
    MsdNlms {
        #[serde(default)]
        label: Option<String>,
        #[serde(default)]
        params: MinSystemDistanceParams,
    },
    Kf {
        #[serde(default)]
        label: Option<String>,
        #[serde(default = "KalmanParams::blind")]
        params: KalmanParams,
    },
    /// Omitted parameters take the oracle defaults, not the blind ones.
    OracleIpKf {
        #[serde(default)]
        label: Option<String>,
        #[serde(default = "KalmanParams::oracle_interference", deserialize_with = "oracle_kalman_params")]
        params: KalmanParams,
    },
    OracleGradNlms {
        #[serde(default)]
        label: Option<String>,
        #[serde(default)]
        params: OracleGradParams,
    },
    /// Learned controller from a weight file or a seeded untrained bundle.
    Neural {
        #[serde(default)]
        label: Option<String>,
        #[serde(default)]
        weights: Option<PathBuf>,
        #[serde(default)]
        untrained: Option<UntrainedSpec>,
        #[serde(default)]
        options: NeuralOptions,
    },
}

/// A controller spec with its network loaded, ready to spawn instances.
#[derive(Debug, Clone)]
pub struct ControllerFactory {
    pub spec: ControllerSpec,
    pub label: String,
    network: Option<Arc<Network>>,
}

impl ControllerFactory {
    pub fn new(spec: &ControllerSpec, num_bands: usize, base: &Path) -> Result<Self, CliError> {
        let mut network = None;
        if let ControllerSpec::Neural {
            weights, untrained, ..
        } = spec
        {
            let bundle = match (weights, untrained) {
                (Some(path), None) => {
                    let path = resolve(base, path);
                    WeightBundle::load(&path)
                        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
                }
                (None, Some(u)) => {
                    let shape = u.bundle.clone().unwrap_or_else(|| BundleSpec::default_for(u.topology, num_bands));
                    WeightBundle::untrained(&shape, u.seed).map_err(CliError::config)?
                }
                _ => {
                    return Err(CliError::Config(
                        "a neural controller needs exactly one of `weights` and `untrained`".into(),
                    ))
                }
            };
            network = Some(Arc::new(Network::new(bundle).map_err(CliError::config)?));
        }
        let label = spec.label(network.as_deref());
        Ok(Self {
            spec: spec.clone(),
            label,
            network,
        })
    }

    pub fn network(&self) -> Option<&Arc<Network>> {
        self.network.as_ref()
    }

    /// Fresh controller instance; `trace` overrides the neural trace option.
    pub fn build(&self, trace: Option<StateSelection>) -> Box<dyn AdaptationController> {
        match &self.spec {
            ControllerSpec::Frozen { .. } => Box::new(FrozenController::default()),
            ControllerSpec::StallOrAdapt { params, .. } => Box::new(StallOrAdaptNlms::new(*params)),
            ControllerSpec::EaNlms { params, .. } => Box::new(ErrorAwareNlms::new(*params)),
            ControllerSpec::MsdNlms { params, .. } => Box::new(MinSystemDistanceNlms::new(*params)),
            ControllerSpec::Kf { params, .. } => Box::new(KalmanController::new(*params, InterferenceSource::Error)),
            ControllerSpec::OracleIpKf { params, .. } => {
                Box::new(KalmanController::new(*params, InterferenceSource::Oracle))
            }
            ControllerSpec::OracleGradNlms { params, .. } => Box::new(OracleGradNlms::new(*params)),
            ControllerSpec::Neural { options, .. } => {
                let mut options = options.clone();
                if trace.is_some() {
                    options.trace = trace;
                }
                let net = self.network.clone().expect("neural factory holds a network");
                Box::new(NeuralController::new(net, options).with_label(self.label.clone()))
            }
        }
    }
}

impl ControllerSpec {
    fn explicit_label(&self) -> Option<&String> {
        match self {
            ControllerSpec::Frozen { label }
            | ControllerSpec::StallOrAdapt { label, .. }
            | ControllerSpec::EaNlms { label, .. }
            | ControllerSpec::MsdNlms { label, .. }
            | ControllerSpec::Kf { label, .. }
            | ControllerSpec::OracleIpKf { label, .. }
            | ControllerSpec::OracleGradNlms { label, .. }
            | ControllerSpec::Neural { label, .. } => label.as_ref(),
        }
    }

    fn label(&self, network: Option<&Network>) -> String {
        if let Some(l) = self.explicit_label() {
            return l.clone();
        }
        match self {
            ControllerSpec::Frozen { .. } => "frozen".into(),
            ControllerSpec::StallOrAdapt { .. } => "stall-or-adapt".into(),
            ControllerSpec::EaNlms { .. } => "ea-nlms".into(),
            ControllerSpec::MsdNlms { .. } => "msd-nlms".into(),
            ControllerSpec::Kf { .. } => "kf".into(),
            ControllerSpec::OracleIpKf { .. } => "oracle-ip-kf".into(),
            ControllerSpec::OracleGradNlms { .. } => "oracle-grad-nlms".into(),
            ControllerSpec::Neural { .. } => match network.map(|n| n.bundle().topology) {
                Some(Topology::Broadband) => "bb-dnn".into(),
                Some(Topology::Narrowband) => "nb-dnn".into(),
                _ => "hb-dnn".into(),
            },
        }
    }

    pub fn is_neural(&self) -> bool {
        matches!(self, ControllerSpec::Neural { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSpec {
    /// Per-scene and summary CSV files.
    pub csv: bool,
    /// Convergence plots (segment ERLE over time) per scene, as SVG.
    pub plots: bool,
    /// Step-size mask spectrograms of learned controllers, as CSV.
    pub mask_dumps: bool,
    /// Full per-frame run traces in the columnar format.
    pub traces: bool,
}

impl Default for ReportSpec {
    fn default() -> Self {
        Self {
            csv: true,
            plots: false,
            mask_dumps: false,
            traces: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceSpec {
    /// Label of the controller to trace.
    pub controller: String,
    /// Position of the scene within the batch.
    #[serde(default)]
    pub scene: usize,
    #[serde(default = "default_clusters")]
    pub clusters: usize,
    #[serde(default)]
    pub linkage: Linkage,
    #[serde(default)]
    pub normalization: StateNormalization,
    #[serde(default = "default_selection")]
    pub selection: StateSelection,
}

fn default_clusters() -> usize {
    2
}

fn default_selection() -> StateSelection {
    StateSelection::BandMean
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl ExperimentConfig {
    /// Parses a config file. Relative paths inside it are resolved against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: Self = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.rebase(base);
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        self.output_dir = resolve(base, &self.output_dir);
        if let SceneSource::Directory { path } = &mut self.scenes.source {
            *path = resolve(base, path);
        }
        if let IrPoolSpec::Directory { path } = &mut self.ir_pool {
            *path = resolve(base, path);
        }
        for c in &mut self.controllers {
            if let ControllerSpec::Neural {
                weights: Some(w), ..
            } = c
            {
                *w = resolve(base, w);
            }
        }
    }

    pub fn seeds(&self) -> Vec<u64> {
        match &self.scenes.seeds {
            Some(s) => s.clone(),
            None => (0..self.scenes.count as u64).map(|i| self.scenes.base_seed + i).collect(),
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let seeds = self.seeds();
        let unique: HashSet<u64> = seeds.iter().copied().collect();
        if unique.len() != seeds.len() {
            return Err(CliError::Config("scene seeds must be unique".into()));
        }
        if self.taps == 0 {
            return Err(CliError::Config("taps must be positive".into()));
        }
        if self.workers == Some(0) {
            return Err(CliError::Config("workers must be positive".into()));
        }
        self.stft.resolve().map_err(CliError::config)?;
        let mut labels = HashSet::new();
        for c in &self.controllers {
            if let ControllerSpec::Neural { weights: Some(w), .. } = c {
                if !w.is_file() {
                    return Err(CliError::Config(format!("weight file {} does not exist", w.display())));
                }
            }
            if let Some(l) = c.explicit_label() {
                if !labels.insert(l.clone()) {
                    return Err(CliError::Config(format!("duplicate controller label {l}")));
                }
            }
        }
        Ok(())
    }

    /// Loads every controller's network and assigns unique labels.
    pub fn factories(&self) -> Result<Vec<ControllerFactory>, CliError> {
        if self.controllers.is_empty() {
            return Err(CliError::Config("at least one controller is required".into()));
        }
        let bands = self.stft.resolve().map_err(CliError::config)?.num_bins();
        let factories: Vec<ControllerFactory> = self
            .controllers
            .iter()
            .map(|c| ControllerFactory::new(c, bands, Path::new(".")))
            .collect::<Result<_, _>>()?;
        let mut seen = HashSet::new();
        for f in &factories {
            if !seen.insert(f.label.clone()) {
                return Err(CliError::Config(format!(
                    "controller label {} is ambiguous; set `label` explicitly",
                    f.label
                )));
            }
        }
        Ok(factories)
    }

    pub fn worker_count(&self) -> usize {
        self.workers
            .or_else(|| std::env::var(WORKERS_ENV).ok().and_then(|v| v.parse().ok()).filter(|&n| n > 0))
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    }
}
