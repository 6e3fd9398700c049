//! `generate`: writes a scene batch as WAV sets plus a manifest.

use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::scenes::{Manifest, ManifestEntry, SceneBatchPlan};
use crate::CliError;

pub fn run(cfg: &ExperimentConfig) -> Result<Manifest, CliError> {
    cfg.validate()?;
    let plan = SceneBatchPlan::new(cfg)?;
    let out = cfg.output_dir.clone();
    std::fs::create_dir_all(&out)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", out.display())))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.worker_count())
        .build()
        .map_err(CliError::runtime)?;
    let entries: Vec<Result<ManifestEntry, CliError>> = pool.install(|| {
        plan.jobs
            .par_iter()
            .map(|job| {
                let scene = plan
                    .render(job)
                    .map_err(|e| CliError::Runtime(format!("{}: {e}", job.name)))?;
                scene
                    .write_wav_set(out.join(&job.name))
                    .map_err(|e| CliError::Runtime(format!("{}: {e}", job.name)))?;
                Ok(ManifestEntry::describe(job.name.clone(), &scene))
            })
            .collect()
    });
    let manifest = Manifest::new(entries.into_iter().collect::<Result<_, _>>()?);
    let text = serde_json::to_string_pretty(&manifest).map_err(CliError::runtime)?;
    std::fs::write(out.join("manifest.json"), text + "\n")?;
    Ok(manifest)
}
