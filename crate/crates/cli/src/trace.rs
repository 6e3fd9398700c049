//! `trace-states`: records the recurrent state of a learned controller on one
//! scene and clusters it frame by frame.

use std::io::Write as _;
use std::path::Path;

use aec_core::metrics::cluster_gru_states;
use aec_core::{Canceller, SpectralFrame};

use crate::config::ExperimentConfig;
use crate::scenes::SceneBatchPlan;
use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct StateTrace {
    pub scene: String,
    pub controller: String,
    pub states: Vec<Vec<f64>>,
    /// 1-based class per frame.
    pub classes: Vec<usize>,
}

fn write_rows(path: &Path, header: &str, rows: impl Iterator<Item = String>) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{header}")?;
    for r in rows {
        writeln!(out, "{r}")?;
    }
    out.flush()
}

fn frame_power(frames: &[SpectralFrame]) -> Vec<f64> {
    frames.iter().map(|f| f.bins.iter().map(|c| c.norm_sqr()).sum()).collect()
}

fn spectrogram_db(path: &Path, frames: &[SpectralFrame]) -> std::io::Result<()> {
    let bins = frames.first().map_or(0, |f| f.bins.len());
    let header: Vec<String> = (0..bins).map(|b| format!("band_{b}")).collect();
    write_rows(
        path,
        &format!("frame,{}", header.join(",")),
        frames.iter().map(|f| {
            let cells: Vec<String> = f
                .bins
                .iter()
                .map(|c| (10.0 * (c.norm_sqr() + 1e-12).log10()).to_string())
                .collect();
            format!("{},{}", f.index, cells.join(","))
        }),
    )
}

pub fn run(cfg: &ExperimentConfig) -> Result<StateTrace, CliError> {
    cfg.validate()?;
    let spec = cfg
        .trace
        .as_ref()
        .ok_or_else(|| CliError::Config("the config has no `trace` section".into()))?;
    let factories = cfg.factories()?;
    let factory = factories
        .iter()
        .find(|f| f.label == spec.controller)
        .ok_or_else(|| CliError::Config(format!("no controller labelled {}", spec.controller)))?;
    if !factory.spec.is_neural() {
        return Err(CliError::Config(format!(
            "controller {} has no recurrent state to trace",
            factory.label
        )));
    }
    if spec.clusters == 0 {
        return Err(CliError::Config("clusters must be positive".into()));
    }
    let plan = SceneBatchPlan::new(cfg)?;
    let job = plan.jobs.get(spec.scene).ok_or_else(|| {
        CliError::Config(format!("scene index {} outside a batch of {}", spec.scene, plan.jobs.len()))
    })?;
    let stft_cfg = cfg.stft.resolve().map_err(CliError::config)?;
    let canceller = Canceller::new(stft_cfg, cfg.taps).map_err(CliError::config)?;

    let runtime = |e: aec_core::Error| CliError::Runtime(format!("{}: {e}", job.name));
    let scene = plan.render(job).map_err(runtime)?;
    let mut controller = factory.build(Some(spec.selection));
    let trace = canceller.run(&scene, controller.as_mut()).map_err(runtime)?;
    let classes =
        cluster_gru_states(&trace.states, spec.clusters, spec.linkage, spec.normalization).map_err(CliError::config)?;

    let out = cfg.output_dir.join("states");
    std::fs::create_dir_all(&out)?;
    let dim = trace.states.first().map_or(0, Vec::len);
    let header: Vec<String> = (0..dim).map(|i| format!("state_{i}")).collect();
    write_rows(
        &out.join("states.csv"),
        &format!("frame,{}", header.join(",")),
        trace.states.iter().enumerate().map(|(t, s)| {
            let cells: Vec<String> = s.iter().map(f64::to_string).collect();
            format!("{},{}", t + 1, cells.join(","))
        }),
    )?;
    write_rows(
        &out.join("clusters.csv"),
        "frame,class",
        classes.iter().enumerate().map(|(t, c)| format!("{},{c}", t + 1)),
    )?;

    let stft = canceller.stft();
    let components = [
        ("u", &scene.far_end),
        ("y", &scene.mic),
        ("d", &scene.echo),
        ("s", &scene.near_end),
        ("n", &scene.noise),
    ];
    let mut powers = Vec::new();
    for (name, x) in components {
        let frames = stft.analyze(x).map_err(runtime)?;
        spectrogram_db(&out.join(format!("spectrogram_{name}.csv")), &frames)?;
        powers.push(frame_power(&frames));
    }
    let hop_s = trace.hop as f64 / trace.sample_rate as f64;
    write_rows(
        &out.join("activity.csv"),
        "frame,time_s,u_power,y_power,d_power,s_power,n_power,class",
        (0..trace.num_frames()).map(|t| {
            let p: Vec<String> = powers.iter().map(|c| c[t].to_string()).collect();
            format!("{},{},{},{}", t + 1, t as f64 * hop_s, p.join(","), classes[t])
        }),
    )?;

    Ok(StateTrace {
        scene: job.name.clone(),
        controller: factory.label.clone(),
        states: trace.states,
        classes,
    })
}
