//! `evaluate`: runs every controller on every scene of a batch and writes
//! per-scene metrics, per-controller summaries and optional plots, mask dumps
//! and traces.

use std::io::Write as _;
use std::path::Path;

use aec_core::metrics::{evaluate_run, MetricReport};
use aec_core::{Canceller, RunTrace};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ControllerFactory, ExperimentConfig, ReportSpec};
use crate::plot::{line_plot, Series};
use crate::scenes::{SceneBatchPlan, SceneJob};
use crate::{fmt_num, CliError};

pub const REPORT_FORMAT: &str = "aec-evaluation-report";
pub const REPORT_VERSION: u32 = 1;

pub const SCENE_COLUMNS: [&str; 11] = [
    "scene",
    "seed",
    "controller",
    "status",
    "erle_db",
    "final_erle_db",
    "fd_mse",
    "td_mse",
    "fd_erle_loss",
    "td_erle_loss",
    "message",
];

/// Outcome of one controller on one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneResult {
    pub scene: String,
    pub seed: u64,
    pub controller: String,
    pub outcome: Result<MetricReport, String>,
}

impl SceneResult {
    fn metric_values(&self) -> Option<[f64; 6]> {
        self.outcome.as_ref().ok().map(|m| {
            [
                m.erle_db,
                m.final_erle_db,
                m.losses.fd_mse,
                m.losses.td_mse,
                m.losses.fd_erle,
                m.losses.td_erle,
            ]
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl Stat {
    fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Some(Self { mean, std: var.sqrt() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerSummary {
    pub controller: String,
    pub scenes: usize,
    pub failed: usize,
    pub erle_db: Option<Stat>,
    pub final_erle_db: Option<Stat>,
    pub fd_mse: Option<Stat>,
    pub td_mse: Option<Stat>,
    pub fd_erle_loss: Option<Stat>,
    pub td_erle_loss: Option<Stat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub format: String,
    pub version: u32,
    pub scenes: usize,
    pub controllers: Vec<ControllerSummary>,
    pub notes: Vec<String>,
}

impl EvaluationReport {
    pub fn failed(&self) -> usize {
        self.controllers.iter().map(|c| c.failed).sum()
    }
}

pub fn summarize(results: &[SceneResult], labels: &[String]) -> Vec<ControllerSummary> {
    labels
        .iter()
        .map(|label| {
            let mine: Vec<&SceneResult> = results.iter().filter(|r| &r.controller == label).collect();
            let values: Vec<[f64; 6]> = mine.iter().filter_map(|r| r.metric_values()).collect();
            let col = |i: usize| Stat::of(&values.iter().map(|v| v[i]).collect::<Vec<_>>());
            ControllerSummary {
                controller: label.clone(),
                scenes: mine.len(),
                failed: mine.len() - values.len(),
                erle_db: col(0),
                final_erle_db: col(1),
                fd_mse: col(2),
                td_mse: col(3),
                fd_erle_loss: col(4),
                td_erle_loss: col(5),
            }
        })
        .collect()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn write_scene_csv(path: &Path, results: &[SceneResult]) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{}", SCENE_COLUMNS.join(","))?;
    for r in results {
        let (status, message) = match &r.outcome {
            Ok(_) => ("ok", String::new()),
            Err(m) => ("failed", m.clone()),
        };
        let values = r.metric_values();
        let nums: Vec<String> = (0..6).map(|i| fmt_num(values.map(|v| v[i]))).collect();
        writeln!(
            out,
            "{},{},{},{status},{},{}",
            csv_field(&r.scene),
            r.seed,
            csv_field(&r.controller),
            nums.join(","),
            csv_field(&message)
        )?;
    }
    out.flush()
}

fn write_summary_csv(path: &Path, summaries: &[ControllerSummary]) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let metrics = ["erle_db", "final_erle_db", "fd_mse", "td_mse", "fd_erle_loss", "td_erle_loss"];
    let header: Vec<String> = metrics.iter().flat_map(|m| [format!("{m}_mean"), format!("{m}_std")]).collect();
    writeln!(out, "controller,scenes,failed,{}", header.join(","))?;
    for s in summaries {
        let stats = [s.erle_db, s.final_erle_db, s.fd_mse, s.td_mse, s.fd_erle_loss, s.td_erle_loss];
        let cells: Vec<String> = stats
            .iter()
            .flat_map(|st| [fmt_num(st.map(|v| v.mean)), fmt_num(st.map(|v| v.std))])
            .collect();
        writeln!(out, "{},{},{},{}", csv_field(&s.controller), s.scenes, s.failed, cells.join(","))?;
    }
    out.flush()
}

fn write_matrix_csv(path: &Path, rows: &[Vec<f64>], prefix: &str) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let cols = rows.first().map_or(0, Vec::len);
    let header: Vec<String> = (0..cols).map(|c| format!("{prefix}{c}")).collect();
    writeln!(out, "frame,{}", header.join(","))?;
    for (t, row) in rows.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(f64::to_string).collect();
        writeln!(out, "{},{}", t + 1, cells.join(","))?;
    }
    out.flush()
}

pub(crate) fn file_stem(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

struct Outputs<'a> {
    dir: &'a Path,
    reports: &'a ReportSpec,
}

impl Outputs<'_> {
    fn per_run(&self, job: &SceneJob, label: &str, trace: &RunTrace) -> aec_core::Result<()> {
        let stem = format!("{}__{}", job.name, file_stem(label));
        if self.reports.mask_dumps && !trace.mask_mu.is_empty() {
            let dir = self.dir.join("masks");
            write_matrix_csv(&dir.join(format!("{stem}_mu.csv")), &trace.mask_mu, "band_")?;
            write_matrix_csv(&dir.join(format!("{stem}_e.csv")), &trace.mask_e, "band_")?;
        }
        if self.reports.traces {
            trace.write_columnar(self.dir.join("traces"), &stem)?;
        }
        Ok(())
    }

    fn plot(&self, job: &SceneJob, runs: &[(String, Option<Vec<Option<f64>>>)]) -> std::io::Result<()> {
        let series: Vec<Series<'_>> = runs
            .iter()
            .filter_map(|(label, seg)| {
                seg.as_ref().map(|seg| Series {
                    label,
                    points: seg.iter().enumerate().map(|(i, v)| (i as f64 + 0.5, *v)).collect(),
                })
            })
            .collect();
        let svg = line_plot(&format!("{} (seed {})", job.name, job.seed), "time (s)", "segment ERLE (dB)", &series);
        std::fs::write(self.dir.join("plots").join(format!("{}.svg", job.name)), svg)
    }
}

fn run_scene(
    plan: &SceneBatchPlan,
    job: &SceneJob,
    factories: &[ControllerFactory],
    canceller: &Canceller,
    outputs: &Outputs<'_>,
) -> Vec<SceneResult> {
    let result = |controller: &str, outcome: Result<MetricReport, String>| SceneResult {
        scene: job.name.clone(),
        seed: job.seed,
        controller: controller.to_string(),
        outcome,
    };
    let prepared = plan.render(job).and_then(|scene| {
        let echo_frames = canceller.stft().analyze(&scene.echo)?;
        Ok((scene, echo_frames))
    });
    let (scene, echo_frames) = match prepared {
        Ok(p) => p,
        Err(e) => return factories.iter().map(|f| result(&f.label, Err(e.to_string()))).collect(),
    };
    let mut segments = Vec::new();
    let results = factories
        .iter()
        .map(|f| {
            let mut controller = f.build(None);
            let outcome = canceller.run(&scene, controller.as_mut()).and_then(|trace| {
                let report = evaluate_run(&trace, &scene.echo, &echo_frames)?;
                outputs.per_run(job, &f.label, &trace)?;
                Ok(report)
            });
            segments.push((f.label.clone(), outcome.as_ref().ok().map(|r| r.segment_erle_db.clone())));
            result(&f.label, outcome.map_err(|e| e.to_string()))
        })
        .collect();
    if outputs.reports.plots {
        if let Err(e) = outputs.plot(job, &segments) {
            return factories
                .iter()
                .map(|f| result(&f.label, Err(format!("plot: {e}"))))
                .collect();
        }
    }
    results
}

/// Runs the batch and writes the reports. Per-run failures are recorded in the
/// results; the returned report counts them.
pub fn run(cfg: &ExperimentConfig) -> Result<(EvaluationReport, Vec<SceneResult>), CliError> {
    cfg.validate()?;
    let factories = cfg.factories()?;
    let plan = SceneBatchPlan::new(cfg)?;
    let stft_cfg = cfg.stft.resolve().map_err(CliError::config)?;
    let canceller = Canceller::new(stft_cfg, cfg.taps).map_err(CliError::config)?;

    let out = cfg.output_dir.as_path();
    let mut dirs = vec![out.to_path_buf()];
    if cfg.reports.plots {
        dirs.push(out.join("plots"));
    }
    if cfg.reports.mask_dumps {
        dirs.push(out.join("masks"));
    }
    if cfg.reports.traces {
        dirs.push(out.join("traces"));
    }
    for d in &dirs {
        std::fs::create_dir_all(d).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", d.display())))?;
    }

    let outputs = Outputs {
        dir: out,
        reports: &cfg.reports,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.worker_count())
        .build()
        .map_err(CliError::runtime)?;
    let per_scene: Vec<Vec<SceneResult>> = pool.install(|| {
        plan.jobs
            .par_iter()
            .map(|job| run_scene(&plan, job, &factories, &canceller, &outputs))
            .collect()
    });
    let results: Vec<SceneResult> = per_scene.into_iter().flatten().collect();

    let labels: Vec<String> = factories.iter().map(|f| f.label.clone()).collect();
    let report = EvaluationReport {
        format: REPORT_FORMAT.into(),
        version: REPORT_VERSION,
        scenes: plan.jobs.len(),
        controllers: summarize(&results, &labels),
        notes: vec!["PESQ is not computed.".into()],
    };
    if cfg.reports.csv {
        write_scene_csv(&out.join("scenes.csv"), &results)?;
        write_summary_csv(&out.join("summary.csv"), &report.controllers)?;
    }
    let json = serde_json::to_string_pretty(&report).map_err(CliError::runtime)?;
    std::fs::write(out.join("report.json"), json + "\n")?;
    Ok((report, results))
}
