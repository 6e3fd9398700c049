use std::path::PathBuf;
use std::process::ExitCode;

use aec_cli::config::ExperimentConfig;
use aec_cli::inspect::{init_bundle, load_and_inspect, render_text, InitOptions};
use aec_cli::{evaluate, generate, trace, CliError};
use aec_core::neural::{Signal, Topology, Transform};
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Scene generation, controller evaluation and GRU state tracing for the
/// STFT-domain echo canceller.
#[derive(Parser)]
#[command(name = "aecctl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment configuration (JSON).
    config: PathBuf,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Parallel workers; overrides the config and AECCTL_WORKERS.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    taps: Option<usize>,
    /// Number of scenes, starting at the base seed.
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    base_seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig, CliError> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(d) = &self.output_dir {
            cfg.output_dir = d.clone();
        }
        if self.workers.is_some() {
            cfg.workers = self.workers;
        }
        if let Some(t) = self.taps {
            cfg.taps = t;
        }
        if let Some(c) = self.count {
            cfg.scenes.count = c;
            cfg.scenes.seeds = None;
        }
        if let Some(b) = self.base_seed {
            cfg.scenes.base_seed = b;
            cfg.scenes.seeds = None;
        }
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum TopologyArg {
    Broadband,
    Narrowband,
    Hybrid,
}

impl From<TopologyArg> for Topology {
    fn from(t: TopologyArg) -> Self {
        match t {
            TopologyArg::Broadband => Topology::Broadband,
            TopologyArg::Narrowband => Topology::Narrowband,
            TopologyArg::Hybrid => Topology::Hybrid,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum TransformArg {
    ReIm,
    Magnitude,
    LogMagnitude,
}

impl From<TransformArg> for Transform {
    fn from(t: TransformArg) -> Self {
        match t {
            TransformArg::ReIm => Transform::ReIm,
            TransformArg::Magnitude => Transform::Magnitude,
            TransformArg::LogMagnitude => Transform::LogMagnitude,
        }
    }
}

fn parse_signals(s: &str) -> Result<Vec<Signal>, String> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|tag| serde_json::from_value(serde_json::Value::String(tag.trim().into())).map_err(|_| {
            format!("unknown signal '{tag}' (expected u, y, e or d_hat)")
        }))
        .collect()
}

#[derive(Subcommand)]
enum Command {
    /// Render a scene batch to WAV sets plus manifest.json.
    Generate(ConfigArgs),
    /// Run every controller on every scene and write metric reports.
    Evaluate(ConfigArgs),
    /// Print the layout, parameter counts and normalization of a weight file.
    InspectWeights {
        path: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Record and cluster the GRU state of a learned controller on one scene.
    TraceStates(ConfigArgs),
    /// Write a seeded, untrained weight file.
    InitWeights {
        #[arg(long, value_enum)]
        topology: TopologyArg,
        #[arg(long, default_value_t = 257)]
        bands: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        dense: Option<usize>,
        /// Comma-separated GRU widths.
        #[arg(long, value_delimiter = ',')]
        gru: Option<Vec<usize>>,
        /// Comma-separated input signals (u, y, e, d_hat).
        #[arg(long, value_parser = parse_signals)]
        features: Option<Vec<Signal>>,
        #[arg(long, value_enum)]
        transform: Option<TransformArg>,
        /// Comma-separated hybrid signals.
        #[arg(long, value_parser = parse_signals)]
        hybrid: Option<Vec<Signal>>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate(args) => {
            let m = generate::run(&args.load()?)?;
            println!("wrote {} scenes", m.scenes.len());
        }
        Command::Evaluate(args) => {
            let cfg = args.load()?;
            let (report, _) = evaluate::run(&cfg)?;
            for c in &report.controllers {
                let erle = c.erle_db.map_or("-".to_string(), |s| format!("{:.2} ± {:.2} dB", s.mean, s.std));
                println!("{:<20} ERLE {erle}  ({} scenes, {} failed)", c.controller, c.scenes, c.failed);
            }
            if report.failed() > 0 {
                return Err(CliError::Runtime(format!(
                    "{} runs failed; see {}",
                    report.failed(),
                    cfg.output_dir.join("scenes.csv").display()
                )));
            }
        }
        Command::InspectWeights { path, json } => {
            let w = load_and_inspect(&path)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&w).map_err(CliError::runtime)?);
            } else {
                print!("{}", render_text(&w));
            }
        }
        Command::TraceStates(args) => {
            let t = trace::run(&args.load()?)?;
            let k = t.classes.iter().max().copied().unwrap_or(0);
            println!("{} on {}: {} frames in {k} classes", t.controller, t.scene, t.classes.len());
        }
        Command::InitWeights {
            topology,
            bands,
            seed,
            out,
            dense,
            gru,
            features,
            transform,
            hybrid,
        } => {
            let opts = InitOptions {
                dense,
                gru,
                signals: features,
                transform: transform.map(Into::into),
                hybrid,
            };
            let bundle = init_bundle(topology.into(), bands, seed, &opts)?;
            bundle
                .save(&out)
                .map_err(|e| CliError::Runtime(format!("{}: {e}", out.display())))?;
            println!("wrote {} ({} parameters)", out.display(), bundle.parameter_count());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("aecctl: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
