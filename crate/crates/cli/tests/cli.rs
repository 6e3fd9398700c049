use std::path::{Path, PathBuf};
use std::process::Command;

use aec_cli::config::ExperimentConfig;
use aec_cli::scenes::Manifest;
use aec_cli::{evaluate, generate, trace, CliError};
use aec_core::neural::{BundleSpec, FeatureSpec, Signal, Topology, Transform, WeightBundle};
use serde_json::json;

fn write_config(dir: &Path, value: serde_json::Value) -> PathBuf {
    let path = dir.join("experiment.json");
    std::fs::write(&path, serde_json::to_string_pretty(&value).unwrap()).unwrap();
    path
}

fn short_random(count: usize, base_seed: u64) -> serde_json::Value {
    json!({
        "count": count,
        "base_seed": base_seed,
        "source": {"kind": "random", "spec": {"duration_s": 2.0, "change_range_s": [0.8, 1.2], "max_fade_s": 0.3}}
    })
}

fn aecctl(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_aecctl")).args(args).output().unwrap()
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

#[test]
fn generate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(
        dir.path(),
        json!({"scenes": short_random(3, 40), "output_dir": "gen", "workers": 2}),
    );
    let cfg = ExperimentConfig::load(&path).unwrap();
    let first = generate::run(&cfg).unwrap();
    let manifest_text = std::fs::read(dir.path().join("gen/manifest.json")).unwrap();
    let wav = std::fs::read(dir.path().join("gen/scene_000041/y.wav")).unwrap();
    let second = generate::run(&cfg).unwrap();
    assert_eq!(first, second);
    assert_eq!(std::fs::read(dir.path().join("gen/manifest.json")).unwrap(), manifest_text);
    assert_eq!(std::fs::read(dir.path().join("gen/scene_000041/y.wav")).unwrap(), wav);
    let names: Vec<&str> = first.scenes.iter().map(|s| s.name.as_str()).collect();
    assert_eq!(names, ["scene_000040", "scene_000041", "scene_000042"]);
    assert_eq!(Manifest::load(&dir.path().join("gen")).unwrap(), first);
}

#[test]
fn frozen_controller_has_zero_erle() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(
        dir.path(),
        json!({"scenes": short_random(2, 0), "controllers": [{"kind": "frozen"}], "output_dir": "out"}),
    );
    let (report, results) = evaluate::run(&ExperimentConfig::load(&path).unwrap()).unwrap();
    assert_eq!(results.len(), 2);
    let erle = report.controllers[0].erle_db.unwrap();
    assert_eq!(erle.mean, 0.0);
    assert_eq!(erle.std, 0.0);
}

#[test]
fn evaluation_outputs_are_reproducible_and_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(
        dir.path(),
        json!({
            "scenes": short_random(3, 7),
            "controllers": [
                {"kind": "ea-nlms"},
                {"kind": "neural", "label": "toy", "untrained": {"topology": "narrowband", "seed": 3,
                  "bundle": {"topology": "narrowband", "num_bands": 257,
                             "features": {"signals": ["u", "y"], "transform": "magnitude"},
                             "dense": 4, "gru": [4], "mu_out": 1, "e_out": 1}}}
            ],
            "reports": {"csv": true, "plots": true, "mask_dumps": true, "traces": true},
            "output_dir": "out"
        }),
    );
    let mut cfg = ExperimentConfig::load(&path).unwrap();
    cfg.workers = Some(3);
    evaluate::run(&cfg).unwrap();
    let out = dir.path().join("out");
    let scenes = std::fs::read(out.join("scenes.csv")).unwrap();
    let summary = std::fs::read(out.join("summary.csv")).unwrap();
    cfg.workers = Some(1);
    let (report, _) = evaluate::run(&cfg).unwrap();
    assert_eq!(std::fs::read(out.join("scenes.csv")).unwrap(), scenes);
    assert_eq!(std::fs::read(out.join("summary.csv")).unwrap(), summary);

    let rows = read_csv(&out.join("scenes.csv"));
    assert_eq!(rows[0], evaluate::SCENE_COLUMNS);
    assert_eq!(rows.len(), 1 + 6);
    for (c, summary) in report.controllers.iter().enumerate() {
        let label = &summary.controller;
        let erle: Vec<f64> = rows[1..]
            .iter()
            .filter(|r| &r[2] == label)
            .map(|r| r[4].parse().unwrap())
            .collect();
        assert_eq!(erle.len(), 3, "controller {c}");
        let mean = erle.iter().sum::<f64>() / 3.0;
        assert!((mean - summary.erle_db.unwrap().mean).abs() <= 1e-12 * mean.abs().max(1.0));
    }
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(json["format"], "aec-evaluation-report");
    assert!(out.join("plots/scene_000007.svg").is_file());
    assert!(out.join("masks/scene_000007__toy_mu.csv").is_file());
    assert!(!out.join("masks/scene_000007__ea-nlms_mu.csv").exists());
    let trace = aec_core::RunTrace::read_columnar(out.join("traces"), "scene_000008__toy").unwrap();
    assert_eq!(trace.controller, "toy");
}

#[test]
fn oracle_gradient_beats_error_aware_nlms_under_double_talk() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(
        dir.path(),
        json!({
            "scenes": {"count": 6, "base_seed": 500, "source": {"kind": "random", "spec": {
                "duration_s": 4.0, "change_probability": 0.0, "mask_probability": 0.0,
                "ser_range_db": [-5.0, 5.0]}}},
            "controllers": [{"kind": "oracle-grad-nlms"}, {"kind": "ea-nlms"}],
            "output_dir": "out"
        }),
    );
    let (report, _) = evaluate::run(&ExperimentConfig::load(&path).unwrap()).unwrap();
    let grad = report.controllers[0].erle_db.unwrap().mean;
    let ea = report.controllers[1].erle_db.unwrap().mean;
    assert!(grad > ea, "oracle-grad {grad} vs ea-nlms {ea}");
}

#[test]
fn directory_batches_replay_generated_scenes() {
    let dir = tempfile::tempdir().unwrap();
    let gen_cfg = write_config(dir.path(), json!({"scenes": short_random(2, 90), "output_dir": "gen"}));
    generate::run(&ExperimentConfig::load(&gen_cfg).unwrap()).unwrap();
    let eval_path = dir.path().join("eval.json");
    std::fs::write(
        &eval_path,
        json!({
            "scenes": {"source": {"kind": "directory", "path": "gen"}},
            "controllers": [{"kind": "kf"}],
            "output_dir": "eval"
        })
        .to_string(),
    )
    .unwrap();
    let (report, results) = evaluate::run(&ExperimentConfig::load(&eval_path).unwrap()).unwrap();
    assert_eq!(report.scenes, 2);
    assert!(results.iter().all(|r| r.outcome.is_ok()));

    std::fs::remove_file(dir.path().join("gen/scene_000091/u.wav")).unwrap();
    let out = aecctl(&["evaluate", eval_path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let rows = read_csv(&dir.path().join("eval/scenes.csv"));
    assert_eq!(rows[1][3], "ok");
    assert_eq!(rows[2][3], "failed");
}

#[test]
fn inspect_reports_counts_and_rejects_truncated_files() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path().join("nb.json");
    let init = aecctl(&["init-weights", "--topology", "narrowband", "--seed", "4", "--out", w.to_str().unwrap()]);
    assert!(init.status.success(), "{}", String::from_utf8_lossy(&init.stderr));
    let out = aecctl(&["inspect-weights", w.to_str().unwrap(), "--json"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let expected = BundleSpec::default_for(Topology::Narrowband, 257).dimensions().parameter_count();
    assert_eq!(v["stored_parameters"], expected);
    assert_eq!(v["expected_parameters"], expected);
    let text = aecctl(&["inspect-weights", w.to_str().unwrap()]);
    assert!(String::from_utf8_lossy(&text.stdout).contains(&format!("{expected} stored")));

    let bytes = std::fs::read(&w).unwrap();
    let cut = dir.path().join("cut.json");
    std::fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
    let bad = aecctl(&["inspect-weights", cut.to_str().unwrap()]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("corrupt"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(aecctl(&["evaluate", "/nonexistent/config.json"]).status.code(), Some(1));
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"scenes": {}, "unknown": true}"#).unwrap();
    assert_eq!(aecctl(&["generate", bad.to_str().unwrap()]).status.code(), Some(1));
    assert_eq!(aecctl(&["no-such-command"]).status.code(), Some(1));
    let ok = write_config(
        dir.path(),
        json!({"scenes": short_random(1, 0), "controllers": [{"kind": "frozen"}], "output_dir": "out"}),
    );
    let run = aecctl(&["evaluate", ok.to_str().unwrap(), "--workers", "1", "--count", "2"]);
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    assert_eq!(read_csv(&dir.path().join("out/scenes.csv")).len(), 3);
}

#[test]
fn tracing_a_classic_controller_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(
        dir.path(),
        json!({
            "scenes": short_random(1, 0),
            "controllers": [{"kind": "kf"}],
            "trace": {"controller": "kf"},
            "output_dir": "out"
        }),
    );
    let err = trace::run(&ExperimentConfig::load(&path).unwrap()).unwrap_err();
    assert!(matches!(err, CliError::Config(_)));
    assert_eq!(aecctl(&["trace-states", path.to_str().unwrap()]).status.code(), Some(1));
}

const HOP: usize = 128;
const FRAME: usize = 512;
const RATE: f64 = 16_000.0;

/// Narrowband network whose band-averaged state follows `log|y| - log|u|`,
/// which rises whenever the near end talks.
fn toy_bundle() -> WeightBundle {
    let spec = BundleSpec {
        topology: Topology::Narrowband,
        num_bands: 257,
        features: FeatureSpec {
            signals: vec![Signal::FarEnd, Signal::Mic],
            transform: Transform::LogMagnitude,
            hybrid: vec![],
        },
        dense: 1,
        gru: vec![1],
        mu_out: 1,
        e_out: 1,
    };
    let mut b = WeightBundle::zeros(&spec).unwrap();
    b.input_layer.weight.data = vec![-4.0, 4.0];
    b.input_layer.bias = vec![2.0];
    let g = &mut b.gru[0];
    g.input_weight.data = vec![0.0, 0.0, 1.0];
    g.bias = vec![-20.0, 0.0, 0.0];
    b.validate().unwrap();
    b
}

fn transitions(labels: &[bool]) -> Vec<usize> {
    labels.windows(2).enumerate().filter(|(_, w)| w[0] != w[1]).map(|(t, _)| t + 1).collect()
}

#[test]
fn two_frames_form_two_clusters() {
    let dir = tempfile::tempdir().unwrap();
    let weights = dir.path().join("toy.json");
    toy_bundle().save(&weights).unwrap();
    let ir: Vec<f64> = (0..32).map(|i| if i == 5 { 1.0 } else { 0.0 }).collect();
    let path = write_config(
        dir.path(),
        json!({
            "scenes": {"source": {"kind": "template", "config": {
                "duration_s": (FRAME + HOP) as f64 / RATE, "sample_rate": 16000, "ir_a": ir}}},
            "controllers": [{"kind": "neural", "weights": "toy.json"}],
            "trace": {"controller": "nb-dnn", "clusters": 2},
            "output_dir": "out"
        }),
    );
    let t = trace::run(&ExperimentConfig::load(&path).unwrap()).unwrap();
    assert_eq!(t.classes, vec![1, 2]);
}

#[test]
fn state_clusters_follow_double_talk() {
    let dir = tempfile::tempdir().unwrap();
    toy_bundle().save(dir.path().join("toy.json")).unwrap();
    let ir: Vec<f64> = (0..64).map(|i| if i == 10 { 0.8 } else if i > 10 { 0.2 * (-(i as f64) / 8.0).exp() } else { 0.0 }).collect();
    let segments = [(0.5, 1.5), (2.5, 3.5)];
    let path = write_config(
        dir.path(),
        json!({
            "scenes": {"seeds": [11], "source": {"kind": "template", "config": {
                "duration_s": 4.0, "sample_rate": 16000, "ir_a": ir, "ser_db": 10.0,
                "masking": {"near_end": segments.iter().map(|(a, b)| json!({"start_s": a, "end_s": b})).collect::<Vec<_>>()}
            }}},
            "controllers": [{"kind": "neural", "label": "toy", "weights": "toy.json"}],
            "trace": {"controller": "toy", "clusters": 2, "selection": {"kind": "band-mean"}},
            "output_dir": "out"
        }),
    );
    let t = trace::run(&ExperimentConfig::load(&path).unwrap()).unwrap();
    let truth: Vec<bool> = (0..t.classes.len())
        .map(|i| {
            let centre = (i * HOP + FRAME / 2) as f64 / RATE;
            segments.iter().any(|&(a, b)| centre >= a && centre < b)
        })
        .collect();
    let found: Vec<bool> = t.classes.iter().map(|&c| c != t.classes[0]).collect();
    let expected = transitions(&truth);
    let got = transitions(&found);
    assert_eq!(expected.len(), 4);
    assert_eq!(got.len(), expected.len(), "cluster changes at {got:?}, activity changes at {expected:?}");
    for (g, e) in got.iter().zip(&expected) {
        assert!(g.abs_diff(*e) <= 5, "cluster change at frame {g}, activity change at {e}");
    }
    let out = dir.path().join("out/states");
    for f in ["states.csv", "clusters.csv", "activity.csv", "spectrogram_s.csv"] {
        assert!(out.join(f).is_file(), "{f}");
    }
}
