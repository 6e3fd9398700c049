//! `inspect-weights` and `init-weights`.

use std::fmt::Write as _;
use std::path::Path;

use aec_core::neural::{BundleSpec, Normalization, Signal, Topology, Transform, WeightBundle};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerRow {
    pub layer: String,
    pub input: usize,
    pub output: usize,
    pub parameters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormalizationSummary {
    pub length: usize,
    pub mean_range: [f64; 2],
    pub var_range: [f64; 2],
    /// SHA-256 over the little-endian bytes of means then variances.
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightInspection {
    pub topology: Topology,
    pub num_bands: usize,
    pub signals: Vec<Signal>,
    pub transform: Transform,
    pub hybrid: Vec<Signal>,
    pub layers: Vec<LayerRow>,
    /// Values actually stored in the file.
    pub stored_parameters: usize,
    /// Closed form from the dimension table.
    pub expected_parameters: usize,
    pub feature_normalization: NormalizationSummary,
    pub hybrid_normalization: Option<NormalizationSummary>,
}

fn summarize_norm(n: &Normalization) -> NormalizationSummary {
    let range = |v: &[f64]| {
        [
            v.iter().cloned().fold(f64::INFINITY, f64::min),
            v.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        ]
    };
    let mut h = Sha256::new();
    for v in n.mean.iter().chain(&n.var) {
        h.update(v.to_le_bytes());
    }
    let sha256 = h.finalize().iter().map(|b| format!("{b:02x}")).collect();
    NormalizationSummary {
        length: n.mean.len(),
        mean_range: range(&n.mean),
        var_range: range(&n.var),
        sha256,
    }
}

pub fn inspect_bundle(bundle: &WeightBundle) -> WeightInspection {
    let d = &bundle.dimensions;
    let mut layers = vec![LayerRow {
        layer: "input dense".into(),
        input: d.input,
        output: d.dense,
        parameters: d.input * d.dense + d.dense,
    }];
    let mut prev = d.dense;
    for (i, &h) in d.gru.iter().enumerate() {
        layers.push(LayerRow {
            layer: format!("gru {}", i + 1),
            input: prev,
            output: h,
            parameters: 3 * (prev * h + h * h + h),
        });
        prev = h;
    }
    for (name, out) in [("mu head", d.mu_out), ("e head", d.e_out)] {
        layers.push(LayerRow {
            layer: name.into(),
            input: prev,
            output: out,
            parameters: prev * out + out,
        });
    }
    let mut stored = 0;
    bundle.clone().visit_parameters_mut(|_| stored += 1);
    WeightInspection {
        topology: bundle.topology,
        num_bands: bundle.num_bands,
        signals: bundle.features.signals.clone(),
        transform: bundle.features.transform,
        hybrid: bundle.features.hybrid.clone(),
        layers,
        stored_parameters: stored,
        expected_parameters: d.parameter_count(),
        feature_normalization: summarize_norm(&bundle.normalization.features),
        hybrid_normalization: bundle.normalization.hybrid.as_ref().map(summarize_norm),
    }
}

pub fn load_and_inspect(path: &Path) -> Result<WeightInspection, CliError> {
    let bundle = WeightBundle::load(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok(inspect_bundle(&bundle))
}

fn tags(signals: &[Signal]) -> String {
    let names: Vec<String> = signals
        .iter()
        .map(|s| serde_json::to_value(s).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default())
        .collect();
    if names.is_empty() {
        "-".into()
    } else {
        names.join(",")
    }
}

pub fn render_text(w: &WeightInspection) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "topology     {}", w.topology);
    let _ = writeln!(s, "bands        {}", w.num_bands);
    let transform = serde_json::to_value(w.transform).ok().and_then(|v| v.as_str().map(String::from));
    let _ = writeln!(s, "features     {} ({})", tags(&w.signals), transform.unwrap_or_default());
    let _ = writeln!(s, "hybrid       {}", tags(&w.hybrid));
    let _ = writeln!(s);
    let _ = writeln!(s, "{:<12} {:>8} {:>8} {:>12}", "layer", "in", "out", "parameters");
    for l in &w.layers {
        let _ = writeln!(s, "{:<12} {:>8} {:>8} {:>12}", l.layer, l.input, l.output, l.parameters);
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "parameters   {} stored, {} expected", w.stored_parameters, w.expected_parameters);
    let norm = |s: &mut String, name: &str, n: &NormalizationSummary| {
        let _ = writeln!(
            s,
            "{name:<12} len {} mean [{}, {}] var [{}, {}] sha256 {}",
            n.length, n.mean_range[0], n.mean_range[1], n.var_range[0], n.var_range[1], n.sha256
        );
    };
    norm(&mut s, "feature norm", &w.feature_normalization);
    if let Some(h) = &w.hybrid_normalization {
        norm(&mut s, "hybrid norm", h);
    }
    s
}

/// Shape overrides for `init-weights`.
#[derive(Debug, Clone, Default)]
pub struct InitOptions {
    pub dense: Option<usize>,
    pub gru: Option<Vec<usize>>,
    pub signals: Option<Vec<Signal>>,
    pub transform: Option<Transform>,
    pub hybrid: Option<Vec<Signal>>,
}

pub fn init_bundle(topology: Topology, bands: usize, seed: u64, opts: &InitOptions) -> Result<WeightBundle, CliError> {
    let mut spec = BundleSpec::default_for(topology, bands);
    if let Some(d) = opts.dense {
        spec.dense = d;
    }
    if let Some(g) = &opts.gru {
        spec.gru = g.clone();
    }
    if let Some(s) = &opts.signals {
        spec.features.signals = s.clone();
    }
    if let Some(t) = opts.transform {
        spec.features.transform = t;
    }
    if let Some(h) = &opts.hybrid {
        spec.features.hybrid = h.clone();
    }
    WeightBundle::untrained(&spec, seed).map_err(CliError::config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_narrowband_table() {
        let b = init_bundle(Topology::Narrowband, 257, 1, &InitOptions::default()).unwrap();
        let w = inspect_bundle(&b);
        assert_eq!(w.stored_parameters, w.expected_parameters);
        assert_eq!(w.layers.iter().map(|l| l.parameters).sum::<usize>(), w.expected_parameters);
        assert_eq!(w.layers.len(), 5);
        assert_eq!(w.feature_normalization.length, 2);
        assert_eq!(w.feature_normalization.sha256.len(), 64);
        let text = render_text(&w);
        assert!(text.contains("narrowband"));
        assert!(text.contains("u,y (magnitude)"));
    }

    #[test]
    fn overrides_shape_the_bundle() {
        let opts = InitOptions {
            dense: Some(4),
            gru: Some(vec![3]),
            transform: Some(Transform::ReIm),
            ..Default::default()
        };
        let b = init_bundle(Topology::Narrowband, 9, 0, &opts).unwrap();
        assert_eq!(b.dimensions.input, 4);
        assert_eq!(b.parameter_count(), (4 * 4 + 4) + 3 * (4 * 3 + 9 + 3) + 2 * (3 + 1));
        let bad = InitOptions {
            gru: Some(vec![]),
            ..Default::default()
        };
        assert!(matches!(init_bundle(Topology::Hybrid, 9, 0, &bad), Err(CliError::Config(_))));
    }

    #[test]
    fn identical_normalizations_share_a_digest() {
        let n = Normalization::identity(3);
        assert_eq!(summarize_norm(&n).sha256, summarize_norm(&n.clone()).sha256);
        let mut m = n.clone();
        m.mean[2] = 1e-300;
        assert_ne!(summarize_norm(&n).sha256, summarize_norm(&m).sha256);
    }
}
