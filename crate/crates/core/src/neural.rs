//! Learned step-size control: feature extraction, GRU-stack inference and the
//! masked step-size law `μ = m_μ / (ψUU + |m_e·e|² + δ)`.
//!
//! Network: dense layer with leaky ReLU, stacked GRU layers, and two sigmoid
//! heads producing the `μ` mask and the error mask. Each GRU layer uses
//! gate order `z, r, n` and a single bias per gate:
//!
//! ```text
//! z  = σ(W_z x + U_z h + b_z)
//! r  = σ(W_r x + U_r h + b_r)
//! n  = tanh(W_n x + b_n + r ⊙ (U_n h))
//! h' = (1 - z) ⊙ n + z ⊙ h
//! ```
//!
//! Weight files are JSON documents (see [`WeightBundle`]); matrices are stored
//! row-major with `rows = outputs`, `cols = inputs`, and GRU matrices stack the
//! three gates vertically in the order above.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::classic::{PowerEstimates, ERROR_SMOOTHING, LAMBDA_U};
use crate::control::{Adaptation, AdaptationController, FrameContext};
use crate::ctf::StepSizeField;
use crate::error::{Error, Result};

pub const DELTA_FEAT: f64 = 1e-12;
pub const DELTA_VSS: f64 = 1e-3;
pub const LEAKY_SLOPE: f64 = 0.01;
pub const WEIGHTS_FORMAT: &str = "aec-weight-bundle";
pub const WEIGHTS_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Topology {
    Broadband,
    Narrowband,
    Hybrid,
}

impl std::fmt::Display for Topology {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Topology::Broadband => "broadband",
            Topology::Narrowband => "narrowband",
            Topology::Hybrid => "hybrid",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Signal {
    #[serde(rename = "u")]
    FarEnd,
    #[serde(rename = "y")]
    Mic,
    #[serde(rename = "e")]
    Error,
    #[serde(rename = "d_hat")]
    EchoEstimate,
}

impl Signal {
    fn tag(self) -> &'static str {
        match self {
            Signal::FarEnd => "u",
            Signal::Mic => "y",
            Signal::Error => "e",
            Signal::EchoEstimate => "d_hat",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Transform {
    /// Real and imaginary parts.
    ReIm,
    Magnitude,
    /// `log10(|x| + δ)`.
    LogMagnitude,
}

/// Which signals feed the network and how they are made real-valued.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSpec {
    pub signals: Vec<Signal>,
    pub transform: Transform,
    /// Signals whose band-averaged magnitudes form the hybrid features.
    #[serde(default)]
    pub hybrid: Vec<Signal>,
}

impl FeatureSpec {
    pub fn magnitudes(signals: &[Signal]) -> Self {
        Self {
            signals: signals.to_vec(),
            transform: Transform::Magnitude,
            hybrid: Vec::new(),
        }
    }

    /// Real values contributed by one band.
    pub fn band_width(&self) -> usize {
        match self.transform {
            Transform::ReIm => 2 * self.signals.len(),
            _ => self.signals.len(),
        }
    }

    pub fn hybrid_width(&self) -> usize {
        self.hybrid.len()
    }

    /// Network input width for a topology at `num_bands` bands.
    pub fn input_width(&self, topology: Topology, num_bands: usize) -> usize {
        match topology {
            Topology::Broadband => num_bands * self.band_width(),
            Topology::Narrowband => self.band_width(),
            Topology::Hybrid => self.band_width() + self.hybrid_width(),
        }
    }

    pub fn validate(&self, topology: Topology) -> Result<()> {
        if self.signals.is_empty() {
            return Err(Error::Weights("feature spec lists no signals".into()));
        }
        match (topology, self.hybrid.is_empty()) {
            (Topology::Hybrid, true) => Err(Error::Weights("hybrid topology needs hybrid features".into())),
            (Topology::Broadband | Topology::Narrowband, false) => Err(Error::Weights(format!(
                "{topology} topology takes no hybrid features"
            ))),
            _ => Ok(()),
        }
    }
}

/// Spectra available at one frame. Missing signals are `None`.
#[derive(Debug, Clone, Copy, Default)]
pub struct FrameSignals<'a> {
    pub far_end: Option<&'a [Complex64]>,
    pub mic: Option<&'a [Complex64]>,
    pub error: Option<&'a [Complex64]>,
    pub echo_estimate: Option<&'a [Complex64]>,
}

impl<'a> FrameSignals<'a> {
    pub fn get(&self, signal: Signal) -> Result<&'a [Complex64]> {
        let s = match signal {
            Signal::FarEnd => self.far_end,
            Signal::Mic => self.mic,
            Signal::Error => self.error,
            Signal::EchoEstimate => self.echo_estimate,
        };
        s.ok_or_else(|| Error::Config(format!("feature signal '{}' is not available", signal.tag())))
    }
}

/// Narrowband features (band-major, `band_width` values per band) and the
/// hybrid summary shared by all bands.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub num_bands: usize,
    pub band_width: usize,
    pub narrowband: Vec<f64>,
    pub hybrid: Vec<f64>,
}

impl FeatureVector {
    pub fn band(&self, f: usize) -> &[f64] {
        &self.narrowband[f * self.band_width..(f + 1) * self.band_width]
    }

    pub fn normalize(&mut self, norm: &FeatureNormalization) -> Result<()> {
        norm.features.apply("narrowband features", &mut self.narrowband)?;
        match &norm.hybrid {
            Some(h) => h.apply("hybrid features", &mut self.hybrid),
            None if self.hybrid.is_empty() => Ok(()),
            None => Err(Error::Weights("hybrid normalization statistics missing".into())),
        }
    }
}

/// Arithmetic band average of `|x|`.
pub fn band_average_magnitude(x: &[Complex64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|c| c.norm()).sum::<f64>() / x.len() as f64
}

/// Raw (unnormalized) features of one frame.
pub fn extract_features(signals: &FrameSignals<'_>, spec: &FeatureSpec) -> Result<FeatureVector> {
    let sources: Vec<&[Complex64]> = spec
        .signals
        .iter()
        .map(|&s| signals.get(s))
        .collect::<Result<_>>()?;
    let bands = sources.first().map_or(0, |s| s.len());
    for s in &sources {
        if s.len() != bands {
            return Err(Error::dim("feature signal bands", bands, s.len()));
        }
    }
    let width = spec.band_width();
    let mut narrowband = Vec::with_capacity(bands * width);
    for f in 0..bands {
        for s in &sources {
            let x = s[f];
            match spec.transform {
                Transform::ReIm => {
                    narrowband.push(x.re);
                    narrowband.push(x.im);
                }
                Transform::Magnitude => narrowband.push(x.norm()),
                Transform::LogMagnitude => narrowband.push((x.norm() + DELTA_FEAT).log10()),
            }
        }
    }
    let hybrid = spec
        .hybrid
        .iter()
        .map(|&s| signals.get(s).map(band_average_magnitude))
        .collect::<Result<_>>()?;
    Ok(FeatureVector {
        num_bands: bands,
        band_width: width,
        narrowband,
        hybrid,
    })
}

/// Per-dimension statistics; `x ← (x - mean) / sqrt(var)`. Statistics shorter
/// than the feature vector repeat cyclically (one set shared by all bands).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl Normalization {
    pub fn identity(width: usize) -> Self {
        Self {
            mean: vec![0.0; width],
            var: vec![1.0; width],
        }
    }

    fn validate(&self, what: &str) -> Result<()> {
        if self.mean.len() != self.var.len() {
            return Err(Error::Weights(format!(
                "{what} normalization has {} means but {} variances",
                self.mean.len(),
                self.var.len()
            )));
        }
        if self.mean.is_empty() {
            return Err(Error::Weights(format!("{what} normalization is empty")));
        }
        if self.mean.iter().any(|m| !m.is_finite()) || self.var.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Weights(format!(
                "{what} normalization needs finite means and positive variances"
            )));
        }
        Ok(())
    }

    pub fn apply(&self, what: &str, x: &mut [f64]) -> Result<()> {
        let n = self.mean.len();
        if n == 0 || !x.len().is_multiple_of(n) {
            return Err(Error::dim(format!("{what} normalization"), x.len(), n));
        }
        for (i, v) in x.iter_mut().enumerate() {
            *v = (*v - self.mean[i % n]) / self.var[i % n].sqrt();
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureNormalization {
    pub features: Normalization,
    #[serde(default)]
    pub hybrid: Option<Normalization>,
}

/// Row-major matrix, `rows` outputs by `cols` inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    fn check(&self, what: &str, rows: usize, cols: usize) -> Result<()> {
        if self.rows != rows || self.cols != cols {
            return Err(Error::Weights(format!(
                "{what}: expected {rows}x{cols}, found {}x{}",
                self.rows, self.cols
            )));
        }
        if self.data.len() != rows * cols {
            return Err(Error::Weights(format!(
                "{what}: expected {} values, found {}",
                rows * cols,
                self.data.len()
            )));
        }
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Weights(format!("{what}: non-finite value")));
        }
        Ok(())
    }

    fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    fn check(&self, what: &str, input: usize, output: usize) -> Result<()> {
        self.weight.check(&format!("{what} weight"), output, input)?;
        if self.bias.len() != output || self.bias.iter().any(|v| !v.is_finite()) {
            return Err(Error::Weights(format!(
                "{what} bias: expected {output} finite values, found {}",
                self.bias.len()
            )));
        }
        Ok(())
    }
}

/// One GRU layer; gate blocks stacked as `z, r, n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GruLayer {
    /// `3·hidden × input`.
    pub input_weight: Matrix,
    /// `3·hidden × hidden`.
    pub hidden_weight: Matrix,
    /// `3·hidden`.
    pub bias: Vec<f64>,
}

impl GruLayer {
    fn check(&self, what: &str, input: usize, hidden: usize) -> Result<()> {
        self.input_weight.check(&format!("{what} input weight"), 3 * hidden, input)?;
        self.hidden_weight.check(&format!("{what} hidden weight"), 3 * hidden, hidden)?;
        if self.bias.len() != 3 * hidden || self.bias.iter().any(|v| !v.is_finite()) {
            return Err(Error::Weights(format!(
                "{what} bias: expected {} finite values, found {}",
                3 * hidden,
                self.bias.len()
            )));
        }
        Ok(())
    }
}

/// Layer widths of a network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dimensions {
    pub input: usize,
    pub dense: usize,
    pub gru: Vec<usize>,
    pub mu_out: usize,
    pub e_out: usize,
}

impl Dimensions {
    /// Trainable parameters: dense layers `in·out + out`, GRU layers
    /// `3·(in·hid + hid² + hid)`.
    pub fn parameter_count(&self) -> usize {
        let dense = |i: usize, o: usize| i * o + o;
        let mut total = dense(self.input, self.dense);
        let mut prev = self.dense;
        for &h in &self.gru {
            total += 3 * (prev * h + h * h + h);
            prev = h;
        }
        total + dense(prev, self.mu_out) + dense(prev, self.e_out)
    }

    pub fn last_hidden(&self) -> usize {
        self.gru.last().copied().unwrap_or(self.dense)
    }
}

/// Serialized network parameters with feature layout and normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightBundle {
    pub format: String,
    pub version: u32,
    pub topology: Topology,
    /// Band count the bundle was built for. Broadband networks only run at
    /// this count; narrowband and hybrid networks run at any count when their
    /// normalization is shared across bands.
    pub num_bands: usize,
    pub features: FeatureSpec,
    pub dimensions: Dimensions,
    pub leaky_slope: f64,
    pub input_layer: Dense,
    pub gru: Vec<GruLayer>,
    pub mu_head: Dense,
    pub e_head: Dense,
    pub normalization: FeatureNormalization,
}

/// Shape of an untrained bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleSpec {
    pub topology: Topology,
    pub num_bands: usize,
    pub features: FeatureSpec,
    pub dense: usize,
    pub gru: Vec<usize>,
    pub mu_out: usize,
    pub e_out: usize,
}

impl BundleSpec {
    /// Magnitudes of far-end and microphone spectra; hidden width 128 for the
    /// broadband network and 64 otherwise; hybrid features are the band
    /// averages of `|y|`, `|e|` and `|d̂|`.
    pub fn default_for(topology: Topology, num_bands: usize) -> Self {
        let mut features = FeatureSpec::magnitudes(&[Signal::FarEnd, Signal::Mic]);
        let (hidden, out) = match topology {
            Topology::Broadband => (128, num_bands),
            Topology::Narrowband => (64, 1),
            Topology::Hybrid => {
                features.hybrid = vec![Signal::Mic, Signal::Error, Signal::EchoEstimate];
                (64, 1)
            }
        };
        Self {
            topology,
            num_bands,
            features,
            dense: hidden,
            gru: vec![hidden, hidden],
            mu_out: out,
            e_out: out,
        }
    }

    pub fn dimensions(&self) -> Dimensions {
        Dimensions {
            input: self.features.input_width(self.topology, self.num_bands),
            dense: self.dense,
            gru: self.gru.clone(),
            mu_out: self.mu_out,
            e_out: self.e_out,
        }
    }
}

fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bound: f64) -> Matrix {
    Matrix {
        rows,
        cols,
        data: (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect(),
    }
}

fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
}

impl WeightBundle {
    /// Randomly initialized bundle: every weight and bias of a layer with
    /// fan-in `k` drawn from `U[-1/√k, 1/√k]` (GRU layers use the hidden width
    /// as fan-in); identity normalization.
    pub fn untrained(spec: &BundleSpec, seed: u64) -> Result<Self> {
        let dims = spec.dimensions();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dense = |rng: &mut ChaCha8Rng, input: usize, output: usize| {
            let b = 1.0 / (input.max(1) as f64).sqrt();
            Dense {
                weight: uniform_matrix(rng, output, input, b),
                bias: uniform_vec(rng, output, b),
            }
        };
        let input_layer = dense(&mut rng, dims.input, dims.dense);
        let mut prev = dims.dense;
        let mut gru = Vec::new();
        for &h in &dims.gru {
            let b = 1.0 / (h.max(1) as f64).sqrt();
            gru.push(GruLayer {
                input_weight: uniform_matrix(&mut rng, 3 * h, prev, b),
                hidden_weight: uniform_matrix(&mut rng, 3 * h, h, b),
                bias: uniform_vec(&mut rng, 3 * h, b),
            });
            prev = h;
        }
        let mu_head = dense(&mut rng, prev, dims.mu_out);
        let e_head = dense(&mut rng, prev, dims.e_out);
        let hybrid = (spec.topology == Topology::Hybrid).then(|| Normalization::identity(spec.features.hybrid_width()));
        let bundle = Self {
            format: WEIGHTS_FORMAT.into(),
            version: WEIGHTS_VERSION,
            topology: spec.topology,
            num_bands: spec.num_bands,
            features: spec.features.clone(),
            dimensions: dims,
            leaky_slope: LEAKY_SLOPE,
            input_layer,
            gru,
            mu_head,
            e_head,
            normalization: FeatureNormalization {
                features: Normalization::identity(spec.features.band_width()),
                hybrid,
            },
        };
        bundle.validate()?;
        Ok(bundle)
    }

    /// Same shape as [`WeightBundle::untrained`] with every parameter zero.
    pub fn zeros(spec: &BundleSpec) -> Result<Self> {
        let mut b = Self::untrained(spec, 0)?;
        b.visit_parameters_mut(|v| *v = 0.0);
        Ok(b)
    }

    pub fn visit_parameters_mut(&mut self, mut f: impl FnMut(&mut f64)) {
        let dense = |d: &mut Dense, f: &mut dyn FnMut(&mut f64)| {
            d.weight.data.iter_mut().for_each(&mut *f);
            d.bias.iter_mut().for_each(f);
        };
        dense(&mut self.input_layer, &mut f);
        for g in &mut self.gru {
            g.input_weight.data.iter_mut().for_each(&mut f);
            g.hidden_weight.data.iter_mut().for_each(&mut f);
            g.bias.iter_mut().for_each(&mut f);
        }
        dense(&mut self.mu_head, &mut f);
        dense(&mut self.e_head, &mut f);
    }

    pub fn parameter_count(&self) -> usize {
        self.dimensions.parameter_count()
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != WEIGHTS_FORMAT {
            return Err(Error::Weights(format!("unknown format tag '{}'", self.format)));
        }
        if self.version != WEIGHTS_VERSION {
            return Err(Error::Weights(format!(
                "unsupported format version {} (expected {WEIGHTS_VERSION})",
                self.version
            )));
        }
        if self.num_bands == 0 {
            return Err(Error::Weights("band count must be positive".into()));
        }
        if !(self.leaky_slope.is_finite()) {
            return Err(Error::Weights("leaky slope must be finite".into()));
        }
        self.features.validate(self.topology)?;
        let d = &self.dimensions;
        let expected = self.features.input_width(self.topology, self.num_bands);
        if d.input != expected {
            return Err(Error::Weights(format!(
                "input width {} does not match the feature layout ({expected})",
                d.input
            )));
        }
        if d.dense == 0 || d.gru.is_empty() || d.gru.contains(&0) {
            return Err(Error::Weights("layer widths must be positive and at least one GRU layer is required".into()));
        }
        let heads_ok = match self.topology {
            Topology::Broadband => {
                [1, self.num_bands].contains(&d.mu_out) && [1, self.num_bands].contains(&d.e_out)
            }
            _ => d.mu_out == 1 && d.e_out == 1,
        };
        if !heads_ok {
            return Err(Error::Weights(format!(
                "head widths {}/{} invalid for a {} network over {} bands",
                d.mu_out, d.e_out, self.topology, self.num_bands
            )));
        }
        self.input_layer.check("input layer", d.input, d.dense)?;
        if self.gru.len() != d.gru.len() {
            return Err(Error::Weights(format!(
                "dimension table lists {} GRU layers, file has {}",
                d.gru.len(),
                self.gru.len()
            )));
        }
        let mut prev = d.dense;
        for (i, (layer, &h)) in self.gru.iter().zip(&d.gru).enumerate() {
            layer.check(&format!("GRU layer {}", i + 1), prev, h)?;
            prev = h;
        }
        self.mu_head.check("mu head", prev, d.mu_out)?;
        self.e_head.check("e head", prev, d.e_out)?;
        let width = self.features.band_width();
        let norm = &self.normalization.features;
        norm.validate("feature")?;
        if norm.mean.len() != width && norm.mean.len() != width * self.num_bands {
            return Err(Error::Weights(format!(
                "feature normalization length {} must be {width} or {}",
                norm.mean.len(),
                width * self.num_bands
            )));
        }
        match (&self.normalization.hybrid, self.topology) {
            (Some(h), Topology::Hybrid) => {
                h.validate("hybrid")?;
                if h.mean.len() != self.features.hybrid_width() {
                    return Err(Error::Weights(format!(
                        "hybrid normalization length {} must be {}",
                        h.mean.len(),
                        self.features.hybrid_width()
                    )));
                }
            }
            (None, Topology::Hybrid) => {
                return Err(Error::Weights("hybrid normalization statistics missing".into()));
            }
            (Some(_), _) => {
                return Err(Error::Weights("hybrid normalization given for a non-hybrid network".into()));
            }
            (None, _) => {}
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let bundle: Self =
            serde_json::from_str(text).map_err(|e| Error::Weights(format!("corrupt weight file: {e}")))?;
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.validate()?;
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

/// Hidden states of every GRU layer, one column per inference unit.
#[derive(Debug, Clone, PartialEq)]
pub struct GruState {
    pub layers: Vec<DMatrix<f64>>,
}

impl GruState {
    pub fn zeros(hidden: &[usize], units: usize) -> Self {
        Self {
            layers: hidden.iter().map(|&h| DMatrix::zeros(h, units)).collect(),
        }
    }

    pub fn units(&self) -> usize {
        self.layers.first().map_or(0, |l| l.ncols())
    }

    pub fn reset(&mut self) {
        for l in &mut self.layers {
            l.fill(0.0);
        }
    }

    /// Hidden vector of one layer and unit.
    pub fn unit(&self, layer: usize, unit: usize) -> Vec<f64> {
        self.layers[layer].column(unit).iter().copied().collect()
    }
}

/// Mask outputs of one inference batch, one column per unit.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskBatch {
    pub mu: DMatrix<f64>,
    pub e: DMatrix<f64>,
}

struct CompiledGru {
    input_weight: DMatrix<f64>,
    hidden_weight: DMatrix<f64>,
    bias: DVector<f64>,
    hidden: usize,
}

/// Inference-ready form of a validated [`WeightBundle`].
pub struct Network {
    bundle: WeightBundle,
    input_weight: DMatrix<f64>,
    input_bias: DVector<f64>,
    gru: Vec<CompiledGru>,
    mu_weight: DMatrix<f64>,
    mu_bias: DVector<f64>,
    e_weight: DMatrix<f64>,
    e_bias: DVector<f64>,
}

impl std::fmt::Debug for Network {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Network")
            .field("topology", &self.bundle.topology)
            .field("dimensions", &self.bundle.dimensions)
            .finish()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn add_bias(m: &mut DMatrix<f64>, b: &DVector<f64>) {
    for mut col in m.column_iter_mut() {
        col += b;
    }
}

impl Network {
    pub fn new(bundle: WeightBundle) -> Result<Self> {
        bundle.validate()?;
        let gru = bundle
            .gru
            .iter()
            .zip(&bundle.dimensions.gru)
            .map(|(g, &h)| CompiledGru {
                input_weight: g.input_weight.to_dmatrix(),
                hidden_weight: g.hidden_weight.to_dmatrix(),
                bias: DVector::from_vec(g.bias.clone()),
                hidden: h,
            })
            .collect();
        Ok(Self {
            input_weight: bundle.input_layer.weight.to_dmatrix(),
            input_bias: DVector::from_vec(bundle.input_layer.bias.clone()),
            gru,
            mu_weight: bundle.mu_head.weight.to_dmatrix(),
            mu_bias: DVector::from_vec(bundle.mu_head.bias.clone()),
            e_weight: bundle.e_head.weight.to_dmatrix(),
            e_bias: DVector::from_vec(bundle.e_head.bias.clone()),
            bundle,
        })
    }

    pub fn bundle(&self) -> &WeightBundle {
        &self.bundle
    }

    pub fn initial_state(&self, units: usize) -> GruState {
        GruState::zeros(&self.bundle.dimensions.gru, units)
    }

    /// One time step for a batch of units: `inputs` is `input × units`.
    pub fn forward(&self, inputs: &DMatrix<f64>, state: &mut GruState) -> Result<MaskBatch> {
        let d = &self.bundle.dimensions;
        if inputs.nrows() != d.input {
            return Err(Error::dim("input layer width", d.input, inputs.nrows()));
        }
        let units = inputs.ncols();
        if state.layers.len() != self.gru.len() {
            return Err(Error::dim("GRU state layers", self.gru.len(), state.layers.len()));
        }
        for (i, (l, g)) in state.layers.iter().zip(&self.gru).enumerate() {
            if l.nrows() != g.hidden || l.ncols() != units {
                return Err(Error::dim(format!("GRU layer {} state", i + 1), g.hidden * units, l.len()));
            }
        }
        let slope = self.bundle.leaky_slope;
        let mut x = &self.input_weight * inputs;
        add_bias(&mut x, &self.input_bias);
        x.apply(|v| {
            if *v < 0.0 {
                *v *= slope
            }
        });
        for (g, h) in self.gru.iter().zip(state.layers.iter_mut()) {
            let n = g.hidden;
            let mut gx = &g.input_weight * &x;
            add_bias(&mut gx, &g.bias);
            let gh = &g.hidden_weight * &*h;
            let mut next = DMatrix::zeros(n, units);
            for u in 0..units {
                for k in 0..n {
                    let z = sigmoid(gx[(k, u)] + gh[(k, u)]);
                    let r = sigmoid(gx[(n + k, u)] + gh[(n + k, u)]);
                    let c = (gx[(2 * n + k, u)] + r * gh[(2 * n + k, u)]).tanh();
                    next[(k, u)] = (1.0 - z) * c + z * h[(k, u)];
                }
            }
            *h = next;
            x = h.clone();
        }
        let mut mu = &self.mu_weight * &x;
        add_bias(&mut mu, &self.mu_bias);
        mu.apply(|v| *v = sigmoid(*v));
        let mut e = &self.e_weight * &x;
        add_bias(&mut e, &self.e_bias);
        e.apply(|v| *v = sigmoid(*v));
        Ok(MaskBatch { mu, e })
    }
}

/// Per-band masks of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPair {
    pub mu: Vec<f64>,
    pub e: Vec<f64>,
}

/// `μ_f = m_μ / (ψUU + |m_e·e|² + δ)` on every tap of band `f`.
pub fn step_size_from_masks(
    masks: &MaskPair,
    psi_uu: &[f64],
    error: &[Complex64],
    delta_vss: f64,
    taps: usize,
) -> Result<StepSizeField> {
    let bands = psi_uu.len();
    for (what, v) in [("mu mask", &masks.mu), ("e mask", &masks.e)] {
        if v.len() != bands {
            return Err(Error::dim(what, bands, v.len()));
        }
        if v.iter().any(|m| !(0.0..=1.0).contains(m)) {
            return Err(Error::Config(format!("{what} outside [0, 1]")));
        }
    }
    if error.len() != bands {
        return Err(Error::dim("error frame", bands, error.len()));
    }
    let mu: Vec<f64> = (0..bands)
        .map(|f| masks.mu[f] / (psi_uu[f] + (error[f] * masks.e[f]).norm_sqr() + delta_vss))
        .collect();
    StepSizeField::from_bands(&mu, taps)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MuMode {
    /// One mask per band.
    #[default]
    Selective,
    /// The band average of the mask applied to every band.
    NonSelective,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorMaskMode {
    #[default]
    Learned,
    /// Pure learned NLMS.
    Zero,
    /// Fixed error-power normalization.
    One,
}

/// Which part of the last GRU layer is recorded per frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "band")]
pub enum StateSelection {
    /// Every unit, unit-major.
    All,
    Band(usize),
    /// Mean over units.
    BandMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NeuralOptions {
    pub mu_mode: MuMode,
    pub e_mode: ErrorMaskMode,
    pub lambda_u: f64,
    pub delta_vss: f64,
    pub trace: Option<StateSelection>,
}

impl Default for NeuralOptions {
    fn default() -> Self {
        Self {
            mu_mode: MuMode::Selective,
            e_mode: ErrorMaskMode::Learned,
            lambda_u: LAMBDA_U,
            delta_vss: DELTA_VSS,
            trace: None,
        }
    }
}

/// Learned step-size controller for any of the three topologies.
#[derive(Debug)]
pub struct NeuralController {
    network: Arc<Network>,
    pub options: NeuralOptions,
    power: Option<PowerEstimates>,
    state: Option<GruState>,
    taps: usize,
    label: String,
}

impl NeuralController {
    pub fn new(network: Arc<Network>, options: NeuralOptions) -> Self {
        let label = match network.bundle().topology {
            Topology::Broadband => "bb-dnn",
            Topology::Narrowband => "nb-dnn",
            Topology::Hybrid => "hb-dnn",
        }
        .to_string();
        Self {
            network,
            options,
            power: None,
            state: None,
            taps: 0,
            label,
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn state(&self) -> Option<&GruState> {
        self.state.as_ref()
    }

    /// Network input for one frame: one column per inference unit.
    pub fn network_input(&self, signals: &FrameSignals<'_>) -> Result<DMatrix<f64>> {
        let bundle = self.network.bundle();
        let mut fv = extract_features(signals, &bundle.features)?;
        fv.normalize(&bundle.normalization)?;
        let width = fv.band_width;
        Ok(match bundle.topology {
            Topology::Broadband => DMatrix::from_column_slice(fv.narrowband.len(), 1, &fv.narrowband),
            Topology::Narrowband | Topology::Hybrid => {
                let rows = width + fv.hybrid.len();
                let mut m = DMatrix::zeros(rows, fv.num_bands);
                for f in 0..fv.num_bands {
                    for (i, v) in fv.band(f).iter().enumerate() {
                        m[(i, f)] = *v;
                    }
                    for (i, v) in fv.hybrid.iter().enumerate() {
                        m[(width + i, f)] = *v;
                    }
                }
                m
            }
        })
    }

    /// Masks of one frame, advancing the recurrent state.
    pub fn infer_masks(&mut self, signals: &FrameSignals<'_>, num_bands: usize) -> Result<MaskPair> {
        let input = self.network_input(signals)?;
        let state = self.state.as_mut().ok_or_else(|| Error::Config("controller used before reset".into()))?;
        let out = self.network.forward(&input, state)?;
        let spread = |m: &DMatrix<f64>| -> Vec<f64> {
            if m.len() == num_bands {
                m.iter().copied().collect()
            } else {
                vec![m[(0, 0)]; num_bands]
            }
        };
        let mut mu = spread(&out.mu);
        let mut e = spread(&out.e);
        if self.options.mu_mode == MuMode::NonSelective {
            let mean = mu.iter().sum::<f64>() / mu.len() as f64;
            mu.iter_mut().for_each(|m| *m = mean);
        }
        match self.options.e_mode {
            ErrorMaskMode::Learned => {}
            ErrorMaskMode::Zero => e.iter_mut().for_each(|m| *m = 0.0),
            ErrorMaskMode::One => e.iter_mut().for_each(|m| *m = 1.0),
        }
        Ok(MaskPair { mu, e })
    }

    fn traced_state(&self) -> Option<Vec<f64>> {
        let sel = self.options.trace?;
        let last = self.state.as_ref()?.layers.last()?;
        Some(match sel {
            StateSelection::All => last.iter().copied().collect(),
            StateSelection::Band(b) => last.column(b.min(last.ncols() - 1)).iter().copied().collect(),
            StateSelection::BandMean => last.column_mean().iter().copied().collect(),
        })
    }
}

impl AdaptationController for NeuralController {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn reset(&mut self, num_bands: usize, taps: usize) -> Result<()> {
        let bundle = self.network.bundle();
        if bundle.topology == Topology::Broadband && bundle.num_bands != num_bands {
            return Err(Error::dim("broadband network bands", bundle.num_bands, num_bands));
        }
        let width = bundle.features.band_width();
        let stats = bundle.normalization.features.mean.len();
        if stats != width && stats != width * num_bands {
            return Err(Error::dim("feature normalization", width * num_bands, stats));
        }
        if !(self.options.delta_vss.is_finite() && self.options.delta_vss >= 0.0) {
            return Err(Error::Config("delta_vss must be finite and nonnegative".into()));
        }
        let units = match bundle.topology {
            Topology::Broadband => 1,
            _ => num_bands,
        };
        self.state = Some(self.network.initial_state(units));
        self.power = Some(PowerEstimates::new(num_bands, self.options.lambda_u, ERROR_SMOOTHING)?);
        self.taps = taps;
        Ok(())
    }

    fn adapt(&mut self, frame: &FrameContext<'_>) -> Result<Adaptation> {
        let bands = frame.far_end.len();
        let signals = FrameSignals {
            far_end: Some(frame.far_end),
            mic: Some(frame.mic),
            error: Some(frame.error),
            echo_estimate: Some(frame.echo_estimate),
        };
        let masks = self.infer_masks(&signals, bands)?;
        let power = self.power.as_mut().ok_or_else(|| Error::Config("controller used before reset".into()))?;
        power.update_far_end(frame.filter);
        let step = step_size_from_masks(&masks, &power.psi_uu, frame.error, self.options.delta_vss, self.taps)?;
        Ok(Adaptation {
            step_size: step,
            update_error: None,
            masks: Some(masks),
            state: self.traced_state(),
        })
    }

    fn has_recurrent_state(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    /// Independent per-gate evaluation of a single unit.
    fn reference_step(b: &WeightBundle, x: &[f64], h: &mut [Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
        let affine = |d: &Dense, x: &[f64]| -> Vec<f64> {
            (0..d.weight.rows)
                .map(|o| d.bias[o] + (0..d.weight.cols).map(|i| d.weight.get(o, i) * x[i]).sum::<f64>())
                .collect()
        };
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let mut a: Vec<f64> = affine(&b.input_layer, x)
            .into_iter()
            .map(|v| if v >= 0.0 { v } else { b.leaky_slope * v })
            .collect();
        for (layer, state) in b.gru.iter().zip(h.iter_mut()) {
            let n = state.len();
            let wx = |gate: usize, k: usize| -> f64 {
                (0..a.len()).map(|i| layer.input_weight.get(gate * n + k, i) * a[i]).sum::<f64>()
            };
            let uh = |gate: usize, k: usize| -> f64 {
                (0..n).map(|j| layer.hidden_weight.get(gate * n + k, j) * state[j]).sum::<f64>()
            };
            let mut next = vec![0.0; n];
            for k in 0..n {
                let z = sig(wx(0, k) + uh(0, k) + layer.bias[k]);
                let r = sig(wx(1, k) + uh(1, k) + layer.bias[n + k]);
                let cand = (wx(2, k) + layer.bias[2 * n + k] + r * uh(2, k)).tanh();
                next[k] = (1.0 - z) * cand + z * state[k];
            }
            *state = next;
            a = state.clone();
        }
        let mu = affine(&b.mu_head, &a).into_iter().map(sig).collect();
        let e = affine(&b.e_head, &a).into_iter().map(sig).collect();
        (mu, e)
    }

    fn small_spec(topology: Topology, bands: usize) -> BundleSpec {
        let mut spec = BundleSpec::default_for(topology, bands);
        spec.dense = 6;
        spec.gru = vec![5, 4];
        spec
    }

    #[test]
    fn fast_path_matches_reference() {
        let bundle = WeightBundle::untrained(&small_spec(Topology::Narrowband, 1), 3).unwrap();
        let net = Network::new(bundle.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let units = 3;
        let mut state = net.initial_state(units);
        let mut refs: Vec<Vec<Vec<f64>>> = (0..units).map(|_| vec![vec![0.0; 5], vec![0.0; 4]]).collect();
        for _ in 0..50 {
            let x = DMatrix::from_fn(2, units, |_, _| rng.random_range(-3.0..3.0));
            let out = net.forward(&x, &mut state).unwrap();
            for u in 0..units {
                let col: Vec<f64> = x.column(u).iter().copied().collect();
                let (mu, e) = reference_step(&bundle, &col, &mut refs[u]);
                assert!((out.mu[(0, u)] - mu[0]).abs() <= 1e-12);
                assert!((out.e[(0, u)] - e[0]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn zero_weights_give_half_masks() {
        let bundle = WeightBundle::zeros(&small_spec(Topology::Broadband, 4)).unwrap();
        let net = Network::new(bundle).unwrap();
        let mut state = net.initial_state(1);
        let out = net.forward(&DMatrix::from_element(8, 1, 0.7), &mut state).unwrap();
        assert!(out.mu.iter().chain(out.e.iter()).all(|&m| m == 0.5));
    }

    #[test]
    fn parameter_counts() {
        let dense = Dimensions {
            input: 2,
            dense: 3,
            gru: vec![],
            mu_out: 0,
            e_out: 0,
        };
        assert_eq!(dense.parameter_count(), 9);
        let gru = Dimensions {
            input: 0,
            dense: 4,
            gru: vec![4],
            mu_out: 0,
            e_out: 0,
        };
        assert_eq!(gru.parameter_count() - 4, 108);
        let nb = BundleSpec::default_for(Topology::Narrowband, 257).dimensions().parameter_count();
        let hb = BundleSpec::default_for(Topology::Hybrid, 257).dimensions().parameter_count();
        let bb = BundleSpec::default_for(Topology::Broadband, 257).dimensions().parameter_count();
        assert_eq!(nb, 49_858);
        assert_eq!(hb - nb, 192);
        assert_eq!(bb, 329_602);
    }

    #[test]
    fn features_follow_transforms() {
        let y = [c(3.0, 4.0), c(0.0, 0.0)];
        let u = [c(1.0, -1.0), c(0.0, 2.0)];
        let signals = FrameSignals {
            far_end: Some(&u),
            mic: Some(&y),
            ..Default::default()
        };
        let mut spec = FeatureSpec::magnitudes(&[Signal::Mic]);
        assert_eq!(extract_features(&signals, &spec).unwrap().narrowband, vec![5.0, 0.0]);
        spec.transform = Transform::LogMagnitude;
        let log = extract_features(&signals, &spec).unwrap().narrowband;
        assert!((log[0] - 5f64.log10()).abs() < 1e-12);
        assert!((log[1] + 12.0).abs() < 1e-12);
        spec.transform = Transform::ReIm;
        spec.signals = vec![Signal::FarEnd, Signal::Mic];
        assert_eq!(
            extract_features(&signals, &spec).unwrap().narrowband,
            vec![1.0, -1.0, 3.0, 4.0, 0.0, 2.0, 0.0, 0.0]
        );
        spec.signals = vec![Signal::Error];
        assert!(extract_features(&signals, &spec).is_err());
    }

    #[test]
    fn hybrid_feature_is_band_average() {
        let y = [c(2.0, 0.0), c(0.0, -2.0), c(2.0, 0.0)];
        assert!((band_average_magnitude(&y) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn normalization_scales_and_broadcasts() {
        let n = Normalization {
            mean: vec![2.0],
            var: vec![4.0],
        };
        let mut x = vec![4.0, 2.0];
        n.apply("x", &mut x).unwrap();
        assert_eq!(x, vec![1.0, 0.0]);
        let mut bad = vec![1.0; 3];
        assert!(Normalization { mean: vec![0.0; 2], var: vec![1.0; 2] }.apply("x", &mut bad).is_err());
    }

    #[test]
    fn step_size_law_values() {
        let m = |mu: f64, e: f64| MaskPair { mu: vec![mu], e: vec![e] };
        let z = step_size_from_masks(&m(0.0, 1.0), &[1.0], &[c(1.0, 0.0)], 1e-3, 2).unwrap();
        assert!(z.values().iter().all(|&v| v == 0.0));
        let one = step_size_from_masks(&m(1.0, 0.0), &[1.0], &[c(5.0, 0.0)], 0.0, 1).unwrap();
        assert!((one.get(0, 0) - 1.0).abs() < 1e-12);
        let half = step_size_from_masks(&m(0.5, 1.0), &[1.0], &[c(0.0, 1.0)], 1e-3, 1).unwrap();
        assert!((half.get(0, 0) - 0.5 / 2.001).abs() < 1e-12);
        let robust = step_size_from_masks(&m(1.0, 0.3), &[1.0], &[c(1e200, 0.0)], 1e-3, 1).unwrap();
        assert!(robust.get(0, 0) < 1e-300);
        assert!(step_size_from_masks(&m(1.5, 0.0), &[1.0], &[c(0.0, 0.0)], 1e-3, 1).is_err());
    }

    #[test]
    fn json_round_trip_and_corruption() {
        let b = WeightBundle::untrained(&small_spec(Topology::Hybrid, 5), 9).unwrap();
        let text = b.to_json().unwrap();
        assert_eq!(WeightBundle::from_json(&text).unwrap(), b);
        assert!(matches!(WeightBundle::from_json(&text[..text.len() / 2]), Err(Error::Weights(_))));
        let mut v = b.clone();
        v.version = 99;
        assert!(matches!(v.validate(), Err(Error::Weights(_))));
        let mut bad = b.clone();
        bad.gru[1].hidden_weight.rows += 1;
        assert!(bad.validate().is_err());
    }

    fn random_frames(seed: u64, bands: usize, count: usize) -> Vec<[Vec<Complex64>; 4]> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut spectrum = || -> Vec<Complex64> {
            (0..bands).map(|_| c(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0))).collect()
        };
        (0..count).map(|_| [spectrum(), spectrum(), spectrum(), spectrum()]).collect()
    }

    fn masks_over(ctl: &mut NeuralController, frames: &[[Vec<Complex64>; 4]]) -> Vec<MaskPair> {
        let bands = frames[0][0].len();
        ctl.reset(bands, 4).unwrap();
        frames
            .iter()
            .map(|[u, y, e, d]| {
                let signals = FrameSignals {
                    far_end: Some(u),
                    mic: Some(y),
                    error: Some(e),
                    echo_estimate: Some(d),
                };
                ctl.infer_masks(&signals, bands).unwrap()
            })
            .collect()
    }

    #[test]
    fn reset_restores_the_initial_state() {
        let net = Arc::new(Network::new(WeightBundle::untrained(&small_spec(Topology::Hybrid, 6), 2).unwrap()).unwrap());
        let mut ctl = NeuralController::new(net, NeuralOptions::default());
        let frames = random_frames(3, 6, 12);
        let first = masks_over(&mut ctl, &frames);
        assert_eq!(first, masks_over(&mut ctl, &frames));
        assert_ne!(first[0], first[1]);
    }

    #[test]
    fn mask_modes() {
        let net = Arc::new(Network::new(WeightBundle::untrained(&small_spec(Topology::Narrowband, 5), 8).unwrap()).unwrap());
        let frames = random_frames(4, 5, 6);
        let learned = masks_over(&mut NeuralController::new(net.clone(), NeuralOptions::default()), &frames);
        let options = NeuralOptions {
            mu_mode: MuMode::NonSelective,
            e_mode: ErrorMaskMode::Zero,
            ..NeuralOptions::default()
        };
        let broad = masks_over(&mut NeuralController::new(net.clone(), options), &frames);
        for (a, b) in learned.iter().zip(&broad) {
            let mean = a.mu.iter().sum::<f64>() / a.mu.len() as f64;
            assert!(b.mu.iter().all(|&m| (m - mean).abs() < 1e-15));
            assert!(b.e.iter().all(|&m| m == 0.0));
        }
        let options = NeuralOptions {
            e_mode: ErrorMaskMode::One,
            ..NeuralOptions::default()
        };
        let ones = masks_over(&mut NeuralController::new(net, options), &frames);
        for (a, b) in learned.iter().zip(&ones) {
            assert_eq!(a.mu, b.mu);
            assert!(b.e.iter().all(|&m| m == 1.0));
        }
    }

    #[test]
    fn hybrid_without_hybrid_weights_is_narrowband() {
        let hybrid = WeightBundle::untrained(&small_spec(Topology::Hybrid, 4), 6).unwrap();
        let mut narrow = WeightBundle::zeros(&small_spec(Topology::Narrowband, 4)).unwrap();
        let mut cut = hybrid.clone();
        let w = &mut cut.input_layer.weight;
        for r in 0..w.rows {
            for col in 2..w.cols {
                w.data[r * w.cols + col] = 0.0;
            }
        }
        let nw = &mut narrow.input_layer.weight;
        for r in 0..nw.rows {
            for col in 0..2 {
                nw.data[r * 2 + col] = hybrid.input_layer.weight.get(r, col);
            }
        }
        narrow.input_layer.bias = hybrid.input_layer.bias.clone();
        narrow.gru = hybrid.gru.clone();
        narrow.mu_head = hybrid.mu_head.clone();
        narrow.e_head = hybrid.e_head.clone();
        let frames = random_frames(5, 4, 8);
        let a = masks_over(&mut NeuralController::new(Arc::new(Network::new(cut).unwrap()), NeuralOptions::default()), &frames);
        let b = masks_over(&mut NeuralController::new(Arc::new(Network::new(narrow).unwrap()), NeuralOptions::default()), &frames);
        for (x, y) in a.iter().zip(&b) {
            for (p, q) in x.mu.iter().chain(&x.e).zip(y.mu.iter().chain(&y.e)) {
                assert!((p - q).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn factory_is_seeded_and_bounded() {
        let spec = small_spec(Topology::Narrowband, 3);
        let a = WeightBundle::untrained(&spec, 4).unwrap();
        assert_eq!(a, WeightBundle::untrained(&spec, 4).unwrap());
        assert_ne!(a, WeightBundle::untrained(&spec, 5).unwrap());
        let bound = 1.0 / 2f64.sqrt();
        assert!(a.input_layer.weight.data.iter().all(|v| v.abs() <= bound));
        assert_eq!(a.normalization.features, Normalization::identity(2));
    }
}
