//! STFT analysis and weighted overlap-add synthesis.
//!
//! Frames are one-sided spectra of `dft_length / 2 + 1` bins. Frame `τ`
//! (1-based) covers samples `[(τ-1)·hop, (τ-1)·hop + dft_length)` without any
//! pre-padding. Synthesis uses the least-squares dual of the analysis window,
//! `g[n] = w[n] / Σ_k w²[n - k·hop]`, which makes `synthesize(analyze(x))`
//! exact wherever a sample is covered by a full set of frames.
//!
//! DFT convention: `X[k] = Σ_n w[n]·x[n]·exp(-j2πkn/N)` with no scaling on the
//! forward path and `1/N` on the inverse. The one-sided Parseval identity is
//! therefore `Σ_k c_k |X[k]|² = N · Σ_n (w[n]·x[n])²` with `c_k = 1` for DC and
//! Nyquist and `c_k = 2` otherwise (see [`one_sided_energy`]).

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    Hamming,
    Hann,
    Rectangular,
}

impl WindowKind {
    /// Periodic window of length `n`.
    pub fn build(self, n: usize) -> Vec<f64> {
        let nf = n as f64;
        (0..n)
            .map(|i| {
                let phase = 2.0 * PI * i as f64 / nf;
                match self {
                    WindowKind::Hamming => 0.54 - 0.46 * phase.cos(),
                    WindowKind::Hann => 0.5 - 0.5 * phase.cos(),
                    WindowKind::Rectangular => 1.0,
                }
            })
            .collect()
    }
}

/// Serializable description of an STFT, resolved into a [`StftConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StftSpec {
    pub dft_length: usize,
    pub hop: usize,
    pub window: WindowKind,
    pub sample_rate: u32,
}

impl Default for StftSpec {
    fn default() -> Self {
        Self {
            dft_length: 512,
            hop: 128,
            window: WindowKind::Hamming,
            sample_rate: 16_000,
        }
    }
}

impl StftSpec {
    pub fn resolve(&self) -> Result<StftConfig> {
        StftConfig::new(
            self.dft_length,
            self.hop,
            self.window.build(self.dft_length),
            self.sample_rate,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StftConfig {
    dft_length: usize,
    hop: usize,
    analysis_window: Vec<f64>,
    sample_rate: u32,
}

impl StftConfig {
    pub fn new(
        dft_length: usize,
        hop: usize,
        analysis_window: Vec<f64>,
        sample_rate: u32,
    ) -> Result<Self> {
        if dft_length < 2 || !dft_length.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "dft_length must be even and >= 2, got {dft_length}"
            )));
        }
        if hop == 0 || !dft_length.is_multiple_of(hop) {
            return Err(Error::Config(format!(
                "hop {hop} must divide dft_length {dft_length}"
            )));
        }
        if analysis_window.len() != dft_length {
            return Err(Error::dim("analysis window", dft_length, analysis_window.len()));
        }
        if analysis_window.iter().any(|w| !w.is_finite()) {
            return Err(Error::Config("analysis window has non-finite entries".into()));
        }
        if analysis_window.iter().all(|&w| w == 0.0) {
            return Err(Error::Config("analysis window is all zero".into()));
        }
        if sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        Ok(Self {
            dft_length,
            hop,
            analysis_window,
            sample_rate,
        })
    }

    pub fn dft_length(&self) -> usize {
        self.dft_length
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn analysis_window(&self) -> &[f64] {
        &self.analysis_window
    }

    /// Number of one-sided bins, `F = dft_length / 2 + 1`.
    pub fn num_bins(&self) -> usize {
        self.dft_length / 2 + 1
    }

    /// Number of whole frames that fit into `len` samples.
    pub fn num_frames(&self, len: usize) -> usize {
        if len < self.dft_length {
            0
        } else {
            (len - self.dft_length) / self.hop + 1
        }
    }

    /// Length of the stream produced by synthesizing `frames` frames.
    pub fn synthesized_len(&self, frames: usize) -> usize {
        if frames == 0 {
            0
        } else {
            (frames - 1) * self.hop + self.dft_length
        }
    }

    /// Least-squares dual (WOLA) synthesis window.
    pub fn synthesis_window(&self) -> Result<Vec<f64>> {
        let n = self.dft_length;
        let w = &self.analysis_window;
        let mut denom = vec![0.0; self.hop];
        for (i, wi) in w.iter().enumerate() {
            denom[i % self.hop] += wi * wi;
        }
        if denom.iter().any(|&d| d <= 0.0) {
            return Err(Error::Config(
                "analysis window violates the nonzero overlap-add condition".into(),
            ));
        }
        Ok((0..n).map(|i| w[i] / denom[i % self.hop]).collect())
    }
}

impl Default for StftConfig {
    fn default() -> Self {
        StftSpec::default()
            .resolve()
            .expect("default STFT spec is valid")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralFrame {
    /// 1-based frame index.
    pub index: usize,
    pub bins: Vec<Complex64>,
}

impl SpectralFrame {
    pub fn zeros(index: usize, num_bins: usize) -> Self {
        Self {
            index,
            bins: vec![Complex64::new(0.0, 0.0); num_bins],
        }
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }
}

/// Weighted one-sided frame energy; equals `N · Σ (w·x)²` for real input.
pub fn one_sided_energy(bins: &[Complex64], dft_length: usize) -> f64 {
    let nyquist = dft_length / 2;
    bins.iter()
        .enumerate()
        .map(|(k, b)| {
            let c = if k == 0 || k == nyquist { 1.0 } else { 2.0 };
            c * b.norm_sqr()
        })
        .sum()
}

/// STFT engine with cached FFT plans. Immutable and shareable across threads.
#[derive(Clone)]
pub struct Stft {
    cfg: StftConfig,
    synthesis_window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Stft {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Stft").field("cfg", &self.cfg).finish()
    }
}

impl Stft {
    pub fn new(cfg: StftConfig) -> Result<Self> {
        let synthesis_window = cfg.synthesis_window()?;
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(cfg.dft_length);
        let inverse = planner.plan_fft_inverse(cfg.dft_length);
        Ok(Self {
            cfg,
            synthesis_window,
            forward,
            inverse,
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.cfg
    }

    pub fn synthesis_window(&self) -> &[f64] {
        &self.synthesis_window
    }

    /// One-sided spectrum of a single windowed segment of `dft_length` samples.
    pub fn analyze_segment(&self, segment: &[f64]) -> Result<Vec<Complex64>> {
        let n = self.cfg.dft_length;
        if segment.len() != n {
            return Err(Error::dim("analysis segment", n, segment.len()));
        }
        let mut buf: Vec<Complex64> = segment
            .iter()
            .zip(&self.cfg.analysis_window)
            .map(|(x, w)| Complex64::new(x * w, 0.0))
            .collect();
        self.forward.process(&mut buf);
        buf.truncate(self.cfg.num_bins());
        Ok(buf)
    }

    pub fn analyze(&self, samples: &[f64]) -> Result<Vec<SpectralFrame>> {
        let n = self.cfg.dft_length;
        let count = self.cfg.num_frames(samples.len());
        if count == 0 {
            return Err(Error::EmptyOutput {
                len: samples.len(),
                frame: n,
            });
        }
        let mut frames = Vec::with_capacity(count);
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.forward.get_inplace_scratch_len()];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for t in 0..count {
            let start = t * self.cfg.hop;
            for ((b, x), w) in buf
                .iter_mut()
                .zip(&samples[start..start + n])
                .zip(&self.cfg.analysis_window)
            {
                *b = Complex64::new(x * w, 0.0);
            }
            self.forward.process_with_scratch(&mut buf, &mut scratch);
            frames.push(SpectralFrame {
                index: t + 1,
                bins: buf[..self.cfg.num_bins()].to_vec(),
            });
        }
        Ok(frames)
    }

    /// Weighted overlap-add of one-sided frames back into a real stream of
    /// `(frames - 1)·hop + dft_length` samples.
    pub fn synthesize(&self, frames: &[SpectralFrame]) -> Result<Vec<f64>> {
        let n = self.cfg.dft_length;
        let bins = self.cfg.num_bins();
        if let Some(bad) = frames.iter().find(|f| f.bins.len() != bins) {
            return Err(Error::dim("synthesis frame bins", bins, bad.bins.len()));
        }
        let mut out = vec![0.0; self.cfg.synthesized_len(frames.len())];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.inverse.get_inplace_scratch_len()];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        let scale = 1.0 / n as f64;
        for (t, frame) in frames.iter().enumerate() {
            buf[..bins].copy_from_slice(&frame.bins);
            buf[0].im = 0.0;
            buf[n / 2].im = 0.0;
            for k in 1..n / 2 {
                buf[n - k] = frame.bins[k].conj();
            }
            self.inverse.process_with_scratch(&mut buf, &mut scratch);
            let start = t * self.cfg.hop;
            for ((o, b), g) in out[start..start + n]
                .iter_mut()
                .zip(&buf)
                .zip(&self.synthesis_window)
            {
                *o += b.re * scale * g;
            }
        }
        Ok(out)
    }
}
