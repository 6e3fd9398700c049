//! Synthetic and file-backed source signals for scene generation.

use std::path::PathBuf;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::wav::read_wav;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum SourceKind {
    /// White Gaussian noise.
    White,
    /// Gaussian noise through a random all-pole resonator cascade.
    Ar,
    /// AR noise gated by a random syllable-rate envelope.
    SpeechLike,
    /// Random excerpt of a random WAV file from a directory.
    WavDir { path: PathBuf },
}

impl SourceKind {
    pub fn generate<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        len: usize,
        sample_rate: u32,
    ) -> Result<Vec<f64>> {
        match self {
            SourceKind::White => Ok(white(rng, len)),
            SourceKind::Ar => Ok(ar_noise(rng, len)),
            SourceKind::SpeechLike => Ok(speech_like(rng, len, sample_rate)),
            SourceKind::WavDir { path } => wav_excerpt(rng, path, len, sample_rate),
        }
    }
}

pub fn white<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Vec<f64> {
    (0..len).map(|_| StandardNormal.sample(rng)).collect()
}

/// Two random resonances (pole radius 0.85..0.97) applied to white noise.
pub fn ar_noise<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Vec<f64> {
    let mut x = white(rng, len);
    for _ in 0..2 {
        let r: f64 = rng.random_range(0.85..0.97);
        let theta: f64 = rng.random_range(0.03..0.4) * std::f64::consts::PI;
        let a1 = 2.0 * r * theta.cos();
        let a2 = -r * r;
        let (mut y1, mut y2) = (0.0, 0.0);
        for v in x.iter_mut() {
            let y = *v + a1 * y1 + a2 * y2;
            y2 = y1;
            y1 = y;
            *v = y;
        }
    }
    x
}

/// AR noise under an on/off envelope with 100-400 ms bursts, 50-300 ms gaps
/// and 10 ms raised-cosine ramps.
pub fn speech_like<R: Rng + ?Sized>(rng: &mut R, len: usize, sample_rate: u32) -> Vec<f64> {
    let mut x = ar_noise(rng, len);
    let fs = sample_rate as f64;
    let ramp = ((0.01 * fs) as usize).max(1);
    let mut env = vec![0.0; len];
    let mut pos = (rng.random_range(0.0..0.3) * fs) as usize;
    while pos < len {
        let on = (rng.random_range(0.1..0.4) * fs) as usize;
        let gain: f64 = rng.random_range(0.3..1.0);
        for i in 0..on.min(len - pos) {
            let shape = if i < ramp {
                0.5 - 0.5 * (std::f64::consts::PI * i as f64 / ramp as f64).cos()
            } else if on - i <= ramp {
                0.5 - 0.5 * (std::f64::consts::PI * (on - i) as f64 / ramp as f64).cos()
            } else {
                1.0
            };
            env[pos + i] = gain * shape;
        }
        pos += on + (rng.random_range(0.05..0.3) * fs) as usize;
    }
    x.iter_mut().zip(&env).for_each(|(v, e)| *v *= e);
    x
}

fn wav_excerpt<R: Rng + ?Sized>(
    rng: &mut R,
    dir: &PathBuf,
    len: usize,
    sample_rate: u32,
) -> Result<Vec<f64>> {
    let mut files: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Config(format!("no WAV files in {}", dir.display())));
    }
    let pick = &files[rng.random_range(0..files.len())];
    let (samples, sr) = read_wav(pick)?;
    if sr != sample_rate {
        return Err(Error::Config(format!(
            "{} has sample rate {sr}, expected {sample_rate}",
            pick.display()
        )));
    }
    if samples.is_empty() {
        return Err(Error::Config(format!("{} is empty", pick.display())));
    }
    let offset = rng.random_range(0..samples.len());
    Ok((0..len).map(|i| samples[(offset + i) % samples.len()]).collect())
}
