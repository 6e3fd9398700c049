//! Echo-path impulse responses: a synthetic generator and WAV-backed pools.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::wav::read_wav;

/// Parameters of the synthetic decaying-noise impulse response generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticIrSpec {
    pub length: usize,
    /// Reverberation time range (60 dB decay), seconds.
    pub rt60_range_s: [f64; 2],
    /// Direct-path delay range in samples.
    pub delay_range: [usize; 2],
    /// Tail energy relative to the direct path, dB.
    pub direct_to_tail_db: f64,
    pub sample_rate: u32,
}

impl Default for SyntheticIrSpec {
    fn default() -> Self {
        Self {
            length: 1024,
            rt60_range_s: [0.1, 0.25],
            delay_range: [8, 64],
            direct_to_tail_db: 0.0,
            sample_rate: 16_000,
        }
    }
}

/// Direct path at `delay` followed by an exponentially decaying Gaussian tail.
/// The result is normalized to unit energy.
pub fn synthetic_ir<R: Rng + ?Sized>(
    rng: &mut R,
    length: usize,
    rt60_s: f64,
    delay: usize,
    direct_to_tail_db: f64,
    sample_rate: u32,
) -> Result<Vec<f64>> {
    if delay >= length {
        return Err(Error::Config(format!(
            "IR delay {delay} does not fit into {length} taps"
        )));
    }
    if rt60_s <= 0.0 {
        return Err(Error::Config("rt60 must be positive".into()));
    }
    // amplitude decays by 60 dB over rt60 seconds
    let decay_per_sample = (-3.0 * std::f64::consts::LN_10) / (rt60_s * sample_rate as f64);
    let mut h = vec![0.0; length];
    let mut tail_energy = 0.0;
    for (n, v) in h.iter_mut().enumerate().skip(delay + 1) {
        let g: f64 = StandardNormal.sample(rng);
        *v = g * (decay_per_sample * (n - delay) as f64).exp();
        tail_energy += *v * *v;
    }
    if tail_energy > 0.0 {
        let target = 10f64.powf(-direct_to_tail_db / 10.0);
        let scale = (target / tail_energy).sqrt();
        h.iter_mut().skip(delay + 1).for_each(|v| *v *= scale);
    }
    h[delay] = 1.0;
    let norm = h.iter().map(|v| v * v).sum::<f64>().sqrt();
    h.iter_mut().for_each(|v| *v /= norm);
    Ok(h)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IrPool {
    irs: Vec<Vec<f64>>,
}

impl IrPool {
    pub fn new(irs: Vec<Vec<f64>>) -> Result<Self> {
        if irs.is_empty() {
            return Err(Error::Config("impulse response pool is empty".into()));
        }
        if irs.iter().any(|h| h.is_empty()) {
            return Err(Error::Config("impulse response pool has an empty IR".into()));
        }
        Ok(Self { irs })
    }

    pub fn synthetic(count: usize, spec: &SyntheticIrSpec, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let irs = (0..count)
            .map(|_| {
                let rt60 = rng.random_range(spec.rt60_range_s[0]..=spec.rt60_range_s[1]);
                let delay = rng.random_range(spec.delay_range[0]..=spec.delay_range[1]);
                synthetic_ir(
                    &mut rng,
                    spec.length,
                    rt60,
                    delay,
                    spec.direct_to_tail_db,
                    spec.sample_rate,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(irs)
    }

    /// Loads every `.wav` file of a directory, sorted by file name.
    pub fn from_dir(dir: impl AsRef<Path>, sample_rate: u32) -> Result<Self> {
        let mut paths: Vec<_> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .is_some_and(|ext| ext.eq_ignore_ascii_case("wav"))
            })
            .collect();
        paths.sort();
        let mut irs = Vec::with_capacity(paths.len());
        for p in paths {
            let (h, sr) = read_wav(&p)?;
            if sr != sample_rate {
                return Err(Error::Config(format!(
                    "{} has sample rate {sr}, expected {sample_rate}",
                    p.display()
                )));
            }
            irs.push(h);
        }
        Self::new(irs)
    }

    pub fn len(&self) -> usize {
        self.irs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.irs.is_empty()
    }

    pub fn get(&self, i: usize) -> &[f64] {
        &self.irs[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_ir_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = synthetic_ir(&mut rng, 512, 0.05, 20, 0.0, 16_000).unwrap();
        assert_eq!(h.len(), 512);
        assert!(h[..20].iter().all(|&v| v == 0.0));
        let energy: f64 = h.iter().map(|v| v * v).sum();
        assert!((energy - 1.0).abs() < 1e-12);
        // decaying tail
        let early: f64 = h[21..121].iter().map(|v| v * v).sum();
        let late: f64 = h[400..500].iter().map(|v| v * v).sum();
        assert!(early > 10.0 * late);
    }

    #[test]
    fn pool_is_deterministic() {
        let spec = SyntheticIrSpec::default();
        assert_eq!(
            IrPool::synthetic(3, &spec, 5).unwrap(),
            IrPool::synthetic(3, &spec, 5).unwrap()
        );
        assert!(IrPool::synthetic(0, &spec, 5).is_err());
    }
}
