//! Scene synthesis: far-end signal, echo through a (possibly switching) echo
//! path, near-end speech and noise, mixed at prescribed power ratios.
//!
//! Ratios are measured over active blocks only: non-overlapping 20 ms blocks
//! whose RMS lies above -40 dB relative to the component's global peak.
//! The near-end-to-echo ratio `ser_db` sets `P_s / P_d`; `senr_db` sets the
//! ratio of near-end-plus-echo power to noise power, `(P_s + P_d) / P_n`.
//! After scaling, the microphone signal and the far-end signal have unit mean
//! square and `mic[κ] = echo[κ] + near_end[κ] + noise[κ]` holds exactly.

mod ir;
mod random;
mod sources;

use std::path::Path;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::wav::{read_wav, write_wav, WavEncoding};

pub use ir::{synthetic_ir, IrPool, SyntheticIrSpec};
pub use random::{render_template, sample_random_config, sample_random_scene, RandomSceneSpec};
pub use sources::{ar_noise, speech_like, white, SourceKind};

pub const MAX_DURATION_S: f64 = 8.0;
pub const ACTIVITY_BLOCK_S: f64 = 0.02;
pub const ACTIVITY_THRESHOLD_DB: f64 = -40.0;

/// Half-open activity interval in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start_s: f64,
    pub end_s: f64,
}

/// Activity masks. `None` means the component is active throughout.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Masking {
    #[serde(default)]
    pub far_end: Option<Vec<Segment>>,
    #[serde(default)]
    pub near_end: Option<Vec<Segment>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub duration_s: f64,
    pub sample_rate: u32,
    pub ir_a: Vec<f64>,
    #[serde(default)]
    pub ir_b: Option<Vec<f64>>,
    #[serde(default)]
    pub change_time_s: Option<f64>,
    #[serde(default)]
    pub fade_duration_s: f64,
    /// Near-end-to-echo ratio in dB; `None` renders no near-end speech.
    #[serde(default)]
    pub ser_db: Option<f64>,
    /// Near-end-plus-echo-to-noise ratio in dB; `None` renders no noise.
    #[serde(default)]
    pub senr_db: Option<f64>,
    #[serde(default)]
    pub masking: Masking,
    #[serde(default)]
    pub rng_seed: u64,
}

impl SceneConfig {
    /// Single echo path, no near-end, no noise, no masking.
    pub fn echo_only(duration_s: f64, sample_rate: u32, ir: Vec<f64>) -> Self {
        Self {
            duration_s,
            sample_rate,
            ir_a: ir,
            ir_b: None,
            change_time_s: None,
            fade_duration_s: 0.0,
            ser_db: None,
            senr_db: None,
            masking: Masking::default(),
            rng_seed: 0,
        }
    }

    pub fn num_samples(&self) -> usize {
        (self.duration_s * self.sample_rate as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s > 0.0 && self.duration_s <= MAX_DURATION_S) {
            return Err(Error::Config(format!(
                "duration {} s outside (0, {MAX_DURATION_S}]",
                self.duration_s
            )));
        }
        if self.sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        if self.ir_a.is_empty() {
            return Err(Error::Config("ir_a is empty".into()));
        }
        if let Some(t) = self.change_time_s {
            if !(t > 0.0 && t < self.duration_s) {
                return Err(Error::Config(format!(
                    "change time {t} s outside (0, {})",
                    self.duration_s
                )));
            }
            if self.ir_b.as_ref().is_none_or(|h| h.is_empty()) {
                return Err(Error::Config("echo-path change requires a nonempty ir_b".into()));
            }
        }
        if !(0.0..=1.0).contains(&self.fade_duration_s) {
            return Err(Error::Config(format!(
                "fade duration {} s outside [0, 1]",
                self.fade_duration_s
            )));
        }
        Ok(())
    }

    /// Sample range `[start, end)` of the echo-path crossfade, if any.
    pub fn change_window(&self) -> Option<(usize, usize)> {
        let fs = self.sample_rate as f64;
        self.change_time_s.map(|t| {
            let start = (t * fs).round() as usize;
            (start, start + (self.fade_duration_s * fs).round() as usize)
        })
    }
}

/// Scale factors applied to the raw components while mixing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixGains {
    pub far_end: f64,
    pub echo: f64,
    pub near_end: f64,
    pub noise: f64,
}

impl MixGains {
    /// Gain between the stored far-end signal and the stored echo, relative
    /// to the configured impulse responses.
    pub fn echo_path_gain(&self) -> f64 {
        self.echo / self.far_end
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub far_end: Vec<f64>,
    pub echo: Vec<f64>,
    pub near_end: Vec<f64>,
    pub noise: Vec<f64>,
    pub mic: Vec<f64>,
    pub config: SceneConfig,
    pub gains: MixGains,
}

#[derive(Serialize, Deserialize)]
struct SceneMeta {
    config: SceneConfig,
    gains: MixGains,
}

impl Scene {
    pub fn len(&self) -> usize {
        self.mic.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mic.is_empty()
    }

    /// Interference `z = s + n`.
    pub fn interference(&self) -> Vec<f64> {
        self.near_end
            .iter()
            .zip(&self.noise)
            .map(|(s, n)| s + n)
            .collect()
    }

    /// Writes `u.wav`, `y.wav`, `d.wav`, `s.wav`, `n.wav` (32-bit float) and
    /// `scene.json`.
    pub fn write_wav_set(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let sr = self.config.sample_rate;
        for (name, sig) in [
            ("u", &self.far_end),
            ("y", &self.mic),
            ("d", &self.echo),
            ("s", &self.near_end),
            ("n", &self.noise),
        ] {
            write_wav(dir.join(format!("{name}.wav")), sig, sr, WavEncoding::Float32)?;
        }
        let meta = SceneMeta {
            config: self.config.clone(),
            gains: self.gains,
        };
        std::fs::write(dir.join("scene.json"), serde_json::to_vec_pretty(&meta)?)?;
        Ok(())
    }

    /// Loads a set written by [`Scene::write_wav_set`]. The microphone signal
    /// is recomputed from the loaded components so that the additive model
    /// holds exactly at the stored precision.
    pub fn read_wav_set(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let meta: SceneMeta = serde_json::from_slice(&std::fs::read(dir.join("scene.json"))?)?;
        let load = |name: &str| -> Result<Vec<f64>> {
            let (x, sr) = read_wav(dir.join(format!("{name}.wav")))?;
            if sr != meta.config.sample_rate {
                return Err(Error::Config(format!(
                    "{name}.wav sample rate {sr} differs from scene config"
                )));
            }
            Ok(x)
        };
        let far_end = load("u")?;
        let echo = load("d")?;
        let near_end = load("s")?;
        let noise = load("n")?;
        let len = far_end.len();
        for (name, x) in [("d", &echo), ("s", &near_end), ("n", &noise)] {
            if x.len() != len {
                return Err(Error::dim(format!("{name}.wav length"), len, x.len()));
            }
        }
        let mic = sum3(&echo, &near_end, &noise);
        Ok(Self {
            far_end,
            echo,
            near_end,
            noise,
            mic,
            config: meta.config,
            gains: meta.gains,
        })
    }
}

fn sum3(a: &[f64], b: &[f64], c: &[f64]) -> Vec<f64> {
    a.iter()
        .zip(b)
        .zip(c)
        .map(|((x, y), z)| x + y + z)
        .collect()
}

/// Causal linear convolution truncated to `x.len()` samples (FFT-based).
pub fn convolve(x: &[f64], h: &[f64]) -> Vec<f64> {
    let len = x.len();
    if len == 0 || h.is_empty() {
        return vec![0.0; len];
    }
    let n = (len + h.len() - 1).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut a: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    a.resize(n, Complex64::new(0.0, 0.0));
    let mut b: Vec<Complex64> = h.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    b.resize(n, Complex64::new(0.0, 0.0));
    fwd.process(&mut a);
    fwd.process(&mut b);
    a.iter_mut().zip(&b).for_each(|(p, q)| *p *= q);
    inv.process(&mut a);
    let scale = 1.0 / n as f64;
    a[..len].iter().map(|c| c.re * scale).collect()
}

/// Echo through `ir_a`, switching to `ir_b` with a linear crossfade starting
/// at `change_time_s` and lasting `fade_duration_s`.
pub fn render_echo(far_end: &[f64], cfg: &SceneConfig) -> Result<Vec<f64>> {
    if cfg.ir_a.is_empty() {
        return Err(Error::Config("ir_a is empty".into()));
    }
    if cfg.ir_a.len() > far_end.len() {
        return Err(Error::Config(format!(
            "impulse response ({} taps) longer than signal ({} samples)",
            cfg.ir_a.len(),
            far_end.len()
        )));
    }
    let before = convolve(far_end, &cfg.ir_a);
    let Some((start, end)) = cfg.change_window() else {
        return Ok(before);
    };
    let ir_b = cfg
        .ir_b
        .as_ref()
        .filter(|h| !h.is_empty())
        .ok_or_else(|| Error::Config("echo-path change requires a nonempty ir_b".into()))?;
    if ir_b.len() > far_end.len() {
        return Err(Error::Config(format!(
            "impulse response ({} taps) longer than signal ({} samples)",
            ir_b.len(),
            far_end.len()
        )));
    }
    let after = convolve(far_end, ir_b);
    let fade = (end - start) as f64;
    Ok(before
        .iter()
        .zip(&after)
        .enumerate()
        .map(|(k, (a, b))| {
            let alpha = if k < start {
                0.0
            } else if k >= end {
                1.0
            } else {
                (k - start) as f64 / fade
            };
            (1.0 - alpha) * a + alpha * b
        })
        .collect())
}

/// Zeroes every sample outside the active segments.
pub fn apply_mask(x: &[f64], segments: Option<&[Segment]>, sample_rate: u32) -> Vec<f64> {
    let Some(segments) = segments else {
        return x.to_vec();
    };
    let fs = sample_rate as f64;
    let mut out = vec![0.0; x.len()];
    for seg in segments {
        let a = ((seg.start_s * fs).round().max(0.0) as usize).min(x.len());
        let b = ((seg.end_s * fs).round().max(0.0) as usize).min(x.len());
        if a < b {
            out[a..b].copy_from_slice(&x[a..b]);
        }
    }
    out
}

/// Mean square over active blocks; zero if the signal is silent.
pub fn active_power(x: &[f64], sample_rate: u32) -> f64 {
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak == 0.0 {
        return 0.0;
    }
    let block = ((ACTIVITY_BLOCK_S * sample_rate as f64).round() as usize).max(1);
    let threshold = peak * 10f64.powf(ACTIVITY_THRESHOLD_DB / 20.0);
    let (mut energy, mut count) = (0.0, 0usize);
    for chunk in x.chunks(block) {
        let e: f64 = chunk.iter().map(|v| v * v).sum();
        if (e / chunk.len() as f64).sqrt() > threshold {
            energy += e;
            count += chunk.len();
        }
    }
    if count == 0 {
        0.0
    } else {
        energy / count as f64
    }
}

fn mean_square(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64
}

/// Masks, renders the echo and scales all components per `cfg`.
pub fn mix_scene(
    far_end: &[f64],
    near_end: &[f64],
    noise: &[f64],
    cfg: &SceneConfig,
) -> Result<Scene> {
    cfg.validate()?;
    let len = far_end.len();
    for (what, x) in [("near-end", near_end), ("noise", noise)] {
        if x.len() != len {
            return Err(Error::dim(format!("{what} length"), len, x.len()));
        }
    }
    let sr = cfg.sample_rate;
    let u = apply_mask(far_end, cfg.masking.far_end.as_deref(), sr);
    let s = apply_mask(near_end, cfg.masking.near_end.as_deref(), sr);
    let d = render_echo(&u, cfg)?;

    let p_d = active_power(&d, sr);
    if p_d == 0.0 {
        return Err(Error::Scaling("echo"));
    }
    let (g_s, p_s_scaled) = match cfg.ser_db {
        Some(ser) => {
            let p_s = active_power(&s, sr);
            if p_s == 0.0 {
                return Err(Error::Scaling("near-end"));
            }
            let target = 10f64.powf(ser / 10.0) * p_d;
            ((target / p_s).sqrt(), target)
        }
        None => (0.0, 0.0),
    };
    let g_n = match cfg.senr_db {
        Some(senr) => {
            let p_n = active_power(noise, sr);
            if p_n == 0.0 {
                return Err(Error::Scaling("noise"));
            }
            let target = (p_d + p_s_scaled) / 10f64.powf(senr / 10.0);
            (target / p_n).sqrt()
        }
        None => 0.0,
    };

    let unnormalized: Vec<f64> = (0..len)
        .map(|k| d[k] + g_s * s[k] + g_n * noise[k])
        .collect();
    let c = 1.0 / mean_square(&unnormalized).sqrt();
    let p_u = mean_square(&u);
    if p_u == 0.0 {
        return Err(Error::Scaling("far-end"));
    }
    let g_u = 1.0 / p_u.sqrt();

    let echo: Vec<f64> = d.iter().map(|v| c * v).collect();
    let near: Vec<f64> = s.iter().map(|v| c * g_s * v).collect();
    let noise_out: Vec<f64> = noise.iter().map(|v| c * g_n * v).collect();
    let mic = sum3(&echo, &near, &noise_out);
    Ok(Scene {
        far_end: u.iter().map(|v| g_u * v).collect(),
        echo,
        near_end: near,
        noise: noise_out,
        mic,
        config: cfg.clone(),
        gains: MixGains {
            far_end: g_u,
            echo: c,
            near_end: c * g_s,
            noise: c * g_n,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn noise(len: usize, seed: u64) -> Vec<f64> {
        white(&mut ChaCha8Rng::seed_from_u64(seed), len)
    }

    fn cfg(ir: Vec<f64>) -> SceneConfig {
        SceneConfig::echo_only(1.0, 16_000, ir)
    }

    #[test]
    fn identity_ir_reproduces_input() {
        let u = noise(1000, 1);
        let d = render_echo(&u, &cfg(vec![1.0])).unwrap();
        for (a, b) in u.iter().zip(&d) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn delay_ir_shifts_input() {
        let u = noise(1000, 2);
        let d = render_echo(&u, &cfg(vec![0.0, 1.0])).unwrap();
        assert!(d[0].abs() < 1e-12);
        for k in 1..1000 {
            assert!((d[k] - u[k - 1]).abs() < 1e-12);
        }
    }

    #[test]
    fn fft_convolution_matches_direct() {
        let u = noise(300, 3);
        let h = noise(40, 4);
        let fast = convolve(&u, &h);
        for k in 0..300 {
            let direct: f64 = (0..h.len().min(k + 1)).map(|j| h[j] * u[k - j]).sum();
            assert!((fast[k] - direct).abs() < 1e-10);
        }
    }

    #[test]
    fn crossfade_midpoint() {
        let u = noise(16_000, 5);
        let mut c = cfg(vec![1.0]);
        c.ir_b = Some(vec![0.0]);
        c.change_time_s = Some(0.5);
        c.fade_duration_s = 0.25;
        let d = render_echo(&u, &c).unwrap();
        let mid = 8000 + 2000;
        assert!((d[mid] - 0.5 * u[mid]).abs() < 1e-12);
        assert!((d[7999] - u[7999]).abs() < 1e-12);
        assert!(d[12_000].abs() < 1e-12);
    }

    #[test]
    fn hard_switch_without_fade() {
        let u = noise(16_000, 6);
        let mut c = cfg(vec![1.0]);
        c.ir_b = Some(vec![-1.0]);
        c.change_time_s = Some(0.5);
        let d = render_echo(&u, &c).unwrap();
        assert!((d[7999] - u[7999]).abs() < 1e-12);
        assert!((d[8000] + u[8000]).abs() < 1e-12);
    }

    #[test]
    fn ir_longer_than_signal_is_rejected() {
        assert!(render_echo(&[1.0; 4], &cfg(vec![1.0; 5])).is_err());
    }

    #[test]
    fn symmetric_copy_gives_equal_gains() {
        let u = noise(16_000, 7);
        let c = cfg(vec![0.5, 0.25]);
        let d = render_echo(&u, &c).unwrap();
        let mut c2 = c.clone();
        c2.ser_db = Some(0.0);
        let scene = mix_scene(&u, &d, &vec![0.0; 16_000], &c2).unwrap();
        assert!((scene.gains.echo - scene.gains.near_end).abs() < 1e-12 * scene.gains.echo);
    }

    #[test]
    fn ser_is_met_on_active_power() {
        let u = noise(16_000, 8);
        let s = noise(16_000, 9);
        let n = noise(16_000, 10);
        let mut c = cfg(vec![1.0, 0.3, -0.2]);
        c.ser_db = Some(10.0);
        c.senr_db = Some(30.0);
        let scene = mix_scene(&u, &s, &n, &c).unwrap();
        let p_s = active_power(&scene.near_end, 16_000);
        let p_d = active_power(&scene.echo, 16_000);
        let p_n = active_power(&scene.noise, 16_000);
        assert!((10.0 * (p_s / p_d).log10() - 10.0).abs() < 1e-9);
        assert!((10.0 * ((p_s + p_d) / p_n).log10() - 30.0).abs() < 1e-9);
        assert!((mean_square(&scene.mic) - 1.0).abs() < 1e-12);
        assert!((mean_square(&scene.far_end) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn additivity_is_bit_exact() {
        let u = noise(16_000, 11);
        let mut c = cfg(vec![0.7, 0.1]);
        c.ser_db = Some(-3.0);
        c.senr_db = Some(25.0);
        let scene = mix_scene(&u, &noise(16_000, 12), &noise(16_000, 13), &c).unwrap();
        for k in 0..scene.len() {
            assert_eq!(scene.mic[k], scene.echo[k] + scene.near_end[k] + scene.noise[k]);
        }
    }

    #[test]
    fn masking_removes_near_end() {
        let u = noise(16_000, 14);
        let mut c = cfg(vec![1.0]);
        c.ser_db = Some(0.0);
        c.senr_db = Some(30.0);
        c.masking.near_end = Some(vec![Segment {
            start_s: 0.5,
            end_s: 1.0,
        }]);
        let scene = mix_scene(&u, &noise(16_000, 15), &noise(16_000, 16), &c).unwrap();
        for k in 0..8000 {
            assert_eq!(scene.near_end[k], 0.0);
            assert_eq!(scene.mic[k], scene.echo[k] + scene.noise[k]);
        }
        assert!(scene.near_end[8000..].iter().any(|&v| v != 0.0));
    }

    #[test]
    fn silent_required_component_is_a_scaling_error() {
        let u = noise(16_000, 17);
        let mut c = cfg(vec![1.0]);
        c.ser_db = Some(0.0);
        let err = mix_scene(&u, &vec![0.0; 16_000], &vec![0.0; 16_000], &c).unwrap_err();
        assert!(matches!(err, Error::Scaling("near-end")));
        let err = mix_scene(&vec![0.0; 16_000], &u, &u, &cfg(vec![1.0])).unwrap_err();
        assert!(matches!(err, Error::Scaling("echo")));
    }

    #[test]
    fn wav_set_round_trip_keeps_additivity() {
        let dir = tempfile::tempdir().unwrap();
        let u = noise(16_000, 18);
        let mut c = cfg(vec![1.0, 0.5]);
        c.ser_db = Some(0.0);
        c.senr_db = Some(30.0);
        let scene = mix_scene(&u, &noise(16_000, 19), &noise(16_000, 20), &c).unwrap();
        scene.write_wav_set(dir.path()).unwrap();
        let back = Scene::read_wav_set(dir.path()).unwrap();
        assert_eq!(back.config, scene.config);
        for k in 0..back.len() {
            assert_eq!(back.mic[k], back.echo[k] + back.near_end[k] + back.noise[k]);
            assert!((back.echo[k] - scene.echo[k]).abs() < 1e-6);
        }
    }

    proptest::proptest! {
        #[test]
        fn echo_is_linear_in_far_end(a in -4.0f64..4.0, seed in 0u64..500) {
            let u = noise(2000, seed);
            let mut c = cfg(noise(64, seed + 1));
            c.ir_b = Some(noise(32, seed + 2));
            c.duration_s = 2000.0 / 16_000.0;
            c.change_time_s = Some(0.05);
            c.fade_duration_s = 0.01;
            let scaled: Vec<f64> = u.iter().map(|v| a * v).collect();
            let d1 = render_echo(&scaled, &c).unwrap();
            let d0 = render_echo(&u, &c).unwrap();
            for (p, q) in d1.iter().zip(&d0) {
                proptest::prop_assert!((p - a * q).abs() < 1e-9);
            }
        }
    }
}
