use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{mix_scene, IrPool, Masking, Scene, SceneConfig, Segment, SourceKind};
use crate::error::Result;

/// Distribution of randomly drawn scenes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RandomSceneSpec {
    pub duration_s: f64,
    pub sample_rate: u32,
    /// Probability that the echo path switches mid-scene.
    pub change_probability: f64,
    pub change_range_s: [f64; 2],
    pub max_fade_s: f64,
    /// Probability that a far-end or near-end signal is temporally masked.
    pub mask_probability: f64,
    /// Duration range of each alternating on/off mask segment.
    pub mask_segment_range_s: [f64; 2],
    pub ser_range_db: [f64; 2],
    pub senr_range_db: [f64; 2],
    pub far_end: SourceKind,
    pub near_end: SourceKind,
    pub noise: SourceKind,
}

impl Default for RandomSceneSpec {
    fn default() -> Self {
        Self {
            duration_s: 8.0,
            sample_rate: 16_000,
            change_probability: 0.9,
            change_range_s: [3.0, 6.0],
            max_fade_s: 1.0,
            mask_probability: 2.0 / 3.0,
            mask_segment_range_s: [0.5, 2.0],
            ser_range_db: [-10.0, 10.0],
            senr_range_db: [20.0, 40.0],
            far_end: SourceKind::SpeechLike,
            near_end: SourceKind::SpeechLike,
            noise: SourceKind::White,
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, range: [f64; 2]) -> f64 {
    if range[1] > range[0] {
        rng.random_range(range[0]..range[1])
    } else {
        range[0]
    }
}

fn alternating_mask(rng: &mut ChaCha8Rng, spec: &RandomSceneSpec) -> Vec<Segment> {
    let mut segments = Vec::new();
    let mut active = rng.random_bool(0.5);
    let mut t = 0.0;
    while t < spec.duration_s {
        let len = uniform(rng, spec.mask_segment_range_s);
        if active {
            segments.push(Segment {
                start_s: t,
                end_s: (t + len).min(spec.duration_s),
            });
        }
        active = !active;
        t += len;
    }
    if segments.is_empty() {
        segments.push(Segment {
            start_s: 0.0,
            end_s: spec.duration_s,
        });
    }
    segments
}

fn draw_config(rng: &mut ChaCha8Rng, seed: u64, pool: &IrPool, spec: &RandomSceneSpec) -> SceneConfig {
    let a = rng.random_range(0..pool.len());
    let change = rng.random_bool(spec.change_probability.clamp(0.0, 1.0));
    let (ir_b, change_time_s, fade_duration_s) = if change {
        let b = if pool.len() > 1 {
            let b = rng.random_range(0..pool.len() - 1);
            if b >= a {
                b + 1
            } else {
                b
            }
        } else {
            a
        };
        let t = uniform(rng, spec.change_range_s);
        let fade = uniform(rng, [0.0, spec.max_fade_s]);
        (Some(pool.get(b).to_vec()), Some(t), fade)
    } else {
        (None, None, 0.0)
    };
    let p = spec.mask_probability.clamp(0.0, 1.0);
    let far_end = rng.random_bool(p).then(|| alternating_mask(rng, spec));
    let near_end = rng.random_bool(p).then(|| alternating_mask(rng, spec));
    SceneConfig {
        duration_s: spec.duration_s,
        sample_rate: spec.sample_rate,
        ir_a: pool.get(a).to_vec(),
        ir_b,
        change_time_s,
        fade_duration_s,
        ser_db: Some(uniform(rng, spec.ser_range_db)),
        senr_db: Some(uniform(rng, spec.senr_range_db)),
        masking: Masking { far_end, near_end },
        rng_seed: seed,
    }
}

/// Draws only the scene parameters for `seed`; identical to the configuration
/// embedded in [`sample_random_scene`] for the same inputs.
pub fn sample_random_config(seed: u64, pool: &IrPool, spec: &RandomSceneSpec) -> SceneConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    draw_config(&mut rng, seed, pool, spec)
}

pub fn sample_random_scene(seed: u64, pool: &IrPool, spec: &RandomSceneSpec) -> Result<Scene> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = draw_config(&mut rng, seed, pool, spec);
    let len = cfg.num_samples();
    let sr = cfg.sample_rate;
    let u = spec.far_end.generate(&mut rng, len, sr)?;
    let s = spec.near_end.generate(&mut rng, len, sr)?;
    let n = spec.noise.generate(&mut rng, len, sr)?;
    mix_scene(&u, &s, &n, &cfg)
}

/// Renders a fixed scene configuration with fresh source signals drawn from
/// `seed`. The returned scene carries `seed` as its `rng_seed`.
pub fn render_template(
    template: &SceneConfig,
    far_end: &SourceKind,
    near_end: &SourceKind,
    noise: &SourceKind,
    seed: u64,
) -> Result<Scene> {
    let mut cfg = template.clone();
    cfg.rng_seed = seed;
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = cfg.num_samples();
    let sr = cfg.sample_rate;
    let u = far_end.generate(&mut rng, len, sr)?;
    let s = near_end.generate(&mut rng, len, sr)?;
    let n = noise.generate(&mut rng, len, sr)?;
    mix_scene(&u, &s, &n, &cfg)
}
