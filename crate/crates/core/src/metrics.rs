//! ERLE, echo-to-interference ratio, training-loss forward values and
//! agglomerative clustering of recurrent state traces.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{SpectralFrame, StftConfig};

/// Value reported for perfect cancellation.
pub const ERLE_CAP_DB: f64 = 120.0;
pub const DELTA_LOSS: f64 = 1e-12;
/// Floor applied to smoothed powers in the EIR.
pub const EIR_FLOOR: f64 = 1e-12;

fn check_len(what: &str, a: usize, b: usize) -> Result<()> {
    if a != b {
        Err(Error::dim(what, a, b))
    } else {
        Ok(())
    }
}

/// `10·log10(Σd² / Σ(d - d̂)²)`, capped at [`ERLE_CAP_DB`].
pub fn erle(d: &[f64], d_hat: &[f64]) -> Result<f64> {
    check_len("ERLE signals", d.len(), d_hat.len())?;
    let echo: f64 = d.iter().map(|v| v * v).sum();
    if echo == 0.0 {
        return Err(Error::UndefinedMetric("echo signal is identically zero"));
    }
    let residual: f64 = d.iter().zip(d_hat).map(|(a, b)| (a - b) * (a - b)).sum();
    if residual == 0.0 {
        return Ok(ERLE_CAP_DB);
    }
    Ok((10.0 * (echo / residual).log10()).min(ERLE_CAP_DB))
}

/// ERLE of consecutive `segment`-sample blocks; `None` where the echo is silent.
pub fn erle_segments(d: &[f64], d_hat: &[f64], segment: usize) -> Result<Vec<Option<f64>>> {
    check_len("ERLE signals", d.len(), d_hat.len())?;
    if segment == 0 {
        return Err(Error::Config("ERLE segment length must be positive".into()));
    }
    Ok(d.chunks(segment)
        .zip(d_hat.chunks(segment))
        .map(|(a, b)| erle(a, b).ok())
        .collect())
}

/// Per-frame, per-band echo-to-interference ratio in dB from recursively
/// smoothed powers `p ← λ·p + (1-λ)·|x|²`, both floored at [`EIR_FLOOR`].
pub fn eir(d: &[SpectralFrame], z: &[SpectralFrame], smoothing: f64) -> Result<Vec<Vec<f64>>> {
    check_len("EIR frames", d.len(), z.len())?;
    if !(0.0..1.0).contains(&smoothing) {
        return Err(Error::Config(format!("EIR smoothing must lie in [0, 1), got {smoothing}")));
    }
    let bands = d.first().map_or(0, SpectralFrame::len);
    let mut pd = vec![0.0; bands];
    let mut pz = vec![0.0; bands];
    let mut out = Vec::with_capacity(d.len());
    for (fd, fz) in d.iter().zip(z) {
        check_len("EIR bands", bands, fd.len())?;
        check_len("EIR bands", bands, fz.len())?;
        let row = (0..bands)
            .map(|f| {
                pd[f] = smoothing * pd[f] + (1.0 - smoothing) * fd.bins[f].norm_sqr();
                pz[f] = smoothing * pz[f] + (1.0 - smoothing) * fz.bins[f].norm_sqr();
                10.0 * (pd[f].max(EIR_FLOOR) / pz[f].max(EIR_FLOOR)).log10()
            })
            .collect();
        out.push(row);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub fd_mse: f64,
    pub td_mse: f64,
    pub fd_erle: f64,
    pub td_erle: f64,
}

fn frame_powers(d: &[SpectralFrame], d_hat: &[SpectralFrame]) -> Result<(f64, f64, usize)> {
    check_len("loss frames", d.len(), d_hat.len())?;
    let (mut echo, mut residual, mut count) = (0.0, 0.0, 0);
    for (a, b) in d.iter().zip(d_hat) {
        check_len("loss bands", a.len(), b.len())?;
        for (x, y) in a.bins.iter().zip(&b.bins) {
            echo += x.norm_sqr();
            residual += (x - y).norm_sqr();
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::UndefinedMetric("no frames"));
    }
    Ok((echo, residual, count))
}

fn sample_powers(d: &[f64], d_hat: &[f64]) -> Result<(f64, f64, usize)> {
    check_len("loss signals", d.len(), d_hat.len())?;
    if d.is_empty() {
        return Err(Error::UndefinedMetric("empty signal"));
    }
    let echo = d.iter().map(|v| v * v).sum();
    let residual = d.iter().zip(d_hat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((echo, residual, d.len()))
}

fn erle_loss(echo: f64, residual: f64, count: usize, delta: f64) -> f64 {
    let n = count as f64;
    -((delta + echo / n) / (delta + residual / n)).log10()
}

/// `(1/TF)·Σ|d - d̂|²`.
pub fn fd_mse(d: &[SpectralFrame], d_hat: &[SpectralFrame]) -> Result<f64> {
    let (_, r, n) = frame_powers(d, d_hat)?;
    Ok(r / n as f64)
}

/// `(1/K)·Σ(d - d̂)²`.
pub fn td_mse(d: &[f64], d_hat: &[f64]) -> Result<f64> {
    let (_, r, n) = sample_powers(d, d_hat)?;
    Ok(r / n as f64)
}

/// `-log10((δ + mean|d|²) / (δ + mean|d - d̂|²))` over all bins.
pub fn fd_erle_loss(d: &[SpectralFrame], d_hat: &[SpectralFrame], delta: f64) -> Result<f64> {
    let (e, r, n) = frame_powers(d, d_hat)?;
    Ok(erle_loss(e, r, n, delta))
}

/// `-log10((δ + mean d²) / (δ + mean (d - d̂)²))` over all samples.
pub fn td_erle_loss(d: &[f64], d_hat: &[f64], delta: f64) -> Result<f64> {
    let (e, r, n) = sample_powers(d, d_hat)?;
    Ok(erle_loss(e, r, n, delta))
}

pub fn losses(
    d: &[f64],
    d_hat: &[f64],
    d_frames: &[SpectralFrame],
    d_hat_frames: &[SpectralFrame],
    delta: f64,
) -> Result<LossValues> {
    Ok(LossValues {
        fd_mse: fd_mse(d_frames, d_hat_frames)?,
        td_mse: td_mse(d, d_hat)?,
        fd_erle: fd_erle_loss(d_frames, d_hat_frames, delta)?,
        td_erle: td_erle_loss(d, d_hat, delta)?,
    })
}

/// Constant `N·Σ_m w²[n - m·hop]` linking bin-weighted frame energies to
/// sample energy: for a signal that is zero within one frame span of both
/// edges, `Σ_τ one_sided_energy(X_τ) = parseval_scale · Σ x²`. Fails when the
/// squared window does not overlap-add to a constant.
pub fn parseval_scale(cfg: &StftConfig) -> Result<f64> {
    let w = cfg.analysis_window();
    let hop = cfg.hop();
    let sums: Vec<f64> = (0..hop)
        .map(|n| w.iter().skip(n).step_by(hop).map(|v| v * v).sum())
        .collect();
    let c = sums[0];
    if sums.iter().any(|s| (s - c).abs() > 1e-9 * c.abs().max(1.0)) {
        return Err(Error::Unsupported(
            "squared analysis window does not overlap-add to a constant".into(),
        ));
    }
    Ok(cfg.dft_length() as f64 * c)
}

/// Scalar summary of one canceller run against the true echo.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub erle_db: f64,
    pub final_erle_db: f64,
    pub segment_erle_db: Vec<Option<f64>>,
    pub losses: LossValues,
}

/// Metrics of a run: time-domain quantities over the trace's evaluation range,
/// frequency-domain losses over all frames.
pub fn evaluate_run(
    trace: &crate::canceller::RunTrace,
    echo: &[f64],
    echo_frames: &[SpectralFrame],
) -> Result<MetricReport> {
    let r: Range<usize> = trace.evaluation_range();
    if r.is_empty() || r.end > echo.len() {
        return Err(Error::UndefinedMetric("evaluation range is empty"));
    }
    let sr = trace.sample_rate as usize;
    Ok(MetricReport {
        erle_db: trace.erle_db(echo)?,
        final_erle_db: trace.final_erle_db(echo, 1.0)?,
        segment_erle_db: erle_segments(&echo[r.clone()], &trace.echo_estimate_time[r.clone()], sr)?,
        losses: losses(
            &echo[r.clone()],
            &trace.echo_estimate_time[r],
            echo_frames,
            &trace.echo_estimate,
            DELTA_LOSS,
        )?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Linkage {
    #[default]
    Average,
    Single,
    Complete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StateNormalization {
    #[default]
    None,
    /// Zero mean and unit variance per dimension (constant dimensions are
    /// only centered).
    Standardize,
}

/// One agglomeration step. Clusters are named by their smallest member index;
/// `b` is absorbed into `a` (`a < b`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub distance: f64,
}

pub fn city_block(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Bottom-up clustering with city-block distances and Lance-Williams linkage
/// updates. The closest pair merges first; ties go to the lexicographically
/// smallest `(a, b)`.
pub fn agglomerate(points: &[Vec<f64>], linkage: Linkage) -> Result<Vec<Merge>> {
    let n = points.len();
    if let Some(p) = points.first() {
        for q in points {
            check_len("state dimension", p.len(), q.len())?;
        }
    }
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = city_block(&points[i], &points[j]);
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    let mut size = vec![1usize; n];
    let mut active = vec![true; n];
    let mut nn = vec![usize::MAX; n];
    let mut nnd = vec![f64::INFINITY; n];
    let nearest = |i: usize, dist: &[f64], active: &[bool]| -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        for j in i + 1..n {
            if active[j] && dist[i * n + j] < best.1 {
                best = (j, dist[i * n + j]);
            }
        }
        best
    };
    for i in 0..n {
        (nn[i], nnd[i]) = nearest(i, &dist, &active);
    }
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    for _ in 1..n {
        let mut a = usize::MAX;
        for i in 0..n {
            if active[i] && nn[i] != usize::MAX && (a == usize::MAX || nnd[i] < nnd[a]) {
                a = i;
            }
        }
        let b = nn[a];
        merges.push(Merge {
            a,
            b,
            distance: nnd[a],
        });
        let (sa, sb) = (size[a] as f64, size[b] as f64);
        for k in 0..n {
            if !active[k] || k == a || k == b {
                continue;
            }
            let (dak, dbk) = (dist[a * n + k], dist[b * n + k]);
            let d = match linkage {
                Linkage::Average => (sa * dak + sb * dbk) / (sa + sb),
                Linkage::Single => dak.min(dbk),
                Linkage::Complete => dak.max(dbk),
            };
            dist[a * n + k] = d;
            dist[k * n + a] = d;
        }
        size[a] += size[b];
        active[b] = false;
        for k in 0..n {
            if !active[k] {
                continue;
            }
            if k == a || nn[k] == a || nn[k] == b {
                (nn[k], nnd[k]) = nearest(k, &dist, &active);
            } else if k < a {
                let d = dist[k * n + a];
                if d < nnd[k] || (d == nnd[k] && a < nn[k]) {
                    nn[k] = a;
                    nnd[k] = d;
                }
            }
        }
    }
    Ok(merges)
}

/// Cuts a merge sequence over `n` points at `k` clusters. Classes are
/// numbered from 1 in order of first appearance.
pub fn cut_dendrogram(n: usize, merges: &[Merge], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > n {
        return Err(Error::Config(format!("cannot cut {n} points into {k} clusters")));
    }
    let mut owner: Vec<usize> = (0..n).collect();
    for m in merges.iter().take(n - k) {
        for o in owner.iter_mut() {
            if *o == m.b {
                *o = m.a;
            }
        }
    }
    let mut labels = vec![0; n];
    let mut seen: Vec<usize> = Vec::new();
    for (i, o) in owner.iter().enumerate() {
        let class = match seen.iter().position(|s| s == o) {
            Some(p) => p,
            None => {
                seen.push(*o);
                seen.len() - 1
            }
        };
        labels[i] = class + 1;
    }
    Ok(labels)
}

pub fn normalize_states(states: &[Vec<f64>], mode: StateNormalization) -> Vec<Vec<f64>> {
    match mode {
        StateNormalization::None => states.to_vec(),
        StateNormalization::Standardize => {
            let n = states.len() as f64;
            let dim = states.first().map_or(0, Vec::len);
            let mean: Vec<f64> = (0..dim).map(|j| states.iter().map(|s| s[j]).sum::<f64>() / n).collect();
            let std: Vec<f64> = (0..dim)
                .map(|j| (states.iter().map(|s| (s[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt())
                .collect();
            states
                .iter()
                .map(|s| {
                    s.iter()
                        .enumerate()
                        .map(|(j, v)| {
                            let c = v - mean[j];
                            if std[j] > 0.0 {
                                c / std[j]
                            } else {
                                c
                            }
                        })
                        .collect()
                })
                .collect()
        }
    }
}

/// Per-frame class index (1-based) of recurrent state vectors.
pub fn cluster_gru_states(
    states: &[Vec<f64>],
    k: usize,
    linkage: Linkage,
    normalization: StateNormalization,
) -> Result<Vec<usize>> {
    if states.len() < k {
        return Err(Error::Config(format!(
            "{} frames cannot form {k} clusters",
            states.len()
        )));
    }
    let points = normalize_states(states, normalization);
    let merges = agglomerate(&points, linkage)?;
    cut_dendrogram(points.len(), &merges, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{one_sided_energy, Stft};
    use rustfft::num_complex::Complex64;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn frames(rng: &mut ChaCha8Rng, t: usize, f: usize) -> Vec<SpectralFrame> {
        (0..t)
            .map(|i| SpectralFrame {
                index: i + 1,
                bins: (0..f)
                    .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                    .collect(),
            })
            .collect()
    }

    #[test]
    fn erle_values() {
        let d = [1.0, -2.0, 3.0];
        assert_eq!(erle(&d, &[0.0; 3]).unwrap(), 0.0);
        assert_eq!(erle(&d, &d).unwrap(), ERLE_CAP_DB);
        let d_hat: Vec<f64> = d.iter().map(|v| v * 0.9).collect();
        assert!((erle(&d, &d_hat).unwrap() - 20.0).abs() < 1e-9);
        assert!(matches!(erle(&[0.0; 3], &d), Err(Error::UndefinedMetric(_))));
        assert!(erle(&d, &[0.0; 2]).is_err());
    }

    #[test]
    fn erle_segments_skip_silence() {
        let d = [1.0, 1.0, 0.0, 0.0, 2.0];
        let s = erle_segments(&d, &[0.0; 5], 2).unwrap();
        assert_eq!(s, vec![Some(0.0), None, Some(0.0)]);
    }

    #[test]
    fn eir_values() {
        let one = |v: f64| vec![SpectralFrame { index: 1, bins: vec![Complex64::new(v.sqrt(), 0.0)] }];
        assert!(eir(&one(2.0), &one(2.0), 0.0).unwrap()[0][0].abs() < 1e-12);
        assert!((eir(&one(10.0), &one(1.0), 0.0).unwrap()[0][0] - 10.0).abs() < 1e-12);
        let capped = eir(&one(1.0), &one(0.0), 0.0).unwrap()[0][0];
        assert!((capped - 120.0).abs() < 1e-9);
    }

    #[test]
    fn losses_at_exact_cancellation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
        let df = frames(&mut rng, 4, 5);
        let l = losses(&d, &d, &df, &df, DELTA_LOSS).unwrap();
        assert_eq!(l.fd_mse, 0.0);
        assert_eq!(l.td_mse, 0.0);
        let pd_t = d.iter().map(|v| v * v).sum::<f64>() / 64.0;
        assert!((l.td_erle + ((DELTA_LOSS + pd_t) / DELTA_LOSS).log10()).abs() < 1e-9);
        let pd_f = df.iter().flat_map(|f| &f.bins).map(|c| c.norm_sqr()).sum::<f64>() / 20.0;
        assert!((l.fd_erle + ((DELTA_LOSS + pd_f) / DELTA_LOSS).log10()).abs() < 1e-9);
        assert_eq!(td_erle_loss(&d, &[0.0; 64], DELTA_LOSS).unwrap(), 0.0);
    }

    #[test]
    fn fd_mse_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = frames(&mut rng, 7, 9);
        let b = frames(&mut rng, 7, 9);
        let mut sum = 0.0;
        for t in 0..7 {
            for f in 0..9 {
                let diff = a[t].bins[f] - b[t].bins[f];
                sum += diff.re * diff.re + diff.im * diff.im;
            }
        }
        let want = sum / 63.0;
        assert!((fd_mse(&a, &b).unwrap() - want).abs() <= 1e-12 * want);
    }

    proptest! {
        #[test]
        fn moving_toward_truth_never_hurts(seed in 0u64..1000, alpha in 0.01f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d: Vec<f64> = (0..50).map(|_| rng.random_range(-1.0..1.0)).collect();
            let h: Vec<f64> = (0..50).map(|_| rng.random_range(-1.0..1.0)).collect();
            let df = frames(&mut rng, 3, 4);
            let hf = frames(&mut rng, 3, 4);
            let mix = |a: &[f64], b: &[f64]| -> Vec<f64> {
                a.iter().zip(b).map(|(x, y)| (1.0 - alpha) * x + alpha * y).collect()
            };
            let h2 = mix(&h, &d);
            let hf2: Vec<SpectralFrame> = hf.iter().zip(&df).map(|(x, y)| SpectralFrame {
                index: x.index,
                bins: x.bins.iter().zip(&y.bins).map(|(p, q)| p * (1.0 - alpha) + q * alpha).collect(),
            }).collect();
            let before = losses(&d, &h, &df, &hf, DELTA_LOSS).unwrap();
            let after = losses(&d, &h2, &df, &hf2, DELTA_LOSS).unwrap();
            prop_assert!(after.fd_mse <= before.fd_mse);
            prop_assert!(after.td_mse <= before.td_mse);
            prop_assert!(after.fd_erle <= before.fd_erle);
            prop_assert!(after.td_erle <= before.td_erle);
        }
    }

    #[test]
    fn negated_td_erle_loss_is_tenth_of_erle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let d: Vec<f64> = (0..200).map(|_| rng.random_range(-1.0..1.0)).collect();
            let h: Vec<f64> = d.iter().map(|v| v + rng.random_range(-0.3..0.3)).collect();
            let e = erle(&d, &h).unwrap();
            let l = td_erle_loss(&d, &h, 0.0).unwrap();
            assert!((-10.0 * l - e).abs() <= 1e-9 * e.abs());
        }
    }

    #[test]
    fn weighted_frame_energy_matches_sample_energy() {
        let cfg = StftConfig::default();
        let stft = Stft::new(cfg.clone()).unwrap();
        let scale = parseval_scale(&cfg).unwrap();
        let expected = 512.0 * 4.0 * (0.54f64.powi(2) + 0.46f64.powi(2) / 2.0);
        assert!((scale - expected).abs() < 1e-9 * expected);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut x = vec![0.0; 512 * 10];
        for v in x[512..512 * 9].iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        let fd: f64 = stft.analyze(&x).unwrap().iter().map(|f| one_sided_energy(&f.bins, 512)).sum();
        let td: f64 = x.iter().map(|v| v * v).sum();
        assert!((fd - scale * td).abs() < 1e-9 * fd);
    }

    fn blob(rng: &mut ChaCha8Rng, center: f64, n: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..3).map(|_| center + rng.random_range(-0.1..0.1)).collect())
            .collect()
    }

    #[test]
    fn separated_clouds_are_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut pts = blob(&mut rng, 0.0, 10);
        pts.extend(blob(&mut rng, 10.0, 7));
        let labels = cluster_gru_states(&pts, 2, Linkage::Average, StateNormalization::None).unwrap();
        assert!(labels[..10].iter().all(|&l| l == 1));
        assert!(labels[10..].iter().all(|&l| l == 2));
    }

    #[test]
    fn degenerate_and_tiny_inputs() {
        let same = vec![vec![1.0, 2.0]; 5];
        let a = cluster_gru_states(&same, 2, Linkage::Average, StateNormalization::None).unwrap();
        assert_eq!(a, cluster_gru_states(&same, 2, Linkage::Average, StateNormalization::None).unwrap());
        assert_eq!(a, vec![1, 1, 1, 1, 2]);
        let two = vec![vec![0.0], vec![1.0]];
        assert_eq!(cluster_gru_states(&two, 2, Linkage::Average, StateNormalization::None).unwrap(), vec![1, 2]);
        assert!(cluster_gru_states(&two[..1], 2, Linkage::Average, StateNormalization::None).is_err());
    }

    #[test]
    fn clustering_is_permutation_stable() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let pts: Vec<Vec<f64>> = (0..30).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let base = cluster_gru_states(&pts, 3, Linkage::Average, StateNormalization::None).unwrap();
        let mut order: Vec<usize> = (0..30).collect();
        order.shuffle(&mut rng);
        let shuffled: Vec<Vec<f64>> = order.iter().map(|&i| pts[i].clone()).collect();
        let labels = cluster_gru_states(&shuffled, 3, Linkage::Average, StateNormalization::None).unwrap();
        let mut back = vec![0; 30];
        for (pos, &i) in order.iter().enumerate() {
            back[i] = labels[pos];
        }
        for i in 0..30 {
            for j in 0..30 {
                assert_eq!(base[i] == base[j], back[i] == back[j]);
            }
        }
    }

    #[test]
    fn standardization_centers_each_dimension() {
        let s = normalize_states(&[vec![1.0, 5.0], vec![3.0, 5.0]], StateNormalization::Standardize);
        assert_eq!(s, vec![vec![-1.0, 0.0], vec![1.0, 0.0]]);
    }
}
