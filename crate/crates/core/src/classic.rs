//! Model-based and oracle step-size controllers.
//!
//! All step sizes are normalized by the recursive loudspeaker power
//! `ψUU = λ·ψUU + (1-λ)·‖u‖²`, where `‖u‖²` is the energy of a band's tap line.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::control::{Adaptation, AdaptationController, FrameContext, PrepareContext};
use crate::ctf::{CtfFilterState, StepSizeField};
use crate::error::{Error, Result};

pub const LAMBDA_U: f64 = 0.9;
pub const ERROR_SMOOTHING: f64 = 0.5;
pub const DEFAULT_REG: f64 = 1e-3;
/// Default cap on Kalman step sizes, equal to the inverse of the learned
/// controllers' regularizer.
pub const KALMAN_MAX_STEP: f64 = 1e3;

/// `λ·prev + (1-λ)·value`.
pub fn recursive_average(prev: f64, value: f64, lambda: f64) -> f64 {
    lambda * prev + (1.0 - lambda) * value
}

fn check_smoothing(name: &str, lambda: f64) -> Result<()> {
    if (0.0..1.0).contains(&lambda) {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must lie in [0, 1), got {lambda}")))
    }
}

fn check_nonneg(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be finite and nonnegative, got {v}")))
    }
}

/// Per-band recursive power estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerEstimates {
    pub psi_uu: Vec<f64>,
    pub psi_ee: Vec<f64>,
    pub psi_zz: Vec<f64>,
    pub lambda_u: f64,
    /// Smoothing of both the error and the interference power.
    pub lambda_e: f64,
    /// Most recent `‖u‖²` per band.
    pub last_uu: Vec<f64>,
}

impl PowerEstimates {
    pub fn new(num_bands: usize, lambda_u: f64, lambda_e: f64) -> Result<Self> {
        check_smoothing("lambda_u", lambda_u)?;
        check_smoothing("lambda_e", lambda_e)?;
        Ok(Self {
            psi_uu: vec![0.0; num_bands],
            psi_ee: vec![0.0; num_bands],
            psi_zz: vec![0.0; num_bands],
            lambda_u,
            lambda_e,
            last_uu: vec![0.0; num_bands],
        })
    }

    pub fn num_bands(&self) -> usize {
        self.psi_uu.len()
    }

    /// Feeds the tap-line energy `‖u‖²` of every band.
    pub fn update_far_end(&mut self, filter: &CtfFilterState) {
        for (f, (p, last)) in self.psi_uu.iter_mut().zip(&mut self.last_uu).enumerate() {
            *last = filter.tap_energy(f);
            *p = recursive_average(*p, *last, self.lambda_u);
        }
    }

    pub fn update_far_end_energy(&mut self, energy: &[f64]) {
        for ((p, last), &u) in self.psi_uu.iter_mut().zip(&mut self.last_uu).zip(energy) {
            *last = u;
            *p = recursive_average(*p, u, self.lambda_u);
        }
    }

    /// `max(ψUU, ‖u‖²)`. A full NLMS step normalized by the lagging average
    /// alone overshoots at far-end onsets and right after initialization.
    pub fn guarded_psi_uu(&self) -> Vec<f64> {
        self.psi_uu.iter().zip(&self.last_uu).map(|(&p, &u)| p.max(u)).collect()
    }

    /// `ψUU`, guarded when requested.
    pub fn loudspeaker_power(&self, guard: bool) -> Vec<f64> {
        if guard {
            self.guarded_psi_uu()
        } else {
            self.psi_uu.clone()
        }
    }

    pub fn update_error(&mut self, error: &[Complex64]) {
        for (p, e) in self.psi_ee.iter_mut().zip(error) {
            *p = recursive_average(*p, e.norm_sqr(), self.lambda_e);
        }
    }

    pub fn update_interference(&mut self, z: &[Complex64]) {
        for (p, v) in self.psi_zz.iter_mut().zip(z) {
            *p = recursive_average(*p, v.norm_sqr(), self.lambda_e);
        }
    }

    /// Loudspeaker and error power update for one frame.
    pub fn update_power(&mut self, filter: &CtfFilterState, error: &[Complex64]) {
        self.update_far_end(filter);
        self.update_error(error);
    }
}

/// Stall-or-adapt NLMS: `μ = m / (ψUU + reg)` on every tap, `m ∈ {0, 1}`.
pub fn nlms_stall_or_adapt(psi_uu: &[f64], adapt: bool, reg: f64, taps: usize) -> Result<StepSizeField> {
    let m = if adapt { 1.0 } else { 0.0 };
    let mu: Vec<f64> = psi_uu.iter().map(|&p| m / (p + reg)).collect();
    StepSizeField::from_bands(&mu, taps)
}

/// Error-power-aware NLMS: `μ = m / (ψUU + ψEE + reg)`.
pub fn nlms_error_aware(
    psi_uu: &[f64],
    psi_ee: &[f64],
    step: f64,
    reg: f64,
    taps: usize,
) -> Result<StepSizeField> {
    if psi_uu.len() != psi_ee.len() {
        return Err(Error::dim("error power bands", psi_uu.len(), psi_ee.len()));
    }
    let mu: Vec<f64> = psi_uu
        .iter()
        .zip(psi_ee)
        .map(|(&u, &e)| step / (u + e + reg))
        .collect();
    StepSizeField::from_bands(&mu, taps)
}

/// Minimum-system-distance NLMS: `μ = P / (P + ψZZ) / (ψUU + reg)` with
/// `P` the misalignment output power. A band with `P = ψZZ = 0` gets `μ = 0`.
pub fn nlms_min_system_distance(
    misalignment: &[f64],
    psi_zz: &[f64],
    psi_uu: &[f64],
    reg: f64,
    taps: usize,
) -> Result<StepSizeField> {
    if misalignment.len() != psi_uu.len() {
        return Err(Error::dim("misalignment bands", psi_uu.len(), misalignment.len()));
    }
    if psi_zz.len() != psi_uu.len() {
        return Err(Error::dim("interference power bands", psi_uu.len(), psi_zz.len()));
    }
    let mu: Vec<f64> = misalignment
        .iter()
        .zip(psi_zz)
        .zip(psi_uu)
        .map(|((&p, &z), &u)| {
            let ratio = if p + z > 0.0 { p / (p + z) } else { 0.0 };
            ratio / (u + reg)
        })
        .collect();
    StepSizeField::from_bands(&mu, taps)
}

/// Kalman step size of one band:
/// `μ_l = Ψ_l / (Σ_l Ψ_l·|u_l|² + ψZZ + reg)`.
pub fn kalman_band_step(psi_hh: &[f64], taps: &[Complex64], psi_zz: f64, reg: f64) -> Vec<f64> {
    let denom: f64 = psi_hh
        .iter()
        .zip(taps)
        .map(|(p, u)| p * u.norm_sqr())
        .sum::<f64>()
        + psi_zz
        + reg;
    psi_hh
        .iter()
        .map(|&p| if p == 0.0 { 0.0 } else { p / denom })
        .collect()
}

/// Geigel-style double-talk detector on time-domain frame blocks: flags
/// double talk while `max|y| > threshold·max|u|` over the last
/// `window_frames` blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct GeigelDetector {
    pub threshold: f64,
    pub window_frames: usize,
    history: VecDeque<(f64, f64)>,
}

impl GeigelDetector {
    pub fn new(threshold: f64, window_frames: usize) -> Result<Self> {
        check_nonneg("detector threshold", threshold)?;
        if window_frames == 0 {
            return Err(Error::Config("detector window must span at least one frame".into()));
        }
        Ok(Self {
            threshold,
            window_frames,
            history: VecDeque::with_capacity(window_frames),
        })
    }

    pub fn reset(&mut self) {
        self.history.clear();
    }

    /// Returns `true` when double talk is detected.
    pub fn observe(&mut self, far_end: &[f64], mic: &[f64]) -> bool {
        let peak = |x: &[f64]| x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if self.history.len() == self.window_frames {
            self.history.pop_front();
        }
        self.history.push_back((peak(far_end), peak(mic)));
        let (u, y) = self
            .history
            .iter()
            .fold((0.0f64, 0.0f64), |(a, b), &(u, y)| (a.max(u), b.max(y)));
        y > self.threshold * u
    }
}

/// Variance state of the diagonal CTF Kalman filter.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    num_bands: usize,
    taps: usize,
    /// `Ψ^HH`, band-major.
    psi_hh: Vec<f64>,
    /// Smoothed `|h_l|²` driving the process noise.
    coeff_power: Vec<f64>,
    pub params: KalmanParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KalmanParams {
    /// State-transition factor `A`.
    pub transition: f64,
    pub initial_variance: f64,
    /// Floor on the process-noise power.
    pub min_process_noise: f64,
    pub reg: f64,
    /// Smoothing of the squared coefficient magnitudes.
    pub coeff_smoothing: f64,
    /// Smoothing of the interference power estimate.
    pub lambda_z: f64,
    /// Upper limit on each per-tap step size. Only reached when far-end and
    /// interference power both vanish while a variance exceeds `reg·max_step`.
    pub max_step: f64,
}

impl Default for KalmanParams {
    fn default() -> Self {
        Self::blind()
    }
}

impl KalmanParams {
    pub fn blind() -> Self {
        Self {
            transition: 0.99,
            initial_variance: 1.0,
            min_process_noise: 1e-3,
            reg: 1e-3,
            coeff_smoothing: 0.99,
            lambda_z: ERROR_SMOOTHING,
            max_step: KALMAN_MAX_STEP,
        }
    }

    pub fn oracle_interference() -> Self {
        Self {
            transition: 0.999,
            initial_variance: 0.1,
            min_process_noise: 1e-4,
            reg: 1.0,
            coeff_smoothing: 0.99,
            lambda_z: ERROR_SMOOTHING,
            max_step: KALMAN_MAX_STEP,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.transition > 0.0 && self.transition <= 1.0) {
            return Err(Error::Config(format!(
                "transition factor must lie in (0, 1], got {}",
                self.transition
            )));
        }
        check_nonneg("initial_variance", self.initial_variance)?;
        check_nonneg("min_process_noise", self.min_process_noise)?;
        check_nonneg("reg", self.reg)?;
        check_smoothing("coeff_smoothing", self.coeff_smoothing)?;
        check_smoothing("lambda_z", self.lambda_z)?;
        if !(self.max_step > 0.0) {
            return Err(Error::Config(format!("max_step must be positive, got {}", self.max_step)));
        }
        Ok(())
    }
}

impl KalmanState {
    pub fn new(num_bands: usize, taps: usize, params: KalmanParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            num_bands,
            taps,
            psi_hh: vec![params.initial_variance; num_bands * taps],
            coeff_power: vec![0.0; num_bands * taps],
            params,
        })
    }

    pub fn psi_hh(&self) -> &[f64] {
        &self.psi_hh
    }

    pub fn set_psi_hh(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.psi_hh.len() {
            return Err(Error::dim("filter variances", self.psi_hh.len(), values.len()));
        }
        self.psi_hh.copy_from_slice(values);
        Ok(())
    }

    /// Step sizes from the current variances, followed by the correction
    /// `Ψ ← (1 - μ_l|u_l|²)·Ψ` and the prediction
    /// `Ψ ← A²·Ψ + max((1-A²)·S_l, floor)` where `S_l` is the smoothed `|h_l|²`.
    pub fn step(&mut self, filter: &CtfFilterState, psi_zz: &[f64]) -> Result<StepSizeField> {
        if filter.num_bands() != self.num_bands || filter.taps() != self.taps {
            return Err(Error::dim(
                "Kalman state shape",
                self.num_bands * self.taps,
                filter.num_bands() * filter.taps(),
            ));
        }
        if psi_zz.len() != self.num_bands {
            return Err(Error::dim("interference power bands", self.num_bands, psi_zz.len()));
        }
        let p = self.params;
        let a2 = p.transition * p.transition;
        let mut mu = Vec::with_capacity(self.psi_hh.len());
        for f in 0..self.num_bands {
            let range = f * self.taps..(f + 1) * self.taps;
            let u = filter.band_taps(f);
            let h = filter.band_coeffs(f);
            let mut band_mu = kalman_band_step(&self.psi_hh[range.clone()], u, psi_zz[f], p.reg);
            band_mu.iter_mut().for_each(|m| *m = m.min(p.max_step));
            for (l, i) in range.enumerate() {
                let mut psi = (1.0 - band_mu[l] * u[l].norm_sqr()) * self.psi_hh[i];
                if psi < 0.0 {
                    log::warn!("negative filter variance {psi} clamped in band {f}, tap {l}");
                    psi = 0.0;
                }
                self.coeff_power[i] = recursive_average(self.coeff_power[i], h[l].norm_sqr(), p.coeff_smoothing);
                let process = ((1.0 - a2) * self.coeff_power[i]).max(p.min_process_noise);
                self.psi_hh[i] = a2 * psi + process;
            }
            mu.extend(band_mu);
        }
        StepSizeField::new(self.num_bands, self.taps, mu)
    }
}

/// Per-band least-squares CTF fit of `d` onto the far-end tap lines over the
/// frames in `range`. Returns band-major coefficients.
pub fn least_squares_ctf(
    far_end: &[crate::spectral::SpectralFrame],
    echo: &[crate::spectral::SpectralFrame],
    taps: usize,
    range: std::ops::Range<usize>,
    ridge: f64,
) -> Result<Vec<Complex64>> {
    if far_end.len() != echo.len() {
        return Err(Error::dim("least-squares frames", far_end.len(), echo.len()));
    }
    let bands = far_end.first().map_or(0, |f| f.bins.len());
    let zero = Complex64::new(0.0, 0.0);
    let mut out = vec![zero; bands * taps];
    if range.is_empty() {
        return Ok(out);
    }
    let tap_line = |t: usize, f: usize| -> Vec<Complex64> {
        (0..taps)
            .map(|l| if t >= l { far_end[t - l].bins[f] } else { zero })
            .collect()
    };
    for f in 0..bands {
        let mut a = DMatrix::<Complex64>::zeros(taps, taps);
        let mut b = DVector::<Complex64>::zeros(taps);
        for t in range.clone() {
            let u = tap_line(t, f);
            let d = echo[t].bins[f];
            for i in 0..taps {
                let cu = u[i].conj();
                b[i] += cu * d;
                for j in 0..taps {
                    a[(i, j)] += cu * u[j];
                }
            }
        }
        let trace: f64 = (0..taps).map(|i| a[(i, i)].re).sum();
        let load = ridge * (trace / taps as f64) + f64::MIN_POSITIVE;
        for i in 0..taps {
            a[(i, i)] += load;
        }
        if let Some(h) = a.lu().solve(&b) {
            out[f * taps..(f + 1) * taps].copy_from_slice(h.as_slice());
        }
    }
    Ok(out)
}

fn missing_truth() -> Error {
    Error::MissingOracle("controller needs scene ground truth")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StallOrAdaptParams {
    pub lambda_u: f64,
    pub threshold: f64,
    pub window_frames: usize,
    pub reg: f64,
    /// Normalize by `max(ψUU, ‖u‖²)` instead of `ψUU`.
    pub onset_guard: bool,
}

impl Default for StallOrAdaptParams {
    fn default() -> Self {
        Self {
            lambda_u: LAMBDA_U,
            threshold: 0.5,
            window_frames: 2,
            reg: DEFAULT_REG,
            onset_guard: true,
        }
    }
}

/// Binary NLMS gated by a Geigel double-talk detector.
#[derive(Debug, Clone)]
pub struct StallOrAdaptNlms {
    pub params: StallOrAdaptParams,
    power: Option<PowerEstimates>,
    detector: Option<GeigelDetector>,
    taps: usize,
}

impl StallOrAdaptNlms {
    pub fn new(params: StallOrAdaptParams) -> Self {
        Self {
            params,
            power: None,
            detector: None,
            taps: 0,
        }
    }
}

impl Default for StallOrAdaptNlms {
    fn default() -> Self {
        Self::new(StallOrAdaptParams::default())
    }
}

fn not_reset() -> Error {
    Error::Config("controller used before reset".into())
}

impl AdaptationController for StallOrAdaptNlms {
    fn name(&self) -> String {
        "stall-or-adapt".into()
    }

    fn reset(&mut self, num_bands: usize, taps: usize) -> Result<()> {
        check_nonneg("reg", self.params.reg)?;
        self.power = Some(PowerEstimates::new(num_bands, self.params.lambda_u, ERROR_SMOOTHING)?);
        self.detector = Some(GeigelDetector::new(self.params.threshold, self.params.window_frames)?);
        self.taps = taps;
        Ok(())
    }

    fn adapt(&mut self, frame: &FrameContext<'_>) -> Result<Adaptation> {
        let power = self.power.as_mut().ok_or_else(not_reset)?;
        let detector = self.detector.as_mut().ok_or_else(not_reset)?;
        power.update_far_end(frame.filter);
        let double_talk = detector.observe(frame.far_end_block, frame.mic_block);
        let psi_uu = power.loudspeaker_power(self.params.onset_guard);
        let step = nlms_stall_or_adapt(&psi_uu, !double_talk, self.params.reg, self.taps)?;
        Ok(Adaptation::step(step))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ErrorAwareParams {
    pub step: f64,
    pub lambda_u: f64,
    pub lambda_e: f64,
    pub reg: f64,
}

impl Default for ErrorAwareParams {
    fn default() -> Self {
        Self {
            step: 0.2,
            lambda_u: LAMBDA_U,
            lambda_e: ERROR_SMOOTHING,
            reg: DEFAULT_REG,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ErrorAwareNlms {
    pub params: ErrorAwareParams,
    power: Option<PowerEstimates>,
    taps: usize,
}

impl ErrorAwareNlms {
    pub fn new(params: ErrorAwareParams) -> Self {
        Self {
            params,
            power: None,
            taps: 0,
        }
    }
}

impl AdaptationController for ErrorAwareNlms {
    fn name(&self) -> String {
        "ea-nlms".into()
    }

    fn reset(&mut self, num_bands: usize, taps: usize) -> Result<()> {
        check_nonneg("step", self.params.step)?;
        check_nonneg("reg", self.params.reg)?;
        self.power = Some(PowerEstimates::new(num_bands, self.params.lambda_u, self.params.lambda_e)?);
        self.taps = taps;
        Ok(())
    }

    fn adapt(&mut self, frame: &FrameContext<'_>) -> Result<Adaptation> {
        let power = self.power.as_mut().ok_or_else(not_reset)?;
        power.update_power(frame.filter, frame.error);
        let step = nlms_error_aware(&power.psi_uu, &power.psi_ee, self.params.step, self.params.reg, self.taps)?;
        Ok(Adaptation::step(step))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MinSystemDistanceParams {
    pub lambda_u: f64,
    pub lambda_z: f64,
    /// Smoothing of the misalignment output power.
    pub misalignment_smoothing: f64,
    pub reg: f64,
    /// Relative diagonal loading of the least-squares fit.
    pub ridge: f64,
    /// Normalize by `max(ψUU, ‖u‖²)` instead of `ψUU`.
    pub onset_guard: bool,
}

impl Default for MinSystemDistanceParams {
    fn default() -> Self {
        Self {
            lambda_u: LAMBDA_U,
            lambda_z: ERROR_SMOOTHING,
            misalignment_smoothing: 0.9,
            reg: DEFAULT_REG,
            ridge: 1e-6,
            onset_guard: true,
        }
    }
}

/// Oracle NLMS using the least-squares optimal filter of each stationary
/// echo-path segment and the true interference power.
#[derive(Debug, Clone, Default)]
pub struct MinSystemDistanceNlms {
    pub params: MinSystemDistanceParams,
    power: Option<PowerEstimates>,
    misalignment: Vec<f64>,
    optimal: Vec<Vec<Complex64>>,
    segment_of: Vec<usize>,
    taps: usize,
}

impl MinSystemDistanceNlms {
    pub fn new(params: MinSystemDistanceParams) -> Self {
        Self {
            params,
            ..Default::default()
        }
    }
}

impl AdaptationController for MinSystemDistanceNlms {
    fn name(&self) -> String {
        "msd-nlms".into()
    }

    fn reset(&mut self, num_bands: usize, taps: usize) -> Result<()> {
        check_smoothing("misalignment_smoothing", self.params.misalignment_smoothing)?;
        check_nonneg("reg", self.params.reg)?;
        check_nonneg("ridge", self.params.ridge)?;
        self.power = Some(PowerEstimates::new(num_bands, self.params.lambda_u, self.params.lambda_z)?);
        self.misalignment = vec![0.0; num_bands];
        self.optimal.clear();
        self.segment_of.clear();
        self.taps = taps;
        Ok(())
    }

    fn prepare(&mut self, scene: &PrepareContext<'_>) -> Result<()> {
        let frames = scene.far_end.len();
        self.optimal = scene
            .stationary_segments
            .iter()
            .map(|r| least_squares_ctf(scene.far_end, scene.echo, scene.taps, r.clone(), self.params.ridge))
            .collect::<Result<_>>()?;
        let last = scene.stationary_segments.len().saturating_sub(1);
        self.segment_of = (0..frames)
            .map(|t| {
                scene
                    .stationary_segments
                    .iter()
                    .position(|r| t < r.end)
                    .unwrap_or(last)
            })
            .collect();
        Ok(())
    }

    fn adapt(&mut self, frame: &FrameContext<'_>) -> Result<Adaptation> {
        let truth = frame.truth.ok_or_else(missing_truth)?;
        let t = frame.index - 1;
        let segment = *self
            .segment_of
            .get(t)
            .ok_or(Error::MissingOracle("optimal filter not prepared for this frame"))?;
        let optimal = &self.optimal[segment];
        let power = self.power.as_mut().ok_or_else(not_reset)?;
        power.update_far_end(frame.filter);
        power.update_interference(truth.interference);
        let taps = self.taps;
        for (f, p) in self.misalignment.iter_mut().enumerate() {
            let h = frame.filter.band_coeffs(f);
            let u = frame.filter.band_taps(f);
            let out: Complex64 = (0..taps).map(|l| (h[l] - optimal[f * taps + l]) * u[l]).sum();
            *p = recursive_average(*p, out.norm_sqr(), self.params.misalignment_smoothing);
        }
        let psi_uu = power.loudspeaker_power(self.params.onset_guard);
        let step = nlms_min_system_distance(&self.misalignment, &power.psi_zz, &psi_uu, self.params.reg, taps)?;
        Ok(Adaptation::step(step))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InterferenceSource {
    /// Recursive average of `|e|²`.
    Error,
    /// Recursive average of the true `|s + n|²`.
    Oracle,
}

/// Diagonal CTF Kalman step-size control.
#[derive(Debug, Clone)]
pub struct KalmanController {
    pub params: KalmanParams,
    pub interference: InterferenceSource,
    state: Option<KalmanState>,
    psi_zz: Vec<f64>,
}

impl KalmanController {
    pub fn new(params: KalmanParams, interference: InterferenceSource) -> Self {
        Self {
            params,
            interference,
            state: None,
            psi_zz: Vec::new(),
        }
    }

    pub fn blind() -> Self {
        Self::new(KalmanParams::blind(), InterferenceSource::Error)
    }

    pub fn oracle_interference() -> Self {
        Self::new(KalmanParams::oracle_interference(), InterferenceSource::Oracle)
    }

    pub fn state(&self) -> Option<&KalmanState> {
        self.state.as_ref()
    }
}

impl AdaptationController for KalmanController {
    fn name(&self) -> String {
        match self.interference {
            InterferenceSource::Error => "kf".into(),
            InterferenceSource::Oracle => "oracle-ip-kf".into(),
        }
    }

    fn reset(&mut self, num_bands: usize, taps: usize) -> Result<()> {
        self.state = Some(KalmanState::new(num_bands, taps, self.params)?);
        self.psi_zz = vec![0.0; num_bands];
        Ok(())
    }

    fn adapt(&mut self, frame: &FrameContext<'_>) -> Result<Adaptation> {
        let z: &[Complex64] = match self.interference {
            InterferenceSource::Error => frame.error,
            InterferenceSource::Oracle => frame.truth.ok_or_else(missing_truth)?.interference,
        };
        for (p, v) in self.psi_zz.iter_mut().zip(z) {
            *p = recursive_average(*p, v.norm_sqr(), self.params.lambda_z);
        }
        let state = self.state.as_mut().ok_or_else(not_reset)?;
        Ok(Adaptation::step(state.step(frame.filter, &self.psi_zz)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleGradParams {
    pub step: f64,
    pub lambda_u: f64,
    pub reg: f64,
}

impl Default for OracleGradParams {
    fn default() -> Self {
        Self {
            step: 0.2,
            lambda_u: LAMBDA_U,
            reg: DEFAULT_REG,
        }
    }
}

/// NLMS driven by the true echo error `d - d̂` instead of `e`.
#[derive(Debug, Clone, Default)]
pub struct OracleGradNlms {
    pub params: OracleGradParams,
    power: Option<PowerEstimates>,
    taps: usize,
}

impl OracleGradNlms {
    pub fn new(params: OracleGradParams) -> Self {
        Self {
            params,
            power: None,
            taps: 0,
        }
    }
}

impl AdaptationController for OracleGradNlms {
    fn name(&self) -> String {
        "oracle-grad-nlms".into()
    }

    fn reset(&mut self, num_bands: usize, taps: usize) -> Result<()> {
        check_nonneg("step", self.params.step)?;
        check_nonneg("reg", self.params.reg)?;
        self.power = Some(PowerEstimates::new(num_bands, self.params.lambda_u, ERROR_SMOOTHING)?);
        self.taps = taps;
        Ok(())
    }

    fn adapt(&mut self, frame: &FrameContext<'_>) -> Result<Adaptation> {
        let truth = frame.truth.ok_or_else(missing_truth)?;
        let power = self.power.as_mut().ok_or_else(not_reset)?;
        power.update_far_end(frame.filter);
        let mu: Vec<f64> = power
            .psi_uu
            .iter()
            .map(|&p| self.params.step / (p + self.params.reg))
            .collect();
        let mut adaptation = Adaptation::step(StepSizeField::from_bands(&mu, self.taps)?);
        adaptation.update_error = Some(
            truth
                .echo
                .iter()
                .zip(frame.echo_estimate)
                .map(|(d, h)| d - h)
                .collect(),
        );
        Ok(adaptation)
    }
}
