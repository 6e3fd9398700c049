//! Convolutive-transfer-function filter: per-band length-`L` FIR filtering of
//! the far-end spectrum across frames, plus the LMS coefficient update.
//!
//! Per band `f`: `d̂ = Σ_l h[l]·u[τ-l]`, `e = y - d̂`,
//! `h[l] ← h[l] + μ[l]·conj(u[τ-l])·e`.

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Filter coefficients and far-end tap lines for `F` bands of `L` taps.
/// Both are stored band-major, tap 0 holding the newest far-end value.
#[derive(Debug, Clone, PartialEq)]
pub struct CtfFilterState {
    num_bands: usize,
    taps: usize,
    coeffs: Vec<Complex64>,
    far_end: Vec<Complex64>,
}

impl CtfFilterState {
    pub fn new(num_bands: usize, taps: usize) -> Result<Self> {
        if num_bands == 0 || taps == 0 {
            return Err(Error::Config(format!(
                "filter needs at least one band and one tap, got {num_bands}x{taps}"
            )));
        }
        Ok(Self {
            num_bands,
            taps,
            coeffs: vec![ZERO; num_bands * taps],
            far_end: vec![ZERO; num_bands * taps],
        })
    }

    pub fn num_bands(&self) -> usize {
        self.num_bands
    }

    pub fn taps(&self) -> usize {
        self.taps
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn band_coeffs(&self, band: usize) -> &[Complex64] {
        &self.coeffs[band * self.taps..(band + 1) * self.taps]
    }

    /// Tap line `u[τ], u[τ-1], …, u[τ-L+1]` of one band.
    pub fn band_taps(&self, band: usize) -> &[Complex64] {
        &self.far_end[band * self.taps..(band + 1) * self.taps]
    }

    /// Squared norm of one band's tap line.
    pub fn tap_energy(&self, band: usize) -> f64 {
        self.band_taps(band).iter().map(|u| u.norm_sqr()).sum()
    }

    pub fn set_coeffs(&mut self, coeffs: &[Complex64]) -> Result<()> {
        if coeffs.len() != self.coeffs.len() {
            return Err(Error::dim("filter coefficients", self.coeffs.len(), coeffs.len()));
        }
        if let Some(i) = coeffs.iter().position(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::NonFinite {
                band: i / self.taps,
                tap: i % self.taps,
            });
        }
        self.coeffs.copy_from_slice(coeffs);
        Ok(())
    }

    /// Shifts every tap line by one frame and inserts the new far-end frame.
    pub fn push_far_end(&mut self, frame: &[Complex64]) -> Result<()> {
        self.check_bands("far-end frame", frame.len())?;
        for (taps, &u) in self.far_end.chunks_exact_mut(self.taps).zip(frame) {
            taps.copy_within(0..self.taps - 1, 1);
            taps[0] = u;
        }
        Ok(())
    }

    /// Echo estimate from the current (prior) coefficients and tap lines.
    pub fn predict_echo(&self) -> Vec<Complex64> {
        self.coeffs
            .chunks_exact(self.taps)
            .zip(self.far_end.chunks_exact(self.taps))
            .map(|(h, u)| h.iter().zip(u).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// LMS update with per-band, per-tap step sizes. On error the state is
    /// left untouched.
    pub fn lms_update(&mut self, error: &[Complex64], step: &StepSizeField) -> Result<()> {
        self.check_bands("error frame", error.len())?;
        if step.num_bands() != self.num_bands {
            return Err(Error::dim("step-size bands", self.num_bands, step.num_bands()));
        }
        if step.taps() != self.taps {
            return Err(Error::dim("step-size taps", self.taps, step.taps()));
        }
        let mut next = self.coeffs.clone();
        for (i, h) in next.iter_mut().enumerate() {
            let band = i / self.taps;
            let mu = step.values()[i];
            if !mu.is_finite() || mu < 0.0 {
                return Err(Error::NonFinite {
                    band,
                    tap: i % self.taps,
                });
            }
            *h += self.far_end[i].conj() * error[band] * mu;
            if !h.re.is_finite() || !h.im.is_finite() {
                return Err(Error::NonFinite {
                    band,
                    tap: i % self.taps,
                });
            }
        }
        self.coeffs = next;
        Ok(())
    }

    fn check_bands(&self, what: &str, got: usize) -> Result<()> {
        if got != self.num_bands {
            Err(Error::dim(what, self.num_bands, got))
        } else {
            Ok(())
        }
    }
}

/// `e = y - d̂`.
pub fn form_error(mic: &[Complex64], echo_estimate: &[Complex64]) -> Result<Vec<Complex64>> {
    if mic.len() != echo_estimate.len() {
        return Err(Error::dim("error formation", mic.len(), echo_estimate.len()));
    }
    Ok(mic.iter().zip(echo_estimate).map(|(y, d)| y - d).collect())
}

/// Nonnegative step sizes per band and tap, stored band-major.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSizeField {
    num_bands: usize,
    taps: usize,
    values: Vec<f64>,
}

impl StepSizeField {
    pub fn zeros(num_bands: usize, taps: usize) -> Self {
        Self {
            num_bands,
            taps,
            values: vec![0.0; num_bands * taps],
        }
    }

    /// Same step size for every tap of a band.
    pub fn from_bands(per_band: &[f64], taps: usize) -> Result<Self> {
        let values = per_band
            .iter()
            .flat_map(|&mu| std::iter::repeat_n(mu, taps))
            .collect();
        Self::new(per_band.len(), taps, values)
    }

    pub fn new(num_bands: usize, taps: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != num_bands * taps {
            return Err(Error::dim("step-size field", num_bands * taps, values.len()));
        }
        if let Some(i) = values.iter().position(|m| !m.is_finite() || *m < 0.0) {
            return Err(Error::NonFinite {
                band: i / taps,
                tap: i % taps,
            });
        }
        Ok(Self {
            num_bands,
            taps,
            values,
        })
    }

    pub fn num_bands(&self) -> usize {
        self.num_bands
    }

    pub fn taps(&self) -> usize {
        self.taps
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, band: usize, tap: usize) -> f64 {
        self.values[band * self.taps + tap]
    }

    pub fn band(&self, band: usize) -> &[f64] {
        &self.values[band * self.taps..(band + 1) * self.taps]
    }

    /// Tap-averaged step size of every band.
    pub fn band_means(&self) -> Vec<f64> {
        self.values
            .chunks_exact(self.taps)
            .map(|c| c.iter().sum::<f64>() / self.taps as f64)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_frame(rng: &mut ChaCha8Rng, n: usize) -> Vec<Complex64> {
        (0..n)
            .map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect()
    }

    #[test]
    fn zero_filter_predicts_zero() {
        let mut s = CtfFilterState::new(3, 4).unwrap();
        s.push_far_end(&[c(1.0, 2.0), c(3.0, 0.0), c(0.0, -1.0)]).unwrap();
        assert!(s.predict_echo().iter().all(|d| *d == ZERO));
    }

    #[test]
    fn identity_filter_passes_far_end() {
        let mut s = CtfFilterState::new(2, 1).unwrap();
        s.set_coeffs(&[c(1.0, 0.0), c(1.0, 0.0)]).unwrap();
        let u = [c(0.3, -0.2), c(-1.0, 4.0)];
        s.push_far_end(&u).unwrap();
        assert_eq!(s.predict_echo(), u.to_vec());
    }

    #[test]
    fn one_frame_delay_filter() {
        let mut s = CtfFilterState::new(1, 2).unwrap();
        s.set_coeffs(&[ZERO, c(1.0, 0.0)]).unwrap();
        let frames = [c(1.0, 1.0), c(2.0, -1.0), c(0.5, 0.5)];
        let mut prev = ZERO;
        for u in frames {
            s.push_far_end(&[u]).unwrap();
            assert_eq!(s.predict_echo()[0], prev);
            prev = u;
        }
    }

    #[test]
    fn band_mismatch_is_rejected() {
        let mut s = CtfFilterState::new(3, 2).unwrap();
        assert!(matches!(s.push_far_end(&[ZERO; 2]), Err(Error::Dimension { .. })));
        assert!(form_error(&[ZERO; 2], &[ZERO; 3]).is_err());
    }

    #[test]
    fn form_error_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y = random_frame(&mut rng, 16);
        let d = random_frame(&mut rng, 16);
        assert!(form_error(&y, &y).unwrap().iter().all(|e| *e == ZERO));
        assert_eq!(form_error(&y, &[ZERO; 16]).unwrap(), y);
        let e = form_error(&y, &d).unwrap();
        for k in 0..16 {
            assert!((e[k] + d[k] - y[k]).norm() < 1e-15);
        }
    }

    #[test]
    fn zero_step_keeps_filter() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut s = CtfFilterState::new(4, 3).unwrap();
        s.set_coeffs(&random_frame(&mut rng, 12)).unwrap();
        s.push_far_end(&random_frame(&mut rng, 4)).unwrap();
        let before = s.clone();
        s.lms_update(&random_frame(&mut rng, 4), &StepSizeField::zeros(4, 3))
            .unwrap();
        assert_eq!(s, before);
    }

    #[test]
    fn one_step_identification() {
        let mut s = CtfFilterState::new(1, 1).unwrap();
        s.push_far_end(&[c(1.0, 0.0)]).unwrap();
        let e = form_error(&[c(2.0, 0.0)], &s.predict_echo()).unwrap();
        assert_eq!(e[0], c(2.0, 0.0));
        s.lms_update(&e, &StepSizeField::from_bands(&[1.0], 1).unwrap())
            .unwrap();
        assert_eq!(s.coeffs()[0], c(2.0, 0.0));
    }

    #[test]
    fn update_uses_conjugate_tap() {
        let mut s = CtfFilterState::new(1, 1).unwrap();
        s.push_far_end(&[c(0.0, 1.0)]).unwrap();
        s.lms_update(&[c(1.0, 0.0)], &StepSizeField::from_bands(&[1.0], 1).unwrap())
            .unwrap();
        assert_eq!(s.coeffs()[0], c(0.0, -1.0));
    }

    #[test]
    fn non_finite_update_is_located_and_atomic() {
        let mut s = CtfFilterState::new(2, 2).unwrap();
        s.push_far_end(&[c(1.0, 0.0), c(1.0, 0.0)]).unwrap();
        let before = s.clone();
        let err = s
            .lms_update(
                &[c(1.0, 0.0), c(f64::INFINITY, 0.0)],
                &StepSizeField::from_bands(&[0.1, 0.1], 2).unwrap(),
            )
            .unwrap_err();
        assert!(matches!(err, Error::NonFinite { band: 1, tap: 0 }));
        assert_eq!(s, before);
    }

    #[test]
    fn negative_step_sizes_are_rejected() {
        assert!(StepSizeField::from_bands(&[0.1, -0.1], 2).is_err());
        assert!(StepSizeField::from_bands(&[f64::NAN], 2).is_err());
    }

    #[test]
    fn nlms_converges_on_single_tap_path() {
        // white far-end, true path h = 0.8 - 0.3j, noiseless
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h_true = c(0.8, -0.3);
        let mut s = CtfFilterState::new(1, 1).unwrap();
        let mut dist = Vec::new();
        for _ in 0..100 {
            let u = random_frame(&mut rng, 1);
            s.push_far_end(&u).unwrap();
            let e = form_error(&[h_true * u[0]], &s.predict_echo()).unwrap();
            let mu = 0.5 / s.tap_energy(0);
            s.lms_update(&e, &StepSizeField::from_bands(&[mu], 1).unwrap())
                .unwrap();
            dist.push((s.coeffs()[0] - h_true).norm());
        }
        for w in dist.windows(2) {
            assert!(w[1] <= w[0] + 1e-15);
        }
        assert!(dist[99] < 1e-6);
    }

    proptest::proptest! {
        #[test]
        fn prediction_matches_direct_convolution(seed in 0u64..10_000, taps in 1usize..9) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let bands = 5;
            let mut s = CtfFilterState::new(bands, taps).unwrap();
            s.set_coeffs(&random_frame(&mut rng, bands * taps)).unwrap();
            let history: Vec<Vec<Complex64>> = (0..12).map(|_| random_frame(&mut rng, bands)).collect();
            for (t, frame) in history.iter().enumerate() {
                s.push_far_end(frame).unwrap();
                let fast = s.predict_echo();
                for f in 0..bands {
                    let mut direct = ZERO;
                    for l in 0..taps {
                        if t >= l {
                            direct += s.band_coeffs(f)[l] * history[t - l][f];
                        }
                    }
                    proptest::prop_assert!((fast[f] - direct).norm() <= 1e-10);
                }
            }
        }

        #[test]
        fn small_step_contracts_error(seed in 0u64..10_000, frac in 0.01f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut s = CtfFilterState::new(1, 4).unwrap();
            s.set_coeffs(&random_frame(&mut rng, 4)).unwrap();
            for _ in 0..4 {
                s.push_far_end(&random_frame(&mut rng, 1)).unwrap();
            }
            let y = random_frame(&mut rng, 1);
            let e = form_error(&y, &s.predict_echo()).unwrap();
            let mu = frac / s.tap_energy(0);
            s.lms_update(&e, &StepSizeField::from_bands(&[mu], 4).unwrap()).unwrap();
            let e_post = form_error(&y, &s.predict_echo()).unwrap();
            proptest::prop_assert!(e_post[0].norm() <= e[0].norm() * (1.0 + 1e-12));
        }
    }
}
