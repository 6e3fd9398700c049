//! Interface between the canceller loop and step-size controllers.

use rustfft::num_complex::Complex64;

use crate::ctf::{CtfFilterState, StepSizeField};
use crate::error::Result;
use crate::neural::MaskPair;
use crate::spectral::SpectralFrame;

/// Ground truth available to oracle controllers for the current frame.
#[derive(Debug, Clone, Copy)]
pub struct FrameTruth<'a> {
    /// True echo `d`.
    pub echo: &'a [Complex64],
    /// Interference `z = s + n`.
    pub interference: &'a [Complex64],
}

/// Everything a controller may observe at frame `τ`, after the far-end frame
/// has been pushed and the prior-coefficient echo estimate formed.
#[derive(Debug, Clone, Copy)]
pub struct FrameContext<'a> {
    /// 1-based frame index.
    pub index: usize,
    pub filter: &'a CtfFilterState,
    pub far_end: &'a [Complex64],
    pub mic: &'a [Complex64],
    pub error: &'a [Complex64],
    pub echo_estimate: &'a [Complex64],
    /// Time-domain samples covered by this frame.
    pub far_end_block: &'a [f64],
    pub mic_block: &'a [f64],
    pub truth: Option<FrameTruth<'a>>,
}

/// Whole-scene view handed to controllers once before streaming starts.
#[derive(Debug, Clone, Copy)]
pub struct PrepareContext<'a> {
    pub far_end: &'a [SpectralFrame],
    pub echo: &'a [SpectralFrame],
    pub taps: usize,
    /// Frame indices (0-based) of the segments over which the echo path is
    /// stationary.
    pub stationary_segments: &'a [std::ops::Range<usize>],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adaptation {
    pub step_size: StepSizeField,
    /// Replaces the error signal in the coefficient update when set.
    pub update_error: Option<Vec<Complex64>>,
    pub masks: Option<MaskPair>,
    /// Flattened recurrent state after this frame, for tracing.
    pub state: Option<Vec<f64>>,
}

impl Adaptation {
    pub fn step(step_size: StepSizeField) -> Self {
        Self {
            step_size,
            update_error: None,
            masks: None,
            state: None,
        }
    }
}

pub trait AdaptationController: Send {
    fn name(&self) -> String;

    /// Clears all per-stream state for a filter of the given shape.
    fn reset(&mut self, num_bands: usize, taps: usize) -> Result<()>;

    /// Called once per scene after `reset` and before the first frame.
    fn prepare(&mut self, _scene: &PrepareContext<'_>) -> Result<()> {
        Ok(())
    }

    fn adapt(&mut self, frame: &FrameContext<'_>) -> Result<Adaptation>;

    /// Whether [`Adaptation::state`] carries a recurrent state.
    fn has_recurrent_state(&self) -> bool {
        false
    }
}

/// Never adapts; the filter keeps its initial coefficients.
#[derive(Debug, Default, Clone)]
pub struct FrozenController {
    shape: (usize, usize),
}

impl AdaptationController for FrozenController {
    fn name(&self) -> String {
        "frozen".into()
    }

    fn reset(&mut self, num_bands: usize, taps: usize) -> Result<()> {
        self.shape = (num_bands, taps);
        Ok(())
    }

    fn adapt(&mut self, _frame: &FrameContext<'_>) -> Result<Adaptation> {
        Ok(Adaptation::step(StepSizeField::zeros(self.shape.0, self.shape.1)))
    }
}
