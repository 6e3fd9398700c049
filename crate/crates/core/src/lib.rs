//! STFT-domain linear acoustic echo cancellation with pluggable step-size
//! control.

pub mod canceller;
pub mod classic;
pub mod control;
pub mod ctf;
pub mod error;
pub mod metrics;
pub mod neural;
pub mod scene;
pub mod spectral;
pub mod wav;

pub use canceller::{run_canceller, Canceller, RunTrace, DEFAULT_TAPS};
pub use control::{Adaptation, AdaptationController, FrameContext, FrameTruth, FrozenController, PrepareContext};
pub use ctf::{form_error, CtfFilterState, StepSizeField};
pub use error::{Error, Result};
pub use spectral::{SpectralFrame, Stft, StftConfig, StftSpec, WindowKind};

pub use rustfft::num_complex::Complex64;
