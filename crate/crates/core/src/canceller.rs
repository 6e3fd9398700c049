//! Streaming canceller loop and its per-frame trace.
//!
//! Per frame: push far-end frame → predict echo with prior coefficients →
//! form error → query controller → LMS update.

use std::io::Write;
use std::ops::Range;
use std::path::Path;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::control::{AdaptationController, FrameContext, FrameTruth, PrepareContext};
use crate::ctf::{form_error, CtfFilterState};
use crate::error::{Error, Result};
use crate::metrics::{erle, ERLE_CAP_DB};
use crate::scene::Scene;
use crate::spectral::{SpectralFrame, Stft, StftConfig};

pub const DEFAULT_TAPS: usize = 8;

#[derive(Debug, Clone)]
pub struct Canceller {
    stft: Stft,
    taps: usize,
}

impl Canceller {
    pub fn new(stft: StftConfig, taps: usize) -> Result<Self> {
        if taps == 0 {
            return Err(Error::Config("filter length must be positive".into()));
        }
        Ok(Self {
            stft: Stft::new(stft)?,
            taps,
        })
    }

    pub fn stft(&self) -> &Stft {
        &self.stft
    }

    pub fn taps(&self) -> usize {
        self.taps
    }

    /// Frame ranges (0-based) over which the scene's echo path is constant.
    /// Frames overlapping a path change belong to neither range.
    pub fn stationary_segments(&self, scene: &Scene, num_frames: usize) -> Vec<Range<usize>> {
        let cfg = self.stft.config();
        let (n, hop) = (cfg.dft_length(), cfg.hop());
        match scene.config.change_window() {
            None => vec![0..num_frames],
            Some((start, end)) => {
                let a_end = if start >= n { (start - n) / hop + 1 } else { 0 };
                let b_start = end.div_ceil(hop);
                vec![0..a_end.min(num_frames), b_start.min(num_frames)..num_frames]
            }
        }
    }

    pub fn run(&self, scene: &Scene, controller: &mut dyn AdaptationController) -> Result<RunTrace> {
        let cfg = self.stft.config();
        let (n, hop) = (cfg.dft_length(), cfg.hop());
        let far = self.stft.analyze(&scene.far_end)?;
        let mic = self.stft.analyze(&scene.mic)?;
        let echo = self.stft.analyze(&scene.echo)?;
        let interference = self.stft.analyze(&scene.interference())?;
        let frames = far.len();
        let bands = cfg.num_bins();

        let mut filter = CtfFilterState::new(bands, self.taps)?;
        controller.reset(bands, self.taps)?;
        let segments = self.stationary_segments(scene, frames);
        controller.prepare(&PrepareContext {
            far_end: &far,
            echo: &echo,
            taps: self.taps,
            stationary_segments: &segments,
        })?;

        let mut trace = RunTrace::empty(controller.name(), bands, self.taps, cfg);
        for t in 0..frames {
            filter.push_far_end(&far[t].bins)?;
            let d_hat = filter.predict_echo();
            let e = form_error(&mic[t].bins, &d_hat)?;
            let ctx = FrameContext {
                index: t + 1,
                filter: &filter,
                far_end: &far[t].bins,
                mic: &mic[t].bins,
                error: &e,
                echo_estimate: &d_hat,
                far_end_block: &scene.far_end[t * hop..t * hop + n],
                mic_block: &scene.mic[t * hop..t * hop + n],
                truth: Some(FrameTruth {
                    echo: &echo[t].bins,
                    interference: &interference[t].bins,
                }),
            };
            let wrap = |source: Error| Error::Controller {
                frame: t + 1,
                source: Box::new(source),
            };
            let adaptation = controller.adapt(&ctx).map_err(wrap)?;
            let update_error = adaptation.update_error.as_deref().unwrap_or(&e);
            filter
                .lms_update(update_error, &adaptation.step_size)
                .map_err(wrap)?;

            trace.echo_power.push(echo[t].bins.iter().map(|d| d.norm_sqr()).sum());
            trace.residual_power.push(
                echo[t]
                    .bins
                    .iter()
                    .zip(&d_hat)
                    .map(|(d, h)| (d - h).norm_sqr())
                    .sum(),
            );
            trace.step_size.push(adaptation.step_size.band_means());
            if let Some(m) = adaptation.masks {
                trace.mask_mu.push(m.mu);
                trace.mask_e.push(m.e);
            }
            if let Some(s) = adaptation.state {
                trace.states.push(s);
            }
            trace.error.push(SpectralFrame { index: t + 1, bins: e });
            trace.echo_estimate.push(SpectralFrame {
                index: t + 1,
                bins: d_hat,
            });
        }
        trace.error_time = self.stft.synthesize(&trace.error)?;
        trace.echo_estimate_time = self.stft.synthesize(&trace.echo_estimate)?;
        Ok(trace)
    }
}

pub fn run_canceller(
    scene: &Scene,
    controller: &mut dyn AdaptationController,
    stft: StftConfig,
    taps: usize,
) -> Result<RunTrace> {
    Canceller::new(stft, taps)?.run(scene, controller)
}

/// Per-frame record of one canceller run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub controller: String,
    pub num_bands: usize,
    pub taps: usize,
    pub dft_length: usize,
    pub hop: usize,
    pub sample_rate: u32,
    pub error: Vec<SpectralFrame>,
    pub echo_estimate: Vec<SpectralFrame>,
    /// Tap-averaged step size per frame and band.
    pub step_size: Vec<Vec<f64>>,
    /// Empty unless the controller emits masks.
    pub mask_mu: Vec<Vec<f64>>,
    pub mask_e: Vec<Vec<f64>>,
    /// Empty unless the controller has a recurrent state.
    pub states: Vec<Vec<f64>>,
    /// `Σ_f |d|²` per frame.
    pub echo_power: Vec<f64>,
    /// `Σ_f |d - d̂|²` per frame.
    pub residual_power: Vec<f64>,
    pub error_time: Vec<f64>,
    pub echo_estimate_time: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ColumnEntry {
    name: String,
    rows: usize,
    cols: usize,
    offset: usize,
    dtype: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct TraceIndex {
    format: String,
    version: u32,
    controller: String,
    num_frames: usize,
    num_bands: usize,
    taps: usize,
    dft_length: usize,
    hop: usize,
    sample_rate: u32,
    columns: Vec<ColumnEntry>,
}

const TRACE_FORMAT: &str = "aec-run-trace";
const TRACE_VERSION: u32 = 1;

impl RunTrace {
    fn empty(controller: String, num_bands: usize, taps: usize, cfg: &StftConfig) -> Self {
        Self {
            controller,
            num_bands,
            taps,
            dft_length: cfg.dft_length(),
            hop: cfg.hop(),
            sample_rate: cfg.sample_rate(),
            error: Vec::new(),
            echo_estimate: Vec::new(),
            step_size: Vec::new(),
            mask_mu: Vec::new(),
            mask_e: Vec::new(),
            states: Vec::new(),
            echo_power: Vec::new(),
            residual_power: Vec::new(),
            error_time: Vec::new(),
            echo_estimate_time: Vec::new(),
        }
    }

    pub fn num_frames(&self) -> usize {
        self.error.len()
    }

    /// Samples used for time-domain metrics: the synthesized stream without
    /// one full frame span at either edge.
    pub fn evaluation_range(&self) -> Range<usize> {
        let len = self.echo_estimate_time.len();
        if len <= 2 * self.dft_length {
            return 0..0;
        }
        self.dft_length..len - self.dft_length
    }

    pub fn erle_db(&self, echo: &[f64]) -> Result<f64> {
        let r = self.evaluation_range();
        self.erle_over(echo, r)
    }

    /// ERLE over the last `seconds` of the evaluation range.
    pub fn final_erle_db(&self, echo: &[f64], seconds: f64) -> Result<f64> {
        let r = self.evaluation_range();
        let span = ((seconds * self.sample_rate as f64) as usize).min(r.len());
        self.erle_over(echo, r.end - span..r.end)
    }

    /// ERLE of consecutive `seconds`-long segments of the evaluation range;
    /// `None` where the echo is silent.
    pub fn segment_erle_db(&self, echo: &[f64], seconds: f64) -> Vec<Option<f64>> {
        let r = self.evaluation_range();
        let seg = ((seconds * self.sample_rate as f64) as usize).max(1);
        r.clone()
            .step_by(seg)
            .map(|start| self.erle_over(echo, start..(start + seg).min(r.end)).ok())
            .collect()
    }

    fn erle_over(&self, echo: &[f64], range: Range<usize>) -> Result<f64> {
        if range.is_empty() || range.end > echo.len() {
            return Err(Error::UndefinedMetric("evaluation range is empty"));
        }
        erle(&echo[range.clone()], &self.echo_estimate_time[range])
    }

    /// Frequency-domain ERLE of every frame, capped like [`erle`].
    pub fn frame_erle_db(&self) -> Vec<f64> {
        self.echo_power
            .iter()
            .zip(&self.residual_power)
            .map(|(&d, &r)| {
                if d == 0.0 {
                    0.0
                } else if r == 0.0 {
                    ERLE_CAP_DB
                } else {
                    (10.0 * (d / r).log10()).min(ERLE_CAP_DB)
                }
            })
            .collect()
    }

    /// Per-frame CSV: frequency-domain ERLE and broadband step-size statistics.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(
            out,
            "frame,time_s,erle_db,echo_power,residual_power,mu_mean,mu_min,mu_max"
        )?;
        let erle = self.frame_erle_db();
        for t in 0..self.num_frames() {
            let mu = &self.step_size[t];
            let mean = mu.iter().sum::<f64>() / mu.len() as f64;
            let min = mu.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = mu.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let time = (t * self.hop) as f64 / self.sample_rate as f64;
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                t + 1,
                time,
                erle[t],
                self.echo_power[t],
                self.residual_power[t],
                mean,
                min,
                max
            )?;
        }
        out.flush()?;
        Ok(())
    }

    /// Writes `<stem>.bin` (little-endian f64 columns, each row-major) and the
    /// `<stem>.json` index describing name, shape and byte offset of each.
    pub fn write_columnar(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let complex = |frames: &[SpectralFrame], part: fn(&Complex64) -> f64| -> Vec<f64> {
            frames.iter().flat_map(|f| f.bins.iter().map(part)).collect()
        };
        let flat = |rows: &[Vec<f64>]| -> Vec<f64> { rows.iter().flatten().copied().collect() };
        let t = self.num_frames();
        let state_dim = self.states.first().map_or(0, Vec::len);
        let columns: Vec<(&str, usize, usize, Vec<f64>)> = vec![
            ("error_re", t, self.num_bands, complex(&self.error, |c| c.re)),
            ("error_im", t, self.num_bands, complex(&self.error, |c| c.im)),
            ("echo_estimate_re", t, self.num_bands, complex(&self.echo_estimate, |c| c.re)),
            ("echo_estimate_im", t, self.num_bands, complex(&self.echo_estimate, |c| c.im)),
            ("step_size", t, self.num_bands, flat(&self.step_size)),
            ("mask_mu", self.mask_mu.len(), self.num_bands, flat(&self.mask_mu)),
            ("mask_e", self.mask_e.len(), self.num_bands, flat(&self.mask_e)),
            ("state", self.states.len(), state_dim, flat(&self.states)),
            ("echo_power", t, 1, self.echo_power.clone()),
            ("residual_power", t, 1, self.residual_power.clone()),
            ("error_time", self.error_time.len(), 1, self.error_time.clone()),
            (
                "echo_estimate_time",
                self.echo_estimate_time.len(),
                1,
                self.echo_estimate_time.clone(),
            ),
        ];
        let mut bin = std::io::BufWriter::new(std::fs::File::create(dir.join(format!("{stem}.bin")))?);
        let mut offset = 0;
        let mut entries = Vec::new();
        for (name, rows, cols, data) in columns {
            if data.len() != rows * cols {
                return Err(Error::dim(format!("trace column {name}"), rows * cols, data.len()));
            }
            for v in &data {
                bin.write_all(&v.to_le_bytes())?;
            }
            entries.push(ColumnEntry {
                name: name.into(),
                rows,
                cols,
                offset,
                dtype: "f64le".into(),
            });
            offset += data.len() * 8;
        }
        bin.flush()?;
        let index = TraceIndex {
            format: TRACE_FORMAT.into(),
            version: TRACE_VERSION,
            controller: self.controller.clone(),
            num_frames: t,
            num_bands: self.num_bands,
            taps: self.taps,
            dft_length: self.dft_length,
            hop: self.hop,
            sample_rate: self.sample_rate,
            columns: entries,
        };
        std::fs::write(dir.join(format!("{stem}.json")), serde_json::to_vec_pretty(&index)?)?;
        Ok(())
    }

    pub fn read_columnar(dir: impl AsRef<Path>, stem: &str) -> Result<Self> {
        let dir = dir.as_ref();
        let index: TraceIndex = serde_json::from_slice(&std::fs::read(dir.join(format!("{stem}.json")))?)?;
        if index.format != TRACE_FORMAT || index.version != TRACE_VERSION {
            return Err(Error::Config(format!(
                "unsupported trace format {} v{}",
                index.format, index.version
            )));
        }
        let bytes = std::fs::read(dir.join(format!("{stem}.bin")))?;
        let column = |name: &str| -> Result<(usize, usize, Vec<f64>)> {
            let c = index
                .columns
                .iter()
                .find(|c| c.name == name)
                .ok_or_else(|| Error::Config(format!("trace column {name} missing")))?;
            let end = c.offset + c.rows * c.cols * 8;
            if end > bytes.len() {
                return Err(Error::Config(format!("trace column {name} truncated")));
            }
            let data = bytes[c.offset..end]
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
                .collect();
            Ok((c.rows, c.cols, data))
        };
        let rows_of = |name: &str| -> Result<Vec<Vec<f64>>> {
            let (_, cols, data) = column(name)?;
            Ok(if cols == 0 {
                Vec::new()
            } else {
                data.chunks(cols).map(<[f64]>::to_vec).collect()
            })
        };
        let frames_of = |re: &str, im: &str| -> Result<Vec<SpectralFrame>> {
            let re = rows_of(re)?;
            let im = rows_of(im)?;
            Ok(re
                .iter()
                .zip(&im)
                .enumerate()
                .map(|(t, (r, i))| SpectralFrame {
                    index: t + 1,
                    bins: r.iter().zip(i).map(|(&a, &b)| Complex64::new(a, b)).collect(),
                })
                .collect())
        };
        Ok(Self {
            controller: index.controller.clone(),
            num_bands: index.num_bands,
            taps: index.taps,
            dft_length: index.dft_length,
            hop: index.hop,
            sample_rate: index.sample_rate,
            error: frames_of("error_re", "error_im")?,
            echo_estimate: frames_of("echo_estimate_re", "echo_estimate_im")?,
            step_size: rows_of("step_size")?,
            mask_mu: rows_of("mask_mu")?,
            mask_e: rows_of("mask_e")?,
            states: rows_of("state")?,
            echo_power: column("echo_power")?.2,
            residual_power: column("residual_power")?.2,
            error_time: column("error_time")?.2,
            echo_estimate_time: column("echo_estimate_time")?.2,
        })
    }
}
