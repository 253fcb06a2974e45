//! Numeric substrate shared by every other module: waveform and frame
//! containers, the STFT, frame-to-sample up-sampling and level utilities.

mod level;
mod smooth;
mod stft;

pub use level::{active_level_rms, normalize_level, ACTIVE_FRAME_SECS, ACTIVE_RANGE_DB};
pub use smooth::{
    moving_average, moving_average_adjoint, repeat_adjoint, upsample_and_smooth,
    upsample_factor,
};
pub use stft::{stft, Stft, StftConfig, SpectrumFrames, Window};

use crate::error::{NsfError, Result};

/// Default sampling rate of the experiments, Hz.
pub const SAMPLE_RATE: u32 = 16_000;
/// Default frame shift, seconds.
pub const FRAME_SHIFT_SECS: f64 = 0.005;

/// Mono sample-level signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(NsfError::InvalidInput("sample_rate must be > 0".into()));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(NsfError::InvalidInput(format!(
                "non-finite sample at index {i}"
            )));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Self {
        Self {
            samples: vec![0.0; len],
            sample_rate: sample_rate.max(1),
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn rms(&self) -> f64 {
        rms(&self.samples)
    }

    pub fn max_abs(&self) -> f64 {
        self.samples.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Copy scaled so that the largest magnitude is exactly 1. All-zero
    /// signals are returned unchanged.
    pub fn peak_normalized(&self) -> Waveform {
        let peak = self.max_abs();
        if peak == 0.0 {
            return self.clone();
        }
        let samples = self.samples.iter().map(|v| v / peak).collect();
        Waveform {
            samples,
            sample_rate: self.sample_rate,
        }
    }

    pub fn scaled(&self, gain: f64) -> Waveform {
        Waveform {
            samples: self.samples.iter().map(|v| v * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }
}

pub fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// Frame-level matrix (N frames x D dims), row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    data: Vec<f64>,
    num_frames: usize,
    dims: usize,
    frame_shift: f64,
    start_time: f64,
}

impl FrameSequence {
    pub fn new(data: Vec<f64>, num_frames: usize, dims: usize, frame_shift: f64) -> Result<Self> {
        if num_frames == 0 || dims == 0 {
            return Err(NsfError::InvalidInput(
                "frame sequence needs at least one frame and one dimension".into(),
            ));
        }
        if data.len() != num_frames * dims {
            return Err(NsfError::LengthMismatch {
                what: "frame data vs frames*dims",
                left: data.len(),
                right: num_frames * dims,
            });
        }
        if !(frame_shift > 0.0) {
            return Err(NsfError::InvalidInput("frame_shift must be > 0".into()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(NsfError::InvalidInput("non-finite frame value".into()));
        }
        Ok(Self {
            data,
            num_frames,
            dims,
            frame_shift,
            start_time: 0.0,
        })
    }

    /// Single-dimension sequence, e.g. an F0 contour.
    pub fn from_column(values: Vec<f64>, frame_shift: f64) -> Result<Self> {
        let n = values.len();
        Self::new(values, n, 1, frame_shift)
    }

    pub fn with_start_time(mut self, start_time: f64) -> Self {
        self.start_time = start_time;
        self
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn frame_shift(&self) -> f64 {
        self.frame_shift
    }

    pub fn start_time(&self) -> f64 {
        self.start_time
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn frame(&self, n: usize) -> &[f64] {
        &self.data[n * self.dims..(n + 1) * self.dims]
    }

    pub fn get(&self, n: usize, d: usize) -> f64 {
        self.data[n * self.dims + d]
    }

    /// Values of one dimension across all frames.
    pub fn column(&self, d: usize) -> Vec<f64> {
        (0..self.num_frames).map(|n| self.get(n, d)).collect()
    }

    /// Frames `[start, start + len)` as a new sequence.
    pub fn slice_frames(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.num_frames {
            return Err(NsfError::InvalidInput(format!(
                "frame slice {start}..{} out of range for {} frames",
                start + len,
                self.num_frames
            )));
        }
        let data = self.data[start * self.dims..(start + len) * self.dims].to_vec();
        Ok(Self {
            data,
            num_frames: len,
            dims: self.dims,
            frame_shift: self.frame_shift,
            start_time: self.start_time + start as f64 * self.frame_shift,
        })
    }
}
