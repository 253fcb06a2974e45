use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::Waveform;
use crate::error::{NsfError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    Hann,
    Hamming,
    Rect,
}

impl Window {
    /// Periodic window of length `len`.
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        let n = len as f64;
        (0..len)
            .map(|i| {
                let x = 2.0 * PI * i as f64 / n;
                match self {
                    Window::Hann => 0.5 - 0.5 * x.cos(),
                    Window::Hamming => 0.54 - 0.46 * x.cos(),
                    Window::Rect => 1.0,
                }
            })
            .collect()
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hann" | "hanning" => Some(Window::Hann),
            "hamming" => Some(Window::Hamming),
            "rect" | "rectangular" | "boxcar" => Some(Window::Rect),
            _ => None,
        }
    }
}

/// One STFT analysis configuration. All lengths are in samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub fft_size: usize,
    pub frame_length: usize,
    pub frame_shift: usize,
    pub window: Window,
}

impl StftConfig {
    pub fn new(fft_size: usize, frame_length: usize, frame_shift: usize, window: Window) -> Self {
        Self {
            fft_size,
            frame_length,
            frame_shift,
            window,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.fft_size.is_power_of_two() || self.fft_size < 2 {
            return Err(NsfError::Config(format!(
                "fft_size {} is not a power of two >= 2",
                self.fft_size
            )));
        }
        if self.frame_length == 0 || self.frame_length > self.fft_size {
            return Err(NsfError::Config(format!(
                "frame_length {} must be in 1..={}",
                self.frame_length, self.fft_size
            )));
        }
        if self.frame_shift == 0 {
            return Err(NsfError::Config("frame_shift must be >= 1".into()));
        }
        Ok(())
    }

    /// One-sided bin count, K/2 + 1.
    pub fn num_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Frame count for a signal of `len` samples. Signals shorter than one
    /// frame still produce a single zero-padded frame.
    pub fn num_frames(&self, len: usize) -> usize {
        if len < self.frame_length {
            1
        } else {
            (len - self.frame_length) / self.frame_shift + 1
        }
    }
}

/// One-sided complex spectra, `num_frames x num_bins`, row-major.
#[derive(Debug, Clone)]
pub struct SpectrumFrames {
    bins: Vec<Complex64>,
    num_frames: usize,
    config: StftConfig,
}

impl SpectrumFrames {
    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn num_bins(&self) -> usize {
        self.config.num_bins()
    }

    pub fn bins(&self) -> &[Complex64] {
        &self.bins
    }

    pub fn frame(&self, n: usize) -> &[Complex64] {
        let k = self.num_bins();
        &self.bins[n * k..(n + 1) * k]
    }

    /// Squared magnitudes, same layout as [`bins`](Self::bins).
    pub fn power(&self) -> Vec<f64> {
        self.bins.iter().map(|c| c.norm_sqr()).collect()
    }
}

/// Planned STFT for one configuration. Cheap to clone; thread-safe.
#[derive(Clone)]
pub struct Stft {
    config: StftConfig,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Stft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Stft").field("config", &self.config).finish()
    }
}

impl Stft {
    pub fn new(config: StftConfig) -> Result<Self> {
        config.validate()?;
        let fft = FftPlanner::new().plan_fft_forward(config.fft_size);
        Ok(Self {
            config,
            window: config.window.coefficients(config.frame_length),
            fft,
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    pub fn analyze(&self, x: &[f64]) -> SpectrumFrames {
        let cfg = &self.config;
        let k = cfg.fft_size;
        let kb = cfg.num_bins();
        let n_frames = cfg.num_frames(x.len());
        let mut bins = Vec::with_capacity(n_frames * kb);
        let mut buf = vec![Complex64::new(0.0, 0.0); k];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        for n in 0..n_frames {
            let start = n * cfg.frame_shift;
            for (j, slot) in buf.iter_mut().enumerate() {
                let v = if j < cfg.frame_length {
                    x.get(start + j).copied().unwrap_or(0.0) * self.window[j]
                } else {
                    0.0
                };
                *slot = Complex64::new(v, 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            bins.extend_from_slice(&buf[..kb]);
        }
        SpectrumFrames {
            bins,
            num_frames: n_frames,
            config: *cfg,
        }
    }

    /// Back-propagates through `analyze` for a real loss that depends on the
    /// squared magnitudes only.
    ///
    /// `coeffs[n * K' + k]` must hold `dL/d|X_k|^2 * conj(X_k)` for frame `n`.
    /// The returned vector is `dL/dx` for a signal of length `len`.
    pub fn power_adjoint(&self, coeffs: &[Complex64], len: usize) -> Vec<f64> {
        let cfg = &self.config;
        let k = cfg.fft_size;
        let kb = cfg.num_bins();
        let n_frames = coeffs.len() / kb;
        let mut grad = vec![0.0; len];
        let mut buf = vec![Complex64::new(0.0, 0.0); k];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        for n in 0..n_frames {
            buf[..kb].copy_from_slice(&coeffs[n * kb..(n + 1) * kb]);
            for slot in buf[kb..].iter_mut() {
                *slot = Complex64::new(0.0, 0.0);
            }
            // sum_k A_k e^{-2 pi i j k / K} is a forward transform of A.
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            let start = n * cfg.frame_shift;
            for ((g, w), b) in grad.iter_mut().skip(start).zip(&self.window).zip(&buf) {
                *g += 2.0 * w * b.re;
            }
        }
        grad
    }
}

/// One-sided STFT of a waveform.
pub fn stft(waveform: &Waveform, config: &StftConfig) -> Result<SpectrumFrames> {
    if waveform.is_empty() {
        return Err(NsfError::InvalidInput("stft of an empty waveform".into()));
    }
    Ok(Stft::new(*config)?.analyze(waveform.samples()))
}
