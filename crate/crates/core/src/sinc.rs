//! Hamming-windowed sinc low-pass / high-pass pair with a per-frame cutoff,
//! and the harmonic-plus-noise output combination.

use std::f64::consts::PI;

use crate::error::{NsfError, Result};
use crate::signal::Waveform;

/// Filter length used by the model.
pub const SINC_ORDER: usize = 31;
/// Default maximum voiced frequency, Hz.
pub const DEFAULT_MVF_HZ: f64 = 5000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterKind {
    LowPass,
    HighPass,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SincFilterSpec {
    /// Number of taps, odd.
    pub order: usize,
    /// Cutoff per frame, cycles/sample, each in (0, 0.5).
    pub cutoff_track: Vec<f64>,
}

impl SincFilterSpec {
    pub fn new(order: usize, cutoff_track: Vec<f64>) -> Result<Self> {
        let spec = Self {
            order,
            cutoff_track,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Same cutoff (Hz) for `frames` frames.
    pub fn constant_hz(cutoff_hz: f64, sample_rate: u32, frames: usize) -> Result<Self> {
        Self::new(SINC_ORDER, vec![cutoff_hz / sample_rate as f64; frames.max(1)])
    }

    pub fn validate(&self) -> Result<()> {
        if self.order == 0 || self.order.is_multiple_of(2) {
            return Err(NsfError::Config(format!("sinc order {} must be odd", self.order)));
        }
        if self.cutoff_track.is_empty() {
            return Err(NsfError::Config("empty cutoff track".into()));
        }
        for c in &self.cutoff_track {
            check_cutoff(*c)?;
        }
        Ok(())
    }
}

fn check_cutoff(cutoff: f64) -> Result<()> {
    if cutoff > 0.0 && cutoff < 0.5 {
        Ok(())
    } else {
        Err(NsfError::Config(format!(
            "normalized cutoff {cutoff} outside (0, 0.5)"
        )))
    }
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Windowed-sinc low-pass with unity DC gain.
pub fn design_lowpass(cutoff: f64, order: usize) -> Result<Vec<f64>> {
    check_cutoff(cutoff)?;
    if order == 0 || order.is_multiple_of(2) {
        return Err(NsfError::Config(format!("sinc order {order} must be odd")));
    }
    let center = (order - 1) as f64 / 2.0;
    let denom = (order - 1).max(1) as f64;
    let mut h: Vec<f64> = (0..order)
        .map(|n| {
            let hamming = 0.54 - 0.46 * (2.0 * PI * n as f64 / denom).cos();
            2.0 * cutoff * sinc(2.0 * cutoff * (n as f64 - center)) * hamming
        })
        .collect();
    let sum: f64 = h.iter().sum();
    for v in &mut h {
        *v /= sum;
    }
    Ok(h)
}

/// Spectral inversion of [`design_lowpass`]: `delta(n - center) - h_lp[n]`.
pub fn design_highpass(cutoff: f64, order: usize) -> Result<Vec<f64>> {
    let mut h = design_lowpass(cutoff, order)?;
    for v in &mut h {
        *v = -*v;
    }
    h[(order - 1) / 2] += 1.0;
    Ok(h)
}

pub fn design(kind: FilterKind, cutoff: f64, order: usize) -> Result<Vec<f64>> {
    match kind {
        FilterKind::LowPass => design_lowpass(cutoff, order),
        FilterKind::HighPass => design_highpass(cutoff, order),
    }
}

/// Per-frame coefficient sets, reusing a design while the cutoff is unchanged.
fn frame_filters(kind: FilterKind, spec: &SincFilterSpec) -> Result<Vec<std::rc::Rc<Vec<f64>>>> {
    let mut out: Vec<std::rc::Rc<Vec<f64>>> = Vec::with_capacity(spec.cutoff_track.len());
    let mut last: Option<(f64, std::rc::Rc<Vec<f64>>)> = None;
    for &c in &spec.cutoff_track {
        let h = match &last {
            Some((lc, h)) if *lc == c => h.clone(),
            _ => std::rc::Rc::new(design(kind, c, spec.order)?),
        };
        last = Some((c, h.clone()));
        out.push(h);
    }
    Ok(out)
}

fn check_coverage(len: usize, spec: &SincFilterSpec, frame_shift: usize) -> Result<()> {
    if frame_shift == 0 {
        return Err(NsfError::Config("frame_shift must be >= 1".into()));
    }
    let needed = len.div_ceil(frame_shift);
    if spec.cutoff_track.len() < needed {
        return Err(NsfError::InvalidInput(format!(
            "cutoff track has {} frames but the signal spans {needed}",
            spec.cutoff_track.len()
        )));
    }
    Ok(())
}

/// Filters `signal` with the filter of the frame each output sample falls
/// in. Zero-padded at the edges, group delay removed, same length as input.
pub fn filter_timevariant(
    signal: &[f64],
    kind: FilterKind,
    spec: &SincFilterSpec,
    frame_shift: usize,
) -> Result<Vec<f64>> {
    spec.validate()?;
    check_coverage(signal.len(), spec, frame_shift)?;
    let filters = frame_filters(kind, spec)?;
    let len = signal.len() as isize;
    let center = ((spec.order - 1) / 2) as isize;
    Ok((0..signal.len())
        .map(|t| {
            let h = &filters[t / frame_shift];
            let mut acc = 0.0;
            for (j, c) in h.iter().enumerate() {
                let idx = t as isize + center - j as isize;
                if idx >= 0 && idx < len {
                    acc += c * signal[idx as usize];
                }
            }
            acc
        })
        .collect())
}

/// Transpose of [`filter_timevariant`], used for back-propagation.
pub fn filter_timevariant_adjoint(
    grad: &[f64],
    kind: FilterKind,
    spec: &SincFilterSpec,
    frame_shift: usize,
) -> Result<Vec<f64>> {
    spec.validate()?;
    check_coverage(grad.len(), spec, frame_shift)?;
    let filters = frame_filters(kind, spec)?;
    let len = grad.len() as isize;
    let center = ((spec.order - 1) / 2) as isize;
    let mut out = vec![0.0; grad.len()];
    for (t, g) in grad.iter().enumerate() {
        let h = &filters[t / frame_shift];
        for (j, c) in h.iter().enumerate() {
            let idx = t as isize + center - j as isize;
            if idx >= 0 && idx < len {
                out[idx as usize] += c * g;
            }
        }
    }
    Ok(out)
}

/// `LP(harmonic) + HP(noise)`.
pub fn combine_hn(
    harmonic_out: &Waveform,
    noise_out: &Waveform,
    spec: &SincFilterSpec,
    frame_shift: usize,
) -> Result<Waveform> {
    if harmonic_out.len() != noise_out.len() {
        return Err(NsfError::LengthMismatch {
            what: "harmonic vs noise branch",
            left: harmonic_out.len(),
            right: noise_out.len(),
        });
    }
    let lp = filter_timevariant(harmonic_out.samples(), FilterKind::LowPass, spec, frame_shift)?;
    let hp = filter_timevariant(noise_out.samples(), FilterKind::HighPass, spec, frame_shift)?;
    Waveform::new(
        lp.iter().zip(&hp).map(|(a, b)| a + b).collect(),
        harmonic_out.sample_rate(),
    )
}
