//! Autocorrelation F0 estimation and agreement statistics.

use crate::error::{NsfError, Result};
use crate::io::F0Track;
use crate::signal::{upsample_factor, Waveform};

/// Minimum normalized-correlation peak for a frame to count as voiced.
pub const VOICING_THRESHOLD: f64 = 0.3;
/// The chosen lag is the first local maximum reaching this fraction of the
/// best peak, which suppresses period-doubling errors.
const PEAK_FRACTION: f64 = 0.85;

/// Per-frame F0 from the normalized cross-correlation
/// `r(tau) = sum x_i x_{i+tau} / sqrt(sum x_i^2 sum x_{i+tau}^2)` over lags
/// `[Ns/fmax, Ns/fmin]`, with a correlation window of `Ns/fmin` samples
/// centered on the frame. Frames whose best peak is below
/// [`VOICING_THRESHOLD`] are unvoiced (0).
pub fn estimate_f0(
    waveform: &Waveform,
    frame_shift: f64,
    fmin: f64,
    fmax: f64,
) -> Result<F0Track> {
    let sr = waveform.sample_rate() as f64;
    if !(fmin > 0.0 && fmin < fmax && fmax < sr / 2.0) {
        return Err(NsfError::Config(format!(
            "need 0 < fmin < fmax < Ns/2, got fmin={fmin}, fmax={fmax}"
        )));
    }
    let hop = upsample_factor(frame_shift, waveform.sample_rate())?;
    let x = waveform.samples();
    let frames = x.len().div_ceil(hop).max(1);
    let min_lag = ((sr / fmax).floor() as usize).max(2);
    let max_lag = (sr / fmin).ceil() as usize;
    let win = max_lag;
    let span = win + max_lag + 2;
    let mut values = vec![0.0; frames];
    if x.len() < span {
        return F0Track::new(values, frame_shift);
    }
    let mut seg = vec![0.0; span];
    let mut r = vec![0.0; max_lag + 2];
    for (n, value) in values.iter_mut().enumerate() {
        let center = n * hop + hop / 2;
        let start = center.saturating_sub(span / 2).min(x.len() - span);
        seg.copy_from_slice(&x[start..start + span]);
        let mean = seg.iter().sum::<f64>() / span as f64;
        seg.iter_mut().for_each(|v| *v -= mean);
        let e0: f64 = seg[..win].iter().map(|v| v * v).sum();
        if e0 < 1e-12 * win as f64 {
            continue;
        }
        let mut best = f64::NEG_INFINITY;
        for tau in min_lag - 1..=max_lag + 1 {
            let lagged = &seg[tau..tau + win];
            let c: f64 = seg[..win].iter().zip(lagged).map(|(a, b)| a * b).sum();
            let e_tau: f64 = lagged.iter().map(|v| v * v).sum();
            let den = (e0 * e_tau).sqrt();
            r[tau] = if den > 0.0 { c / den } else { 0.0 };
            if (min_lag..=max_lag).contains(&tau) {
                best = best.max(r[tau]);
            }
        }
        if best < VOICING_THRESHOLD {
            continue;
        }
        let pick = (min_lag..=max_lag)
            .find(|&t| r[t] >= PEAK_FRACTION * best && r[t] >= r[t - 1] && r[t] >= r[t + 1]);
        let Some(tau) = pick else { continue };
        let (a, b, c) = (r[tau - 1], r[tau], r[tau + 1]);
        let curv = a - 2.0 * b + c;
        let delta = if curv < 0.0 {
            (0.5 * (a - c) / curv).clamp(-0.5, 0.5)
        } else {
            0.0
        };
        *value = sr / (tau as f64 + delta);
    }
    F0Track::new(values, frame_shift)
}

/// Voiced-frame agreement between an estimated and a reference F0 track.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct F0Agreement {
    /// Reference-voiced frames that were scored.
    pub voiced_frames: usize,
    /// Scored frames whose estimate is within the relative tolerance.
    pub within: usize,
    /// Scored frames the estimator called unvoiced.
    pub estimated_unvoiced: usize,
    pub tolerance: f64,
}

impl F0Agreement {
    pub fn fraction(&self) -> f64 {
        if self.voiced_frames == 0 {
            0.0
        } else {
            self.within as f64 / self.voiced_frames as f64
        }
    }

    pub fn merge(&self, other: &F0Agreement) -> F0Agreement {
        F0Agreement {
            voiced_frames: self.voiced_frames + other.voiced_frames,
            within: self.within + other.within,
            estimated_unvoiced: self.estimated_unvoiced + other.estimated_unvoiced,
            tolerance: self.tolerance,
        }
    }
}

/// Scores reference-voiced frames that are at least `margin` frames away
/// from a voicing change or the utterance edge; the estimator's window
/// straddles those boundaries. An unvoiced estimate counts as a miss.
pub fn f0_agreement(
    estimated: &F0Track,
    reference: &F0Track,
    tolerance: f64,
    margin: usize,
) -> Result<F0Agreement> {
    if estimated.len() != reference.len() {
        return Err(NsfError::LengthMismatch {
            what: "estimated vs reference f0 frames",
            left: estimated.len(),
            right: reference.len(),
        });
    }
    let r = reference.values();
    let e = estimated.values();
    let n = r.len();
    let mut out = F0Agreement {
        voiced_frames: 0,
        within: 0,
        estimated_unvoiced: 0,
        tolerance,
    };
    for t in 0..n {
        if r[t] <= 0.0 || t < margin || t + margin >= n {
            continue;
        }
        let stable = (t - margin..=t + margin).all(|k| r[k] > 0.0);
        if !stable {
            continue;
        }
        out.voiced_frames += 1;
        if e[t] <= 0.0 {
            out.estimated_unvoiced += 1;
        } else if ((e[t] - r[t]) / r[t]).abs() <= tolerance {
            out.within += 1;
        }
    }
    Ok(out)
}
