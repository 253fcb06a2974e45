use super::Waveform;
use crate::error::{NsfError, Result};

/// Analysis frame used by the active-level estimator, seconds.
pub const ACTIVE_FRAME_SECS: f64 = 0.02;
/// Frames quieter than the loudest frame by more than this are inactive.
pub const ACTIVE_RANGE_DB: f64 = 40.0;

/// RMS over frames whose mean-square energy lies within
/// [`ACTIVE_RANGE_DB`] of the loudest frame.
pub fn active_level_rms(waveform: &Waveform) -> Result<f64> {
    let x = waveform.samples();
    if x.is_empty() {
        return Err(NsfError::InvalidInput("empty waveform".into()));
    }
    let frame_len = ((ACTIVE_FRAME_SECS * waveform.sample_rate() as f64).round() as usize).max(1);
    let frames: Vec<(f64, usize)> = x
        .chunks(frame_len)
        .map(|c| (c.iter().map(|v| v * v).sum::<f64>(), c.len()))
        .collect();
    let peak = frames
        .iter()
        .map(|&(e, n)| e / n as f64)
        .fold(0.0_f64, f64::max);
    if peak == 0.0 {
        return Err(NsfError::SilentInput);
    }
    let threshold = peak * 10f64.powf(-ACTIVE_RANGE_DB / 10.0);
    let (energy, count) = frames
        .iter()
        .filter(|&&(e, n)| e / n as f64 > threshold)
        .fold((0.0, 0usize), |(se, sn), &(e, n)| (se + e, sn + n));
    Ok((energy / count as f64).sqrt())
}

/// Scales `waveform` so its active level equals `target_dbov` (dB relative
/// to a full-scale RMS of 1). Returns the scaled signal and the gain used.
pub fn normalize_level(waveform: &Waveform, target_dbov: f64) -> Result<(Waveform, f64)> {
    let level = active_level_rms(waveform)?;
    let gain = 10f64.powf(target_dbov / 20.0) / level;
    Ok((waveform.scaled(gain), gain))
}
