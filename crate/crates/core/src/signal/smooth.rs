use super::FrameSequence;
use crate::error::{NsfError, Result};

/// Integer samples-per-frame for a frame shift given in seconds.
pub fn upsample_factor(frame_shift: f64, sample_rate: u32) -> Result<usize> {
    let exact = frame_shift * sample_rate as f64;
    let rounded = exact.round();
    if rounded < 1.0 || (exact - rounded).abs() > 1e-6 {
        return Err(NsfError::Config(format!(
            "frame shift {frame_shift} s at {sample_rate} Hz is not an integer number of samples"
        )));
    }
    Ok(rounded as usize)
}

fn window_bounds(t: usize, len: usize, window: usize) -> (usize, usize) {
    let left = window / 2;
    let right = window - 1 - left;
    (t.saturating_sub(left), (t + right).min(len - 1))
}

/// Centered moving average; windows shrink at the edges instead of padding.
pub fn moving_average(x: &[f64], window: usize) -> Vec<f64> {
    if x.is_empty() || window <= 1 {
        return x.to_vec();
    }
    let mut prefix = Vec::with_capacity(x.len() + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for v in x {
        acc += v;
        prefix.push(acc);
    }
    (0..x.len())
        .map(|t| {
            let (lo, hi) = window_bounds(t, x.len(), window);
            (prefix[hi + 1] - prefix[lo]) / (hi + 1 - lo) as f64
        })
        .collect()
}

/// Transpose of [`moving_average`] applied to an output gradient.
pub fn moving_average_adjoint(grad: &[f64], window: usize) -> Vec<f64> {
    if grad.is_empty() || window <= 1 {
        return grad.to_vec();
    }
    let len = grad.len();
    let left = window / 2;
    let right = window - 1 - left;
    let scaled: Vec<f64> = (0..len)
        .map(|t| {
            let (lo, hi) = window_bounds(t, len, window);
            grad[t] / (hi + 1 - lo) as f64
        })
        .collect();
    let mut prefix = Vec::with_capacity(len + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for v in &scaled {
        acc += v;
        prefix.push(acc);
    }
    // sample j feeds outputs t with t - left <= j <= t + right
    (0..len)
        .map(|j| {
            let lo = j.saturating_sub(right);
            let hi = (j + left).min(len - 1);
            prefix[hi + 1] - prefix[lo]
        })
        .collect()
}

/// Sums each run of `factor` samples back onto its frame.
pub fn repeat_adjoint(grad: &[f64], factor: usize) -> Vec<f64> {
    grad.chunks(factor).map(|c| c.iter().sum()).collect()
}

/// Repeats every frame value `factor` times, then smooths each dimension
/// `smooth_passes` times with a centered moving average of `smooth_window`
/// samples. Returns one sample-level sequence per frame dimension.
pub fn upsample_and_smooth(
    frames: &FrameSequence,
    sample_rate: u32,
    smooth_window: usize,
    smooth_passes: usize,
) -> Result<Vec<Vec<f64>>> {
    if smooth_window == 0 {
        return Err(NsfError::Config("smooth_window must be >= 1".into()));
    }
    let factor = upsample_factor(frames.frame_shift(), sample_rate)?;
    Ok((0..frames.dims())
        .map(|d| {
            let mut seq: Vec<f64> = (0..frames.num_frames())
                .flat_map(|n| std::iter::repeat_n(frames.get(n, d), factor))
                .collect();
            for _ in 0..smooth_passes {
                seq = moving_average(&seq, smooth_window);
            }
            seq
        })
        .collect())
}
