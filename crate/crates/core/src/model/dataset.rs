//! Synthetic voiced/unvoiced utterances with known F0, used to train and
//! check the toy model at desk scale.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{NsfError, Result};
use crate::io::F0Track;
use crate::signal::{
    normalize_level, FrameSequence, Stft, StftConfig, Waveform, Window, FRAME_SHIFT_SECS,
    SAMPLE_RATE,
};

pub const FEATURE_BANDS: usize = 16;
pub const HARMONICS: usize = 6;
pub const F0_RANGE_HZ: (f64, f64) = (80.0, 300.0);
/// Level of the always-on noise relative to the harmonic part.
pub const NOISE_DB: f64 = -30.0;
/// Level of the noise that fills unvoiced segments.
pub const UNVOICED_NOISE_DB: f64 = -20.0;
pub const TARGET_DBOV: f64 = -26.0;

const UNVOICED_SECS: (f64, f64) = (0.04, 0.12);
const VOICED_SECS: (f64, f64) = (0.15, 0.35);
const RAMP_SECS: f64 = 0.01;
const FEATURE_WINDOW: usize = 320;
const FEATURE_FFT: usize = 512;

/// One training example: waveform, frame-level F0 and acoustic features.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub waveform: Waveform,
    pub f0: F0Track,
    pub features: FrameSequence,
}

impl Utterance {
    pub fn num_frames(&self) -> usize {
        self.f0.len()
    }

    /// Frames `[start, start + len)` with the matching waveform samples.
    pub fn segment(&self, start: usize, len: usize) -> Result<Utterance> {
        let hop = self.waveform.len() / self.num_frames();
        let f0 = F0Track::new(
            self.f0
                .values()
                .get(start..start + len)
                .ok_or_else(|| NsfError::InvalidInput("segment out of range".into()))?
                .to_vec(),
            self.f0.frame_shift(),
        )?;
        Ok(Utterance {
            waveform: Waveform::new(
                self.waveform.samples()[start * hop..(start + len) * hop].to_vec(),
                self.waveform.sample_rate(),
            )?,
            f0,
            features: self.features.slice_frames(start, len)?,
        })
    }
}

fn uniform<R: Rng + ?Sized>(range: (f64, f64), rng: &mut R) -> f64 {
    rng.random_range(range.0..range.1)
}

/// Frame-level F0 with alternating unvoiced and voiced segments, starting
/// and ending unvoiced. Each voiced segment has its own base F0 and a slow
/// sinusoidal modulation of up to 8 %.
fn synthetic_f0<R: Rng + ?Sized>(frames: usize, rng: &mut R) -> Vec<f64> {
    let secs_to_frames = |s: f64| ((s / FRAME_SHIFT_SECS).round() as usize).max(1);
    let mut f0 = Vec::with_capacity(frames);
    let mut voiced = false;
    while f0.len() < frames {
        if voiced {
            let n = secs_to_frames(uniform(VOICED_SECS, rng));
            let base = uniform((90.0, 260.0), rng);
            let depth = uniform((0.02, 0.08), rng);
            let rate = uniform((1.0, 4.0), rng);
            let psi = uniform((-PI, PI), rng);
            for k in 0..n {
                let t = k as f64 * FRAME_SHIFT_SECS;
                let v = base * (1.0 + depth * (2.0 * PI * rate * t + psi).sin());
                f0.push(v.clamp(F0_RANGE_HZ.0, F0_RANGE_HZ.1));
            }
        } else {
            let n = secs_to_frames(uniform(UNVOICED_SECS, rng));
            f0.extend(std::iter::repeat_n(0.0, n));
        }
        voiced = !voiced;
    }
    f0.truncate(frames);
    // keep a short unvoiced tail so every voiced segment has two edges
    let tail = secs_to_frames(UNVOICED_SECS.0).min(frames / 4);
    for v in &mut f0[frames - tail..] {
        *v = 0.0;
    }
    f0
}

/// Raised-cosine gain that ramps in and out of every voiced run.
fn voicing_envelope(f0_samples: &[f64], ramp: usize) -> Vec<f64> {
    let len = f0_samples.len();
    let mut env = vec![0.0; len];
    let mut t = 0;
    while t < len {
        if f0_samples[t] <= 0.0 {
            t += 1;
            continue;
        }
        let start = t;
        while t < len && f0_samples[t] > 0.0 {
            t += 1;
        }
        let run = t - start;
        let r = ramp.min(run / 2).max(1);
        for k in 0..run {
            let edge = k.min(run - 1 - k);
            env[start + k] = if edge >= r {
                1.0
            } else {
                0.5 - 0.5 * (PI * (edge as f64 + 0.5) / r as f64).cos()
            };
        }
    }
    env
}

/// 16 log mel-spaced band energies per 5 ms frame, from 320-sample Hann
/// frames centered on each frame.
pub fn band_features(waveform: &Waveform, frames: usize) -> Result<FrameSequence> {
    let hop = (FRAME_SHIFT_SECS * waveform.sample_rate() as f64).round() as usize;
    let stft = Stft::new(StftConfig::new(
        FEATURE_FFT,
        FEATURE_WINDOW,
        hop,
        Window::Hann,
    ))?;
    let front = FEATURE_WINDOW / 2 - hop / 2;
    let mut padded = vec![0.0; front];
    padded.extend_from_slice(waveform.samples());
    padded.resize(front + frames * hop + FEATURE_WINDOW, 0.0);
    let spec = stft.analyze(&padded);
    let power = spec.power();
    let bins = spec.num_bins();
    let filters = mel_filters(FEATURE_BANDS, FEATURE_FFT, waveform.sample_rate() as f64);
    let mut data = Vec::with_capacity(frames * FEATURE_BANDS);
    for n in 0..frames {
        let p = &power[n * bins..(n + 1) * bins];
        for f in &filters {
            let e: f64 = f.iter().map(|&(k, w)| w * p[k]).sum();
            data.push((e + 1e-8).ln());
        }
    }
    FrameSequence::new(data, frames, FEATURE_BANDS, FRAME_SHIFT_SECS)
}

fn mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_inv(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters as `(bin, weight)` lists.
fn mel_filters(bands: usize, fft: usize, sr: f64) -> Vec<Vec<(usize, f64)>> {
    let top = mel(sr / 2.0);
    let edges: Vec<f64> = (0..bands + 2)
        .map(|i| mel_inv(top * i as f64 / (bands + 1) as f64))
        .collect();
    let bin_hz = sr / fft as f64;
    (0..bands)
        .map(|b| {
            let (lo, mid, hi) = (edges[b], edges[b + 1], edges[b + 2]);
            (0..=fft / 2)
                .filter_map(|k| {
                    let f = k as f64 * bin_hz;
                    let w = if f > lo && f <= mid {
                        (f - lo) / (mid - lo)
                    } else if f > mid && f < hi {
                        (hi - f) / (hi - mid)
                    } else {
                        0.0
                    };
                    (w > 0.0).then_some((k, w))
                })
                .collect()
        })
        .collect()
}

/// One synthetic utterance of `frames` 5 ms frames at 16 kHz.
pub fn synthetic_utterance<R: Rng + ?Sized>(frames: usize, rng: &mut R) -> Result<Utterance> {
    if frames == 0 {
        return Err(NsfError::InvalidInput("utterance needs at least one frame".into()));
    }
    let sr = SAMPLE_RATE;
    let f0 = F0Track::new(synthetic_f0(frames, rng), FRAME_SHIFT_SECS)?;
    let f0_samples = f0.upsample(sr)?;
    let env = voicing_envelope(&f0_samples, (RAMP_SECS * sr as f64) as usize);
    let harmonic_rms = ((1..=HARMONICS).map(|h| 1.0 / (h * h) as f64).sum::<f64>() / 2.0).sqrt();
    let noise_std = harmonic_rms * 10f64.powf(NOISE_DB / 20.0);
    let unvoiced_std = harmonic_rms * 10f64.powf(UNVOICED_NOISE_DB / 20.0);
    let phi = uniform((-PI, PI), rng);
    let mut theta = phi;
    let mut samples = Vec::with_capacity(f0_samples.len());
    for (f, g) in f0_samples.iter().zip(&env) {
        theta += 2.0 * PI * f / sr as f64;
        let harmonic: f64 = (1..=HARMONICS)
            .map(|h| (h as f64 * theta).sin() / h as f64)
            .sum();
        let n: f64 = StandardNormal.sample(rng);
        let floor = noise_std + (1.0 - g) * unvoiced_std;
        samples.push(g * harmonic + floor * n);
    }
    let (waveform, _) = normalize_level(&Waveform::new(samples, sr)?, TARGET_DBOV)?;
    let features = band_features(&waveform, frames)?;
    Ok(Utterance {
        waveform,
        f0,
        features,
    })
}

/// `n_utts` utterances with durations drawn uniformly from `duration`
/// (seconds).
pub fn make_synthetic_dataset<R: Rng + ?Sized>(
    n_utts: usize,
    duration: (f64, f64),
    rng: &mut R,
) -> Result<Vec<Utterance>> {
    if !(duration.0 > 0.0 && duration.0 <= duration.1) {
        return Err(NsfError::Config(format!(
            "invalid duration range {duration:?}"
        )));
    }
    (0..n_utts)
        .map(|_| {
            let secs = if duration.0 == duration.1 {
                duration.0
            } else {
                uniform(duration, rng)
            };
            let frames = ((secs / FRAME_SHIFT_SECS).round() as usize).max(1);
            synthetic_utterance(frames, rng)
        })
        .collect()
}

/// Per-dimension mean and standard deviation of the features of a set.
pub fn feature_stats(utts: &[Utterance]) -> (Vec<f64>, Vec<f64>) {
    let dims = utts.first().map_or(0, |u| u.features.dims());
    let mut sum = vec![0.0; dims];
    let mut sq = vec![0.0; dims];
    let mut count = 0usize;
    for u in utts {
        for n in 0..u.features.num_frames() {
            for (d, v) in u.features.frame(n).iter().enumerate() {
                sum[d] += v;
                sq[d] += v * v;
            }
            count += 1;
        }
    }
    let c = count.max(1) as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / c).collect();
    let std = sq
        .iter()
        .zip(&mean)
        .map(|(s, m)| (s / c - m * m).max(0.0).sqrt().max(1e-3))
        .collect();
    (mean, std)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::pitch::estimate_f0;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn measured_f0_matches_ground_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let utts = make_synthetic_dataset(4, (0.5, 1.0), &mut rng).unwrap();
        let mut scored = 0;
        let mut good = 0;
        for u in &utts {
            let est = estimate_f0(&u.waveform, FRAME_SHIFT_SECS, 70.0, 400.0).unwrap();
            let agree = crate::model::pitch::f0_agreement(&est, &u.f0, 0.02, 4).unwrap();
            scored += agree.voiced_frames;
            good += agree.within;
        }
        assert!(scored > 100);
        assert!(good as f64 >= 0.98 * scored as f64, "{good}/{scored}");
    }

    #[test]
    fn shapes_ranges_and_unvoiced_segments() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let utts = make_synthetic_dataset(3, (0.5, 1.0), &mut rng).unwrap();
        for u in &utts {
            let n = u.num_frames();
            assert!((100..=200).contains(&n));
            assert_eq!(u.waveform.len(), n * 80);
            assert_eq!(u.features.num_frames(), n);
            assert_eq!(u.features.dims(), FEATURE_BANDS);
            let v = u.f0.values();
            assert_eq!(v[0], 0.0);
            assert_eq!(v[n - 1], 0.0);
            assert!(v.iter().any(|f| *f > 0.0));
            assert!(v.iter().all(|f| *f == 0.0 || (80.0..=300.0).contains(f)));
            assert!(u.features.data().iter().all(|x| x.is_finite()));
        }
    }

    #[test]
    fn unvoiced_segments_are_quieter() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let u = synthetic_utterance(200, &mut rng).unwrap();
        let f0 = u.f0.upsample(SAMPLE_RATE).unwrap();
        let (mut ve, mut vn, mut ue, mut un) = (0.0, 0, 0.0, 0);
        for (x, f) in u.waveform.samples().iter().zip(&f0) {
            if *f > 0.0 {
                ve += x * x;
                vn += 1;
            } else {
                ue += x * x;
                un += 1;
            }
        }
        let ratio_db = 10.0 * ((ue / un as f64) / (ve / vn as f64)).log10();
        assert!(ratio_db < -12.0, "{ratio_db}");
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let a = make_synthetic_dataset(2, (0.5, 0.6), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = make_synthetic_dataset(2, (0.5, 0.6), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn features_track_band_energy() {
        let sr = SAMPLE_RATE as f64;
        let tone = |f: f64| {
            Waveform::new(
                (0..8000).map(|t| (2.0 * PI * f * t as f64 / sr).sin()).collect(),
                SAMPLE_RATE,
            )
            .unwrap()
        };
        let low = band_features(&tone(200.0), 100).unwrap();
        let high = band_features(&tone(5000.0), 100).unwrap();
        let argmax = |fs: &FrameSequence| {
            let fr = fs.frame(50);
            (0..fr.len()).max_by(|&a, &b| fr[a].total_cmp(&fr[b])).unwrap()
        };
        assert!(argmax(&low) < 3);
        assert!(argmax(&high) > 10);
    }
}
