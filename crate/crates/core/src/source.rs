//! Excitation signals for the harmonic branch: sine harmonics, pulse train,
//! Gaussian noise and cyclic noise, plus the tanh mixing layer.
//!
//! Every generator takes the caller's RNG and draws from it in a fixed
//! order (initial phase first, then noise), so that a seeded RNG reproduces
//! the same signal bit for bit. The `*_from_parts` functions expose the
//! deterministic part of each generator for callers that manage their own
//! random draws.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{NsfError, Result};
use crate::signal::{Waveform, SAMPLE_RATE};

/// Decay rates used by the reference cyclic-noise configurations.
pub const BETA_REFERENCES: [f64; 3] = [0.435, 0.870, 1.739];
/// Value the trainable decay rate is pulled towards.
pub const BETA_TARGET: f64 = 0.870;

/// Lags whose decay exponent exceeds this contribute less than e^-50 and are
/// dropped from the cyclic-noise sum.
const MAX_DECAY_EXPONENT: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceConfig {
    /// Number of sine harmonics H.
    pub harmonics: usize,
    /// Standard deviation of the additive Gaussian noise.
    pub sigma: f64,
    /// Amplitude of each sine harmonic.
    pub alpha: f64,
    pub sample_rate: u32,
    pub seed: u64,
}

impl Default for SourceConfig {
    fn default() -> Self {
        Self {
            harmonics: 8,
            sigma: 0.003,
            alpha: 0.1,
            sample_rate: SAMPLE_RATE,
            seed: 0,
        }
    }
}

impl SourceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.harmonics == 0 {
            return Err(NsfError::Config("harmonic count must be >= 1".into()));
        }
        if !(self.sigma > 0.0) || !(self.alpha > 0.0) {
            return Err(NsfError::Config("sigma and alpha must be > 0".into()));
        }
        if self.sample_rate == 0 {
            return Err(NsfError::Config("sample_rate must be > 0".into()));
        }
        Ok(())
    }
}

/// Trainable feedforward layer followed by tanh: `tanh(sum_h w_h x_h + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixLayer {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl MixLayer {
    pub fn new(weights: Vec<f64>, bias: f64) -> Self {
        Self { weights, bias }
    }

    /// Uniform(-1/sqrt(n), 1/sqrt(n)) weights, zero bias.
    pub fn init<R: Rng + ?Sized>(inputs: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let weights = (0..inputs).map(|_| rng.random_range(-bound..bound)).collect();
        Self { weights, bias: 0.0 }
    }

    pub fn inputs(&self) -> usize {
        self.weights.len()
    }
}

/// Per-sample (or constant) cyclic-noise decay rate.
#[derive(Debug, Clone, PartialEq)]
pub enum Beta {
    Constant(f64),
    PerSample(Vec<f64>),
}

impl Beta {
    pub fn at(&self, t: usize) -> f64 {
        match self {
            Beta::Constant(b) => *b,
            Beta::PerSample(v) => v[t],
        }
    }

    fn validate(&self, len: usize) -> Result<()> {
        let ok = match self {
            Beta::Constant(b) => *b > 0.0 && b.is_finite(),
            Beta::PerSample(v) => {
                if v.len() != len {
                    return Err(NsfError::LengthMismatch {
                        what: "beta track vs f0",
                        left: v.len(),
                        right: len,
                    });
                }
                v.iter().all(|b| *b > 0.0 && b.is_finite())
            }
        };
        if ok {
            Ok(())
        } else {
            Err(NsfError::InvalidInput("beta must be > 0 everywhere".into()))
        }
    }
}

fn validate_f0(f0: &[f64]) -> Result<()> {
    if let Some((t, v)) = f0.iter().enumerate().find(|(_, v)| !(**v >= 0.0) || !v.is_finite()) {
        return Err(NsfError::InvalidInput(format!(
            "f0 must be finite and >= 0 (sample {t} is {v})"
        )));
    }
    Ok(())
}

/// Initial phase, uniform in [-pi, pi].
pub fn draw_phase<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.random_range(-PI..=PI)
}

/// `len` i.i.d. N(0, std^2) draws.
pub fn gaussian_noise<R: Rng + ?Sized>(len: usize, std: f64, rng: &mut R) -> Vec<f64> {
    (0..len)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            std * z
        })
        .collect()
}

pub fn gen_gaussian_noise<R: Rng + ?Sized>(
    len: usize,
    std: f64,
    sample_rate: u32,
    rng: &mut R,
) -> Result<Waveform> {
    if len == 0 || !(std > 0.0) {
        return Err(NsfError::InvalidInput("noise needs length >= 1 and std > 0".into()));
    }
    Waveform::new(gaussian_noise(len, std, rng), sample_rate)
}

/// Running phase `sum_{k <= t} 2 pi f_k / Ns` of the fundamental. The sum
/// keeps accumulating through unvoiced samples (where it adds zero).
pub fn cumulative_phase(f0: &[f64], sample_rate: u32) -> Vec<f64> {
    let scale = 2.0 * PI / sample_rate as f64;
    let mut acc = 0.0;
    f0.iter()
        .map(|f| {
            acc += f * scale;
            acc
        })
        .collect()
}

/// Harmonic `h` given a precomputed fundamental phase, the initial phase and
/// the additive noise draws (std `cfg.sigma`).
pub fn sine_harmonic_from_parts(
    f0: &[f64],
    base_phase: &[f64],
    h: usize,
    phi: f64,
    noise: &[f64],
    cfg: &SourceConfig,
) -> Vec<f64> {
    let unvoiced_gain = cfg.alpha / (3.0 * cfg.sigma);
    f0.iter()
        .zip(base_phase)
        .zip(noise)
        .map(|((&f, &theta), &n)| {
            if f > 0.0 {
                cfg.alpha * (h as f64 * theta + phi).sin() + n
            } else {
                unvoiced_gain * n
            }
        })
        .collect()
}

/// Sine-based signal carrying harmonic `h` of the up-sampled F0.
pub fn gen_sine_harmonic<R: Rng + ?Sized>(
    f0: &[f64],
    h: usize,
    cfg: &SourceConfig,
    rng: &mut R,
) -> Result<Waveform> {
    cfg.validate()?;
    validate_f0(f0)?;
    if h == 0 {
        return Err(NsfError::InvalidInput("harmonic index must be >= 1".into()));
    }
    let phi = draw_phase(rng);
    let noise = gaussian_noise(f0.len(), cfg.sigma, rng);
    let theta = cumulative_phase(f0, cfg.sample_rate);
    Waveform::new(
        sine_harmonic_from_parts(f0, &theta, h, phi, &noise, cfg),
        cfg.sample_rate,
    )
}

/// All `cfg.harmonics` sine signals with one shared initial phase and
/// independent noise per harmonic.
pub fn gen_sine_harmonics<R: Rng + ?Sized>(
    f0: &[f64],
    cfg: &SourceConfig,
    rng: &mut R,
) -> Result<Vec<Waveform>> {
    cfg.validate()?;
    validate_f0(f0)?;
    let phi = draw_phase(rng);
    let theta = cumulative_phase(f0, cfg.sample_rate);
    (1..=cfg.harmonics)
        .map(|h| {
            let noise = gaussian_noise(f0.len(), cfg.sigma, rng);
            Waveform::new(
                sine_harmonic_from_parts(f0, &theta, h, phi, &noise, cfg),
                cfg.sample_rate,
            )
        })
        .collect()
}

/// `tanh(sum_h w_h x_h + b)` over equal-length channels.
pub fn mix_tanh_slices(channels: &[&[f64]], layer: &MixLayer) -> Result<Vec<f64>> {
    if channels.len() != layer.inputs() {
        return Err(NsfError::LengthMismatch {
            what: "mix layer weights vs channels",
            left: layer.inputs(),
            right: channels.len(),
        });
    }
    let len = channels.first().map_or(0, |c| c.len());
    if let Some(c) = channels.iter().find(|c| c.len() != len) {
        return Err(NsfError::LengthMismatch {
            what: "mix channel lengths",
            left: len,
            right: c.len(),
        });
    }
    let mut acc = vec![layer.bias; len];
    for (ch, w) in channels.iter().zip(&layer.weights) {
        for (a, x) in acc.iter_mut().zip(ch.iter()) {
            *a += w * x;
        }
    }
    Ok(acc.into_iter().map(f64::tanh).collect())
}

pub fn mix_tanh(channels: &[Waveform], layer: &MixLayer) -> Result<Waveform> {
    let sr = channels.first().map_or(SAMPLE_RATE, |c| c.sample_rate());
    let slices: Vec<&[f64]> = channels.iter().map(|c| c.samples()).collect();
    Waveform::new(mix_tanh_slices(&slices, layer)?, sr)
}

/// Sample indices of the local maxima of `sin(theta_t + phi)` that fall in
/// voiced samples. A flat-topped peak is reported at its first sample.
pub fn pulse_positions(f0: &[f64], base_phase: &[f64], phi: f64) -> Vec<usize> {
    let s: Vec<f64> = base_phase.iter().map(|th| (th + phi).sin()).collect();
    let len = s.len();
    let mut out = Vec::new();
    for t in 1..len.saturating_sub(1) {
        if !(f0[t] > 0.0) || !(s[t] > s[t - 1]) {
            continue;
        }
        let mut next = t + 1;
        while next < len && s[next] == s[t] {
            next += 1;
        }
        if next < len && s[next] < s[t] {
            out.push(t);
        }
    }
    out
}

/// Unit pulses at `positions`; unvoiced samples carry `(alpha / 3 sigma) n_t`.
pub fn pulse_train_from_parts(
    f0: &[f64],
    positions: &[usize],
    noise: &[f64],
    cfg: &SourceConfig,
) -> Vec<f64> {
    let unvoiced_gain = cfg.alpha / (3.0 * cfg.sigma);
    let mut out: Vec<f64> = f0
        .iter()
        .zip(noise)
        .map(|(&f, &n)| if f > 0.0 { 0.0 } else { unvoiced_gain * n })
        .collect();
    for &p in positions {
        out[p] = 1.0;
    }
    out
}

pub fn gen_pulse_train<R: Rng + ?Sized>(
    f0: &[f64],
    cfg: &SourceConfig,
    rng: &mut R,
) -> Result<Waveform> {
    cfg.validate()?;
    validate_f0(f0)?;
    let phi = draw_phase(rng);
    let noise = gaussian_noise(f0.len(), cfg.sigma, rng);
    let theta = cumulative_phase(f0, cfg.sample_rate);
    let pulses = pulse_positions(f0, &theta, phi);
    Waveform::new(
        pulse_train_from_parts(f0, &pulses, &noise, cfg),
        cfg.sample_rate,
    )
}

/// Cyclic-noise excitation before the mix layer, and optionally its
/// derivative with respect to the decay rate at each sample.
///
/// Voiced `t`: sum over earlier pulses at `t - k` of
/// `n[k] * exp(-k f_t / (beta_t Ns))`; unvoiced `t`: `n[t]`.
/// `noise[k]` is the noise value used at lag `k` (and at time `k` when
/// unvoiced), so every pulse excites the same decaying noise kernel.
pub fn cyclic_excitation_from_parts(
    f0: &[f64],
    beta: &Beta,
    pulses: &[usize],
    noise: &[f64],
    sample_rate: u32,
    with_beta_grad: bool,
) -> (Vec<f64>, Option<Vec<f64>>) {
    let ns = sample_rate as f64;
    let len = f0.len();
    let mut out = vec![0.0; len];
    let mut dbeta = with_beta_grad.then(|| vec![0.0; len]);
    // index of the first pulse that lies after t
    let mut next_pulse = 0;
    for t in 0..len {
        while next_pulse < pulses.len() && pulses[next_pulse] <= t {
            next_pulse += 1;
        }
        let f = f0[t];
        if !(f > 0.0) {
            out[t] = noise[t];
            continue;
        }
        let b = beta.at(t);
        let rate = f / (b * ns);
        let mut acc = 0.0;
        let mut dacc = 0.0;
        for &p in pulses[..next_pulse].iter().rev() {
            let k = t - p;
            let expo = k as f64 * rate;
            if expo > MAX_DECAY_EXPONENT {
                break;
            }
            let term = noise[k] * (-expo).exp();
            acc += term;
            // d/d beta of exp(-k f / (beta Ns)) = exp(..) * k f / (beta^2 Ns)
            dacc += term * expo / b;
        }
        out[t] = acc;
        if let Some(d) = dbeta.as_mut() {
            d[t] = dacc;
        }
    }
    (out, dbeta)
}

/// Raw cyclic noise (before the mix layer) with fresh draws from `rng`.
pub fn gen_cyclic_excitation<R: Rng + ?Sized>(
    f0: &[f64],
    beta: &Beta,
    cfg: &SourceConfig,
    rng: &mut R,
) -> Result<Waveform> {
    cfg.validate()?;
    validate_f0(f0)?;
    beta.validate(f0.len())?;
    let phi = draw_phase(rng);
    let noise = gaussian_noise(f0.len(), cfg.sigma, rng);
    let theta = cumulative_phase(f0, cfg.sample_rate);
    let pulses = pulse_positions(f0, &theta, phi);
    let (e, _) = cyclic_excitation_from_parts(f0, beta, &pulses, &noise, cfg.sample_rate, false);
    Waveform::new(e, cfg.sample_rate)
}

/// Cyclic-noise source: raw excitation passed through `tanh(w_1 x + w_b)`.
pub fn gen_cyclic_noise<R: Rng + ?Sized>(
    f0: &[f64],
    beta: &Beta,
    cfg: &SourceConfig,
    layer: &MixLayer,
    rng: &mut R,
) -> Result<Waveform> {
    let raw = gen_cyclic_excitation(f0, beta, cfg, rng)?;
    Waveform::new(mix_tanh_slices(&[raw.samples()], layer)?, cfg.sample_rate)
}

/// Ensemble estimate of the per-period decay of the cyclic-noise kernel.
///
/// A single pulse at sample 0 is excited `draws` times with constant `f0_hz`
/// and `beta`; the mean-square energy over lags `[P, 2P)` is divided by the
/// energy over `[0, P)`, with `P = round(Ns / f0)`. The square root of that
/// ratio is returned together with its expected value.
pub fn cyclic_decay_ratio<R: Rng + ?Sized>(
    f0_hz: f64,
    beta: f64,
    cfg: &SourceConfig,
    draws: usize,
    rng: &mut R,
) -> Result<DecayEstimate> {
    cfg.validate()?;
    if !(f0_hz > 0.0) || !(beta > 0.0) || draws == 0 {
        return Err(NsfError::InvalidInput("decay estimate needs f0 > 0, beta > 0, draws >= 1".into()));
    }
    let period = (cfg.sample_rate as f64 / f0_hz).round() as usize;
    let len = 2 * period;
    let f0 = vec![f0_hz; len];
    let beta = Beta::Constant(beta);
    let mut first = 0.0;
    let mut second = 0.0;
    let mut envelope = vec![0.0; len];
    for _ in 0..draws {
        let noise = gaussian_noise(len, cfg.sigma, rng);
        let (e, _) = cyclic_excitation_from_parts(&f0, &beta, &[0], &noise, cfg.sample_rate, false);
        for (t, v) in e.iter().enumerate() {
            envelope[t] += v * v;
        }
        first += e[..period].iter().map(|v| v * v).sum::<f64>();
        second += e[period..].iter().map(|v| v * v).sum::<f64>();
    }
    let lag0 = envelope[0];
    let envelope = envelope
        .iter()
        .map(|v| if lag0 > 0.0 { (v / lag0).sqrt() } else { 0.0 })
        .collect();
    let expected = (-(period as f64 * f0_hz / cfg.sample_rate as f64) / beta.at(0)).exp();
    Ok(DecayEstimate {
        period,
        ratio: (second / first).sqrt(),
        expected,
        envelope,
    })
}

#[derive(Debug, Clone)]
pub struct DecayEstimate {
    pub period: usize,
    /// Measured RMS ratio between the second and first period after a pulse.
    pub ratio: f64,
    /// `exp(-P f / (beta Ns))`, i.e. `exp(-1/beta)` when `P` is exact.
    pub expected: f64,
    /// Ensemble RMS per lag over two periods, relative to lag 0.
    pub envelope: Vec<f64>,
}
