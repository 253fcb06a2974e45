//! Multi-resolution log spectral-amplitude loss, the sine-masked variant
//! used on the harmonic-branch block outputs, and the decay-rate penalty.
//!
//! For one STFT configuration with `N` frames and `K' = K/2 + 1` one-sided
//! bins, both losses have the form
//!
//! ```text
//! 1/(2 N K') * sum_n sum_k log( (|y|^2 |m|^2 + eta) / (|p|^2 |m|^2 + eta) )^2
//! ```
//!
//! with `|m|^2 = 1` for the plain loss. Multi-resolution values are the mean
//! over configurations.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NsfError, Result};
use crate::signal::{Stft, StftConfig, Waveform, Window};
use crate::source::{gen_sine_harmonics, SourceConfig, BETA_TARGET};

pub const DEFAULT_ETA: f64 = 1e-5;
pub const BETA_PENALTY_WEIGHT: f64 = 0.01;
/// Number of harmonic-branch blocks whose outputs receive the masked loss.
pub const MASKED_BLOCKS: usize = 5;

pub fn default_stft_configs() -> Vec<StftConfig> {
    vec![
        StftConfig::new(512, 320, 80, Window::Hann),
        StftConfig::new(128, 80, 40, Window::Hann),
        StftConfig::new(2048, 1920, 640, Window::Hann),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskReduction {
    Sum,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub stft_configs: Vec<StftConfig>,
    pub eta: f64,
    /// Apply the masked loss to the harmonic-branch block outputs.
    pub mask_loss: bool,
    pub mask_reduction: MaskReduction,
    pub mask_blocks: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            stft_configs: default_stft_configs(),
            eta: DEFAULT_ETA,
            mask_loss: true,
            mask_reduction: MaskReduction::Sum,
            mask_blocks: MASKED_BLOCKS,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) {
            return Err(NsfError::Config("eta must be > 0".into()));
        }
        if self.stft_configs.is_empty() {
            return Err(NsfError::Config("at least one STFT configuration is required".into()));
        }
        for c in &self.stft_configs {
            c.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossReport {
    pub total: f64,
    /// Plain loss between the final output and the target.
    pub plain: f64,
    /// Plain loss per STFT configuration (`plain` is their mean).
    pub per_config: Vec<f64>,
    pub per_block_masked: Vec<f64>,
    pub beta_penalty: f64,
}

/// Gradients of the total loss with respect to every loss input.
#[derive(Debug, Clone)]
pub struct LossGrads {
    pub output: Vec<f64>,
    pub blocks: Vec<Vec<f64>>,
    pub beta: f64,
}

/// Power spectra of one signal for every configuration of an evaluator.
#[derive(Debug, Clone)]
pub struct PowerSpectra(Vec<Vec<f64>>);

/// STFT plans plus `eta`; evaluates plain and masked losses and gradients.
#[derive(Debug, Clone)]
pub struct SpectralLoss {
    plans: Vec<Stft>,
    eta: f64,
}

impl SpectralLoss {
    pub fn new(configs: &[StftConfig], eta: f64) -> Result<Self> {
        if configs.is_empty() {
            return Err(NsfError::Config("at least one STFT configuration is required".into()));
        }
        if !(eta > 0.0) {
            return Err(NsfError::Config("eta must be > 0".into()));
        }
        let plans = configs.iter().map(|c| Stft::new(*c)).collect::<Result<_>>()?;
        Ok(Self { plans, eta })
    }

    pub fn power(&self, x: &[f64]) -> PowerSpectra {
        PowerSpectra(self.plans.iter().map(|p| p.analyze(x).power()).collect())
    }

    /// Loss of `generated` against precomputed target (and optional mask)
    /// spectra. Returns the mean over configurations, the per-configuration
    /// values and, when requested, `dL/d generated`.
    pub fn evaluate(
        &self,
        generated: &[f64],
        target: &PowerSpectra,
        mask: Option<&PowerSpectra>,
        want_grad: bool,
    ) -> (f64, Vec<f64>, Option<Vec<f64>>) {
        let n_cfg = self.plans.len() as f64;
        let mut per_config = Vec::with_capacity(self.plans.len());
        let mut grad = want_grad.then(|| vec![0.0; generated.len()]);
        for (i, plan) in self.plans.iter().enumerate() {
            let spec = plan.analyze(generated);
            let norm = 2.0 * spec.num_frames() as f64 * spec.num_bins() as f64;
            let tgt = &target.0[i];
            let m = mask.map(|m| &m.0[i]);
            let mut sum = 0.0;
            let mut coeffs = want_grad.then(|| Vec::with_capacity(tgt.len()));
            for (k, x) in spec.bins().iter().enumerate() {
                let mk = m.map_or(1.0, |m| m[k]);
                let p = x.norm_sqr();
                let den = p * mk + self.eta;
                let r = (tgt[k] * mk + self.eta).ln() - den.ln();
                sum += r * r;
                if let Some(c) = coeffs.as_mut() {
                    // d/dp of r^2 / norm, averaged over configurations
                    let dp = -2.0 * r * mk / den / norm / n_cfg;
                    c.push(x.conj() * dp);
                }
            }
            per_config.push(sum / norm);
            if let (Some(g), Some(c)) = (grad.as_mut(), coeffs) {
                let gx = plan.power_adjoint(&c, generated.len());
                for (a, b) in g.iter_mut().zip(gx) {
                    *a += b;
                }
            }
        }
        let mean = per_config.iter().sum::<f64>() / n_cfg;
        (mean, per_config, grad)
    }
}

fn check_lengths(a: &Waveform, b: &Waveform, what: &'static str) -> Result<()> {
    if a.len() != b.len() {
        return Err(NsfError::LengthMismatch {
            what,
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(())
}

/// Plain multi-resolution spectral amplitude loss.
pub fn spectral_amplitude_loss(
    generated: &Waveform,
    target: &Waveform,
    configs: &[StftConfig],
) -> Result<f64> {
    Ok(spectral_amplitude_loss_report(generated, target, configs, DEFAULT_ETA)?.0)
}

/// Plain loss with per-configuration values.
pub fn spectral_amplitude_loss_report(
    generated: &Waveform,
    target: &Waveform,
    configs: &[StftConfig],
    eta: f64,
) -> Result<(f64, Vec<f64>)> {
    check_lengths(generated, target, "generated vs target")?;
    let loss = SpectralLoss::new(configs, eta)?;
    let (v, per, _) = loss.evaluate(generated.samples(), &loss.power(target.samples()), None, false);
    Ok((v, per))
}

/// Sine mask: mean of the `cfg.harmonics` sine signals for `f0`, drawn
/// with fresh phase and noise.
pub fn build_sine_mask<R: Rng + ?Sized>(
    f0: &[f64],
    cfg: &SourceConfig,
    rng: &mut R,
) -> Result<Waveform> {
    let harmonics = gen_sine_harmonics(f0, cfg, rng)?;
    let mut acc = vec![0.0; f0.len()];
    for h in &harmonics {
        for (a, v) in acc.iter_mut().zip(h.samples()) {
            *a += v;
        }
    }
    let scale = 1.0 / harmonics.len() as f64;
    Waveform::new(acc.into_iter().map(|v| v * scale).collect(), cfg.sample_rate)
}

pub fn masked_spectral_loss(
    block_output: &Waveform,
    target: &Waveform,
    mask: &Waveform,
    configs: &[StftConfig],
    eta: f64,
) -> Result<f64> {
    check_lengths(block_output, target, "block output vs target")?;
    check_lengths(mask, target, "mask vs target")?;
    let loss = SpectralLoss::new(configs, eta)?;
    let (v, _, _) = loss.evaluate(
        block_output.samples(),
        &loss.power(target.samples()),
        Some(&loss.power(mask.samples())),
        false,
    );
    Ok(v)
}

/// `0.01 |beta - 0.870|` and its subgradient (0 at the target).
pub fn beta_penalty(beta: f64) -> (f64, f64) {
    let d = beta - BETA_TARGET;
    let grad = if d > 0.0 {
        BETA_PENALTY_WEIGHT
    } else if d < 0.0 {
        -BETA_PENALTY_WEIGHT
    } else {
        0.0
    };
    (BETA_PENALTY_WEIGHT * d.abs(), grad)
}

/// Everything the training loss looks at from one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct LossInputs<'a> {
    pub output: &'a [f64],
    pub blocks: &'a [Vec<f64>],
    pub target: &'a [f64],
    pub mask: Option<&'a [f64]>,
    /// `Some` when the decay rate is trainable.
    pub trainable_beta: Option<f64>,
}

/// Total training loss with gradients for every input.
pub fn total_loss_with_grads(
    inputs: LossInputs<'_>,
    cfg: &LossConfig,
    evaluator: &SpectralLoss,
    want_grad: bool,
) -> Result<(LossReport, Option<LossGrads>)> {
    let len = inputs.target.len();
    if inputs.output.len() != len {
        return Err(NsfError::LengthMismatch {
            what: "output vs target",
            left: inputs.output.len(),
            right: len,
        });
    }
    let target = evaluator.power(inputs.target);
    let (plain, per_config, out_grad) = evaluator.evaluate(inputs.output, &target, None, want_grad);

    let mut per_block = Vec::new();
    let mut block_grads = Vec::new();
    if cfg.mask_loss {
        if inputs.blocks.len() < cfg.mask_blocks {
            return Err(NsfError::InvalidInput(format!(
                "masked loss needs {} block outputs, got {}",
                cfg.mask_blocks,
                inputs.blocks.len()
            )));
        }
        let mask = inputs
            .mask
            .ok_or_else(|| NsfError::InvalidInput("masked loss enabled but no mask given".into()))?;
        if mask.len() != len {
            return Err(NsfError::LengthMismatch {
                what: "mask vs target",
                left: mask.len(),
                right: len,
            });
        }
        let mask_power = evaluator.power(mask);
        let weight = match cfg.mask_reduction {
            MaskReduction::Sum => 1.0,
            MaskReduction::Mean => 1.0 / cfg.mask_blocks as f64,
        };
        for block in &inputs.blocks[..cfg.mask_blocks] {
            if block.len() != len {
                return Err(NsfError::LengthMismatch {
                    what: "block output vs target",
                    left: block.len(),
                    right: len,
                });
            }
            let (v, _, g) = evaluator.evaluate(block, &target, Some(&mask_power), want_grad);
            per_block.push(v);
            if let Some(mut g) = g {
                if weight != 1.0 {
                    g.iter_mut().for_each(|x| *x *= weight);
                }
                block_grads.push(g);
            }
        }
    }
    let masked_total = match cfg.mask_reduction {
        MaskReduction::Sum => per_block.iter().sum::<f64>(),
        MaskReduction::Mean if !per_block.is_empty() => {
            per_block.iter().sum::<f64>() / per_block.len() as f64
        }
        MaskReduction::Mean => 0.0,
    };
    let (penalty, beta_grad) = inputs.trainable_beta.map_or((0.0, 0.0), beta_penalty);
    let report = LossReport {
        total: plain + masked_total + penalty,
        plain,
        per_config,
        per_block_masked: per_block,
        beta_penalty: penalty,
    };
    let grads = out_grad.map(|output| LossGrads {
        output,
        blocks: block_grads,
        beta: beta_grad,
    });
    Ok((report, grads))
}

/// Convenience wrapper over [`total_loss_with_grads`] for waveforms.
pub fn total_training_loss(
    output: &Waveform,
    blocks: &[Waveform],
    target: &Waveform,
    mask: Option<&Waveform>,
    cfg: &LossConfig,
    trainable_beta: Option<f64>,
) -> Result<LossReport> {
    cfg.validate()?;
    let evaluator = SpectralLoss::new(&cfg.stft_configs, cfg.eta)?;
    let blocks: Vec<Vec<f64>> = blocks.iter().map(|b| b.samples().to_vec()).collect();
    let (report, _) = total_loss_with_grads(
        LossInputs {
            output: output.samples(),
            blocks: &blocks,
            target: target.samples(),
            mask: mask.map(|m| m.samples()),
            trainable_beta,
        },
        cfg,
        &evaluator,
        false,
    )?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn wave(x: Vec<f64>) -> Waveform {
        Waveform::new(x, 16000).unwrap()
    }

    fn harmonic_signal(f0: f64, len: usize, noise_std: f64, seed: u64) -> Waveform {
        let mut r = rng(seed);
        let phases: Vec<f64> = (0..6).map(|_| r.random_range(-PI..PI)).collect();
        let noise = crate::source::gaussian_noise(len, noise_std, &mut r);
        wave(
            (0..len)
                .map(|t| {
                    let s: f64 = (1..=6)
                        .map(|h| {
                            (2.0 * PI * f0 * h as f64 * t as f64 / 16000.0 + phases[h - 1]).sin()
                                / h as f64
                        })
                        .sum();
                    0.1 * s + noise[t]
                })
                .collect(),
        )
    }

    #[test]
    fn identical_signals_give_zero() {
        let x = harmonic_signal(200.0, 4000, 0.001, 1);
        assert_eq!(spectral_amplitude_loss(&x, &x, &default_stft_configs()).unwrap(), 0.0);
        let mask = build_sine_mask(&vec![200.0; 4000], &SourceConfig::default(), &mut rng(2)).unwrap();
        assert_eq!(
            masked_spectral_loss(&x, &x, &mask, &default_stft_configs(), DEFAULT_ETA).unwrap(),
            0.0
        );
    }

    #[test]
    fn doubled_amplitude_gives_log4_squared_over_two() {
        let x = crate::source::gen_gaussian_noise(8000, 0.1, 16000, &mut rng(3)).unwrap();
        let x2 = x.scaled(2.0);
        let l = spectral_amplitude_loss(&x2, &x, &default_stft_configs()).unwrap();
        // every energetic bin contributes log(1/4)^2, halved by the 1/(2NK') factor
        let expected = 4f64.ln().powi(2) / 2.0;
        assert!((l - expected).abs() < 0.02 * expected, "{l} vs {expected}");
    }

    #[test]
    fn loss_is_symmetric() {
        let a = harmonic_signal(180.0, 3000, 0.01, 4);
        let b = harmonic_signal(190.0, 3000, 0.01, 5);
        let cfgs = default_stft_configs();
        let ab = spectral_amplitude_loss(&a, &b, &cfgs).unwrap();
        let ba = spectral_amplitude_loss(&b, &a, &cfgs).unwrap();
        assert!((ab - ba).abs() < 1e-12 * ab);
    }

    #[test]
    fn length_mismatch_rejected() {
        let cfgs = default_stft_configs();
        assert!(spectral_amplitude_loss(&Waveform::zeros(10, 16000), &Waveform::zeros(11, 16000), &cfgs).is_err());
    }

    #[test]
    fn zero_mask_gives_zero() {
        let a = harmonic_signal(200.0, 3000, 0.01, 6);
        let b = harmonic_signal(250.0, 3000, 0.01, 7);
        let l = masked_spectral_loss(&a, &b, &Waveform::zeros(3000, 16000), &default_stft_configs(), DEFAULT_ETA).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn mask_has_peaks_at_harmonics() {
        let cfg = SourceConfig {
            sigma: 1e-9,
            ..SourceConfig::default()
        };
        let mask = build_sine_mask(&vec![200.0; 2048], &cfg, &mut rng(8)).unwrap();
        let spec = crate::signal::stft(&mask, &StftConfig::new(2048, 2048, 2048, Window::Hann)).unwrap();
        let p = spec.power();
        // 8 largest local maxima
        let mut peaks: Vec<(usize, f64)> = (1..p.len() - 1)
            .filter(|&k| p[k] > p[k - 1] && p[k] >= p[k + 1])
            .map(|k| (k, p[k]))
            .collect();
        peaks.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        let mut bins: Vec<usize> = peaks[..8].iter().map(|(k, _)| *k).collect();
        bins.sort();
        for (h, k) in bins.iter().enumerate() {
            let expected = 200.0 * (h + 1) as f64 * 2048.0 / 16000.0;
            assert!((*k as f64 - expected).abs() <= 1.0, "harmonic {}: bin {k}", h + 1);
        }
        // single harmonic -> single dominant peak
        let one = SourceConfig { harmonics: 1, ..cfg };
        let m1 = build_sine_mask(&vec![200.0; 2048], &one, &mut rng(9)).unwrap();
        let p1 = crate::signal::stft(&m1, &StftConfig::new(2048, 2048, 2048, Window::Hann)).unwrap().power();
        let argmax = (0..p1.len()).max_by(|&a, &b| p1[a].partial_cmp(&p1[b]).unwrap()).unwrap();
        assert!((argmax as f64 - 25.6).abs() <= 1.0);
    }

    #[test]
    fn unvoiced_mask_is_low_level_noise() {
        let cfg = SourceConfig::default();
        let m = build_sine_mask(&vec![0.0; 50_000], &cfg, &mut rng(10)).unwrap();
        // mean of 8 independent N(0, (alpha/3)^2) channels
        let expected = cfg.alpha / 3.0 / (8f64).sqrt();
        assert!((m.rms() - expected).abs() < 0.03 * expected);
    }

    #[test]
    fn pitch_shift_raises_masked_loss() {
        let target = harmonic_signal(200.0, 6000, 0.002, 11);
        let copy = harmonic_signal(200.0, 6000, 0.002, 12);
        let shifted = harmonic_signal(220.0, 6000, 0.002, 12);
        let mask = build_sine_mask(&vec![200.0; 6000], &SourceConfig::default(), &mut rng(13)).unwrap();
        let cfgs = default_stft_configs();
        let same = masked_spectral_loss(&copy, &target, &mask, &cfgs, DEFAULT_ETA).unwrap();
        let off = masked_spectral_loss(&shifted, &target, &mask, &cfgs, DEFAULT_ETA).unwrap();
        assert!(off > same, "{off} <= {same}");
    }

    #[test]
    fn envelope_change_between_harmonics_matters_less_than_pitch_shift() {
        let target = harmonic_signal(200.0, 6000, 0.002, 14);
        // same harmonics, noise floor between them raised: a spectral-envelope
        // change that is flat at the harmonic peaks
        let tilted = harmonic_signal(200.0, 6000, 0.004, 14);
        let shifted = harmonic_signal(220.0, 6000, 0.002, 14);
        let mask = build_sine_mask(&vec![200.0; 6000], &SourceConfig::default(), &mut rng(15)).unwrap();
        let cfgs = default_stft_configs();
        let lt = masked_spectral_loss(&tilted, &target, &mask, &cfgs, DEFAULT_ETA).unwrap();
        let ls = masked_spectral_loss(&shifted, &target, &mask, &cfgs, DEFAULT_ETA).unwrap();
        assert!(lt < ls, "{lt} >= {ls}");
    }

    #[test]
    fn circular_shift_by_hop_keeps_loss() {
        // rect window, non-overlapping frames tiling the whole signal
        let cfgs = vec![StftConfig::new(64, 64, 64, Window::Rect)];
        let a = harmonic_signal(210.0, 640, 0.01, 16);
        let b = harmonic_signal(230.0, 640, 0.01, 17);
        let rot = |w: &Waveform| {
            let mut s = w.samples().to_vec();
            s.rotate_right(64);
            wave(s)
        };
        let l0 = spectral_amplitude_loss(&a, &b, &cfgs).unwrap();
        let l1 = spectral_amplitude_loss(&rot(&a), &rot(&b), &cfgs).unwrap();
        assert!((l0 - l1).abs() < 1e-12 * l0);
    }

    #[test]
    fn total_loss_examples() {
        let cfg = LossConfig::default();
        let x = harmonic_signal(200.0, 4000, 0.002, 18);
        let blocks = vec![x.clone(); 5];
        let mask = build_sine_mask(&vec![200.0; 4000], &SourceConfig::default(), &mut rng(19)).unwrap();
        let r = total_training_loss(&x, &blocks, &x, Some(&mask), &cfg, Some(0.870)).unwrap();
        assert_eq!(r.total, 0.0);
        let r = total_training_loss(&x, &blocks, &x, Some(&mask), &cfg, Some(1.870)).unwrap();
        assert!((r.total - 0.01).abs() < 1e-15);
        // masked loss enabled but only 3 blocks
        assert!(total_training_loss(&x, &blocks[..3], &x, Some(&mask), &cfg, None).is_err());
        let plain_only = LossConfig {
            mask_loss: false,
            ..LossConfig::default()
        };
        let y = harmonic_signal(210.0, 4000, 0.002, 20);
        let r = total_training_loss(&y, &[], &x, None, &plain_only, None).unwrap();
        let plain = spectral_amplitude_loss(&y, &x, &plain_only.stft_configs).unwrap();
        assert_eq!(r.total, plain);
        assert!(r.per_block_masked.is_empty());
    }

    #[test]
    fn beta_penalty_subgradient() {
        assert_eq!(beta_penalty(0.870), (0.0, 0.0));
        assert_eq!(beta_penalty(1.0).1, 0.01);
        assert_eq!(beta_penalty(0.5).1, -0.01);
    }

    #[test]
    fn loss_gradient_matches_finite_difference() {
        let cfgs = vec![
            StftConfig::new(64, 48, 16, Window::Hann),
            StftConfig::new(32, 32, 8, Window::Rect),
        ];
        let ev = SpectralLoss::new(&cfgs, DEFAULT_ETA).unwrap();
        let target = harmonic_signal(300.0, 200, 0.01, 21);
        let gen = harmonic_signal(320.0, 200, 0.01, 22);
        let mask = build_sine_mask(&vec![300.0; 200], &SourceConfig::default(), &mut rng(23)).unwrap();
        let tp = ev.power(target.samples());
        let mp = ev.power(mask.samples());
        for m in [None, Some(&mp)] {
            let (_, _, g) = ev.evaluate(gen.samples(), &tp, m, true);
            let g = g.unwrap();
            for i in [0, 13, 77, 150, 199] {
                let mut xp = gen.samples().to_vec();
                let mut xm = xp.clone();
                xp[i] += 1e-6;
                xm[i] -= 1e-6;
                let fd = (ev.evaluate(&xp, &tp, m, false).0 - ev.evaluate(&xm, &tp, m, false).0) / 2e-6;
                assert!((fd - g[i]).abs() < 1e-5 * fd.abs().max(1e-3), "{i}: {fd} vs {}", g[i]);
            }
        }
    }
}
