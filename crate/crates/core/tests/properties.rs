use std::f64::consts::PI;

use nsf_core::loss::{default_stft_configs, SpectralLoss, DEFAULT_ETA};
use nsf_core::signal::{Stft, StftConfig, Window};
use nsf_core::sinc::{design_highpass, design_lowpass, filter_timevariant, FilterKind, SincFilterSpec};
use nsf_core::source::{
    cumulative_phase, cyclic_excitation_from_parts, gaussian_noise, pulse_positions, Beta,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn signal(len: usize, seed: u64) -> Vec<f64> {
    gaussian_noise(len, 0.5, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn stft_config() -> impl Strategy<Value = StftConfig> {
    (3u32..8, 0.3f64..1.0, 0.1f64..1.0, prop::sample::select(vec![Window::Hann, Window::Hamming, Window::Rect]))
        .prop_map(|(log_k, len_frac, shift_frac, window)| {
            let k = 1usize << log_k;
            let len = ((k as f64 * len_frac) as usize).max(2);
            let shift = ((len as f64 * shift_frac) as usize).max(1);
            StftConfig::new(k, len, shift, window)
        })
}

fn dft_bin(frame: &[f64], k: usize, size: usize) -> (f64, f64) {
    frame.iter().enumerate().fold((0.0, 0.0), |(re, im), (n, v)| {
        let w = -2.0 * PI * ((k * n) % size) as f64 / size as f64;
        (re + v * w.cos(), im + v * w.sin())
    })
}

/// `sum_k noise[k] exp(-k f_t / (beta_t Ns)) p[t - k]` over every lag.
fn cyclic_oracle(f0: &[f64], beta: &[f64], pulses: &[usize], noise: &[f64], ns: f64) -> Vec<f64> {
    let mut p = vec![0.0; f0.len()];
    for &i in pulses {
        p[i] = 1.0;
    }
    (0..f0.len())
        .map(|t| {
            if f0[t] > 0.0 {
                (0..=t)
                    .map(|k| noise[k] * (-(k as f64) * f0[t] / (beta[t] * ns)).exp() * p[t - k])
                    .sum()
            } else {
                noise[t]
            }
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn stft_matches_direct_dft(cfg in stft_config(), len in 1usize..600, seed in any::<u64>()) {
        let x = signal(len, seed);
        let plan = Stft::new(cfg).unwrap();
        let spec = plan.analyze(&x);
        prop_assert_eq!(spec.num_frames(), cfg.num_frames(len));
        let scale = x.iter().map(|v| v.abs()).sum::<f64>().max(1.0);
        for m in 0..spec.num_frames() {
            let frame: Vec<f64> = (0..cfg.frame_length)
                .map(|n| x.get(m * cfg.frame_shift + n).copied().unwrap_or(0.0) * plan.window()[n])
                .collect();
            for (k, got) in spec.frame(m).iter().enumerate() {
                let (re, im) = dft_bin(&frame, k, cfg.fft_size);
                prop_assert!((got.re - re).abs() < 1e-10 * scale && (got.im - im).abs() < 1e-10 * scale);
            }
        }
    }

    #[test]
    fn rect_frame_energy_matches_spectrum(
        log_k in 3u32..10,
        len_frac in 0.1f64..1.0,
        seed in any::<u64>(),
    ) {
        let k = 1usize << log_k;
        let len = ((k as f64 * len_frac) as usize).max(1);
        let x = signal(len, seed);
        let spec = Stft::new(StftConfig::new(k, len, len, Window::Rect)).unwrap().analyze(&x);
        let bins = spec.frame(0);
        // one-sided bins: DC and Nyquist once, the rest twice
        let two_sided: f64 = bins
            .iter()
            .enumerate()
            .map(|(i, c)| if i == 0 || i == k / 2 { c.norm_sqr() } else { 2.0 * c.norm_sqr() })
            .sum();
        let energy: f64 = x.iter().map(|v| v * v).sum();
        prop_assert!((two_sided / k as f64 - energy).abs() <= 1e-9 * energy);
    }

    #[test]
    fn stft_is_linear(cfg in stft_config(), a in -3.0f64..3.0, b in -3.0f64..3.0, seed in any::<u64>()) {
        let x = signal(400, seed);
        let y = signal(400, seed ^ 1);
        let z: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + b * v).collect();
        let plan = Stft::new(cfg).unwrap();
        let (sx, sy, sz) = (plan.analyze(&x), plan.analyze(&y), plan.analyze(&z));
        for ((p, q), r) in sx.bins().iter().zip(sy.bins()).zip(sz.bins()) {
            prop_assert!((p * a + q * b - r).norm() < 1e-10);
        }
    }

    #[test]
    fn delay_by_one_hop_shifts_frames(cfg in stft_config(), len in 200usize..500, seed in any::<u64>()) {
        let x = signal(len, seed);
        let mut delayed = vec![0.0; cfg.frame_shift];
        delayed.extend_from_slice(&x);
        let plan = Stft::new(cfg).unwrap();
        let (s, d) = (plan.analyze(&x), plan.analyze(&delayed));
        prop_assume!(len >= cfg.frame_length);
        prop_assert_eq!(d.num_frames(), s.num_frames() + 1);
        for m in 0..s.num_frames() {
            for (u, v) in s.frame(m).iter().zip(d.frame(m + 1)) {
                prop_assert!((u - v).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn plain_loss_is_nonnegative_symmetric_and_zero_on_equal(
        len in 100usize..3000,
        seed in any::<u64>(),
        gain in 0.0f64..2.0,
    ) {
        let loss = SpectralLoss::new(&default_stft_configs(), DEFAULT_ETA).unwrap();
        let x = signal(len, seed);
        let y: Vec<f64> = signal(len, seed ^ 7).iter().map(|v| v * gain).collect();
        let (lxy, per, _) = loss.evaluate(&x, &loss.power(&y), None, false);
        let (lyx, _, _) = loss.evaluate(&y, &loss.power(&x), None, false);
        let (lxx, _, _) = loss.evaluate(&x, &loss.power(&x), None, false);
        prop_assert!(lxy >= 0.0 && per.iter().all(|v| *v >= 0.0));
        prop_assert!((lxy - lyx).abs() <= 1e-12 * lxy.max(1.0));
        prop_assert_eq!(lxx, 0.0);
    }

    #[test]
    fn masked_loss_is_nonnegative(len in 100usize..2000, seed in any::<u64>()) {
        let loss = SpectralLoss::new(&default_stft_configs(), DEFAULT_ETA).unwrap();
        let (x, y, m) = (signal(len, seed), signal(len, seed ^ 3), signal(len, seed ^ 5));
        let (v, _, _) = loss.evaluate(&x, &loss.power(&y), Some(&loss.power(&m)), false);
        prop_assert!(v >= 0.0 && v.is_finite());
    }

    #[test]
    fn loss_is_invariant_to_a_common_hop_delay(hops in 1usize..4, seed in any::<u64>()) {
        // one configuration whose hop divides every delay; both signals start
        // with a frame of silence, so the delayed pair only adds `hops`
        // frames that are zero in both
        let cfg = [StftConfig::new(128, 80, 40, Window::Hann)];
        let loss = SpectralLoss::new(&cfg, DEFAULT_ETA).unwrap();
        let delay = |v: &[f64], n: usize| {
            let mut d = vec![0.0; n];
            d.extend_from_slice(v);
            d
        };
        let x = delay(&signal(1000, seed), 80);
        let y = delay(&signal(1000, seed ^ 9), 80);
        let n = cfg[0].num_frames(x.len()) as f64;
        let (base, _, _) = loss.evaluate(&x, &loss.power(&y), None, false);
        let (moved, _, _) = loss.evaluate(&delay(&x, 40 * hops), &loss.power(&delay(&y, 40 * hops)), None, false);
        // the extra frames contribute zero, so only the frame count changes
        let rescaled = moved * (n + hops as f64) / n;
        prop_assert!((rescaled - base).abs() < 1e-10 * base);
    }

    #[test]
    fn cyclic_noise_matches_direct_sum(
        seed in any::<u64>(),
        f_lo in 60.0f64..200.0,
        f_span in 0.0f64..200.0,
        beta_lo in 0.2f64..1.0,
        beta_span in 0.0f64..2.0,
        gap in 100usize..300,
    ) {
        let len = 1200;
        let f0: Vec<f64> = (0..len)
            .map(|t| if (gap..gap + 150).contains(&t) { 0.0 } else { f_lo + f_span * t as f64 / len as f64 })
            .collect();
        let beta: Vec<f64> = (0..len).map(|t| beta_lo + beta_span * t as f64 / len as f64).collect();
        let noise = signal(len, seed);
        let theta = cumulative_phase(&f0, 16000);
        let pulses = pulse_positions(&f0, &theta, 0.3);
        let (fast, _) = cyclic_excitation_from_parts(&f0, &Beta::PerSample(beta.clone()), &pulses, &noise, 16000, false);
        let slow = cyclic_oracle(&f0, &beta, &pulses, &noise, 16000.0);
        for (a, b) in fast.iter().zip(&slow) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn lowpass_plus_highpass_is_identity(
        seed in any::<u64>(),
        order in prop::sample::select(vec![3usize, 15, 31, 63]),
        cutoffs in prop::collection::vec(0.01f64..0.49, 1..20),
    ) {
        let x = signal(cutoffs.len() * 80, seed);
        let spec = SincFilterSpec::new(order, cutoffs.clone()).unwrap();
        let lp = filter_timevariant(&x, FilterKind::LowPass, &spec, 80).unwrap();
        let hp = filter_timevariant(&x, FilterKind::HighPass, &spec, 80).unwrap();
        for t in 0..x.len() {
            prop_assert!((lp[t] + hp[t] - x[t]).abs() < 1e-12);
        }
        for &c in &cutoffs {
            let l = design_lowpass(c, order).unwrap();
            prop_assert!((l.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let h = design_highpass(c, order).unwrap();
            prop_assert!(h.iter().sum::<f64>().abs() < 1e-12);
        }
    }
}
