use std::path::PathBuf;

use clap::Args;
use nsf_core::io::{read_f0, read_wav};
use nsf_core::loss::{build_sine_mask, default_stft_configs, SpectralLoss, DEFAULT_ETA};
use nsf_core::signal::{StftConfig, Window};
use nsf_core::source::SourceConfig;
use nsf_core::Waveform;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::echo::Echo;
use crate::error::{ensure_finite, CliError, CliResult};

#[derive(Debug, Args)]
pub struct LossArgs {
    /// Reference (natural) waveform.
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// Generated waveform.
    #[arg(long)]
    pub gen: PathBuf,
    /// F0 track of the reference; enables the sine-masked loss.
    #[arg(long)]
    pub mask_f0: Option<PathBuf>,
    /// Cut both waveforms to the shorter length instead of failing.
    #[arg(long)]
    pub trim: bool,
    /// Seed of the mask's random phase and noise.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// STFT configuration `fft:frame_length:frame_shift` (Hann window);
    /// repeat to replace the three defaults.
    #[arg(long = "stft", value_parser = parse_stft)]
    pub stft: Vec<StftConfig>,
    /// Floor added to every power bin.
    #[arg(long, default_value_t = DEFAULT_ETA)]
    pub eta: f64,
}

pub fn parse_stft(s: &str) -> Result<StftConfig, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let nums = parts
        .iter()
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| format!("expected fft:frame_length:frame_shift, got {s:?}"))?;
    let [fft, len, shift] = nums[..] else {
        return Err(format!("expected fft:frame_length:frame_shift, got {s:?}"));
    };
    let cfg = StftConfig::new(fft, len, shift, Window::Hann);
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn stft_label(c: &StftConfig) -> String {
    format!("{}:{}:{}", c.fft_size, c.frame_length, c.frame_shift)
}

/// Sample-level F0 of exactly `len` samples: cut, or padded with unvoiced
/// samples when the track is shorter than the waveform.
fn f0_for_length(track: &nsf_core::F0Track, sample_rate: u32, len: usize) -> CliResult<Vec<f64>> {
    let mut f0 = track.upsample(sample_rate)?;
    f0.resize(len, 0.0);
    Ok(f0)
}

pub fn run(args: &LossArgs) -> CliResult<()> {
    let configs = if args.stft.is_empty() {
        default_stft_configs()
    } else {
        args.stft.clone()
    };
    if !(args.eta > 0.0) {
        return Err(CliError::Usage(format!("--eta must be > 0, got {}", args.eta)));
    }
    let reference = read_wav(&args.reference)?;
    let generated = read_wav(&args.gen)?;
    if reference.sample_rate() != generated.sample_rate() {
        return Err(CliError::Usage(format!(
            "sample rates differ: reference {} Hz, generated {} Hz",
            reference.sample_rate(),
            generated.sample_rate()
        )));
    }
    let len = if args.trim {
        reference.len().min(generated.len())
    } else if reference.len() != generated.len() {
        return Err(CliError::Usage(format!(
            "lengths differ: reference {} samples, generated {} (use --trim)",
            reference.len(),
            generated.len()
        )));
    } else {
        reference.len()
    };
    let sr = reference.sample_rate();
    let reference = Waveform::new(reference.samples()[..len].to_vec(), sr)?;
    let generated = Waveform::new(generated.samples()[..len].to_vec(), sr)?;

    let mut echo = Echo::new("loss");
    echo.put("ref", args.reference.display());
    echo.put("gen", args.gen.display());
    echo.put("samples", len);
    echo.put("sample_rate", sr);
    echo.put("trim", args.trim);
    echo.put("eta", args.eta);
    echo.put(
        "stft",
        configs.iter().map(stft_label).collect::<Vec<_>>().join(","),
    );
    echo.put("window", "hann");
    if let Some(p) = &args.mask_f0 {
        echo.put("mask_f0", p.display());
        echo.put("seed", args.seed);
    }
    echo.print();

    let evaluator = SpectralLoss::new(&configs, args.eta)?;
    let target = evaluator.power(reference.samples());
    let (plain, per, _) = evaluator.evaluate(generated.samples(), &target, None, false);
    ensure_finite("plain loss", &per)?;
    println!("plain = {plain}");
    for (c, v) in configs.iter().zip(&per) {
        println!("plain[{}] = {v}", stft_label(c));
    }

    if let Some(path) = &args.mask_f0 {
        let track = read_f0(path)?;
        let cfg = SourceConfig {
            sample_rate: sr,
            seed: args.seed,
            ..SourceConfig::default()
        };
        let f0 = f0_for_length(&track, sr, len)?;
        let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
        let mask = build_sine_mask(&f0, &cfg, &mut rng)?;
        let mask_power = evaluator.power(mask.samples());
        let (masked, per, _) =
            evaluator.evaluate(generated.samples(), &target, Some(&mask_power), false);
        ensure_finite("masked loss", &per)?;
        println!("masked = {masked}");
        for (c, v) in configs.iter().zip(&per) {
            println!("masked[{}] = {v}", stft_label(c));
        }
    }
    Ok(())
}
