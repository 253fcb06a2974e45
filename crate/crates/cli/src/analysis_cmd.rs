use std::path::PathBuf;

use clap::Args;
use nsf_core::io::{read_f0, read_wav, write_f0, write_wav};
use nsf_core::model::pitch::{estimate_f0, f0_agreement};
use nsf_core::sinc::{filter_timevariant, FilterKind, SincFilterSpec, DEFAULT_MVF_HZ, SINC_ORDER};
use nsf_core::Waveform;

use crate::echo::Echo;
use crate::error::{ensure_finite, CliError, CliResult};

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Waveform to analyze.
    #[arg(long)]
    pub wav: PathBuf,
    /// Output F0 track file.
    #[arg(short = 'o', long = "output")]
    pub output: PathBuf,
    #[arg(long, default_value_t = 5.0)]
    pub frame_shift_ms: f64,
    #[arg(long, default_value_t = 70.0)]
    pub fmin: f64,
    #[arg(long, default_value_t = 400.0)]
    pub fmax: f64,
    /// Reference F0 track to score the estimate against.
    #[arg(long)]
    pub ref_f0: Option<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 3)]
    pub margin: usize,
}

#[derive(Debug, Args)]
pub struct SplitBandsArgs {
    /// Input waveform.
    #[arg(long)]
    pub wav: PathBuf,
    /// Cutoff shared by both filters (Hz).
    #[arg(long, default_value_t = DEFAULT_MVF_HZ)]
    pub cutoff_hz: f64,
    /// Number of taps (odd).
    #[arg(long, default_value_t = SINC_ORDER)]
    pub order: usize,
    /// Samples per cutoff frame.
    #[arg(long, default_value_t = 80)]
    pub frame_shift: usize,
    /// Low-pass output WAV.
    #[arg(long)]
    pub lp: PathBuf,
    /// High-pass output WAV.
    #[arg(long)]
    pub hp: PathBuf,
}

pub fn run_analyze(args: &AnalyzeArgs) -> CliResult<()> {
    if !(args.frame_shift_ms > 0.0) {
        return Err(CliError::Usage("--frame-shift-ms must be > 0".into()));
    }
    let wave = read_wav(&args.wav)?;
    let mut echo = Echo::new("analyze");
    echo.put("wav", args.wav.display());
    echo.put("samples", wave.len());
    echo.put("sample_rate", wave.sample_rate());
    echo.put("frame_shift_ms", args.frame_shift_ms);
    echo.put("fmin", args.fmin);
    echo.put("fmax", args.fmax);
    echo.put("output", args.output.display());
    if let Some(p) = &args.ref_f0 {
        echo.put("ref_f0", p.display());
        echo.put("tolerance", args.tolerance);
        echo.put("margin", args.margin);
    }
    echo.print();

    let track = estimate_f0(&wave, args.frame_shift_ms / 1000.0, args.fmin, args.fmax)?;
    write_f0(&args.output, &track)?;
    let voiced = track.values().iter().filter(|v| **v > 0.0).count();
    println!("wrote {} frames ({voiced} voiced) to {}", track.len(), args.output.display());
    if let Some(p) = &args.ref_f0 {
        let reference = read_f0(p)?;
        let stats = f0_agreement(&track, &reference, args.tolerance, args.margin)?;
        println!("voiced_frames = {}", stats.voiced_frames);
        println!("within_tolerance = {}", stats.within);
        println!("estimated_unvoiced = {}", stats.estimated_unvoiced);
        println!("agreement = {:.4}", stats.fraction());
    }
    Ok(())
}

pub fn run_split_bands(args: &SplitBandsArgs) -> CliResult<()> {
    let wave = read_wav(&args.wav)?;
    if args.frame_shift == 0 {
        return Err(CliError::Usage("--frame-shift must be >= 1".into()));
    }
    let frames = wave.len().div_ceil(args.frame_shift).max(1);
    let cutoff = args.cutoff_hz / wave.sample_rate() as f64;
    let spec = SincFilterSpec::new(args.order, vec![cutoff; frames])?;

    let mut echo = Echo::new("split-bands");
    echo.put("wav", args.wav.display());
    echo.put("sample_rate", wave.sample_rate());
    echo.put("cutoff_hz", args.cutoff_hz);
    echo.put("order", args.order);
    echo.put("window", "hamming");
    echo.put("frame_shift", args.frame_shift);
    echo.put("lp", args.lp.display());
    echo.put("hp", args.hp.display());
    echo.print();

    for (kind, path) in [(FilterKind::LowPass, &args.lp), (FilterKind::HighPass, &args.hp)] {
        let y = filter_timevariant(wave.samples(), kind, &spec, args.frame_shift)?;
        ensure_finite("filtered signal", &y)?;
        write_wav(path, &Waveform::new(y, wave.sample_rate())?)?;
    }
    println!("wrote {} and {}", args.lp.display(), args.hp.display());
    Ok(())
}
