use std::path::PathBuf;

use clap::Args;
use nsf_core::io::{read_f0, write_csv, write_wav};
use nsf_core::model::SourceType;
use nsf_core::source::{
    cyclic_decay_ratio, gen_cyclic_noise, gen_gaussian_noise, gen_pulse_train, gen_sine_harmonics,
    mix_tanh, Beta, MixLayer, SourceConfig, BETA_REFERENCES,
};
use nsf_core::{F0Track, Waveform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::echo::Echo;
use crate::error::{ensure_finite, CliError, CliResult};

/// Columns of the `--plot-data` CSV after `sample,time_s,f0_hz`.
pub const PLOT_SERIES: [&str; 5] = ["sine", "pulse", "noise", "cyclic_0.435", "cyclic_1.739"];

/// Columns of the `--analysis` CSV.
pub const ANALYSIS_COLUMNS: [&str; 7] = [
    "f0_hz",
    "beta",
    "period_samples",
    "draws",
    "measured_ratio",
    "expected_ratio",
    "relative_error",
];

#[derive(Debug, Args)]
pub struct GenSourceArgs {
    /// F0 track file (`frame_shift_ms=<v>` header, one Hz value per line).
    #[arg(long)]
    pub f0: PathBuf,
    /// Source signal type.
    #[arg(long = "type", value_parser = parse_source_type)]
    pub source_type: SourceType,
    /// Cyclic-noise decay rate (cno only).
    #[arg(long, default_value_t = 0.870)]
    pub beta: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output WAV file.
    #[arg(short = 'o', long = "output")]
    pub output: PathBuf,
    /// CSV of every source type, each scaled to a peak magnitude of 1.
    #[arg(long)]
    pub plot_data: Option<PathBuf>,
    /// CSV with the ensemble per-period decay of the cyclic noise (cno only).
    #[arg(long)]
    pub analysis: Option<PathBuf>,
    /// Ensemble size for `--analysis`.
    #[arg(long, default_value_t = 400)]
    pub draws: usize,
}

pub fn parse_source_type(s: &str) -> Result<SourceType, String> {
    SourceType::parse(s).ok_or_else(|| format!("unknown source type {s:?} (expected sin, pul, rno or cno)"))
}

/// Source passed through a mix layer with unit weights and zero bias.
pub fn mixed_source(
    source_type: SourceType,
    f0: &[f64],
    beta: f64,
    cfg: &SourceConfig,
    rng: &mut ChaCha8Rng,
) -> CliResult<Waveform> {
    let unit = |n: usize| MixLayer::new(vec![1.0; n], 0.0);
    let out = match source_type {
        SourceType::Sin => {
            let harmonics = gen_sine_harmonics(f0, cfg, rng)?;
            mix_tanh(&harmonics, &unit(harmonics.len()))?
        }
        SourceType::Pul => mix_tanh(&[gen_pulse_train(f0, cfg, rng)?], &unit(1))?,
        SourceType::Rno => mix_tanh(
            &[gen_gaussian_noise(f0.len(), cfg.sigma, cfg.sample_rate, rng)?],
            &unit(1),
        )?,
        SourceType::Cno => gen_cyclic_noise(f0, &Beta::Constant(beta), cfg, &unit(1), rng)?,
    };
    ensure_finite("source", out.samples())?;
    Ok(out)
}

/// The five plot series in [`PLOT_SERIES`] order, each drawn from its own
/// stream of the seed and peak-normalized.
pub fn plot_series(f0: &[f64], cfg: &SourceConfig, seed: u64) -> CliResult<Vec<Waveform>> {
    let kinds = [
        (SourceType::Sin, BETA_REFERENCES[1]),
        (SourceType::Pul, BETA_REFERENCES[1]),
        (SourceType::Rno, BETA_REFERENCES[1]),
        (SourceType::Cno, BETA_REFERENCES[0]),
        (SourceType::Cno, BETA_REFERENCES[2]),
    ];
    kinds
        .iter()
        .enumerate()
        .map(|(k, &(source_type, beta))| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64 + 1);
            Ok(mixed_source(source_type, f0, beta, cfg, &mut rng)?.peak_normalized())
        })
        .collect()
}

/// Median of the voiced frames of a track.
pub fn median_voiced(track: &F0Track) -> Option<f64> {
    let mut voiced: Vec<f64> = track.values().iter().copied().filter(|v| *v > 0.0).collect();
    if voiced.is_empty() {
        return None;
    }
    voiced.sort_by(f64::total_cmp);
    let mid = voiced.len() / 2;
    Some(if voiced.len() % 2 == 1 {
        voiced[mid]
    } else {
        0.5 * (voiced[mid - 1] + voiced[mid])
    })
}

pub fn run(args: &GenSourceArgs) -> CliResult<()> {
    if !(args.beta > 0.0) || !args.beta.is_finite() {
        return Err(CliError::Usage(format!("--beta must be > 0, got {}", args.beta)));
    }
    if args.analysis.is_some() && args.source_type != SourceType::Cno {
        return Err(CliError::Usage("--analysis requires --type cno".into()));
    }
    if args.draws == 0 {
        return Err(CliError::Usage("--draws must be >= 1".into()));
    }
    let track = read_f0(&args.f0)?;
    let cfg = SourceConfig {
        seed: args.seed,
        ..SourceConfig::default()
    };
    let f0 = track.upsample(cfg.sample_rate)?;

    let mut echo = Echo::new("gen-source");
    echo.put("f0", args.f0.display());
    echo.put("frames", track.len());
    echo.put("frame_shift_ms", track.frame_shift() * 1000.0);
    echo.put("type", args.source_type);
    echo.put("beta", args.beta);
    echo.put("seed", args.seed);
    echo.put("harmonics", cfg.harmonics);
    echo.put("sigma", cfg.sigma);
    echo.put("alpha", cfg.alpha);
    echo.put("sample_rate", cfg.sample_rate);
    echo.put("mix", "tanh(sum x_h), unit weights, zero bias");
    echo.put("output", args.output.display());
    if let Some(p) = &args.plot_data {
        echo.put("plot_data", p.display());
    }
    if let Some(p) = &args.analysis {
        echo.put("analysis", p.display());
        echo.put("draws", args.draws);
    }
    echo.print();

    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let source = mixed_source(args.source_type, &f0, args.beta, &cfg, &mut rng)?;
    write_wav(&args.output, &source)?;
    println!("wrote {} samples to {}", source.len(), args.output.display());

    if let Some(path) = &args.plot_data {
        let series = plot_series(&f0, &cfg, args.seed)?;
        let mut header = vec!["sample", "time_s", "f0_hz"];
        header.extend(PLOT_SERIES);
        let sr = cfg.sample_rate as f64;
        let rows = (0..f0.len()).map(|t| {
            let mut row = vec![t as f64, t as f64 / sr, f0[t]];
            row.extend(series.iter().map(|s| s.samples()[t]));
            row
        });
        write_csv(path, &header, rows)?;
        println!("wrote plot data ({} series) to {}", series.len(), path.display());
    }

    if let Some(path) = &args.analysis {
        let f = median_voiced(&track)
            .ok_or_else(|| CliError::Usage("--analysis needs at least one voiced frame".into()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
        rng.set_stream(0xdeca);
        let est = cyclic_decay_ratio(f, args.beta, &cfg, args.draws, &mut rng)?;
        ensure_finite("decay ratio", &[est.ratio])?;
        let rel = (est.ratio - est.expected).abs() / est.expected;
        write_csv(
            path,
            &ANALYSIS_COLUMNS,
            [vec![
                f,
                args.beta,
                est.period as f64,
                args.draws as f64,
                est.ratio,
                est.expected,
                rel,
            ]],
        )?;
        println!(
            "per-period decay at {f} Hz: measured {:.4}, expected {:.4} (relative error {:.3})",
            est.ratio, est.expected, rel
        );
    }
    Ok(())
}
