use std::path::{Path, PathBuf};

use clap::Args;
use nsf_core::io::{read_f0, read_features, write_csv, write_f0, write_features, write_wav};
use nsf_core::model::checkpoint::Checkpoint;
use nsf_core::model::dataset::Utterance;
use nsf_core::model::pitch::{estimate_f0, f0_agreement};
use nsf_core::model::train::{build_model, synthetic_splits, train, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::echo::Echo;
use crate::error::{ensure_finite, CliError, CliResult};

/// Columns of the per-epoch training log.
pub const EPOCH_COLUMNS: [&str; 6] = ["epoch", "steps", "train_loss", "train_plain", "val_loss", "beta"];

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Flat `key = value` training configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Checkpoint written after training (parameters of the best epoch).
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch loss CSV; defaults to `<out>.epochs.csv`.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Overrides `seed` of the configuration file.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SynthDataArgs {
    /// Training configuration whose dataset is written; defaults apply when
    /// omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory that receives `{train,val}_NNN.{wav,f0,feat}`.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Overrides `seed` of the configuration file.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ResynthArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// F0 track of the utterance to resynthesize.
    #[arg(long)]
    pub f0: PathBuf,
    /// Acoustic feature file of the same utterance.
    #[arg(long)]
    pub features: PathBuf,
    /// Output WAV file.
    #[arg(short = 'o', long = "output")]
    pub output: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Lowest F0 considered by the pitch estimator (Hz).
    #[arg(long, default_value_t = 70.0)]
    pub fmin: f64,
    /// Highest F0 considered by the pitch estimator (Hz).
    #[arg(long, default_value_t = 400.0)]
    pub fmax: f64,
    /// Relative F0 error that still counts as agreement.
    #[arg(long, default_value_t = 0.05)]
    pub tolerance: f64,
    /// Frames next to a voicing change or the edge that are not scored.
    #[arg(long, default_value_t = 3)]
    pub margin: usize,
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> CliResult<TrainConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| {
                CliError::Core(nsf_core::NsfError::Io {
                    path: p.to_path_buf(),
                    source: e,
                })
            })?;
            TrainConfig::from_kv(&text)?
        }
        None => TrainConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run_train(args: &TrainArgs) -> CliResult<()> {
    let cfg = load_config(Some(&args.config), args.seed)?;
    let log_path = args.log.clone().unwrap_or_else(|| {
        let mut p = args.out.clone().into_os_string();
        p.push(".epochs.csv");
        PathBuf::from(p)
    });
    let mut echo = Echo::new("train-toy");
    echo.put("config", args.config.display());
    echo.put("out", args.out.display());
    echo.put("log", log_path.display());
    echo.put_kv(&cfg.to_kv());
    echo.print();

    let (train_set, val_set) = synthetic_splits(&cfg)?;
    let model = build_model(&cfg, &train_set)?;
    println!(
        "model: {} parameters, receptive field {} samples; data: {} train / {} val utterances",
        model.params.num_params(),
        model.receptive_field(),
        train_set.len(),
        val_set.len()
    );
    let outcome = train(model, &train_set, &val_set, &cfg, |e| {
        println!(
            "epoch {:>3}  steps {:>5}  train {:.6}  plain {:.6}  val {:.6}  beta {:.4}",
            e.epoch, e.steps, e.train_loss, e.train_plain, e.val_loss, e.beta
        )
    })?;
    let rows = outcome.log.iter().map(|e| {
        vec![
            e.epoch as f64,
            e.steps as f64,
            e.train_loss,
            e.train_plain,
            e.val_loss,
            e.beta,
        ]
    });
    write_csv(&log_path, &EPOCH_COLUMNS, rows)?;
    ensure_finite("trained parameters", &outcome.best.params.to_flat())?;
    Checkpoint::from_model(&outcome.best, cfg.seed, Some(cfg), Some(outcome.best_epoch))
        .save(&args.out)?;
    println!(
        "best epoch {} of {}; {} steps; training loss drop {:.1}%",
        outcome.best_epoch,
        outcome.log.len() - 1,
        outcome.steps,
        100.0 * outcome.train_loss_drop()
    );
    println!("wrote {} and {}", args.out.display(), log_path.display());
    Ok(())
}

fn write_utterance(dir: &Path, stem: &str, utt: &Utterance) -> CliResult<()> {
    write_wav(dir.join(format!("{stem}.wav")), &utt.waveform)?;
    write_f0(dir.join(format!("{stem}.f0")), &utt.f0)?;
    write_features(dir.join(format!("{stem}.feat")), &utt.features)?;
    Ok(())
}

pub fn run_synth_data(args: &SynthDataArgs) -> CliResult<()> {
    let cfg = load_config(args.config.as_deref(), args.seed)?;
    let mut echo = Echo::new("synth-data");
    echo.put("out_dir", args.out_dir.display());
    echo.put_kv(&cfg.to_kv());
    echo.print();
    std::fs::create_dir_all(&args.out_dir).map_err(|e| {
        CliError::Core(nsf_core::NsfError::Io {
            path: args.out_dir.clone(),
            source: e,
        })
    })?;
    let (train_set, val_set) = synthetic_splits(&cfg)?;
    for (split, utts) in [("train", &train_set), ("val", &val_set)] {
        for (i, u) in utts.iter().enumerate() {
            write_utterance(&args.out_dir, &format!("{split}_{i:03}"), u)?;
        }
    }
    println!(
        "wrote {} train and {} val utterances to {}",
        train_set.len(),
        val_set.len(),
        args.out_dir.display()
    );
    Ok(())
}

pub fn run_resynth(args: &ResynthArgs) -> CliResult<()> {
    if !(args.tolerance > 0.0) {
        return Err(CliError::Usage("--tolerance must be > 0".into()));
    }
    let ckpt = Checkpoint::load(&args.ckpt)?;
    let model = ckpt.to_model()?;
    let f0 = read_f0(&args.f0)?;
    let features = read_features(&args.features)?;

    let mut echo = Echo::new("resynth");
    echo.put("ckpt", args.ckpt.display());
    echo.put("ckpt_seed", ckpt.seed);
    echo.put("ckpt_best_epoch", ckpt.best_epoch.map_or("none".into(), |e| e.to_string()));
    echo.put("source_type", model.config.source_type);
    echo.put("beta", model.params.beta);
    echo.put("f0", args.f0.display());
    echo.put("features", args.features.display());
    echo.put("frames", f0.len());
    echo.put("output", args.output.display());
    echo.put("seed", args.seed);
    echo.put("fmin", args.fmin);
    echo.put("fmax", args.fmax);
    echo.put("tolerance", args.tolerance);
    echo.put("margin", args.margin);
    echo.print();

    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let wave = model.synthesize(&f0, &features, &mut rng)?;
    ensure_finite("resynthesized waveform", wave.samples())?;
    write_wav(&args.output, &wave)?;
    println!("wrote {} samples to {}", wave.len(), args.output.display());

    let estimated = estimate_f0(&wave, f0.frame_shift(), args.fmin, args.fmax)?;
    let stats = f0_agreement(&estimated, &f0, args.tolerance, args.margin)?;
    println!("voiced_frames = {}", stats.voiced_frames);
    println!("within_tolerance = {}", stats.within);
    println!("estimated_unvoiced = {}", stats.estimated_unvoiced);
    println!("agreement = {:.4}", stats.fraction());
    Ok(())
}
