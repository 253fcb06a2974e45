//! `nsf`: source generation, spectral losses, toy training, resynthesis and
//! analysis from the command line.
//!
//! Exit codes: 0 when every output was written, 1 for usage errors, 2 for
//! unreadable or malformed files, 3 for numeric failures.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod analysis_cmd;
mod echo;
mod error;
mod loss_cmd;
mod model_cmd;
mod source_cmd;

use error::{CliResult, EXIT_OK, EXIT_USAGE};

#[derive(Debug, Parser)]
#[command(name = "nsf", version, about = "Harmonic-plus-noise neural source-filter toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a source signal (sin, pul, rno, cno) from an F0 track.
    GenSource(source_cmd::GenSourceArgs),
    /// Plain and sine-masked multi-resolution spectral loss of two waveforms.
    Loss(loss_cmd::LossArgs),
    /// Train the toy model on synthetic data and write a checkpoint.
    TrainToy(model_cmd::TrainArgs),
    /// Write the synthetic dataset of a training configuration.
    SynthData(model_cmd::SynthDataArgs),
    /// Copy-synthesize an utterance with a trained checkpoint.
    Resynth(model_cmd::ResynthArgs),
    /// Estimate the F0 track of a waveform.
    Analyze(analysis_cmd::AnalyzeArgs),
    /// Split a waveform with the complementary sinc low-pass and high-pass.
    SplitBands(analysis_cmd::SplitBandsArgs),
}

fn dispatch(command: &Command) -> CliResult<()> {
    match command {
        Command::GenSource(a) => source_cmd::run(a),
        Command::Loss(a) => loss_cmd::run(a),
        Command::TrainToy(a) => model_cmd::run_train(a),
        Command::SynthData(a) => model_cmd::run_synth_data(a),
        Command::Resynth(a) => model_cmd::run_resynth(a),
        Command::Analyze(a) => analysis_cmd::run_analyze(a),
        Command::SplitBands(a) => analysis_cmd::run_split_bands(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(&cli.command) {
        Ok(()) => ExitCode::from(EXIT_OK),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
