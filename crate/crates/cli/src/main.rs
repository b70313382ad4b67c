use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use exp_sq_lab::config::ExperimentKind;
use exp_sq_lab::runner::{replay, run, Outcome, Overrides};
use exp_sq_lab::ExperimentConfig;

/// Lattice experiments for the elliptic stochastic quantization of the
/// exponential field.
///
/// Exit codes: 0 all embedded assertions pass, 1 assertion failure,
/// 2 configuration or validation error.
#[derive(Parser)]
#[command(name = "exp-sq-lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Path to the JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker thread count (a throughput knob only; outputs do not depend
    /// on it). Falls back to the config, then EXP_SQ_LAB_THREADS.
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory override.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo correlation decay scan.
    Decay(RunArgs),
    /// Coupled-noise decay experiment.
    Coupling(RunArgs),
    /// Noise-derivative cross-checks (linear solve vs finite differences
    /// vs killed walks).
    MalliavinCheck(RunArgs),
    /// Spectral covariance kernel curve and tail fit.
    KernelDecay(RunArgs),
    /// Continuum Green-function oracle suite.
    GreenCheck(RunArgs),
    /// Condensed module invariant suite.
    Selftest(RunArgs),
    /// Rerun a manifest bit-exactly and diff the artifacts.
    Replay {
        manifest: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
    },
}

fn run_command(kind: ExperimentKind, args: &RunArgs) -> ExitCode {
    let text = match std::fs::read_to_string(&args.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read config {}: {e}", args.config.display());
            return ExitCode::from(2);
        }
    };
    let cfg = match ExperimentConfig::from_json(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if cfg.experiment != kind {
        eprintln!(
            "error: config names experiment '{}' but the '{}' subcommand was invoked",
            cfg.experiment.name(),
            kind.name()
        );
        return ExitCode::from(2);
    }
    let out_dir = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(&cfg.run.output_dir));
    let overrides = Overrides { seed: args.seed, threads: args.threads };
    match run(&cfg, &out_dir, &overrides) {
        Ok((manifest, outcome)) => {
            for a in &manifest.assertions {
                let tag = if a.pass { "PASS" } else { "FAIL" };
                println!("[{tag}] {}: {}", a.name, a.detail);
            }
            println!(
                "{}: {} artifacts in {} ({:.1}s)",
                manifest.experiment,
                manifest.artifacts.len(),
                out_dir.display(),
                manifest.wall_time_s
            );
            match outcome {
                Outcome::Pass => ExitCode::SUCCESS,
                Outcome::AssertionFailure => ExitCode::from(1),
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match &cli.command {
        Command::Decay(a) => run_command(ExperimentKind::Decay, a),
        Command::Coupling(a) => run_command(ExperimentKind::Coupling, a),
        Command::MalliavinCheck(a) => run_command(ExperimentKind::MalliavinCheck, a),
        Command::KernelDecay(a) => run_command(ExperimentKind::KernelDecay, a),
        Command::GreenCheck(a) => run_command(ExperimentKind::GreenCheck, a),
        Command::Selftest(a) => run_command(ExperimentKind::Selftest, a),
        Command::Replay { manifest, threads } => match replay(manifest, *threads) {
            Ok((report, outcome)) => {
                if report.identical {
                    println!("replay identical");
                } else if let Some((name, line)) = &report.first_divergence {
                    println!("replay diverged: {name} first differs at line {line}");
                }
                match outcome {
                    Outcome::Pass => ExitCode::SUCCESS,
                    Outcome::AssertionFailure => ExitCode::from(1),
                }
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        },
    }
}
