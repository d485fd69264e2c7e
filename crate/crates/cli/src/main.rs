//! `normball`: generate cohorts, train and evaluate normed embeddings, sweep
//! ablations and train reward-shaped c51 ensembles.
//!
//! Every subcommand resolves its settings from defaults, then `--config`,
//! then `--set KEY=VALUE`, then dedicated flags, and writes the resolved
//! snapshot into the output directory before doing any work. Passing that
//! snapshot back with `--config` reproduces the run.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::Run;
use settings::{CliError, CliResult, Settings};

/// Environment variable holding the default output directory.
pub const OUT_ENV: &str = "NORMBALL_OUT";

#[derive(Parser, Debug)]
#[command(name = "normball", version, about = "Deep normed embeddings for clinical time series")]
struct Cli {
    /// Output directory [default: $NORMBALL_OUT, else ./runs]
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct Common {
    /// `key = value` settings file; a snapshot from an earlier run works too
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override one setting
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,

    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic cohort CSV
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        patients: Option<usize>,
    },
    /// Train a normed embedding on a cohort CSV
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "CSV")]
        cohort: Option<PathBuf>,
        /// mlp or gru
        #[arg(long)]
        encoder: Option<String>,
        /// Weight of the terminal norm loss against the organ losses, in [0, 1]
        #[arg(long)]
        beta: Option<f64>,
        /// Embedding dimension
        #[arg(long)]
        dim: Option<usize>,
        /// Hours before the end of a stay that count as near-terminal
        #[arg(long)]
        t: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Evaluate a checkpoint on a cohort CSV
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_name = "CSV")]
        cohort: Option<PathBuf>,
        /// Norm, SOFA and SOFA-4 AUROC per horizon
        #[arg(long)]
        auroc: bool,
        /// Linear probes on the embedding, with and without the norm
        #[arg(long)]
        probe: bool,
        /// Mean relative jump of the risk
        #[arg(long)]
        jumps: bool,
        /// Mean risk against hours to the end of the stay
        #[arg(long)]
        curves: bool,
        /// Within- and between-organ cosine near death
        #[arg(long)]
        separation: bool,
        /// Histogram, curve and projection figures
        #[arg(long)]
        report: bool,
        /// Everything above
        #[arg(long)]
        all: bool,
    },
    /// Sweep loss hyperparameters; finished grid points are reused on rerun
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "CSV")]
        cohort: Option<PathBuf>,
        /// `default`, or e.g. `beta=0,0.5,1;lambda3=0,0.2`
        #[arg(long)]
        grid: Option<String>,
    },
    /// Train a c51 ensemble with a terminal or risk-shaped reward
    Rl {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "CSV")]
        cohort: Option<PathBuf>,
        /// terminal, r1 or r2
        #[arg(long)]
        reward: Option<String>,
        /// Number of bootstrapped c51 networks
        #[arg(long, value_name = "N")]
        ensemble: Option<usize>,
        /// Append the risk model's embedding to the state
        #[arg(long)]
        augment: bool,
        /// Directory with a trained risk model to reuse
        #[arg(long, value_name = "DIR")]
        risk_dir: Option<PathBuf>,
    },
}

fn resolve(mut settings: Settings, common: &Common, flags: Vec<(&str, String)>) -> CliResult<Settings> {
    if let Some(path) = &common.config {
        settings.apply_file(path)?;
    }
    for s in &common.sets {
        settings.apply_override(s)?;
    }
    if let Some(seed) = common.seed {
        settings.set("seed", &seed.to_string())?;
    }
    for (k, v) in flags {
        settings.set(k, &v)?;
    }
    Ok(settings)
}

fn path_flag(key: &'static str, p: &Option<PathBuf>) -> Option<(&'static str, String)> {
    p.as_ref().map(|p| (key, p.display().to_string()))
}

fn build(command: Command, out: PathBuf) -> CliResult<(Run, fn(&Run) -> CliResult<()>)> {
    let (name, settings, action): (&'static str, Settings, fn(&Run) -> CliResult<()>) = match command {
        Command::Generate { common, patients } => {
            let flags = patients.map(|n| ("cohort.num_patients", n.to_string())).into_iter().collect();
            ("generate", resolve(commands::generate_defaults(), &common, flags)?, commands::generate)
        }
        Command::Train { common, cohort, encoder, beta, dim, t, epochs } => {
            let flags = [
                path_flag("cohort", &cohort),
                encoder.map(|e| ("model.encoder", e)),
                beta.map(|b| ("loss.beta", b.to_string())),
                dim.map(|d| ("model.embedding_dim", d.to_string())),
                t.map(|t| ("loss.near_terminal_t", t.to_string())),
                epochs.map(|e| ("loss.epochs", e.to_string())),
            ];
            ("train", resolve(commands::train_defaults(), &common, flags.into_iter().flatten().collect())?, commands::train_cmd)
        }
        Command::Eval { common, checkpoint, cohort, auroc, probe, jumps, curves, separation, report, all } => {
            let picked = [auroc, probe, jumps, curves, separation, report];
            let analyses: Vec<&str> = commands::ANALYSES
                .iter()
                .zip(picked)
                .filter(|(_, on)| all || *on)
                .map(|(a, _)| *a)
                .collect();
            let mut flags: Vec<(&str, String)> = [path_flag("checkpoint", &checkpoint), path_flag("cohort", &cohort)]
                .into_iter()
                .flatten()
                .collect();
            if !analyses.is_empty() {
                flags.push(("analyses", analyses.join(",")));
            }
            ("eval", resolve(commands::eval_defaults(), &common, flags)?, commands::eval)
        }
        Command::Ablate { common, cohort, grid } => {
            let flags = [path_flag("cohort", &cohort), grid.map(|g| ("grid", g))];
            ("ablate", resolve(commands::ablate_defaults(), &common, flags.into_iter().flatten().collect())?, commands::ablate)
        }
        Command::Rl { common, cohort, reward, ensemble, augment, risk_dir } => {
            let flags = [
                path_flag("cohort", &cohort),
                reward.map(|r| ("reward", r)),
                ensemble.map(|n| ("ensemble", n.to_string())),
                augment.then(|| ("c51.augment", "true".to_string())),
                path_flag("risk_dir", &risk_dir),
            ];
            ("rl", resolve(commands::rl_defaults(), &common, flags.into_iter().flatten().collect())?, commands::rl)
        }
    };
    Ok((
        Run {
            command: name,
            out,
            settings,
        },
        action,
    ))
}

fn execute(cli: Cli) -> CliResult<()> {
    let out = cli
        .out
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"));
    let (run, action) = build(cli.command, out)?;
    let snapshot = run.write_snapshot()?;
    println!("wrote {}", snapshot.display());
    match cli.jobs {
        Some(0) => Err(CliError::Usage("--jobs must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Usage(format!("cannot start {n} worker threads: {e}")))?
            .install(|| action(&run)),
        None => action(&run),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
