//! Command-line pipeline: generate, pretrain the six encoders, embed,
//! characterise, index, write cards, route and evaluate.
//!
//! Every stage writes into its own directory under `--out` together with a
//! `stamp.json` and the exact `run_config.json` that produced it.

pub mod config;
pub mod pipeline;
pub mod stamp;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

pub use config::{ConfigError, RunConfig};
pub use pipeline::{verify, Outcome, Pipeline, Stage, StageError};

#[derive(Debug, Parser)]
#[command(name = "sensorfleet", version, about = "Sensor-specialised encoder fleet pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run directory.
    #[arg(long, global = true, default_value = "run")]
    pub out: PathBuf,
    /// Config override, e.g. `--set analysis.trees=50`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Worker threads; 1 gives the bitwise-reproducible mode, 0 uses all cores.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Synthetic world and patch corpus.
    Gen,
    /// Train the five specialists and the generalist.
    Pretrain,
    /// Embed the corpus with every target encoder.
    Embed,
    /// Participation ratio, intrinsic dimension and local spectra.
    Geometry,
    /// Skill matrix, dimension dictionaries and regional skill.
    Interp,
    /// CCA and joint predictive gain against the generalist.
    Compl,
    /// Per-source IVF indexes.
    Index,
    /// Reference cards.
    Cards,
    /// Route the question set.
    Route,
    /// Three-condition evaluation.
    Eval,
    /// Headline summary of a finished run.
    Report,
    /// Every stage in order, skipping those already up to date.
    All,
    /// Recompute stamps and hashes of an existing run directory.
    Verify,
}

impl Command {
    fn stage(self) -> Option<Stage> {
        Some(match self {
            Command::Gen => Stage::Gen,
            Command::Pretrain => Stage::Pretrain,
            Command::Embed => Stage::Embed,
            Command::Geometry => Stage::Geometry,
            Command::Interp => Stage::Interp,
            Command::Compl => Stage::Compl,
            Command::Index => Stage::Index,
            Command::Cards => Stage::Cards,
            Command::Route => Stage::Route,
            Command::Eval => Stage::Eval,
            Command::Report => Stage::Report,
            Command::All | Command::Verify => return None,
        })
    }
}

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_RUNTIME: u8 = 2;

/// Parses `args` (including the program name) and runs the command.
pub fn run_from<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    run(&cli)
}

pub fn run(cli: &Cli) -> ExitCode {
    if cli.command == Command::Verify {
        return match verify(&cli.out) {
            Ok((checked, issues)) if issues.is_empty() => {
                println!("verified {} stages in {}", checked.len(), cli.out.display());
                ExitCode::SUCCESS
            }
            Ok((_, issues)) => {
                for i in &issues {
                    eprintln!("error: stage `{}`: {}", i.stage.name(), i.problem);
                }
                ExitCode::from(EXIT_RUNTIME)
            }
            Err(e) => {
                eprintln!("error: stage `verify` failed: {e:#}");
                ExitCode::from(EXIT_RUNTIME)
            }
        };
    }
    let cfg = match RunConfig::load(cli.config.as_deref(), &cli.overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    if let Err(e) = std::fs::create_dir_all(&cli.out) {
        eprintln!("error: output directory {}: {e}", cli.out.display());
        return ExitCode::from(EXIT_USAGE);
    }
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(EXIT_RUNTIME);
        }
    };
    let pipeline = Pipeline::new(cfg, &cli.out);
    let result = pool.install(|| match cli.command.stage() {
        Some(stage) => pipeline.run_stage(stage).map(|_| vec![(stage, Outcome::Ran)]),
        None => pipeline.run_all(),
    });
    match result {
        Ok(outcomes) => {
            for (stage, outcome) in outcomes {
                let word = if outcome == Outcome::Ran { "ran" } else { "skipped" };
                println!("{:<9} {word}", stage.name());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
