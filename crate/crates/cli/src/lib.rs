//! `bctomo`: the density tomography pipeline as resumable stages driven by a
//! single JSON configuration.

pub mod artifact;
pub mod config;
pub mod error;
pub mod stages;
pub mod workspace;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
pub use stages::{run_stage, Context, Stage, StageOutcome};

pub const EXIT_OK: u8 = 0;
pub const EXIT_VALIDATION: u8 = 1;
pub const EXIT_STAGE_FAILURE: u8 = 2;
pub const EXIT_CEILING_BREACH: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "bctomo", version, about = "Boundary-control density tomography on the unit disk")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Worker thread cap for parallel stages.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    /// Keep interior states for diagnostics; labeled in every output it touches.
    #[arg(long, global = true)]
    pub oracle: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Generate the disk mesh.
    MeshGen,
    /// Rasterize the ground-truth density.
    SampleGen,
    /// Simulate boundary traces for every control.
    Simulate,
    /// Boundary-computed form matrices.
    Forms,
    /// Harmonic target functions.
    Harmonics,
    /// Controls steering waves onto the targets.
    Control,
    /// Density recovery.
    Reconstruct,
    /// Compare with the ground truth and write the summary.
    Score,
    /// Every stage in order.
    Pipeline,
}

impl Command {
    fn stage(self) -> Option<Stage> {
        Some(match self {
            Command::MeshGen => Stage::MeshGen,
            Command::SampleGen => Stage::SampleGen,
            Command::Simulate => Stage::Simulate,
            Command::Forms => Stage::Forms,
            Command::Harmonics => Stage::Harmonics,
            Command::Control => Stage::Control,
            Command::Reconstruct => Stage::Reconstruct,
            Command::Score => Stage::Score,
            Command::Pipeline => return None,
        })
    }
}

/// Runs every stage; ceiling breaches are collected rather than fatal.
/// `progress` is called after each stage.
pub fn run_pipeline(ctx: &Context, mut progress: impl FnMut(Stage, &StageOutcome)) -> CliResult<Vec<String>> {
    // A fresh audit trail for the run.
    let _ = std::fs::remove_file(ctx.output_dir.join(workspace::ACCESS_LOG));
    let mut breaches = Vec::new();
    for stage in Stage::ALL {
        let outcome = run_stage(ctx, stage)?;
        progress(stage, &outcome);
        if stage == Stage::Score {
            // The summary re-checks every ceiling.
            breaches = outcome.breaches;
        }
    }
    Ok(breaches)
}

fn execute(cli: &Cli) -> CliResult<Vec<String>> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config <path> is required".into()))?;
    if cli.jobs == Some(0) {
        return Err(CliError::Config("--jobs must be at least 1".into()));
    }
    let ctx = Context::load(path, cli.oracle)?;
    let work = || match cli.command.stage() {
        Some(stage) => run_stage(&ctx, stage).map(|o| o.breaches),
        None => run_pipeline(&ctx, |stage, _| eprintln!("bctomo: {} done", stage.name())),
    };
    match cli.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Config(format!("cannot start {n} workers: {e}")))?
            .install(work),
        None => work(),
    }
}

/// Parses `args` and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(breaches) if breaches.is_empty() => EXIT_OK,
        Ok(breaches) => {
            for b in &breaches {
                eprintln!("bctomo: ceiling breach: {b}");
            }
            EXIT_CEILING_BREACH
        }
        Err(e) => {
            eprintln!("bctomo: {e}");
            e.exit_code()
        }
    }
}
