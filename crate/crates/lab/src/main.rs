//! Command-line driver for the diffusion laboratory pipeline.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use difflab::config::RunConfig;
use difflab::stages::{self, ReconMode, StageCtx, TrackChoice};
use difflab::LabError;

/// Conditional-diffusion laboratory: train a toy denoiser, invert images,
/// reconstruct with per-timestep prompt redescription, and run zero-shot
/// domain edits.
///
/// Guidance scale semantics: eps = eps_u + scale * (eps_c - eps_u), so
/// scale = 1 is purely conditional and scale = 0 ignores the condition.
#[derive(Parser)]
#[command(name = "difflab", version, about, long_about)]
struct Cli {
    /// Configuration file (dotted key = value lines); defaults apply for
    /// missing keys. See configs/paper-defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory for all artifacts. Also settable via DIFFLAB_OUT;
    /// the flag wins over the environment.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Replace existing stage outputs instead of refusing to clobber them.
    #[arg(long, global = true)]
    overwrite: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the procedural training and evaluation datasets.
    GenerateData,
    /// Train the conditional denoiser on the training split.
    Train,
    /// Invert every evaluation image, recording full latent trajectories.
    Invert,
    /// Sample trajectories back to images.
    Reconstruct {
        /// plain (fixed prompt), mirror (per-timestep prompt redescription),
        /// or simple-align (one shared optimized prompt).
        #[arg(long)]
        mode: String,
    },
    /// Zero-shot domain translation from recorded trajectories.
    Edit {
        /// Multiplier on the domain-gap embedding shift.
        #[arg(long)]
        strength: Option<f64>,
        /// Which per-timestep embeddings to shift: rewritten (mirror output)
        /// or source (unrewritten baseline).
        #[arg(long, default_value = "rewritten")]
        track: String,
    },
    /// Score reconstructions and edits; emit metric CSVs and image grids.
    Eval,
    /// Run every stage end to end.
    Pipeline,
}

fn build_ctx(cli: &Cli) -> Result<StageCtx, LabError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let out = cli
        .out
        .clone()
        .or_else(|| std::env::var_os("DIFFLAB_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    Ok(StageCtx {
        cfg,
        out,
        overwrite: cli.overwrite,
    })
}

fn run(cli: &Cli) -> Result<(), LabError> {
    let ctx = build_ctx(cli)?;
    match &cli.command {
        Command::GenerateData => stages::generate_data(&ctx),
        Command::Train => stages::train_model(&ctx),
        Command::Invert => stages::invert_eval(&ctx),
        Command::Reconstruct { mode } => stages::reconstruct(&ctx, ReconMode::parse(mode)?),
        Command::Edit { strength, track } => {
            let strength = strength.unwrap_or(ctx.cfg.edit_strength);
            stages::edit(&ctx, strength, TrackChoice::parse(track)?)
        }
        Command::Eval => stages::evaluate(&ctx),
        Command::Pipeline => stages::pipeline(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::FAILURE
        }
    }
}
