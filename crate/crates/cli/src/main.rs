//! `osteokit`: de-identification, dataset curation and embedding evaluation
//! from the command line.
//!
//! Exit status is 0 on success, 2 for malformed or inconsistent input and 1
//! when a computation fails. Diagnostics go to standard error.

mod commands;
mod config;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use osteokit_core::{Error, Result};

use crate::config::PipelineConfig;
use crate::io::Sink;

#[derive(Debug, Parser)]
#[command(name = "osteokit", version, about = "De-identify reports, curate image/report pairs and evaluate embeddings")]
struct Cli {
    /// JSON pipeline configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for surrogates, pseudonymous ids and fold shuffles.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Report the files that would be written without writing them.
    #[arg(long, global = true)]
    dry_run: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus, gold annotations, lexicons and demo embeddings.
    Synth(commands::deid::SynthArgs),
    /// Detect identifiers in a report corpus and replace them with surrogates.
    Deid(commands::deid::DeidArgs),
    /// Score detections against gold annotations, per category.
    EvalDeid(commands::deid::EvalDeidArgs),
    /// Scrub study metadata, filter images by OCR text and pair studies with reports.
    Curate(commands::curate::CurateArgs),
    /// Zero-shot AUROC of each prompt strategy.
    Zeroshot(commands::embed::ZeroshotArgs),
    /// Precision@k of prompt-anchored retrieval over folds.
    Retrieve(commands::embed::RetrieveArgs),
    /// Train a linear probe and evaluate it.
    Probe(commands::embed::ProbeArgs),
    /// CLIP loss between matched image and text embeddings.
    Cliploss(commands::embed::ClipLossArgs),
    /// Fisher discriminant direction between two labelled classes.
    Lda(commands::embed::LdaArgs),
    /// Resize position embeddings and patch kernels of a weight bundle.
    ResizeWeights(commands::resize::ResizeArgs),
}

/// State shared by all subcommands.
pub struct Context {
    pub config: PipelineConfig,
    pub seed: Option<u64>,
    pub sink: Sink,
}

impl Context {
    pub fn require_seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::InvalidInput("a master seed is required (--seed or master_seed in the config)".into()))
    }

    /// The flag if given, else the configured path.
    pub fn path(&self, flag: Option<PathBuf>, configured: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
        flag.or_else(|| configured.clone())
            .ok_or_else(|| Error::InvalidInput(format!("missing --{name}")))
    }

    pub fn output_dir(&self, flag: Option<PathBuf>) -> Result<PathBuf> {
        self.path(flag, &self.config.paths.output_dir, "out")
    }
}

fn run(cli: Cli) -> Result<()> {
    let config = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(n) = cli.threads.or(config.threads) {
        if n == 0 {
            return Err(Error::InvalidInput("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
    }
    let mut ctx = Context {
        seed: cli.seed.or(config.master_seed),
        config,
        sink: Sink::new(cli.dry_run),
    };
    match cli.command {
        Command::Synth(a) => commands::deid::synth(&mut ctx, a),
        Command::Deid(a) => commands::deid::deid(&mut ctx, a),
        Command::EvalDeid(a) => commands::deid::eval_deid(&mut ctx, a),
        Command::Curate(a) => commands::curate::curate(&mut ctx, a),
        Command::Zeroshot(a) => commands::embed::zeroshot(&mut ctx, a),
        Command::Retrieve(a) => commands::embed::retrieve(&mut ctx, a),
        Command::Probe(a) => commands::embed::probe(&mut ctx, a),
        Command::Cliploss(a) => commands::embed::cliploss(&mut ctx, a),
        Command::Lda(a) => commands::embed::lda(&mut ctx, a),
        Command::ResizeWeights(a) => commands::resize::resize(&mut ctx, a),
    }?;
    ctx.sink.report();
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_input_error() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
