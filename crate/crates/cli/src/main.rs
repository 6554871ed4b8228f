use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lacvit_core::config::RunConfig;
use lacvit_core::pipeline::TrainStage;
use lacvit_core::Error;

mod commands;

#[derive(Parser, Debug)]
#[command(
    name = "lacvit",
    version,
    about = "Label-aware contrastive fine-tuning for small vision transformers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every subcommand.
#[derive(Args, Debug)]
struct Common {
    /// Configuration file of `section.key = value` lines.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override one configuration key; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Shorthand for `--set run.seed=N`.
    #[arg(long)]
    seed: Option<u64>,

    /// Augmentation worker threads (capped by LACVIT_THREADS).
    #[arg(long)]
    workers: Option<usize>,

    /// Shorthand for `--set output.dir=DIR`.
    #[arg(long, value_name = "DIR")]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic dataset and write it in CIFAR binary layout.
    SynthData {
        #[command(flatten)]
        common: Common,
    },
    /// Run one training stage.
    Train {
        /// `contrastive` (stage 1), `head` (stage 2) or `ce` (baseline).
        #[arg(long, value_parser = parse_stage)]
        stage: TrainStage,
        /// Stage-1 checkpoint for `head`; resumes stage 1 for `contrastive`.
        #[arg(long, value_name = "FILE")]
        from_checkpoint: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Top-1 accuracy of a checkpoint with a task head.
    Eval {
        /// A `head` or `ce` checkpoint.
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        #[arg(long, default_value = "validation", value_parser = ["train", "validation"])]
        split: String,
        #[command(flatten)]
        common: Common,
    },
    /// Embedding-geometry reports.
    #[command(subcommand)]
    Analyze(Analysis),
}

#[derive(Subcommand, Debug)]
enum Analysis {
    /// Isotropy score of the embedding set.
    Isotropy {
        #[command(flatten)]
        target: AnalyzeArgs,
        /// L2-normalize every embedding before scoring.
        #[arg(long)]
        normalize: bool,
    },
    /// Positive vs negative pair cosine distributions.
    Cosine {
        #[command(flatten)]
        target: AnalyzeArgs,
        /// `a,b` for a class pair, `all` for every class; default picks two at random.
        #[arg(long)]
        classes: Option<String>,
    },
    /// Two-dimensional PCA projection.
    Project {
        #[command(flatten)]
        target: AnalyzeArgs,
    },
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
    /// Pooled encoder output `h`, or the projection `z` (stage-1 checkpoints only).
    #[arg(long, default_value = "h", value_parser = ["h", "z"])]
    representation: String,
    #[arg(long, default_value = "validation", value_parser = ["train", "validation"])]
    split: String,
    #[command(flatten)]
    common: Common,
}

fn parse_stage(s: &str) -> Result<TrainStage, String> {
    TrainStage::parse(s).map_err(|e| e.to_string())
}

fn resolve_config(cli: &Common) -> lacvit_core::Result<RunConfig> {
    let mut rc = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    for o in &cli.overrides {
        rc.apply_override(o)?;
    }
    if let Some(seed) = cli.seed {
        rc.set("run.seed", &seed.to_string())?;
    }
    if let Some(w) = cli.workers {
        rc.set("run.workers", &w.to_string())?;
    }
    if let Some(dir) = &cli.out_dir {
        rc.set("output.dir", &dir.to_string_lossy())?;
    }
    if let Ok(cap) = std::env::var("LACVIT_THREADS") {
        let cap: usize = cap
            .trim()
            .parse()
            .ok()
            .filter(|&c| c > 0)
            .ok_or_else(|| Error::Config(format!("LACVIT_THREADS={cap:?} is not a positive integer")))?;
        if rc.workers() > cap {
            log::info!("capping workers at {cap} (LACVIT_THREADS)");
            rc.set("run.workers", &cap.to_string())?;
        }
    }
    Ok(rc)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Format { .. } => 3,
        Error::NonFinite { .. } | Error::Degenerate(_) => 4,
        _ => 1,
    }
}

#[cfg(all(target_os = "linux", target_env = "gnu"))]
fn tune_allocator() {
    // activations are freed and reallocated every step; keep them on the heap
    unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, 32 << 20);
        libc::mallopt(libc::M_TRIM_THRESHOLD, i32::MAX);
        libc::mallopt(libc::M_TOP_PAD, 256 << 20);
    }
}

#[cfg(not(all(target_os = "linux", target_env = "gnu")))]
fn tune_allocator() {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    tune_allocator();

    let result = match &cli.command {
        Command::SynthData { common } => resolve_config(common).and_then(|rc| commands::synth_data(&rc)),
        Command::Train {
            stage,
            from_checkpoint,
            common,
        } => resolve_config(common).and_then(|rc| commands::train(&rc, *stage, from_checkpoint.as_deref())),
        Command::Eval {
            checkpoint,
            split,
            common,
        } => resolve_config(common).and_then(|rc| commands::eval(&rc, checkpoint, split)),
        Command::Analyze(Analysis::Isotropy { target, normalize }) => {
            resolve_config(&target.common).and_then(|rc| commands::isotropy(&rc, &target.into(), *normalize))
        }
        Command::Analyze(Analysis::Cosine { target, classes }) => {
            resolve_config(&target.common).and_then(|rc| commands::cosine(&rc, &target.into(), classes.as_deref()))
        }
        Command::Analyze(Analysis::Project { target }) => {
            resolve_config(&target.common).and_then(|rc| commands::project(&rc, &target.into()))
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

impl From<&AnalyzeArgs> for commands::Target {
    fn from(a: &AnalyzeArgs) -> Self {
        commands::Target {
            checkpoint: a.checkpoint.clone(),
            representation: a.representation.clone(),
            split: a.split.clone(),
        }
    }
}
