//! Command-line driver for the radar detection pipeline: scene synthesis,
//! tensor projection, network inference, box decoding, evaluation, gradient
//! checking, and stage benchmarks.
//!
//! Exit codes: 0 success, 1 validation/usage error, 2 I/O or file-format
//! error, 3 gradient-check failure.

mod commands;
mod config;
mod scene;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "radekit",
    version,
    about = "Radar tensor projection and detection pipeline"
)]
struct Cli {
    /// Configuration file; defaults to $RADEKIT_CONFIG when that is set.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override one configuration value (repeatable).
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,

    /// Upper bound on worker threads; outputs never depend on this.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,

    /// Write the effective configuration to a file before running.
    #[arg(long, global = true, value_name = "PATH")]
    dump_config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a scene script into tensors, labels, and a manifest.
    Synth {
        /// Scene script path.
        #[arg(long)]
        scene: PathBuf,
        /// Output directory (tensors/, labels/, manifest.csv).
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Project 4D tensors to range-azimuth channel stacks.
    Project {
        /// Manifest of frames to project.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Directory for projection files.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Print memory statistics at 4- and 8-byte element widths.
        #[arg(long)]
        stats: bool,
    },
    /// Produce head outputs from projections (or from labels in oracle mode).
    Infer {
        #[arg(long)]
        manifest: PathBuf,
        /// Directory holding projection files.
        #[arg(long)]
        proj_dir: Option<PathBuf>,
        /// Directory for head-output files.
        #[arg(long)]
        out_dir: PathBuf,
        /// Load network weights from this checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Save the network weights used for this run.
        #[arg(long)]
        save_checkpoint: Option<PathBuf>,
        /// Build head outputs from ground-truth labels instead of the network.
        #[arg(long)]
        inject_gt: bool,
    },
    /// Decode head outputs into detections (confidence gate + suppression).
    Decode {
        #[arg(long)]
        manifest: PathBuf,
        /// Directory holding head-output files.
        #[arg(long)]
        heads_dir: PathBuf,
        /// Directory for detection files.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Score detections against labels, grouped by condition.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        /// Directory holding detection files.
        #[arg(long)]
        dets_dir: PathBuf,
        /// Also write the machine-readable table here.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Also write precision-recall curve points here.
        #[arg(long)]
        plot_data: Option<PathBuf>,
    },
    /// Check analytic loss gradients against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Random instances per suite.
        #[arg(long, default_value_t = 40)]
        trials: usize,
    },
    /// Time the network stages on synthetic frames.
    Bench {
        /// Number of timed frames.
        #[arg(long)]
        frames: usize,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let path = cli
        .config
        .clone()
        .or_else(|| std::env::var_os("RADEKIT_CONFIG").map(PathBuf::from));
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(&p)
                .with_context(|| format!("reading config {}", p.display()))?;
            RunConfig::parse(&text).with_context(|| format!("parsing config {}", p.display()))?
        }
        None => RunConfig::default(),
    };
    for assignment in &cli.set {
        cfg.apply_override(assignment)?;
    }
    // Reject bad geometry or loss settings up front, before any command
    // starts writing outputs.
    cfg.geometry.validate()?;
    cfg.loss_config().validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<i32> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            anyhow::bail!("--jobs must be at least 1");
        }
        // Ignore the error when a pool already exists (e.g. repeated init in
        // one process); the bound is best-effort and never changes results.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global();
    }
    let cfg = load_config(&cli)?;
    if let Some(path) = &cli.dump_config {
        radekit_core::io::atomic_write(path, cfg.to_text().as_bytes())?;
        println!("wrote effective config to {}", path.display());
    }
    match &cli.command {
        Command::Synth { scene, out_dir } => {
            commands::synth::run(&cfg, scene, out_dir)?;
        }
        Command::Project {
            manifest,
            out_dir,
            stats,
        } => {
            commands::project::run(&cfg, manifest.as_deref(), out_dir.as_deref(), *stats)?;
        }
        Command::Infer {
            manifest,
            proj_dir,
            out_dir,
            checkpoint,
            save_checkpoint,
            inject_gt,
        } => {
            commands::infer::run(
                &cfg,
                &commands::infer::InferArgs {
                    manifest,
                    proj_dir: proj_dir.as_deref(),
                    out_dir,
                    checkpoint: checkpoint.as_deref(),
                    save_checkpoint: save_checkpoint.as_deref(),
                    inject_gt: *inject_gt,
                },
            )?;
        }
        Command::Decode {
            manifest,
            heads_dir,
            out_dir,
        } => {
            commands::decode::run(&cfg, manifest, heads_dir, out_dir)?;
        }
        Command::Eval {
            manifest,
            dets_dir,
            csv,
            plot_data,
        } => {
            commands::eval::run(&cfg, manifest, dets_dir, csv.as_deref(), plot_data.as_deref())?;
        }
        Command::Gradcheck { seed, trials } => {
            if !commands::gradcheck::run(*seed, *trials)? {
                return Ok(3);
            }
        }
        Command::Bench { frames } => {
            commands::bench::run(&cfg, *frames)?;
        }
    }
    Ok(0)
}

/// Maps an error chain to the documented exit codes.
fn classify(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<radekit_core::Error>() {
            return match e {
                radekit_core::Error::Io { .. } | radekit_core::Error::Format { .. } => 2,
                _ => 1,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 2;
        }
    }
    1
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Keep clap's rendered help/usage text but fold its exit status
            // into the documented scheme: anything that is not a help or
            // version request is a usage error.
            let is_help = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = e.print();
            std::process::exit(if is_help { 0 } else { 1 });
        }
    };
    match run(cli) {
        Ok(code) => std::process::exit(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            std::process::exit(classify(&err));
        }
    }
}
