//! `omniw`: synthetic radar data, CoT datasets, training, evaluation,
//! inference and ablations from one entry point.

mod commands;
mod config;
mod data;
mod judge;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use omniweather::tasks::TaskKind;

use crate::config::UserError;
use crate::data::EventMode;

#[derive(Parser)]
#[command(name = "omniw", version, about = "Synthetic radar nowcasting, inversion and understanding pipeline")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
pub struct Global {
    /// JSON configuration for the subcommand.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Dotted-key override, e.g. `--set model.d_model=64`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads for per-event and per-sample work (default: logical cores).
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic radar events and a dataset manifest.
    GenData {
        #[arg(long)]
        n_events: Option<usize>,
        #[arg(long, value_enum)]
        mode: Option<EventMode>,
    },
    /// Compose and quality-check reasoning traces for a manifest.
    BuildCot {
        manifest: PathBuf,
        #[arg(long)]
        task: Option<TaskKind>,
        /// Fraction of traces deliberately corrupted before quality control.
        #[arg(long, value_name = "FLOAT")]
        inject_corruption: Option<f64>,
        /// Maximum number of windows.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Train a model on a manifest.
    Train {
        #[arg(long, value_name = "MANIFEST")]
        data: PathBuf,
    },
    /// Score a checkpoint (or the ground truth with `--oracle`) on a manifest.
    Eval {
        manifest: PathBuf,
        #[arg(long, value_name = "DIR", required_unless_present = "oracle")]
        checkpoint: Option<PathBuf>,
        /// Use the targets as predictions.
        #[arg(long, conflicts_with = "checkpoint")]
        oracle: bool,
        #[arg(long)]
        think: bool,
        #[arg(long, value_name = "FLOAT")]
        cfg_scale: Option<f64>,
        /// At most this many samples per task.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Run one sample and write its outputs.
    Infer {
        manifest: PathBuf,
        #[arg(long, value_name = "DIR")]
        checkpoint: PathBuf,
        /// Sample id, e.g. `ev3-w0-nowcast`.
        #[arg(long)]
        sample: String,
        #[arg(long)]
        think: bool,
        #[arg(long, value_name = "FLOAT")]
        cfg_scale: Option<f64>,
    },
    /// Task, encoder and guidance ablations as JSON and a text table.
    Ablate {
        #[arg(long, value_name = "MANIFEST")]
        data: PathBuf,
        #[arg(long, value_name = "MANIFEST")]
        eval_data: PathBuf,
    },
    /// Score understanding predictions of an eval run with an external judge.
    Judge {
        /// Output directory of `eval`.
        eval_dir: PathBuf,
        #[arg(long, value_name = "URL")]
        judge_endpoint: Option<String>,
    },
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<UserError>() {
            return 2;
        }
        if let Some(c) = cause.downcast_ref::<omniweather::CoreError>() {
            use omniweather::CoreError as E;
            if matches!(c, E::Config(_) | E::UnknownScenario(_) | E::FrameCount { .. } | E::Schema(_)) {
                return 2;
            }
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let g = &cli.global;
    let result = rayon::ThreadPoolBuilder::new()
        .num_threads(g.jobs.unwrap_or(0))
        .build()
        .map_err(anyhow::Error::from)
        .and_then(|pool| {
            pool.install(|| match &cli.command {
                Command::GenData { n_events, mode } => commands::gen_data(g, *n_events, *mode),
                Command::BuildCot { manifest, task, inject_corruption, n } => {
                    commands::build_cot(g, manifest, *task, *inject_corruption, *n)
                }
                Command::Train { data } => commands::train(g, data),
                Command::Eval { manifest, checkpoint, oracle, think, cfg_scale, limit } => {
                    commands::eval(g, manifest, checkpoint.as_deref().filter(|_| !oracle), *think, *cfg_scale, *limit)
                }
                Command::Infer { manifest, checkpoint, sample, think, cfg_scale } => {
                    commands::infer(g, manifest, checkpoint, sample, *think, *cfg_scale)
                }
                Command::Ablate { data, eval_data } => commands::ablate(g, data, eval_data),
                Command::Judge { eval_dir, judge_endpoint } => judge::judge(g, eval_dir, judge_endpoint.clone()),
            })
        });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
