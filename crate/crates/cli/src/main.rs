use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use wwbl_cli::commands::{self, InferArgs, InferMode, Metric};
use wwbl_cli::config::RunConfig;
use wwbl_cli::error::{CliError, CliResult};
use wwbl_model::{EvalTask, Task};

#[derive(Parser)]
#[command(
    name = "wwbl",
    version,
    about = "Weakly supervised grounding: train, infer, evaluate"
)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Configuration override, `section.key=value`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Threads for per-image inference.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum TaskArg {
    Wsol,
    Wsg,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum EvalTaskArg {
    Wsol,
    Wsg,
    Wwbl,
}

#[derive(Subcommand)]
enum Command {
    /// Train a grounding network on an annotation file or dataset directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Directory for checkpoints and the training log.
        #[arg(long, default_value = "runs/latest")]
        out: PathBuf,
        #[arg(long, value_enum)]
        task: Option<TaskArg>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Run a trained network over images and write detection records.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum)]
        mode: InferMode,
        /// Phrase to ground (wsg only).
        #[arg(long)]
        prompt: Option<String>,
        #[arg(long, default_value = "predictions.jsonl")]
        out: PathBuf,
        /// Directory for images with boxes and phrases drawn in.
        #[arg(long)]
        overlay: Option<PathBuf>,
        /// Directory for grayscale mask PNGs.
        #[arg(long)]
        save_masks: Option<PathBuf>,
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
    /// Score detection records against annotations.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, value_enum, default_value = "wsg")]
        task: EvalTaskArg,
        #[arg(long, value_enum, default_value = "both")]
        metric: Metric,
        /// JSON report path; defaults to the prediction file with a `.eval.json` extension.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Generate a synthetic dataset of colored shapes.
    MakeSynthetic {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        count: usize,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref(), &cli.set)?;
    if let Some(s) = cli.seed {
        cfg.train.seed = s;
    }
    match cli.command {
        Command::Train {
            data,
            out,
            task,
            epochs,
        } => {
            if let Some(t) = task {
                cfg.train.task = match t {
                    TaskArg::Wsol => Task::Wsol,
                    TaskArg::Wsg => Task::Wsg,
                };
            }
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            cfg.validate()?;
            let path = commands::train(&cfg, &data, &out)?;
            println!("{}", path.display());
        }
        Command::Infer {
            checkpoint,
            mode,
            prompt,
            out,
            overlay,
            save_masks,
            images,
        } => {
            let args = InferArgs {
                checkpoint: &checkpoint,
                mode,
                prompt: prompt.as_deref(),
                images: &images,
                out: &out,
                overlay_dir: overlay.as_deref(),
                masks_dir: save_masks.as_deref(),
                workers: cli.workers,
            };
            let n = commands::infer(&cfg, &args)?;
            eprintln!("wrote {n} records to {}", out.display());
        }
        Command::Eval {
            pred,
            gt,
            task,
            metric,
            report,
        } => {
            let task = match task {
                EvalTaskArg::Wsol => EvalTask::Wsol,
                EvalTaskArg::Wsg => EvalTask::Wsg,
                EvalTaskArg::Wwbl => EvalTask::Wwbl,
            };
            let report = report.unwrap_or_else(|| pred.with_extension("eval.json"));
            let r = commands::eval(&cfg, &pred, &gt, task, &report)?;
            println!("{}", commands::format_report(&r, metric));
        }
        Command::MakeSynthetic { out, count } => {
            let n = commands::make_synthetic(&cfg, &out, count, cli.seed.unwrap_or(0))?;
            eprintln!("wrote {n} scenes to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError { code, message }) => {
            eprintln!("error: {message}");
            ExitCode::from(code as u8)
        }
    }
}
