use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use vqa_forgetting::experiment::{
    self, format_stats, load_or_generate, ExperimentConfig, Workspace, ROOT_ENV,
};
use vqa_forgetting::model::Head;
use vqa_forgetting::strategies::{Strategy, TaskData, TaskOrder};
use vqa_forgetting::synth::TaskKind;
use vqa_forgetting::Result;

#[derive(Parser)]
#[command(name = "vqa-forgetting", version, about = "Forgetting experiments on synthetic grounded QA")]
struct Cli {
    /// JSON experiment config; missing fields take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Workspace root (overrides the config file and the environment).
    #[arg(long, global = true)]
    root: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum HeadArg {
    PerTask,
    Single,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the dataset bundle and print split statistics.
    GenData,
    /// Train one task alone.
    TrainSingle {
        #[arg(long)]
        task: TaskKind,
        #[arg(long, value_enum, default_value = "per-task")]
        head: HeadArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run one two-task sequence, or the whole configured grid with --all.
    RunCl {
        #[arg(long, required_unless_present = "all")]
        strategy: Option<Strategy>,
        #[arg(long, required_unless_present = "all")]
        order: Option<TaskOrder>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Single EWC strength instead of the configured grid.
        #[arg(long)]
        lambda: Option<f64>,
        /// Rehearsal buffer size instead of the configured fraction.
        #[arg(long)]
        buffer_size: Option<usize>,
        #[arg(long, conflicts_with_all = ["strategy", "order"])]
        all: bool,
    },
    /// Aggregate stored sequence results into report.json and report.txt.
    Report,
    /// Project penultimate activations of a checkpoint and score subtype clusters.
    Analyze {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 512)]
        sample: usize,
        /// Artifact name suffix; defaults to the checkpoint's parent directory.
        #[arg(long)]
        name: Option<String>,
    },
}

fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    }
    .with_env();
    if let Some(root) = cli.root {
        config.root = root;
    }
    config.validate()?;
    let ws = Workspace::new(&config.root);

    match cli.command {
        Command::GenData => {
            let bundle = experiment::gen_data(&config, &ws)?;
            print!("{}", format_stats(&bundle.stats()));
            println!("wrote {}", ws.data_dir().display());
        }
        Command::TrainSingle { task, head, seed } => {
            let bundle = load_or_generate(&config, &ws)?;
            let head = match head {
                HeadArg::PerTask => Head::for_task(task),
                HeadArg::Single => Head::Single,
            };
            let run = experiment::train_single(&config, &ws, &bundle, task, head, seed)?;
            println!(
                "{task} ({} outputs): test accuracy {:.4}, selected epoch {}",
                head.size(),
                run.test_accuracy,
                run.history.selected_epoch
            );
        }
        Command::RunCl {
            strategy,
            order,
            seed,
            lambda,
            buffer_size,
            all,
        } => {
            let bundle = load_or_generate(&config, &ws)?;
            if all {
                experiment::run_grid(&config, &ws, &bundle, |r| {
                    println!("{}: first-task retention {:.4}", r.name(), r.retention());
                })?;
            } else {
                let (strategy, order) = (strategy.expect("required"), order.expect("required"));
                let data = TaskData::from_bundle(&bundle);
                let mut seq = experiment::sequencer(&config, &data, bundle.vocab.len())?;
                let out = match (strategy, lambda, buffer_size) {
                    (Strategy::Ewc, Some(l), _) => seq.run_ewc(order, seed, l)?,
                    (Strategy::Rehearsal, _, Some(b)) => seq.run_rehearsal(order, seed, Some(b))?,
                    _ => seq.run(strategy, order, seed)?,
                };
                out.write(&ws.cell_dir(strategy, order, seed))?;
                let r = &out.result;
                for task in TaskKind::ALL {
                    println!(
                        "{task}: after first {:.4}, after second {:.4}",
                        r.after_first.accuracy(task),
                        r.after_second.accuracy(task)
                    );
                }
            }
        }
        Command::Report => {
            let bundle = load_or_generate(&config, &ws)?;
            let report = experiment::report(&config, &ws, &bundle)?;
            print!("{}", vqa_forgetting::metrics::render_table(&report));
        }
        Command::Analyze {
            checkpoint,
            sample,
            name,
        } => {
            let bundle = load_or_generate(&config, &ws)?;
            let name = name.unwrap_or_else(|| {
                checkpoint
                    .parent()
                    .and_then(|p| p.file_name())
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "model".into())
            });
            let s = experiment::analyze(&config, &ws, &bundle, &checkpoint, &name, sample)?;
            println!("{}", serde_json::to_string_pretty(&s)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, vqa_forgetting::Error::Config(_)) {
                eprintln!("(config root can also be set with {ROOT_ENV})");
            }
            ExitCode::FAILURE
        }
    }
}
