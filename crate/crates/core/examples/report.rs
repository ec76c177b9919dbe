//! Runs a reduced strategy grid into a scratch workspace and prints the
//! results table, random baselines and criterion checks.
//!
//!     cargo run --release --example report -- [train_size] [max_epochs] [workspace]

use std::path::PathBuf;

use vqa_forgetting::experiment::{self, ExperimentConfig, Workspace};
use vqa_forgetting::metrics::render_table;
use vqa_forgetting::synth::DataConfig;

fn main() -> vqa_forgetting::Result<()> {
    let mut args = std::env::args().skip(1);
    let train_size: usize = args.next().map_or(1000, |s| s.parse().expect("train size"));
    let max_epochs: usize = args.next().map_or(5, |s| s.parse().expect("epochs"));
    let root = args.next().map_or_else(|| std::env::temp_dir().join("vqa-report"), PathBuf::from);

    let mut config = ExperimentConfig {
        data: DataConfig {
            train_size,
            val_size: train_size / 4,
            test_size: train_size / 4,
            ..DataConfig::default()
        },
        seeds: vec![0, 1],
        root,
        ..ExperimentConfig::default()
    };
    config.train.max_epochs = max_epochs;
    config.strategy.fisher_samples = config.strategy.fisher_samples.min(train_size);
    let ws = Workspace::new(&config.root);
    let bundle = experiment::gen_data(&config, &ws)?;
    experiment::run_grid(&config, &ws, &bundle, |r| {
        eprintln!("{:<24} retention {:.3}", r.name(), r.retention());
    })?;
    let report = experiment::report(&config, &ws, &bundle)?;
    print!("{}", render_table(&report));
    Ok(())
}
