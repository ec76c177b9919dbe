//! Rehearsal: a uniform sample of the first task's training set is mixed
//! into every second-phase epoch. Sweeps the buffer size.
//!
//!     cargo run --release --example rehearsal -- [wh-yn|yn-wh] [train_size] [max_epochs] [size...]

use vqa_forgetting::model::{Head, ModelConfig};
use vqa_forgetting::strategies::{Sequencer, StrategyConfig, TaskData, TaskOrder};
use vqa_forgetting::synth::{build_dataset, DataConfig};
use vqa_forgetting::trainer::TrainConfig;

fn main() -> vqa_forgetting::Result<()> {
    let mut args = std::env::args().skip(1);
    let order: TaskOrder = args.next().map_or(Ok(TaskOrder::WH_YN), |s| s.parse())?;
    let train_size: usize = args.next().map_or(2000, |s| s.parse().expect("train size"));
    let max_epochs: usize = args.next().map_or(8, |s| s.parse().expect("epochs"));
    let sizes: Vec<usize> = args.map(|s| s.parse().expect("buffer size")).collect();

    let bundle = build_dataset(
        &DataConfig {
            train_size,
            val_size: 500,
            test_size: 500,
            ..DataConfig::default()
        },
        0,
    )?;
    let data = TaskData::from_bundle(&bundle);
    let model = ModelConfig::new(bundle.vocab.len(), bundle.config.scene.grid_size, Head::Single);
    let train = TrainConfig {
        max_epochs,
        ..TrainConfig::default()
    };
    let mut seq = Sequencer::new(&data, model, train, StrategyConfig::default(), "example")?;

    let mut runs: Vec<Option<usize>> = sizes.into_iter().map(Some).collect();
    if runs.is_empty() {
        runs = vec![None, Some(train_size / 5)];
    }
    for size in runs {
        let r = seq.run_rehearsal(order, 0, size)?.result;
        println!(
            "buffer {:>5}: {} retention {:.3}, {} {:.3}, {} examples per epoch",
            r.buffer_size.unwrap_or_default(),
            order.first(),
            r.retention(),
            order.second(),
            r.after_second.accuracy(order.second()),
            r.after_second.history.examples_per_epoch
        );
    }
    Ok(())
}
