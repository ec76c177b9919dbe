//! Two tasks in sequence with the shared 17-way head: plain fine-tuning
//! forgets the first task, joint training on both does not.
//!
//!     cargo run --release --example forgetting_sequence -- [wh-yn|yn-wh] [train_size] [max_epochs]

use vqa_forgetting::model::{Head, ModelConfig};
use vqa_forgetting::strategies::{SequenceResult, Sequencer, StrategyConfig, TaskData, TaskOrder};
use vqa_forgetting::synth::{build_dataset, DataConfig, TaskKind};
use vqa_forgetting::trainer::TrainConfig;

fn show(r: &SequenceResult) {
    println!("{}", r.name());
    for (phase, p) in [("after first ", &r.after_first), ("after second", &r.after_second)] {
        let cells: Vec<String> = TaskKind::ALL
            .iter()
            .map(|t| {
                let e = &p.test[t];
                format!("{t} {:.3} (crossed {:.3})", e.accuracy, e.cross_type_error)
            })
            .collect();
        println!("  {phase}: {}", cells.join(", "));
    }
    println!("  first-task retention {:.3}", r.retention());
}

fn main() -> vqa_forgetting::Result<()> {
    let mut args = std::env::args().skip(1);
    let order: TaskOrder = args.next().map_or(Ok(TaskOrder::WH_YN), |s| s.parse())?;
    let train_size: usize = args.next().map_or(2000, |s| s.parse().expect("train size"));
    let max_epochs: usize = args.next().map_or(8, |s| s.parse().expect("epochs"));

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

    show(&seq.run_naive(order, 0)?.result);
    show(&seq.run_cumulative(order, 0)?.result);
    Ok(())
}
