//! Elastic weight consolidation: estimates the diagonal Fisher after the
//! first task, then sweeps the penalty strength.
//!
//!     cargo run --release --example ewc -- [wh-yn|yn-wh] [train_size] [max_epochs] [lambda...]

use vqa_forgetting::model::{Head, ModelConfig};
use vqa_forgetting::strategies::{Sequencer, StrategyConfig, TaskData, TaskOrder};
use vqa_forgetting::synth::{build_dataset, DataConfig};
use vqa_forgetting::trainer::TrainConfig;

fn main() -> vqa_forgetting::Result<()> {
    let mut args = std::env::args().skip(1);
    let order: TaskOrder = args.next().map_or(Ok(TaskOrder::WH_YN), |s| s.parse())?;
    let train_size: usize = args.next().map_or(2000, |s| s.parse().expect("train size"));
    let max_epochs: usize = args.next().map_or(8, |s| s.parse().expect("epochs"));
    let mut lambdas: Vec<f64> = args.map(|s| s.parse().expect("lambda")).collect();
    if lambdas.is_empty() {
        lambdas = vec![0.0, 1e2, 1e4];
    }

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
    let strategy = StrategyConfig {
        fisher_samples: 500.min(train_size),
        ..StrategyConfig::default()
    };
    let mut seq = Sequencer::new(&data, model, train, strategy, "example")?;

    let state = seq.fisher(order, 0)?;
    println!("Fisher over {} examples of {}:", state.sample_count, order.first());
    for (name, f) in state.fisher() {
        let d = f.data();
        let max = d.iter().copied().fold(0.0, f64::max);
        println!("  {name:<22} mean {:.3e}  max {max:.3e}", d.iter().sum::<f64>() / d.len() as f64);
    }

    let naive = seq.run_naive(order, 0)?.result;
    println!("naive      retention {:.3}", naive.retention());
    for l in lambdas {
        let r = seq.run_ewc(order, 0, l)?.result;
        println!(
            "λ = {l:<8} retention {:.3}  second task {:.3}",
            r.retention(),
            r.after_second.accuracy(order.second())
        );
    }
    Ok(())
}
