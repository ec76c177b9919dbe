//! Trains one task alone with its own output head and prints the epoch log.
//!
//!     cargo run --release --example train_single -- [wh|yn] [train_size] [max_epochs]

use std::collections::BTreeMap;

use vqa_forgetting::model::{init_params, FeatureCache, Head, ModelConfig};
use vqa_forgetting::synth::{build_dataset, DataConfig, Split, TaskKind};
use vqa_forgetting::trainer::{evaluate_accuracy, train, Selection, TrainConfig, TrainData};

fn main() -> vqa_forgetting::Result<()> {
    let mut args = std::env::args().skip(1);
    let task: TaskKind = args.next().map_or(Ok(TaskKind::Wh), |s| s.parse())?;
    let train_size: usize = args.next().map_or(2000, |s| s.parse().expect("train size"));
    let max_epochs: usize = args.next().map_or(10, |s| s.parse().expect("epochs"));

    let bundle = build_dataset(
        &DataConfig {
            train_size,
            val_size: 500,
            test_size: 500,
            ..DataConfig::default()
        },
        0,
    )?;
    let cache = FeatureCache::new(&bundle);
    let split = |s| cache.examples(&bundle, task, s);
    let (tr, val, test) = (split(Split::Train), split(Split::Val), split(Split::Test));

    let head = Head::for_task(task);
    let model = ModelConfig::new(bundle.vocab.len(), bundle.config.scene.grid_size, head);
    let config = TrainConfig {
        max_epochs,
        ..TrainConfig::default()
    };
    let data = TrainData {
        train: &tr,
        extra: &[],
        val: BTreeMap::from([(task, val.as_slice())]),
    };
    let out = train(init_params(&model, 0)?, &model, &data, &config, Selection::ValAccuracy(task), None)?;

    for e in &out.history.epochs {
        let loss = e.train_loss.map_or("-".into(), |l| format!("{l:.4}"));
        println!("epoch {:>3}  loss {loss:>7}  val {:.4}", e.epoch, e.metric);
    }
    println!(
        "{task} with a {}-way head: selected epoch {}, test accuracy {:.4}",
        head.size(),
        out.history.selected_epoch,
        evaluate_accuracy(&out.best, &model, &test)?
    );
    Ok(())
}
