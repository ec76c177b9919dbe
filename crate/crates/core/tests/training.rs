use std::collections::BTreeMap;
use std::sync::Arc;

use vqa_forgetting::model::{init_params, Example, Head, ModelConfig};
use vqa_forgetting::synth::{Label, Subtype, TaskKind};
use vqa_forgetting::trainer::{evaluate_accuracy, train, Selection, TrainConfig, TrainData};

/// 200 questions whose answer is fixed by their second token; the grids are
/// random and carry no signal.
fn separable_set() -> Vec<Example> {
    let mut state = 12345u64;
    let mut next = || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 33) as f64 / (1u64 << 31) as f64
    };
    (0..200)
        .map(|i| {
            let k = i % 5;
            let grid: Vec<f64> = (0..4 * 4 * 16).map(|_| if next() < 0.1 { 1.0 } else { 0.0 }).collect();
            Example {
                qid: i as u64,
                task: TaskKind::Wh,
                subtype: Subtype::all()[0],
                tokens: vec![1, 2 + k as usize, 9, 10],
                features: Arc::from(grid),
                label: Label::new(3 * k as usize).unwrap(),
            }
        })
        .collect()
}

#[test]
fn separable_toy_set_is_fit_within_fifty_epochs() {
    let set = separable_set();
    let model = ModelConfig {
        embed_dim: 8,
        hidden_dim: 16,
        mlp_hidden_dim: 16,
        ..ModelConfig::new(12, 4, Head::Wh)
    };
    let data = TrainData {
        train: &set,
        extra: &[],
        val: BTreeMap::from([(TaskKind::Wh, set.as_slice())]),
    };
    let config = TrainConfig {
        batch_size: 20,
        max_epochs: 50,
        ..TrainConfig::default()
    };
    let out = train(init_params(&model, 0).unwrap(), &model, &data, &config, Selection::ValAccuracy(TaskKind::Wh), None)
        .unwrap();
    assert_eq!(evaluate_accuracy(&out.best, &model, &set).unwrap(), 1.0, "{:?}", out.history.epochs.last());
    assert!(out.history.epochs.len() <= 51);
}

#[test]
fn mixed_batches_visit_train_plus_buffer_each_epoch() {
    let set = separable_set();
    let (train_set, buffer) = set.split_at(170);
    let model = ModelConfig {
        embed_dim: 4,
        hidden_dim: 6,
        mlp_hidden_dim: 6,
        attention_hops: 1,
        ..ModelConfig::new(12, 4, Head::Wh)
    };
    let data = TrainData {
        train: train_set,
        extra: &buffer[..13],
        val: BTreeMap::from([(TaskKind::Wh, buffer)]),
    };
    let config = TrainConfig {
        batch_size: 32,
        max_epochs: 2,
        ..TrainConfig::default()
    };
    let out = train(init_params(&model, 1).unwrap(), &model, &data, &config, Selection::ValAccuracy(TaskKind::Wh), None)
        .unwrap();
    assert_eq!(out.history.examples_per_epoch, 183);
}
