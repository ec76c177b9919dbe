//! Finite-difference check of the whole model's gradients.
//!
//!     cargo run --example gradient_check -- [coordinates_per_param]

use vqa_forgetting::diff::{grad_check, Coordinates};
use vqa_forgetting::model::{batch_loss, init_params, FeatureCache, Head, ModelConfig};
use vqa_forgetting::synth::{build_dataset, DataConfig, Split, TaskKind};

fn main() -> vqa_forgetting::Result<()> {
    let per_param: usize = std::env::args().nth(1).map_or(50, |s| s.parse().expect("count"));
    let bundle = build_dataset(
        &DataConfig {
            train_size: 8,
            val_size: 4,
            test_size: 4,
            ..DataConfig::default()
        },
        0,
    )?;
    let cache = FeatureCache::new(&bundle);
    let mut examples = cache.examples(&bundle, TaskKind::Wh, Split::Train);
    examples.truncate(2);
    examples.extend(cache.examples(&bundle, TaskKind::Yn, Split::Train).into_iter().take(2));
    let batch: Vec<_> = examples.iter().collect();

    let model = ModelConfig::new(bundle.vocab.len(), 6, Head::Single);
    let mut params = init_params(&model, 1)?;
    // Nonzero position weights so their gradient path is exercised too.
    for (name, t) in params.iter_mut() {
        if name.ends_with("w_pos") {
            t.data_mut().iter_mut().enumerate().for_each(|(i, x)| *x = 0.01 * (i % 7) as f64 - 0.03);
        }
    }
    let started = std::time::Instant::now();
    let report = grad_check(
        |tape, p| batch_loss(tape, p, &model, &batch),
        &params,
        1e-4,
        Coordinates::Sample { per_param, seed: 0 },
    )?;
    for (name, err, at) in &report.per_param {
        println!("{name:<22} max rel err {err:.2e} (at {at})");
    }
    println!(
        "{} coordinates in {:.1?}; worst {:.2e} at {}[{}]",
        report.coordinates_checked,
        started.elapsed(),
        report.max_relative_error,
        report.worst_param,
        report.worst_index
    );
    Ok(())
}
