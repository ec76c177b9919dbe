//! The complete study at the configured scale: data, every strategy and
//! order over all seeds, the results table, and representation analysis of
//! the two single-task models. Stored cells are reused when their config
//! hash matches.
//!
//!     cargo run --release --example full_study -- [config.json]

use vqa_forgetting::experiment::{self, collect_results, ExperimentConfig, Workspace};
use vqa_forgetting::metrics::render_table;
use vqa_forgetting::strategies::{Strategy, TaskData, TaskOrder};

fn main() -> vqa_forgetting::Result<()> {
    let config = match std::env::args().nth(1) {
        Some(p) => ExperimentConfig::load(p.as_ref())?,
        None => ExperimentConfig::default(),
    }
    .with_env();
    config.validate()?;
    let ws = Workspace::new(&config.root);
    let bundle = experiment::load_or_generate(&config, &ws)?;
    print!("{}", experiment::format_stats(&bundle.stats()));

    let hash = config.config_hash();
    let done: Vec<String> = collect_results(&ws)?
        .into_iter()
        .filter(|r| r.config_hash == hash)
        .map(|r| r.name())
        .collect();
    let data = TaskData::from_bundle(&bundle);
    let mut seq = experiment::sequencer(&config, &data, bundle.vocab.len())?;
    for &seed in &config.seeds {
        for &order in &config.orders {
            for &strategy in &config.strategies {
                let dir = ws.cell_dir(strategy, order, seed);
                let name = dir.file_name().unwrap().to_string_lossy().into_owned();
                if done.contains(&name) {
                    continue;
                }
                let started = std::time::Instant::now();
                let cell = seq.run(strategy, order, seed)?;
                cell.write(&dir)?;
                eprintln!("{name:<24} retention {:.3} ({:.0?})", cell.result.retention(), started.elapsed());
            }
        }
    }

    let report = experiment::report(&config, &ws, &bundle)?;
    print!("{}", render_table(&report));

    // After-first checkpoints of the plain sequences are the single-task models.
    let seed = config.seeds[0];
    for order in TaskOrder::ALL {
        let ckpt = ws.cell_dir(Strategy::Naive, order, seed).join("after_first.ckpt");
        if ckpt.exists() {
            let name = format!("{}_only", order.first());
            let s = experiment::analyze(&config, &ws, &bundle, &ckpt, &name, config.analysis_sample)?;
            println!("{name}: silhouette by task {:?}", s.silhouette.by_task);
        }
    }
    Ok(())
}
