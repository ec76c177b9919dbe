//! Penultimate-layer activations of a Wh-trained and a YN-trained model:
//! 2-D PCA projections written as CSV, plus subtype silhouette scores.
//!
//!     cargo run --release --example representation_analysis -- [train_size] [max_epochs] [sample] [out_dir]

use std::path::PathBuf;

use vqa_forgetting::analysis::{emit_projection_csv, extract_activations, pca_project, sample_questions, silhouette_report};
use vqa_forgetting::model::{Head, ModelConfig};
use vqa_forgetting::strategies::{Sequencer, StrategyConfig, TaskData};
use vqa_forgetting::synth::{build_dataset, DataConfig, Split, TaskKind};
use vqa_forgetting::trainer::TrainConfig;

fn main() -> vqa_forgetting::Result<()> {
    let mut args = std::env::args().skip(1);
    let train_size: usize = args.next().map_or(2000, |s| s.parse().expect("train size"));
    let max_epochs: usize = args.next().map_or(8, |s| s.parse().expect("epochs"));
    let sample: usize = args.next().map_or(200, |s| s.parse().expect("sample"));
    let out = args.next().map_or_else(|| std::env::temp_dir().join("vqa-analysis"), PathBuf::from);
    std::fs::create_dir_all(&out)?;

    let bundle = build_dataset(
        &DataConfig {
            train_size,
            val_size: 500,
            test_size: 500.max(sample),
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
    let mut seq = Sequencer::new(&data, model.clone(), train, StrategyConfig::default(), "example")?;

    let mut questions = Vec::new();
    for task in TaskKind::ALL {
        questions.extend(sample_questions(data.get(task, Split::Test), sample, 0)?);
    }
    for trained_on in TaskKind::ALL {
        let (params, _) = seq.phase_one(trained_on, 0)?;
        let set = extract_activations(&params, &model, &questions)?;
        let projection = pca_project(&set.rows)?;
        let path = out.join(format!("projection_{trained_on}.csv"));
        emit_projection_csv(&projection, &set.meta, &path)?;
        let s = silhouette_report(&set)?;
        println!("trained on {trained_on}: explained variance {:.3?}", projection.explained_variance);
        for (task, v) in &s.by_task {
            println!("  silhouette of {task} subtypes {v:.3}");
        }
        println!("  silhouette of the task split {:.3}", s.task_split.unwrap_or(f64::NAN));
        println!("  wrote {}", path.display());
    }
    Ok(())
}
