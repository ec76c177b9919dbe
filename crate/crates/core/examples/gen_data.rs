//! Generates a dataset, prints split statistics and a few questions with
//! their programs and answers.
//!
//!     cargo run --example gen_data -- [train_size] [seed]

use vqa_forgetting::synth::{build_dataset, exec_fp, DataConfig, Split, TaskKind};

fn main() -> vqa_forgetting::Result<()> {
    let mut args = std::env::args().skip(1);
    let train_size: usize = args.next().map_or(2000, |s| s.parse().expect("train size"));
    let seed: u64 = args.next().map_or(0, |s| s.parse().expect("seed"));
    let config = DataConfig {
        train_size,
        val_size: train_size / 4,
        test_size: train_size / 4,
        ..DataConfig::default()
    };
    let bundle = build_dataset(&config, seed)?;
    for s in bundle.stats() {
        println!("{s}");
    }
    println!("vocabulary: {} tokens", bundle.vocab.len());

    for task in TaskKind::ALL {
        println!();
        for q in bundle.questions(task, Split::Train).iter().take(3) {
            let scene = bundle.scene(q.scene_id).expect("scene");
            println!("[{task}/{}] {}  ->  {}", q.subtype, q.text, q.answer.name());
            println!("    program: {}", serde_json::to_string(&q.fp)?);
            println!("    replay:  {}", exec_fp(&q.fp, scene)?.name());
        }
    }
    Ok(())
}
