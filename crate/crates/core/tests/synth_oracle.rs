mod support;

use std::collections::BTreeSet;

use vqa_forgetting::synth::{
    build_dataset, encode_features, write_bundle, DataConfig, DatasetBundle, Split, SplitStats, TaskKind,
};

fn default_bundle() -> DatasetBundle {
    build_dataset(&DataConfig::default(), 0).unwrap()
}

#[test]
fn every_gold_answer_matches_the_reference_interpreter() {
    let bundle = default_bundle();
    let mut checked = 0;
    for ((_, _), questions) in &bundle.questions {
        for q in questions {
            let scene = serde_json::to_value(bundle.scene(q.scene_id).unwrap()).unwrap();
            let fp = serde_json::to_value(&q.fp).unwrap();
            let got = support::answer(&fp, &scene).unwrap_or_else(|e| panic!("qid {}: {e}", q.qid));
            assert_eq!(got, q.answer.name(), "qid {}", q.qid);
            checked += 1;
        }
    }
    assert!(checked >= 10_000);
}

#[test]
fn feature_grids_match_the_reference_layout() {
    let bundle = default_bundle();
    for scene in bundle.scenes.iter().take(2000) {
        let expect = support::features(&serde_json::to_value(scene).unwrap());
        let grid = encode_features(scene);
        assert_eq!(grid.data, expect, "scene {}", scene.scene_id);
        let occupied: f64 = grid.data.iter().step_by(16).sum();
        assert_eq!(occupied as usize, scene.objects.len());
    }
}

#[test]
fn yes_rate_is_balanced_and_wh_is_stratified() {
    let bundle = default_bundle();
    for split in Split::ALL {
        let yn = SplitStats::compute(TaskKind::Yn, split, bundle.questions(TaskKind::Yn, split));
        let rate = yn.yes_rate.unwrap();
        assert!((rate - 0.5).abs() <= 0.02, "{split}: yes-rate {rate}");
    }
    let wh = SplitStats::compute(TaskKind::Wh, Split::Train, bundle.questions(TaskKind::Wh, Split::Train));
    let counts: BTreeSet<usize> = wh.per_attribute.values().copied().collect();
    assert_eq!(wh.per_attribute.len(), 4);
    assert_eq!(counts.len(), 1, "{:?}", wh.per_attribute);
}

#[test]
fn splits_never_share_scenes() {
    let config = DataConfig {
        train_size: 400,
        val_size: 100,
        test_size: 100,
        ..DataConfig::default()
    };
    for seed in 0..5 {
        let bundle = build_dataset(&config, seed).unwrap();
        let ids: Vec<_> = Split::ALL.iter().map(|&s| bundle.split_scene_ids(s)).collect();
        for i in 0..3 {
            for j in i + 1..3 {
                assert!(ids[i].is_disjoint(&ids[j]), "seed {seed}");
            }
        }
    }
}

#[test]
fn generation_is_byte_identical_for_a_seed() {
    let config = DataConfig {
        train_size: 200,
        val_size: 50,
        test_size: 50,
        ..DataConfig::default()
    };
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        write_bundle(&build_dataset(&config, 7).unwrap(), d.path()).unwrap();
    }
    let mut names: Vec<_> = std::fs::read_dir(dirs[0].path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert!(!names.is_empty());
    for n in names {
        let a = std::fs::read(dirs[0].path().join(&n)).unwrap();
        let b = std::fs::read(dirs[1].path().join(&n)).unwrap();
        assert_eq!(a, b, "{n:?}");
    }
    let other = build_dataset(&config, 8).unwrap();
    let first = build_dataset(&config, 7).unwrap();
    assert_ne!(
        serde_json::to_string(&other.scenes).unwrap(),
        serde_json::to_string(&first.scenes).unwrap()
    );
}
