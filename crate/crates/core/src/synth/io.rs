//! On-disk layout of a dataset bundle.
//!
//! ```text
//! dataset.json                  {format_version, seed, config, stats}
//! scenes.jsonl                  one scene per line, ordered by scene_id
//! questions_<task>_<split>.jsonl one question per line, ordered by qid
//! vocab.json                    token -> index
//! ```
//!
//! All files are UTF-8 with LF line endings; object keys follow struct
//! field order, so identical bundles serialize to identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::dataset::{DataConfig, DatasetBundle, Split, SplitStats};
use super::labels::TaskKind;
use super::question::Question;
use super::scene::SceneGraph;
use super::vocab::Vocab;
use crate::error::{Error, Result};

pub const BUNDLE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct BundleHeader {
    format_version: u32,
    seed: u64,
    config: DataConfig,
    stats: Vec<SplitStats>,
}

pub fn questions_file(task: TaskKind, split: Split) -> String {
    format!("questions_{task}_{split}.jsonl")
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, items: &[T]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads one JSON value per line; a malformed line reports its 1-based number.
pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let item = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(item);
    }
    Ok(out)
}

fn write_pretty<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

pub fn write_bundle(bundle: &DatasetBundle, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    write_pretty(
        dir.join("dataset.json"),
        &BundleHeader {
            format_version: BUNDLE_FORMAT_VERSION,
            seed: bundle.seed,
            config: bundle.config,
            stats: bundle.stats(),
        },
    )?;
    write_jsonl(dir.join("scenes.jsonl"), &bundle.scenes)?;
    for task in TaskKind::ALL {
        for split in Split::ALL {
            write_jsonl(dir.join(questions_file(task, split)), bundle.questions(task, split))?;
        }
    }
    write_pretty(dir.join("vocab.json"), &bundle.vocab)?;
    Ok(())
}

pub fn read_bundle(dir: impl AsRef<Path>) -> Result<DatasetBundle> {
    let dir = dir.as_ref();
    let header: BundleHeader = serde_json::from_str(&fs::read_to_string(dir.join("dataset.json"))?)?;
    if header.format_version != BUNDLE_FORMAT_VERSION {
        return Err(Error::Invalid(format!(
            "unsupported bundle format version {}",
            header.format_version
        )));
    }
    let scenes: Vec<SceneGraph> = read_jsonl(dir.join("scenes.jsonl"))?;
    for (i, s) in scenes.iter().enumerate() {
        if s.scene_id != i as u64 {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("scene_id {} out of sequence", s.scene_id),
            });
        }
    }
    let vocab: Vocab = serde_json::from_str(&fs::read_to_string(dir.join("vocab.json"))?)?;
    let mut questions = BTreeMap::new();
    for task in TaskKind::ALL {
        for split in Split::ALL {
            let qs: Vec<Question> = read_jsonl(dir.join(questions_file(task, split)))?;
            if let Some((i, q)) = qs
                .iter()
                .enumerate()
                .find(|(_, q)| q.scene_id as usize >= scenes.len())
            {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("question {} refers to missing scene {}", q.qid, q.scene_id),
                });
            }
            questions.insert((task, split), qs);
        }
    }
    Ok(DatasetBundle {
        config: header.config,
        seed: header.seed,
        scenes,
        vocab,
        questions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::dataset::build_dataset;

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.jsonl");
        fs::write(&path, "{\"a\":1}\n{\"a\":\n").unwrap();
        match read_jsonl::<serde_json::Value>(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bundle_round_trip_and_line_counts() {
        let cfg = DataConfig {
            train_size: 40,
            val_size: 30,
            test_size: 30,
            ..DataConfig::default()
        };
        let bundle = build_dataset(&cfg, 11).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_bundle(&bundle, dir.path()).unwrap();
        let back = read_bundle(dir.path()).unwrap();
        assert_eq!(back, bundle);
        let text = fs::read_to_string(dir.path().join(questions_file(TaskKind::Wh, Split::Train))).unwrap();
        assert_eq!(text.lines().count(), 40);
        assert!(text.ends_with('\n') && !text.contains('\r'));
        let first = text.lines().next().unwrap();
        let keys = ["\"qid\"", "\"scene_id\"", "\"task\"", "\"subtype\"", "\"text\"", "\"tokens\"", "\"fp\"", "\"answer\""];
        let positions: Vec<usize> = keys.iter().map(|k| first.find(k).unwrap()).collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]), "{first}");
    }
}
