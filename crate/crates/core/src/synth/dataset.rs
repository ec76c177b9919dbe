use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::labels::{AttrKind, Label, TaskKind};
use super::question::{gen_question, Question};
use super::scene::{gen_scene, SceneConfig, SceneGraph};
use super::vocab::Vocab;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub scene: SceneConfig,
    /// Questions per task in each split.
    pub train_size: usize,
    pub val_size: usize,
    pub test_size: usize,
    /// Consecutive unusable scenes tolerated before giving up.
    pub max_failures: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            scene: SceneConfig::default(),
            train_size: 8000,
            val_size: 2000,
            test_size: 2000,
            max_failures: 10_000,
        }
    }
}

impl DataConfig {
    pub fn size(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train_size,
            Split::Val => self.val_size,
            Split::Test => self.test_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        for split in Split::ALL {
            if self.size(split) == 0 {
                return Err(Error::Infeasible(format!("{split} split must not be empty")));
            }
        }
        Ok(())
    }
}

/// Generated scenes and questions for both tasks and all three splits.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetBundle {
    pub config: DataConfig,
    pub seed: u64,
    /// Indexed by `scene_id`.
    pub scenes: Vec<SceneGraph>,
    pub vocab: Vocab,
    pub questions: BTreeMap<(TaskKind, Split), Vec<Question>>,
}

impl DatasetBundle {
    pub fn questions(&self, task: TaskKind, split: Split) -> &[Question] {
        self.questions
            .get(&(task, split))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn scene(&self, scene_id: u64) -> Option<&SceneGraph> {
        self.scenes
            .get(scene_id as usize)
            .filter(|s| s.scene_id == scene_id)
    }

    /// Scene ids referenced by a split, over both tasks.
    pub fn split_scene_ids(&self, split: Split) -> BTreeSet<u64> {
        TaskKind::ALL
            .iter()
            .flat_map(|&t| self.questions(t, split).iter().map(|q| q.scene_id))
            .collect()
    }

    pub fn stats(&self) -> Vec<SplitStats> {
        let mut out = Vec::new();
        for task in TaskKind::ALL {
            for split in Split::ALL {
                out.push(SplitStats::compute(task, split, self.questions(task, split)));
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub task: TaskKind,
    pub split: Split,
    pub count: usize,
    pub per_attribute: BTreeMap<String, usize>,
    /// Only meaningful for yes/no questions.
    pub yes_rate: Option<f64>,
}

impl SplitStats {
    pub fn compute(task: TaskKind, split: Split, questions: &[Question]) -> Self {
        let mut per_attribute = BTreeMap::new();
        for q in questions {
            *per_attribute.entry(q.subtype.attr.to_string()).or_insert(0) += 1;
        }
        let yes_rate = (task == TaskKind::Yn && !questions.is_empty()).then(|| {
            questions.iter().filter(|q| q.answer == Label::YES).count() as f64
                / questions.len() as f64
        });
        SplitStats {
            task,
            split,
            count: questions.len(),
            per_attribute,
            yes_rate,
        }
    }
}

impl fmt::Display for SplitStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:<3} {:<5} n={:<6}", self.task, self.split, self.count)?;
        for (attr, n) in &self.per_attribute {
            write!(f, " {attr}={n}")?;
        }
        if let Some(r) = self.yes_rate {
            write!(f, " yes-rate={r:.4}")?;
        }
        Ok(())
    }
}

/// Splits `total` into `parts` near-equal shares, remainder to the front.
fn shares(total: usize, parts: usize) -> Vec<usize> {
    (0..parts)
        .map(|i| total / parts + usize::from(i < total % parts))
        .collect()
}

/// Generates the full bundle. Each scene belongs to exactly one split and
/// hosts at most one question per task. Attribute-query splits are
/// stratified over the four attributes; comparison splits are stratified
/// over attributes and, within each, over yes/no.
pub fn build_dataset(config: &DataConfig, seed: u64) -> Result<DatasetBundle> {
    config.validate()?;
    let vocab = Vocab::standard();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scenes = Vec::new();
    let mut questions: BTreeMap<(TaskKind, Split), Vec<Question>> = BTreeMap::new();
    let mut next_qid = 0u64;

    for split in Split::ALL {
        let n = config.size(split);
        let mut wh_need = shares(n, 4);
        let yn_flat = shares(n, 8);
        let mut yn_need: Vec<[usize; 2]> = (0..4).map(|a| [yn_flat[2 * a], yn_flat[2 * a + 1]]).collect();
        let (mut wh_cursor, mut yn_cursor) = (0usize, 0usize);
        let mut failures = 0usize;
        let mut wh_out = Vec::with_capacity(n);
        let mut yn_out = Vec::with_capacity(n);

        loop {
            let wh_left: usize = wh_need.iter().sum();
            let yn_left: usize = yn_need.iter().map(|b| b[0] + b[1]).sum();
            if wh_left == 0 && yn_left == 0 {
                break;
            }
            if failures > config.max_failures {
                return Err(Error::Infeasible(format!(
                    "{split}: {failures} consecutive scenes could not host a needed question"
                )));
            }
            let scene = gen_scene(&mut rng, &config.scene, scenes.len() as u64)?;
            let mut used = false;

            if wh_left > 0 {
                while wh_need[wh_cursor % 4] == 0 {
                    wh_cursor += 1;
                }
                let a = wh_cursor % 4;
                wh_cursor += 1;
                match gen_question(&scene, TaskKind::Wh, AttrKind::ALL[a], &mut rng, &vocab) {
                    Ok(mut q) => {
                        q.qid = next_qid;
                        next_qid += 1;
                        wh_need[a] -= 1;
                        wh_out.push(q);
                        used = true;
                    }
                    Err(Error::Retry) => {}
                    Err(e) => return Err(e),
                }
            }
            if yn_left > 0 {
                while yn_need[yn_cursor % 4] == [0, 0] {
                    yn_cursor += 1;
                }
                let a = yn_cursor % 4;
                yn_cursor += 1;
                match gen_question(&scene, TaskKind::Yn, AttrKind::ALL[a], &mut rng, &vocab) {
                    Ok(mut q) => {
                        let bucket = usize::from(q.answer == Label::NO);
                        if yn_need[a][bucket] > 0 {
                            q.qid = next_qid;
                            next_qid += 1;
                            yn_need[a][bucket] -= 1;
                            yn_out.push(q);
                            used = true;
                        }
                    }
                    Err(Error::Retry) => {}
                    Err(e) => return Err(e),
                }
            }
            if used {
                scenes.push(scene);
                failures = 0;
            } else {
                failures += 1;
            }
        }
        questions.insert((TaskKind::Wh, split), wh_out);
        questions.insert((TaskKind::Yn, split), yn_out);
    }

    Ok(DatasetBundle {
        config: *config,
        seed,
        scenes,
        vocab,
        questions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::program::exec_fp;

    fn small() -> DataConfig {
        DataConfig {
            train_size: 400,
            val_size: 80,
            test_size: 80,
            ..DataConfig::default()
        }
    }

    #[test]
    fn exact_counts_and_stratification() {
        let b = build_dataset(&small(), 1).unwrap();
        for task in TaskKind::ALL {
            for split in Split::ALL {
                let qs = b.questions(task, split);
                assert_eq!(qs.len(), small().size(split));
                let st = SplitStats::compute(task, split, qs);
                let expect = small().size(split) / 4;
                assert!(st.per_attribute.values().all(|&c| c == expect), "{st}");
                if task == TaskKind::Yn {
                    assert_eq!(st.yes_rate, Some(0.5));
                }
            }
        }
    }

    #[test]
    fn every_answer_replays() {
        let b = build_dataset(&small(), 2).unwrap();
        for qs in b.questions.values() {
            for q in qs {
                let scene = b.scene(q.scene_id).unwrap();
                assert_eq!(exec_fp(&q.fp, scene).unwrap(), q.answer);
                assert_eq!(b.vocab.detokenize(&q.tokens).unwrap(), q.text);
            }
        }
    }

    #[test]
    fn same_seed_same_bundle() {
        assert_eq!(build_dataset(&small(), 3).unwrap(), build_dataset(&small(), 3).unwrap());
        assert_ne!(build_dataset(&small(), 3).unwrap(), build_dataset(&small(), 4).unwrap());
    }

    #[test]
    fn empty_split_is_infeasible() {
        let cfg = DataConfig {
            val_size: 0,
            ..small()
        };
        assert!(matches!(build_dataset(&cfg, 0), Err(Error::Infeasible(_))));
    }

    #[test]
    fn shares_distribute_remainder() {
        assert_eq!(shares(10, 4), vec![3, 3, 2, 2]);
        assert_eq!(shares(8000, 4), vec![2000; 4]);
    }
}
