//! Mini-batch training with early stopping and validation-based model
//! selection, plus accuracy evaluation and run-directory persistence.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diff::checkpoint::{save_meta, CheckpointMeta};
use crate::diff::{adam_step, save_params, AdamConfig, AdamState, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::metrics::ClScoreKind;
use crate::model::{batch_loss, infer, Example, ModelConfig};
use crate::synth::TaskKind;

/// Batch size used for forward-only evaluation passes.
pub const EVAL_BATCH: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without improvement of the selection metric before stopping.
    pub patience: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            max_epochs: 50,
            // Joint training on both tasks can sit on a plateau for six epochs
            // before Wh accuracy starts to climb.
            patience: 10,
            // At the optimizer's own default of 1e-3 the Wh task sits on a
            // plateau for about ten epochs before it starts to learn.
            adam: AdamConfig {
                lr: 3e-3,
                ..AdamConfig::default()
            },
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.patience == 0 {
            return Err(Error::Config(format!(
                "batch_size and patience must be at least 1 (got {} and {})",
                self.batch_size, self.patience
            )));
        }
        Ok(())
    }
}

/// Metric that picks the epoch to keep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    ValAccuracy(TaskKind),
    ClScore(TaskKind, TaskKind, ClScoreKind),
}

impl Selection {
    pub fn tasks(&self) -> Vec<TaskKind> {
        match *self {
            Selection::ValAccuracy(t) => vec![t],
            Selection::ClScore(a, b, _) => vec![a, b],
        }
    }

    /// Value of the metric given per-task validation accuracies.
    pub fn score(&self, val: &BTreeMap<TaskKind, f64>) -> Result<f64> {
        let get = |t: TaskKind| {
            val.get(&t)
                .copied()
                .ok_or_else(|| Error::Invalid(format!("no validation accuracy for {t}")))
        };
        match *self {
            Selection::ValAccuracy(t) => get(t),
            Selection::ClScore(a, b, kind) => Ok(kind.score(get(a)?, get(b)?)),
        }
    }
}

/// Extra differentiable term added to every batch loss.
pub trait Regularizer {
    fn penalty(&self, tape: &mut Tape, params: &ParamStore) -> Result<Var>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean batch loss; absent for the untrained epoch 0.
    pub train_loss: Option<f64>,
    pub val_accuracy: BTreeMap<TaskKind, f64>,
    pub metric: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunHistory {
    pub selection: Selection,
    pub epochs: Vec<EpochRecord>,
    pub selected_epoch: usize,
    /// Examples visited per epoch (train plus extra data).
    pub examples_per_epoch: usize,
}

/// Index into `history.epochs` of the best record; ties go to the earliest.
pub fn select_best(epochs: &[EpochRecord]) -> Result<usize> {
    if epochs.is_empty() {
        return Err(Error::Empty("run history"));
    }
    let mut best = 0;
    for (i, r) in epochs.iter().enumerate() {
        if r.metric > epochs[best].metric {
            best = i;
        }
    }
    Ok(best)
}

/// Training and validation data for one run.
pub struct TrainData<'a> {
    pub train: &'a [Example],
    /// Mixed into every epoch alongside `train` (rehearsal buffer).
    pub extra: &'a [Example],
    pub val: BTreeMap<TaskKind, &'a [Example]>,
}

pub struct TrainOutcome {
    pub best: ParamStore,
    pub history: RunHistory,
}

/// Fraction of `examples` whose argmax prediction equals the gold label.
pub fn evaluate_accuracy(params: &ParamStore, model: &ModelConfig, examples: &[Example]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Empty("evaluation split"));
    }
    let preds = infer(params, model, examples, EVAL_BATCH)?;
    let hits = preds
        .iter()
        .zip(examples)
        .filter(|(p, e)| p.predicted == e.label)
        .count();
    Ok(hits as f64 / examples.len() as f64)
}

fn validate_all(
    params: &ParamStore,
    model: &ModelConfig,
    data: &TrainData,
    selection: &Selection,
) -> Result<BTreeMap<TaskKind, f64>> {
    let mut out = BTreeMap::new();
    for task in selection.tasks() {
        let split = data
            .val
            .get(&task)
            .ok_or_else(|| Error::Invalid(format!("no validation split for {task}")))?;
        out.insert(task, evaluate_accuracy(params, model, split)?);
    }
    Ok(out)
}

/// Trains from `init`, returning the parameters of the selected epoch.
///
/// Epoch 0 (the initial parameters) is only a candidate when `max_epochs`
/// is 0. Training stops after `patience` epochs without improvement.
pub fn train(
    init: ParamStore,
    model: &ModelConfig,
    data: &TrainData,
    config: &TrainConfig,
    selection: Selection,
    regularizer: Option<&dyn Regularizer>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let pool: Vec<&Example> = data.train.iter().chain(data.extra).collect();
    if pool.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let examples_per_epoch = pool.len();

    if config.max_epochs == 0 {
        let val = validate_all(&init, model, data, &selection)?;
        let metric = selection.score(&val)?;
        return Ok(TrainOutcome {
            best: init,
            history: RunHistory {
                selection,
                epochs: vec![EpochRecord {
                    epoch: 0,
                    train_loss: None,
                    val_accuracy: val,
                    metric,
                }],
                selected_epoch: 0,
                examples_per_epoch,
            },
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = AdamState::new(config.adam);
    let mut params = init;
    let mut best = params.clone();
    let mut epochs: Vec<EpochRecord> = Vec::new();
    let mut order: Vec<usize> = (0..pool.len()).collect();
    let mut tape = Tape::new();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            tape.clear();
            let batch: Vec<&Example> = chunk.iter().map(|&i| pool[i]).collect();
            let mut loss = batch_loss(&mut tape, &params, model, &batch)?;
            if let Some(reg) = regularizer {
                let p = reg.penalty(&mut tape, &params)?;
                loss = tape.add(loss, p)?;
            }
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    loss: value,
                });
            }
            let grads = tape.backward(loss)?;
            adam_step(&mut params, &grads, &mut adam)?;
            total += value;
            batches += 1;
        }
        let val = validate_all(&params, model, data, &selection)?;
        let metric = selection.score(&val)?;
        let improved = epochs.last().is_none() || metric > epochs[select_best(&epochs)?].metric;
        epochs.push(EpochRecord {
            epoch,
            train_loss: Some(total / batches as f64),
            val_accuracy: val,
            metric,
        });
        if improved {
            best = params.clone();
        }
        let best_idx = select_best(&epochs)?;
        if epochs.len() - 1 - best_idx >= config.patience {
            break;
        }
    }
    let selected_epoch = epochs[select_best(&epochs)?].epoch;
    Ok(TrainOutcome {
        best,
        history: RunHistory {
            selection,
            epochs,
            selected_epoch,
            examples_per_epoch,
        },
    })
}

/// Writes `history.json`, `best.ckpt` (+ `best.json` sidecar) and `config.json`.
pub fn save_run(
    dir: &Path,
    outcome: &TrainOutcome,
    model: &ModelConfig,
    config: &TrainConfig,
    config_hash: &str,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(
        dir.join("history.json"),
        serde_json::to_string_pretty(&outcome.history)?,
    )?;
    save_params(&outcome.best, dir.join("best.ckpt"))?;
    let selected = &outcome.history.epochs
        [select_best(&outcome.history.epochs)?];
    save_meta(
        &CheckpointMeta {
            config_hash: config_hash.to_string(),
            seed: config.seed,
            epoch: selected.epoch,
            val_metric: selected.metric,
            model: Some(serde_json::to_value(model)?),
        },
        dir.join("best.json"),
    )?;
    fs::write(
        dir.join("config.json"),
        serde_json::to_string_pretty(&serde_json::json!({
            "model": model,
            "train": config,
        }))?,
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, FeatureCache, Head};
    use crate::synth::{build_dataset, DataConfig, Split, Vocab};

    fn record(epoch: usize, metric: f64) -> EpochRecord {
        EpochRecord {
            epoch,
            train_loss: Some(1.0),
            val_accuracy: BTreeMap::new(),
            metric,
        }
    }

    fn small_model(head: Head) -> ModelConfig {
        ModelConfig {
            embed_dim: 8,
            hidden_dim: 16,
            mlp_hidden_dim: 16,
            ..ModelConfig::new(Vocab::standard().len(), 6, head)
        }
    }

    fn yn_data(n: usize) -> (Vec<Example>, Vec<Example>) {
        let bundle = build_dataset(
            &DataConfig {
                train_size: n,
                val_size: 40,
                test_size: 4,
                ..DataConfig::default()
            },
            1,
        )
        .unwrap();
        let cache = FeatureCache::new(&bundle);
        (
            cache.examples(&bundle, TaskKind::Yn, Split::Train),
            cache.examples(&bundle, TaskKind::Yn, Split::Val),
        )
    }

    #[test]
    fn select_best_prefers_last_on_monotone_and_earliest_on_ties() {
        let mono: Vec<_> = (1..5).map(|e| record(e, e as f64 / 10.0)).collect();
        assert_eq!(select_best(&mono).unwrap(), 3);
        let tie = vec![record(1, 0.5), record(2, 0.7), record(3, 0.7)];
        assert_eq!(select_best(&tie).unwrap(), 1);
        assert!(select_best(&[]).is_err());
    }

    #[test]
    fn cl_score_selection_on_hand_history() {
        let sel = Selection::ClScore(TaskKind::Wh, TaskKind::Yn, ClScoreKind::Mean);
        let hist: Vec<EpochRecord> = [(0.5, 0.0), (0.4, 0.4)]
            .iter()
            .enumerate()
            .map(|(i, &(a, b))| {
                let val = BTreeMap::from([(TaskKind::Wh, a), (TaskKind::Yn, b)]);
                EpochRecord {
                    epoch: i + 1,
                    train_loss: None,
                    metric: sel.score(&val).unwrap(),
                    val_accuracy: val,
                }
            })
            .collect();
        assert_eq!(hist[select_best(&hist).unwrap()].epoch, 2);
    }

    #[test]
    fn zero_epochs_returns_initial_params() {
        let model = small_model(Head::Yn);
        let init = init_params(&model, 0).unwrap();
        let (train_set, val) = yn_data(16);
        let data = TrainData {
            train: &train_set,
            extra: &[],
            val: BTreeMap::from([(TaskKind::Yn, val.as_slice())]),
        };
        let cfg = TrainConfig {
            max_epochs: 0,
            ..TrainConfig::default()
        };
        let out = train(init.clone(), &model, &data, &cfg, Selection::ValAccuracy(TaskKind::Yn), None).unwrap();
        assert_eq!(out.best, init);
        assert_eq!(out.history.selected_epoch, 0);
    }

    #[test]
    fn training_is_deterministic_and_counts_extra_examples() {
        let model = small_model(Head::Single);
        let (train_set, val) = yn_data(48);
        let extra: Vec<Example> = train_set[..8].to_vec();
        let data = TrainData {
            train: &train_set,
            extra: &extra,
            val: BTreeMap::from([(TaskKind::Yn, val.as_slice())]),
        };
        let cfg = TrainConfig {
            max_epochs: 2,
            batch_size: 16,
            seed: 9,
            ..TrainConfig::default()
        };
        let run = || {
            train(
                init_params(&model, 2).unwrap(),
                &model,
                &data,
                &cfg,
                Selection::ValAccuracy(TaskKind::Yn),
                None,
            )
            .unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.history, b.history);
        assert_eq!(a.best, b.best);
        assert_eq!(a.history.examples_per_epoch, 56);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for cfg in [
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
            TrainConfig { patience: 0, ..TrainConfig::default() },
        ] {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn empty_evaluation_split_is_an_error() {
        let model = small_model(Head::Single);
        let params = init_params(&model, 0).unwrap();
        assert!(matches!(
            evaluate_accuracy(&params, &model, &[]),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn exploding_learning_rate_reports_non_finite_loss() {
        let model = small_model(Head::Yn);
        let (train_set, val) = yn_data(64);
        let data = TrainData {
            train: &train_set,
            extra: &[],
            val: BTreeMap::from([(TaskKind::Yn, val.as_slice())]),
        };
        let cfg = TrainConfig {
            max_epochs: 3,
            adam: AdamConfig { lr: f64::INFINITY, ..AdamConfig::default() },
            ..TrainConfig::default()
        };
        let err = train(init_params(&model, 0).unwrap(), &model, &data, &cfg, Selection::ValAccuracy(TaskKind::Yn), None);
        assert!(matches!(err, Err(Error::NonFiniteLoss { .. })), "{:?}", err.err());
    }
}
