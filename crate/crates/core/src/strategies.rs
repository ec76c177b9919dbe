//! Two-task training sequences: naive fine-tuning, cumulative (joint)
//! training, elastic weight consolidation and rehearsal.
//!
//! Every sequence uses the 17-way single head throughout. Phase 1 trains on
//! the first task and keeps the epoch with the best first-task validation
//! accuracy; phase 2 warm-starts from it and keeps the epoch with the best
//! CL score over both validation sets.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{save_params, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::metrics::{cross_type_error_rate, ClScoreKind, ConfusionMatrix};
use crate::model::{forward_batch, infer, init_params, Example, FeatureCache, Head, ModelConfig};
use crate::synth::{DatasetBundle, Split, TaskKind};
use crate::trainer::{train, Regularizer, RunHistory, Selection, TrainConfig, TrainData, TrainOutcome, EVAL_BATCH};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Naive,
    Cumulative,
    Ewc,
    Rehearsal,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Naive, Strategy::Cumulative, Strategy::Ewc, Strategy::Rehearsal];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Naive => "naive",
            Strategy::Cumulative => "cumulative",
            Strategy::Ewc => "ewc",
            Strategy::Rehearsal => "rehearsal",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown strategy {s:?}")))
    }
}

/// Ordered pair of distinct tasks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct TaskOrder {
    first: TaskKind,
    second: TaskKind,
}

impl TaskOrder {
    pub const WH_YN: TaskOrder = TaskOrder {
        first: TaskKind::Wh,
        second: TaskKind::Yn,
    };
    pub const YN_WH: TaskOrder = TaskOrder {
        first: TaskKind::Yn,
        second: TaskKind::Wh,
    };
    pub const ALL: [TaskOrder; 2] = [TaskOrder::WH_YN, TaskOrder::YN_WH];

    pub fn new(first: TaskKind, second: TaskKind) -> Result<Self> {
        if first == second {
            return Err(Error::Invalid(format!("task order needs two distinct tasks, got {first} twice")));
        }
        Ok(TaskOrder { first, second })
    }

    pub fn first(self) -> TaskKind {
        self.first
    }

    pub fn second(self) -> TaskKind {
        self.second
    }

    pub fn name(self) -> String {
        format!("{}-{}", self.first, self.second)
    }
}

impl fmt::Display for TaskOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for TaskOrder {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once('-')
            .ok_or_else(|| Error::Invalid(format!("task order {s:?} is not of the form wh-yn")))?;
        TaskOrder::new(a.parse()?, b.parse()?)
    }
}

impl TryFrom<String> for TaskOrder {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<TaskOrder> for String {
    fn from(o: TaskOrder) -> String {
        o.name()
    }
}

/// Labels used when estimating the Fisher information.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FisherLabels {
    /// Gold labels (empirical Fisher).
    #[default]
    Gold,
    /// Labels drawn from the model's predictive distribution.
    Sampled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StrategyConfig {
    /// Candidate λ values; the one with the best phase-2 validation CL score is kept.
    pub ewc_lambdas: Vec<f64>,
    pub fisher_samples: usize,
    pub fisher_labels: FisherLabels,
    /// Rehearsal buffer size as a fraction of the first task's training set.
    pub buffer_fraction: f64,
    /// Absolute buffer size; overrides `buffer_fraction` when set.
    pub buffer_size: Option<usize>,
    pub cl_score: ClScoreKind,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        StrategyConfig {
            ewc_lambdas: vec![1.0, 10.0, 100.0],
            fisher_samples: 1000,
            fisher_labels: FisherLabels::Gold,
            buffer_fraction: 0.05,
            buffer_size: None,
            cl_score: ClScoreKind::Mean,
        }
    }
}

impl StrategyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ewc_lambdas.is_empty() || self.ewc_lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::Config(format!("λ grid must be non-empty and ≥ 0: {:?}", self.ewc_lambdas)));
        }
        if self.fisher_samples == 0 {
            return Err(Error::Config("fisher_samples must be positive".into()));
        }
        if !(self.buffer_fraction > 0.0 && self.buffer_fraction <= 1.0) {
            return Err(Error::Config(format!("buffer_fraction {} outside (0, 1]", self.buffer_fraction)));
        }
        Ok(())
    }

    pub fn buffer_size_for(&self, first_task_train: usize) -> usize {
        self.buffer_size
            .unwrap_or_else(|| ((first_task_train as f64 * self.buffer_fraction).round() as usize).max(1))
    }
}

/// Per-task train/val/test examples with features attached.
pub struct TaskData {
    splits: BTreeMap<(TaskKind, Split), Vec<Example>>,
}

impl TaskData {
    pub fn from_bundle(bundle: &DatasetBundle) -> Self {
        let cache = FeatureCache::new(bundle);
        let mut splits = BTreeMap::new();
        for task in TaskKind::ALL {
            for split in Split::ALL {
                splits.insert((task, split), cache.examples(bundle, task, split));
            }
        }
        TaskData { splits }
    }

    pub fn get(&self, task: TaskKind, split: Split) -> &[Example] {
        self.splits.get(&(task, split)).map(Vec::as_slice).unwrap_or(&[])
    }

    fn val(&self) -> BTreeMap<TaskKind, &[Example]> {
        TaskKind::ALL.into_iter().map(|t| (t, self.get(t, Split::Val))).collect()
    }
}

/// Diagonal-Fisher quadratic anchor around the first task's optimum.
#[derive(Clone, Debug, PartialEq)]
pub struct EwcState {
    anchor: ParamStore,
    fisher: BTreeMap<String, Tensor>,
    pub lambda: f64,
    pub sample_count: usize,
}

impl EwcState {
    pub fn new(anchor: ParamStore, fisher: BTreeMap<String, Tensor>, lambda: f64, sample_count: usize) -> Result<Self> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::Invalid(format!("λ must be finite and ≥ 0, got {lambda}")));
        }
        let same_keys = anchor.len() == fisher.len()
            && anchor
                .iter()
                .all(|(n, t)| fisher.get(n).is_some_and(|f| f.shape() == t.shape()));
        if !same_keys {
            return Err(Error::Invalid("Fisher entries do not align with the anchor parameters".into()));
        }
        if fisher.values().flat_map(|t| t.data()).any(|&v| v.is_nan() || v < 0.0) {
            return Err(Error::Invalid("Fisher entries must be ≥ 0".into()));
        }
        Ok(EwcState {
            anchor,
            fisher,
            lambda,
            sample_count,
        })
    }

    pub fn anchor(&self) -> &ParamStore {
        &self.anchor
    }

    pub fn fisher(&self) -> &BTreeMap<String, Tensor> {
        &self.fisher
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        EwcState::new(self.anchor.clone(), self.fisher.clone(), lambda, self.sample_count)
    }

    /// `(λ/2) Σ_i F_i (θ_i − θᴬ_i)²` evaluated directly.
    pub fn penalty_value(&self, params: &ParamStore) -> Result<f64> {
        let mut total = 0.0;
        for (name, f) in &self.fisher {
            let theta = params
                .get(name)
                .ok_or_else(|| Error::Invalid(format!("missing parameter {name}")))?;
            let anchor = self.anchor.get(name).expect("aligned at construction");
            for ((t, a), fi) in theta.data().iter().zip(anchor.data()).zip(f.data()) {
                total += fi * (t - a) * (t - a);
            }
        }
        Ok(self.lambda / 2.0 * total)
    }
}

impl Regularizer for EwcState {
    fn penalty(&self, tape: &mut Tape, params: &ParamStore) -> Result<Var> {
        if self.lambda == 0.0 {
            return Ok(tape.constant(Tensor::scalar(0.0)));
        }
        let mut total: Option<Var> = None;
        for (name, f) in &self.fisher {
            let theta = params
                .get(name)
                .ok_or_else(|| Error::Invalid(format!("missing parameter {name}")))?;
            let p = tape.param(name, theta);
            let a = tape.constant(self.anchor.get(name).expect("aligned at construction").clone());
            let fc = tape.constant(f.clone());
            let d = tape.sub(p, a)?;
            let sq = tape.mul(d, d)?;
            let w = tape.mul(sq, fc)?;
            let s = tape.sum(w);
            total = Some(match total {
                Some(t) => tape.add(t, s)?,
                None => s,
            });
        }
        let total = total.ok_or(Error::Empty("Fisher information"))?;
        Ok(tape.scale(total, self.lambda / 2.0))
    }
}

/// `L_B + (λ/2) Σ F (θ − θᴬ)²` on the tape.
pub fn ewc_loss(tape: &mut Tape, base: Var, params: &ParamStore, state: &EwcState) -> Result<Var> {
    let p = state.penalty(tape, params)?;
    tape.add(base, p)
}

/// Mean squared per-example gradient of `log p(y | x)` over `m` examples
/// drawn without replacement from `examples`.
pub fn compute_fisher(
    params: &ParamStore,
    model: &ModelConfig,
    examples: &[Example],
    m: usize,
    seed: u64,
    labels: FisherLabels,
) -> Result<BTreeMap<String, Tensor>> {
    if m == 0 {
        return Err(Error::Invalid("Fisher sample count must be positive".into()));
    }
    if m > examples.len() {
        return Err(Error::Invalid(format!(
            "Fisher sample count {m} exceeds {} available examples",
            examples.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = sample(&mut rng, examples.len(), m).into_vec();
    picks.sort_unstable();
    let mut fisher: BTreeMap<String, Tensor> = params
        .iter()
        .map(|(n, t)| (n.clone(), Tensor::zeros(t.shape())))
        .collect();
    let mut tape = Tape::new();
    for i in picks {
        tape.clear();
        let ex = &examples[i];
        let out = forward_batch(&mut tape, params, model, &[ex])?;
        let target = match labels {
            FisherLabels::Gold => model.head.class_of(ex.label).ok_or_else(|| {
                Error::Invalid(format!("label {} outside the {:?} head", ex.label, model.head))
            })?,
            FisherLabels::Sampled => {
                let mut probs = tape.value(out.logits).data().to_vec();
                crate::diff::tape::softmax_in_place(&mut probs);
                WeightedIndex::new(&probs)
                    .map_err(|e| Error::Invalid(e.to_string()))?
                    .sample(&mut rng)
            }
        };
        let loss = tape.cross_entropy(out.logits, &[target])?;
        let grads = tape.backward(loss)?;
        for (name, g) in grads.iter() {
            let acc = fisher.get_mut(name).expect("same parameter set");
            for (a, v) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += v * v;
            }
        }
    }
    for t in fisher.values_mut() {
        t.data_mut().iter_mut().for_each(|v| *v /= m as f64);
    }
    Ok(fisher)
}

/// Uniform sample without replacement of first-task training examples.
#[derive(Clone, Debug, PartialEq)]
pub struct RehearsalBuffer {
    pub examples: Vec<Example>,
    /// Positions in the source training set, in draw order.
    pub indices: Vec<usize>,
    pub seed: u64,
}

pub fn build_rehearsal_buffer(train_set: &[Example], size: usize, seed: u64) -> Result<RehearsalBuffer> {
    if size == 0 || size > train_set.len() {
        return Err(Error::Invalid(format!(
            "buffer size {size} outside 1..={}",
            train_set.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let indices = sample(&mut rng, train_set.len(), size).into_vec();
    Ok(RehearsalBuffer {
        examples: indices.iter().map(|&i| train_set[i].clone()).collect(),
        indices,
        seed,
    })
}

/// Test-set evaluation of one checkpoint on one task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskEval {
    pub accuracy: f64,
    pub cross_type_error: f64,
    pub confusion: ConfusionMatrix,
}

pub fn evaluate_task(params: &ParamStore, model: &ModelConfig, examples: &[Example]) -> Result<TaskEval> {
    if examples.is_empty() {
        return Err(Error::Empty("evaluation split"));
    }
    let preds = infer(params, model, examples, EVAL_BATCH)?;
    let mut confusion = ConfusionMatrix::new();
    for (p, e) in preds.iter().zip(examples) {
        confusion.record(e.label, p.predicted);
    }
    Ok(TaskEval {
        accuracy: confusion.accuracy()?,
        cross_type_error: cross_type_error_rate(&confusion),
        confusion,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseResult {
    pub test: BTreeMap<TaskKind, TaskEval>,
    pub history: RunHistory,
}

impl PhaseResult {
    pub fn accuracy(&self, task: TaskKind) -> f64 {
        self.test[&task].accuracy
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceResult {
    pub strategy: Strategy,
    pub order: TaskOrder,
    pub seed: u64,
    pub config_hash: String,
    pub lambda: Option<f64>,
    /// Validation CL score per λ candidate, when a grid was searched.
    pub lambda_scores: Vec<(f64, f64)>,
    pub buffer_size: Option<usize>,
    pub after_first: PhaseResult,
    pub after_second: PhaseResult,
}

impl SequenceResult {
    /// First-task test accuracy after the second phase.
    pub fn retention(&self) -> f64 {
        self.after_second.accuracy(self.order.first())
    }

    pub fn name(&self) -> String {
        cell_name(self.strategy, self.order, self.seed)
    }
}

pub fn cell_name(strategy: Strategy, order: TaskOrder, seed: u64) -> String {
    format!("{strategy}_{order}_{seed}")
}

/// A result plus the checkpoints selected in each phase.
pub struct SequenceOutcome {
    pub result: SequenceResult,
    pub after_first: ParamStore,
    pub after_second: ParamStore,
}

impl SequenceOutcome {
    /// Writes checkpoints, `result.json` and per-phase confusion CSVs.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        save_params(&self.after_first, dir.join("after_first.ckpt"))?;
        save_params(&self.after_second, dir.join("after_second.ckpt"))?;
        fs::write(dir.join("result.json"), serde_json::to_string_pretty(&self.result)?)?;
        for (phase, res) in [("after_first", &self.result.after_first), ("after_second", &self.result.after_second)] {
            for (task, eval) in &res.test {
                fs::write(dir.join(format!("confusion_{phase}_{task}.csv")), eval.confusion.to_csv())?;
            }
        }
        Ok(())
    }
}

pub fn read_result(dir: &Path) -> Result<SequenceResult> {
    Ok(serde_json::from_str(&fs::read_to_string(dir.join("result.json"))?)?)
}

/// Independent stream seeds for the stages of one cell.
pub fn derive_seed(seed: u64, stage: &str) -> u64 {
    // FNV-1a over the stage name, folded into a splitmix64 finaliser.
    let mut h: u64 = 0xcbf29ce484222325;
    for b in stage.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x100000001b3);
    }
    let mut z = seed.wrapping_add(h).wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Runs sequences over one dataset, sharing phase-1 models between
/// strategies that start from the same first task and seed.
pub struct Sequencer<'a> {
    data: &'a TaskData,
    model: ModelConfig,
    train: TrainConfig,
    strategy: StrategyConfig,
    config_hash: String,
    phase1: BTreeMap<(TaskKind, u64), (ParamStore, PhaseResult)>,
    cumulative: BTreeMap<u64, (ParamStore, PhaseResult)>,
}

impl<'a> Sequencer<'a> {
    pub fn new(
        data: &'a TaskData,
        model: ModelConfig,
        train: TrainConfig,
        strategy: StrategyConfig,
        config_hash: impl Into<String>,
    ) -> Result<Self> {
        if model.head != Head::Single {
            return Err(Error::Config("sequences need the single head".into()));
        }
        model.validate()?;
        train.validate()?;
        strategy.validate()?;
        Ok(Sequencer {
            data,
            model,
            train,
            strategy,
            config_hash: config_hash.into(),
            phase1: BTreeMap::new(),
            cumulative: BTreeMap::new(),
        })
    }

    pub fn strategy_config(&self) -> &StrategyConfig {
        &self.strategy
    }

    fn train_config(&self, seed: u64, stage: &str) -> TrainConfig {
        TrainConfig {
            seed: derive_seed(seed, stage),
            ..self.train.clone()
        }
    }

    fn init(&self, seed: u64) -> Result<ParamStore> {
        init_params(&self.model, derive_seed(seed, "init"))
    }

    fn evaluate(&self, params: &ParamStore, history: RunHistory) -> Result<PhaseResult> {
        let mut test = BTreeMap::new();
        for task in TaskKind::ALL {
            test.insert(task, evaluate_task(params, &self.model, self.data.get(task, Split::Test))?);
        }
        Ok(PhaseResult { test, history })
    }

    fn finish(&self, outcome: TrainOutcome) -> Result<(ParamStore, PhaseResult)> {
        let res = self.evaluate(&outcome.best, outcome.history)?;
        Ok((outcome.best, res))
    }

    /// Phase 1: first task only, selected by its validation accuracy.
    pub fn phase_one(&mut self, first: TaskKind, seed: u64) -> Result<(ParamStore, PhaseResult)> {
        if let Some(hit) = self.phase1.get(&(first, seed)) {
            return Ok(hit.clone());
        }
        let data = TrainData {
            train: self.data.get(first, Split::Train),
            extra: &[],
            val: self.data.val(),
        };
        let out = train(
            self.init(seed)?,
            &self.model,
            &data,
            &self.train_config(seed, "phase1"),
            Selection::ValAccuracy(first),
            None,
        )?;
        let done = self.finish(out)?;
        self.phase1.insert((first, seed), done.clone());
        Ok(done)
    }

    fn phase_two(
        &self,
        order: TaskOrder,
        seed: u64,
        start: ParamStore,
        extra: &[Example],
        regularizer: Option<&dyn Regularizer>,
    ) -> Result<(ParamStore, PhaseResult)> {
        let data = TrainData {
            train: self.data.get(order.second(), Split::Train),
            extra,
            val: self.data.val(),
        };
        let out = train(
            start,
            &self.model,
            &data,
            &self.train_config(seed, "phase2"),
            Selection::ClScore(order.first(), order.second(), self.strategy.cl_score),
            regularizer,
        )?;
        self.finish(out)
    }

    fn assemble(
        &self,
        strategy: Strategy,
        order: TaskOrder,
        seed: u64,
        first: (ParamStore, PhaseResult),
        second: (ParamStore, PhaseResult),
    ) -> SequenceOutcome {
        SequenceOutcome {
            result: SequenceResult {
                strategy,
                order,
                seed,
                config_hash: self.config_hash.clone(),
                lambda: None,
                lambda_scores: Vec::new(),
                buffer_size: None,
                after_first: first.1,
                after_second: second.1,
            },
            after_first: first.0,
            after_second: second.0,
        }
    }

    pub fn run_naive(&mut self, order: TaskOrder, seed: u64) -> Result<SequenceOutcome> {
        let first = self.phase_one(order.first(), seed)?;
        let second = self.phase_two(order, seed, first.0.clone(), &[], None)?;
        Ok(self.assemble(Strategy::Naive, order, seed, first, second))
    }

    /// Joint training on both training sets from scratch. The result does
    /// not depend on `order`; both phases report the same model.
    pub fn run_cumulative(&mut self, order: TaskOrder, seed: u64) -> Result<SequenceOutcome> {
        let joint = match self.cumulative.get(&seed) {
            Some(hit) => hit.clone(),
            None => {
                let mut union: Vec<Example> = self.data.get(TaskKind::Wh, Split::Train).to_vec();
                union.extend_from_slice(self.data.get(TaskKind::Yn, Split::Train));
                let data = TrainData {
                    train: &union,
                    extra: &[],
                    val: self.data.val(),
                };
                let out = train(
                    self.init(seed)?,
                    &self.model,
                    &data,
                    &self.train_config(seed, "cumulative"),
                    Selection::ClScore(TaskKind::Wh, TaskKind::Yn, self.strategy.cl_score),
                    None,
                )?;
                let done = self.finish(out)?;
                self.cumulative.insert(seed, done.clone());
                done
            }
        };
        Ok(self.assemble(Strategy::Cumulative, order, seed, joint.clone(), joint))
    }

    /// Fisher information at the phase-1 optimum of `order.first()`.
    pub fn fisher(&mut self, order: TaskOrder, seed: u64) -> Result<EwcState> {
        let (anchor, _) = self.phase_one(order.first(), seed)?;
        let fisher = compute_fisher(
            &anchor,
            &self.model,
            self.data.get(order.first(), Split::Train),
            self.strategy.fisher_samples,
            derive_seed(seed, "fisher"),
            self.strategy.fisher_labels,
        )?;
        EwcState::new(anchor, fisher, 0.0, self.strategy.fisher_samples)
    }

    pub fn run_ewc(&mut self, order: TaskOrder, seed: u64, lambda: f64) -> Result<SequenceOutcome> {
        let state = self.fisher(order, seed)?.with_lambda(lambda)?;
        self.ewc_with(order, seed, &state)
    }

    fn ewc_with(&mut self, order: TaskOrder, seed: u64, state: &EwcState) -> Result<SequenceOutcome> {
        let first = self.phase_one(order.first(), seed)?;
        let second = self.phase_two(order, seed, first.0.clone(), &[], Some(state))?;
        let mut out = self.assemble(Strategy::Ewc, order, seed, first, second);
        out.result.lambda = Some(state.lambda);
        Ok(out)
    }

    /// EWC over the configured λ grid; keeps the λ whose selected phase-2
    /// epoch has the highest validation CL score (ties: first in the grid).
    pub fn run_ewc_grid(&mut self, order: TaskOrder, seed: u64) -> Result<SequenceOutcome> {
        let base = self.fisher(order, seed)?;
        let mut best: Option<(f64, SequenceOutcome)> = None;
        let mut scores = Vec::new();
        for lambda in self.strategy.ewc_lambdas.clone() {
            let out = self.ewc_with(order, seed, &base.with_lambda(lambda)?)?;
            let h = &out.result.after_second.history;
            let score = h.epochs.iter().find(|e| e.epoch == h.selected_epoch).map(|e| e.metric).unwrap_or(f64::MIN);
            scores.push((lambda, score));
            if best.as_ref().is_none_or(|(s, _)| score > *s) {
                best = Some((score, out));
            }
        }
        let (_, mut out) = best.expect("non-empty λ grid");
        out.result.lambda_scores = scores;
        Ok(out)
    }

    pub fn run_rehearsal(&mut self, order: TaskOrder, seed: u64, buffer_size: Option<usize>) -> Result<SequenceOutcome> {
        let source = self.data.get(order.first(), Split::Train);
        let size = buffer_size.unwrap_or_else(|| self.strategy.buffer_size_for(source.len()));
        let buffer = build_rehearsal_buffer(source, size, derive_seed(seed, "buffer"))?;
        let first = self.phase_one(order.first(), seed)?;
        let second = self.phase_two(order, seed, first.0.clone(), &buffer.examples, None)?;
        let mut out = self.assemble(Strategy::Rehearsal, order, seed, first, second);
        out.result.buffer_size = Some(size);
        Ok(out)
    }

    /// Runs one grid cell with the configured hyperparameters.
    pub fn run(&mut self, strategy: Strategy, order: TaskOrder, seed: u64) -> Result<SequenceOutcome> {
        match strategy {
            Strategy::Naive => self.run_naive(order, seed),
            Strategy::Cumulative => self.run_cumulative(order, seed),
            Strategy::Ewc if self.strategy.ewc_lambdas.len() == 1 => {
                let lambda = self.strategy.ewc_lambdas[0];
                self.run_ewc(order, seed, lambda)
            }
            Strategy::Ewc => self.run_ewc_grid(order, seed),
            Strategy::Rehearsal => self.run_rehearsal(order, seed, None),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{build_dataset, DataConfig, Vocab};

    fn store(values: &[(&str, Vec<f64>)]) -> ParamStore {
        let mut p = ParamStore::new(0);
        for (n, v) in values {
            p.insert(*n, Tensor::vector(v.clone()));
        }
        p
    }

    fn fisher_of(values: &[(&str, Vec<f64>)]) -> BTreeMap<String, Tensor> {
        values.iter().map(|(n, v)| (n.to_string(), Tensor::vector(v.clone()))).collect()
    }

    #[test]
    fn order_parsing_and_display() {
        assert_eq!("wh-yn".parse::<TaskOrder>().unwrap(), TaskOrder::WH_YN);
        assert_eq!(TaskOrder::YN_WH.to_string(), "yn-wh");
        assert!("wh-wh".parse::<TaskOrder>().is_err());
        assert!("sideways".parse::<Strategy>().is_err());
        assert_eq!(serde_json::to_string(&TaskOrder::WH_YN).unwrap(), "\"wh-yn\"");
    }

    #[test]
    fn stored_floats_read_back_exactly() {
        // These two come from real training histories.
        let xs = vec![0.9458216689291093, 0.43324999999999997, 0.1 + 0.2];
        let back: Vec<f64> = serde_json::from_str(&serde_json::to_string(&xs).unwrap()).unwrap();
        assert_eq!(back, xs);
    }

    #[test]
    fn hand_computed_penalty() {
        let anchor = store(&[("w", vec![0.0, 0.0])]);
        let theta = store(&[("w", vec![1.0, 2.0])]);
        let state = EwcState::new(anchor, fisher_of(&[("w", vec![1.0, 2.0])]), 2.0, 1).unwrap();
        assert_eq!(state.penalty_value(&theta).unwrap(), 9.0);
        let mut tape = Tape::new();
        let p = state.penalty(&mut tape, &theta).unwrap();
        assert_eq!(tape.value(p).item(), 9.0);
        // d/dθ (λ/2) F (θ−θᴬ)² = λ F (θ−θᴬ)
        let g = tape.backward(p).unwrap();
        assert_eq!(g.get("w").unwrap().data(), &[2.0, 8.0]);
    }

    #[test]
    fn penalty_vanishes_at_anchor_and_for_zero_lambda() {
        let anchor = store(&[("w", vec![0.3, -1.0])]);
        let state = EwcState::new(anchor.clone(), fisher_of(&[("w", vec![4.0, 5.0])]), 10.0, 1).unwrap();
        assert_eq!(state.penalty_value(&anchor).unwrap(), 0.0);
        let moved = store(&[("w", vec![1.0, 1.0])]);
        assert_eq!(state.with_lambda(0.0).unwrap().penalty_value(&moved).unwrap(), 0.0);
        let mut tape = Tape::new();
        let base = tape.constant(Tensor::scalar(1.25));
        let l = ewc_loss(&mut tape, base, &anchor, &state).unwrap();
        assert_eq!(tape.value(l).item(), 1.25);
    }

    #[test]
    fn ewc_state_rejects_misaligned_or_negative_fisher() {
        let anchor = store(&[("w", vec![0.0, 0.0])]);
        assert!(EwcState::new(anchor.clone(), fisher_of(&[("w", vec![1.0])]), 1.0, 1).is_err());
        assert!(EwcState::new(anchor.clone(), fisher_of(&[("w", vec![1.0, -0.1])]), 1.0, 1).is_err());
        assert!(EwcState::new(anchor, fisher_of(&[("w", vec![1.0, 1.0])]), -1.0, 1).is_err());
    }

    fn tiny() -> (TaskData, ModelConfig) {
        let bundle = build_dataset(
            &DataConfig {
                train_size: 40,
                val_size: 10,
                test_size: 10,
                ..DataConfig::default()
            },
            2,
        )
        .unwrap();
        let model = ModelConfig {
            embed_dim: 6,
            hidden_dim: 8,
            mlp_hidden_dim: 8,
            ..ModelConfig::new(Vocab::standard().len(), 6, Head::Single)
        };
        (TaskData::from_bundle(&bundle), model)
    }

    #[test]
    fn single_sample_fisher_is_squared_gradient() {
        let (data, model) = tiny();
        let params = init_params(&model, 0).unwrap();
        let train_set = data.get(TaskKind::Wh, Split::Train);
        let f = compute_fisher(&params, &model, &train_set[..1], 1, 0, FisherLabels::Gold).unwrap();
        let mut tape = Tape::new();
        let out = forward_batch(&mut tape, &params, &model, &[&train_set[0]]).unwrap();
        let loss = tape.cross_entropy(out.logits, &[train_set[0].label.index()]).unwrap();
        let g = tape.backward(loss).unwrap();
        for (name, t) in &f {
            let expect: Vec<f64> = g.get(name).unwrap().data().iter().map(|v| v * v).collect();
            assert_eq!(t.data(), expect.as_slice());
        }
        assert!(compute_fisher(&params, &model, train_set, 0, 0, FisherLabels::Gold).is_err());
        assert!(compute_fisher(&params, &model, train_set, 41, 0, FisherLabels::Gold).is_err());
    }

    #[test]
    fn fisher_is_nonnegative_for_both_label_modes() {
        let (data, model) = tiny();
        let params = init_params(&model, 1).unwrap();
        for mode in [FisherLabels::Gold, FisherLabels::Sampled] {
            let f = compute_fisher(&params, &model, data.get(TaskKind::Yn, Split::Train), 10, 3, mode).unwrap();
            assert_eq!(f.len(), params.len());
            assert!(f.values().flat_map(|t| t.data()).all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn buffer_bounds_and_determinism() {
        let (data, _) = tiny();
        let src = data.get(TaskKind::Wh, Split::Train);
        assert!(build_rehearsal_buffer(src, 0, 0).is_err());
        assert!(build_rehearsal_buffer(src, src.len() + 1, 0).is_err());
        let a = build_rehearsal_buffer(src, 7, 5).unwrap();
        assert_eq!(a, build_rehearsal_buffer(src, 7, 5).unwrap());
        let full = build_rehearsal_buffer(src, src.len(), 1).unwrap();
        let mut idx = full.indices.clone();
        idx.sort_unstable();
        assert_eq!(idx, (0..src.len()).collect::<Vec<_>>());
    }

    #[test]
    fn zero_lambda_matches_naive_and_zero_epochs_keep_phase_one() {
        let (data, model) = tiny();
        let train_cfg = TrainConfig {
            max_epochs: 2,
            batch_size: 16,
            ..TrainConfig::default()
        };
        let few = StrategyConfig {
            fisher_samples: 10,
            ..StrategyConfig::default()
        };
        let mut seq = Sequencer::new(&data, model.clone(), train_cfg, few, "h").unwrap();
        let naive = seq.run_naive(TaskOrder::WH_YN, 0).unwrap();
        let ewc = seq.run_ewc(TaskOrder::WH_YN, 0, 0.0).unwrap();
        assert_eq!(naive.after_second, ewc.after_second);
        assert_eq!(naive.result.after_second, ewc.result.after_second);

        let frozen = TrainConfig {
            max_epochs: 0,
            ..TrainConfig::default()
        };
        let mut seq0 = Sequencer::new(&data, model, frozen, StrategyConfig::default(), "h").unwrap();
        let out = seq0.run_naive(TaskOrder::YN_WH, 1).unwrap();
        assert_eq!(out.after_first, out.after_second);
        assert_eq!(
            out.result.after_first.accuracy(TaskKind::Yn),
            out.result.after_second.accuracy(TaskKind::Yn)
        );
    }

    #[test]
    fn cumulative_ignores_order() {
        let (data, model) = tiny();
        let cfg = TrainConfig {
            max_epochs: 1,
            ..TrainConfig::default()
        };
        let mut seq = Sequencer::new(&data, model, cfg, StrategyConfig::default(), "h").unwrap();
        let a = seq.run_cumulative(TaskOrder::WH_YN, 3).unwrap();
        let b = seq.run_cumulative(TaskOrder::YN_WH, 3).unwrap();
        assert_eq!(a.after_second, b.after_second);
        assert_eq!(a.result.after_first, a.result.after_second);
        assert_eq!(a.result.after_second.history.examples_per_epoch, 80);
    }

    #[test]
    fn derived_seeds_differ_per_stage() {
        assert_ne!(derive_seed(0, "phase1"), derive_seed(0, "phase2"));
        assert_ne!(derive_seed(0, "init"), derive_seed(1, "init"));
        assert_eq!(derive_seed(7, "buffer"), derive_seed(7, "buffer"));
    }
}
