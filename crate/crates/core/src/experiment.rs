//! Experiment configuration, workspace layout and the batch commands
//! (data generation, single-task training, sequences, report, analysis).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{
    emit_projection_csv, extract_activations, pca_project, sample_questions, silhouette_report, SilhouetteReport,
};
use crate::diff::checkpoint::load_meta;
use crate::diff::load_params;
use crate::error::{Error, Result};
use crate::metrics::report::{compute_baselines, render_table};
use crate::metrics::{build_report, EvalReport};
use crate::model::{Head, ModelConfig};
use crate::strategies::{cell_name, read_result, SequenceResult, Sequencer, Strategy, StrategyConfig, TaskData, TaskOrder};
use crate::synth::{build_dataset, read_bundle, write_bundle, DataConfig, DatasetBundle, Split, SplitStats, TaskKind};
use crate::trainer::{evaluate_accuracy, save_run, train, RunHistory, Selection, TrainConfig, TrainData};

/// Overrides the workspace root given in the config file.
pub const ROOT_ENV: &str = "VQA_FORGETTING_ROOT";

/// Model sizes; vocabulary and grid size come from the dataset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelDims {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub attention_hops: usize,
    pub mlp_hidden_dim: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            embed_dim: 32,
            hidden_dim: 64,
            attention_hops: 2,
            mlp_hidden_dim: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub data_seed: u64,
    pub model: ModelDims,
    pub train: TrainConfig,
    pub strategy: StrategyConfig,
    pub strategies: Vec<Strategy>,
    pub orders: Vec<TaskOrder>,
    pub seeds: Vec<u64>,
    pub baseline_trials: usize,
    pub analysis_sample: usize,
    /// Workspace directory; relative paths resolve against the current directory.
    pub root: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: DataConfig::default(),
            data_seed: 0,
            model: ModelDims::default(),
            train: TrainConfig::default(),
            strategy: StrategyConfig::default(),
            strategies: Strategy::ALL.to_vec(),
            orders: TaskOrder::ALL.to_vec(),
            seeds: vec![0, 1, 2],
            baseline_trials: 10_000,
            analysis_sample: 512,
            root: PathBuf::from("workspace"),
        }
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Applies the root override from the environment, if set.
    pub fn with_env(mut self) -> Self {
        if let Some(root) = std::env::var_os(ROOT_ENV) {
            self.root = PathBuf::from(root);
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.data.scene.validate()?;
        self.train.validate()?;
        self.strategy.validate()?;
        self.model_config(1, Head::Single).validate()?;
        if self.seeds.is_empty() || self.strategies.is_empty() || self.orders.is_empty() {
            return Err(Error::Config("seeds, strategies and orders must be non-empty".into()));
        }
        if self.analysis_sample == 0 {
            return Err(Error::Config("analysis_sample must be positive".into()));
        }
        Ok(())
    }

    pub fn model_config(&self, vocab_size: usize, head: Head) -> ModelConfig {
        ModelConfig {
            embed_dim: self.model.embed_dim,
            hidden_dim: self.model.hidden_dim,
            attention_hops: self.model.attention_hops,
            mlp_hidden_dim: self.model.mlp_hidden_dim,
            ..ModelConfig::new(vocab_size, self.data.scene.grid_size, head)
        }
    }

    /// Hash of the dataset recipe.
    pub fn data_hash(&self) -> String {
        let v = serde_json::json!({ "data": self.data, "seed": self.data_seed });
        sha256_hex(v.to_string().as_bytes())
    }

    /// Hash of everything that determines a cell's numbers: data recipe,
    /// model, training and strategy hyperparameters. Grid membership and
    /// paths are excluded.
    pub fn config_hash(&self) -> String {
        let v = serde_json::json!({
            "data": self.data,
            "data_seed": self.data_seed,
            "model": self.model,
            "train": self.train,
            "strategy": self.strategy,
        });
        sha256_hex(v.to_string().as_bytes())
    }

    pub fn expected_cells(&self) -> Vec<(Strategy, TaskOrder, u64)> {
        let mut out = Vec::new();
        for &s in &self.strategies {
            for &o in &self.orders {
                for &seed in &self.seeds {
                    out.push((s, o, seed));
                }
            }
        }
        out
    }
}

/// Directory layout under the workspace root.
#[derive(Clone, Debug)]
pub struct Workspace {
    pub root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Workspace { root: root.into() }
    }

    pub fn data_dir(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn runs_dir(&self) -> PathBuf {
        self.root.join("run")
    }

    pub fn cell_dir(&self, strategy: Strategy, order: TaskOrder, seed: u64) -> PathBuf {
        self.runs_dir().join(cell_name(strategy, order, seed))
    }

    pub fn single_dir(&self, task: TaskKind, head: Head, seed: u64) -> PathBuf {
        let head = if head == Head::Single { "single" } else { "per-task" };
        self.runs_dir().join(format!("single_{task}_{head}_{seed}"))
    }

    pub fn analysis_dir(&self) -> PathBuf {
        self.root.join("analysis")
    }
}

/// Generates the dataset bundle and writes it to the workspace.
pub fn gen_data(config: &ExperimentConfig, ws: &Workspace) -> Result<DatasetBundle> {
    config.data.validate()?;
    let bundle = build_dataset(&config.data, config.data_seed)?;
    write_bundle(&bundle, ws.data_dir())?;
    fs::write(ws.data_dir().join("data_hash.txt"), config.data_hash())?;
    Ok(bundle)
}

/// Reads the workspace bundle if it was built from the same recipe,
/// otherwise regenerates it.
pub fn load_or_generate(config: &ExperimentConfig, ws: &Workspace) -> Result<DatasetBundle> {
    let hash_file = ws.data_dir().join("data_hash.txt");
    if fs::read_to_string(&hash_file).ok().as_deref() == Some(config.data_hash().as_str()) {
        return read_bundle(ws.data_dir());
    }
    gen_data(config, ws)
}

pub fn format_stats(stats: &[SplitStats]) -> String {
    stats.iter().map(|s| format!("{s}\n")).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingleRun {
    pub task: TaskKind,
    pub head: Head,
    pub seed: u64,
    pub config_hash: String,
    pub test_accuracy: f64,
    pub history: RunHistory,
}

/// Trains one task alone and writes its run directory.
pub fn train_single(
    config: &ExperimentConfig,
    ws: &Workspace,
    bundle: &DatasetBundle,
    task: TaskKind,
    head: Head,
    seed: u64,
) -> Result<SingleRun> {
    if head != Head::Single && head != Head::for_task(task) {
        return Err(Error::Config(format!("head {head:?} cannot answer {task} questions")));
    }
    let data = TaskData::from_bundle(bundle);
    let model = config.model_config(bundle.vocab.len(), head);
    let init = crate::model::init_params(&model, crate::strategies::derive_seed(seed, "init"))?;
    let train_cfg = TrainConfig {
        seed: crate::strategies::derive_seed(seed, "phase1"),
        ..config.train.clone()
    };
    let val = BTreeMap::from([(task, data.get(task, Split::Val))]);
    let outcome = train(
        init,
        &model,
        &TrainData {
            train: data.get(task, Split::Train),
            extra: &[],
            val,
        },
        &train_cfg,
        Selection::ValAccuracy(task),
        None,
    )?;
    let test_accuracy = evaluate_accuracy(&outcome.best, &model, data.get(task, Split::Test))?;
    let dir = ws.single_dir(task, head, seed);
    save_run(&dir, &outcome, &model, &train_cfg, &config.config_hash())?;
    let run = SingleRun {
        task,
        head,
        seed,
        config_hash: config.config_hash(),
        test_accuracy,
        history: outcome.history,
    };
    fs::write(dir.join("result.json"), serde_json::to_string_pretty(&run)?)?;
    Ok(run)
}

/// Creates a sequencer over the bundle for this configuration.
pub fn sequencer<'a>(config: &ExperimentConfig, data: &'a TaskData, vocab_size: usize) -> Result<Sequencer<'a>> {
    Sequencer::new(
        data,
        config.model_config(vocab_size, Head::Single),
        config.train.clone(),
        config.strategy.clone(),
        config.config_hash(),
    )
}

/// Runs every configured cell, writing each to its run directory.
/// `progress` is called after each cell.
pub fn run_grid(
    config: &ExperimentConfig,
    ws: &Workspace,
    bundle: &DatasetBundle,
    mut progress: impl FnMut(&SequenceResult),
) -> Result<Vec<SequenceResult>> {
    config.validate()?;
    let data = TaskData::from_bundle(bundle);
    let mut seq = sequencer(config, &data, bundle.vocab.len())?;
    let mut out = Vec::new();
    // Seed-major order keeps the shared phase-1 models warm in the cache.
    for &seed in &config.seeds {
        for &order in &config.orders {
            for &strategy in &config.strategies {
                let cell = seq.run(strategy, order, seed)?;
                cell.write(&ws.cell_dir(strategy, order, seed))?;
                progress(&cell.result);
                out.push(cell.result);
            }
        }
    }
    Ok(out)
}

/// Reads every `run/*/result.json` sequence result in name order.
pub fn collect_results(ws: &Workspace) -> Result<Vec<SequenceResult>> {
    let mut dirs: Vec<PathBuf> = match fs::read_dir(ws.runs_dir()) {
        Ok(rd) => rd.filter_map(|e| e.ok().map(|e| e.path())).collect(),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(e.into()),
    };
    dirs.sort();
    let mut out = Vec::new();
    for d in dirs {
        let name = d.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if name.starts_with("single_") || !d.join("result.json").exists() {
            continue;
        }
        out.push(read_result(&d)?);
    }
    Ok(out)
}

/// Builds the report from stored results and writes `report.json` and
/// `report.txt` at the workspace root.
pub fn report(config: &ExperimentConfig, ws: &Workspace, bundle: &DatasetBundle) -> Result<EvalReport> {
    let results = collect_results(ws)?;
    let baselines = compute_baselines(bundle, config.data_seed, config.baseline_trials)?;
    let report = build_report(&results, Some(baselines), &config.expected_cells())?;
    if report.config_hash != config.config_hash() {
        return Err(Error::Config(format!(
            "stored runs have config hash {} but the current config hashes to {}",
            report.config_hash,
            config.config_hash()
        )));
    }
    fs::write(ws.root.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    fs::write(ws.root.join("report.txt"), render_table(&report))?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSummary {
    pub name: String,
    pub rows_per_task: BTreeMap<TaskKind, usize>,
    pub explained_variance: [f64; 2],
    pub silhouette: SilhouetteReport,
}

/// Projects penultimate activations of `n` test questions per task and
/// writes `projection_<name>.csv` and `silhouette_<name>.json`.
pub fn analyze(
    config: &ExperimentConfig,
    ws: &Workspace,
    bundle: &DatasetBundle,
    checkpoint: &Path,
    name: &str,
    n: usize,
) -> Result<AnalysisSummary> {
    let params = load_params(checkpoint)?;
    let sidecar = checkpoint.with_extension("json");
    let model = match load_meta(&sidecar).ok().and_then(|m| m.model) {
        Some(v) => serde_json::from_value(v)?,
        None => config.model_config(bundle.vocab.len(), Head::Single),
    };
    let data = TaskData::from_bundle(bundle);
    let mut questions = Vec::new();
    let mut rows_per_task = BTreeMap::new();
    for task in TaskKind::ALL {
        let s = sample_questions(data.get(task, Split::Test), n, config.data_seed)?;
        rows_per_task.insert(task, s.len());
        questions.extend(s);
    }
    let set = extract_activations(&params, &model, &questions)?;
    let projection = pca_project(&set.rows)?;
    let silhouette = silhouette_report(&set)?;
    let dir = ws.analysis_dir();
    fs::create_dir_all(&dir)?;
    emit_projection_csv(&projection, &set.meta, &dir.join(format!("projection_{name}.csv")))?;
    let summary = AnalysisSummary {
        name: name.to_string(),
        rows_per_task,
        explained_variance: projection.explained_variance,
        silhouette,
    };
    fs::write(
        dir.join(format!("silhouette_{name}.json")),
        serde_json::to_string_pretty(&summary)?,
    )?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_partial_files_fill_in() {
        let c = ExperimentConfig::default();
        let back: ExperimentConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        let partial: ExperimentConfig = serde_json::from_str(r#"{"seeds": [5], "train": {"max_epochs": 3}}"#).unwrap();
        assert_eq!(partial.seeds, vec![5]);
        assert_eq!(partial.train.max_epochs, 3);
        assert_eq!(partial.train.batch_size, 64);
        assert_eq!(partial.data.train_size, 8000);
        assert_eq!(partial.train.adam.lr, 3e-3);
    }

    #[test]
    fn hash_tracks_numbers_not_grid_membership() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig {
            seeds: vec![0],
            root: "elsewhere".into(),
            ..a.clone()
        };
        assert_eq!(a.config_hash(), b.config_hash());
        let mut c = a.clone();
        c.train.adam.lr = 0.01;
        assert_ne!(a.config_hash(), c.config_hash());
        assert_eq!(a.config_hash().len(), 64);
    }

    #[test]
    fn validation_rejects_empty_grid() {
        let c = ExperimentConfig {
            seeds: vec![],
            ..ExperimentConfig::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        assert!(ExperimentConfig::default().validate().is_ok());
    }

    #[test]
    fn expected_cells_cover_the_grid() {
        assert_eq!(ExperimentConfig::default().expected_cells().len(), 24);
    }
}
