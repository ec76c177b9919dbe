//! Recurrent question encoder, per-cell grid encoder, stacked spatial
//! attention and an MLP answer head.
//!
//! All stages run on batches. Questions of different lengths share one
//! unrolled LSTM: after a sequence ends, its state is carried forward
//! unchanged through a 0/1 mask, which is exact in floating point.

use std::collections::HashMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diff::params::{glorot_uniform, zeros_bias};
use crate::diff::{ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::synth::{encode_features, DatasetBundle, Label, Split, Subtype, TaskKind, CHANNELS, NUM_LABELS};

pub const EMBEDDING: &str = "embedding.table";
pub const LSTM_W: [&str; 4] = [
    "encoder.lstm.w_i",
    "encoder.lstm.w_f",
    "encoder.lstm.w_g",
    "encoder.lstm.w_o",
];
pub const LSTM_B: [&str; 4] = [
    "encoder.lstm.b_i",
    "encoder.lstm.b_f",
    "encoder.lstm.b_g",
    "encoder.lstm.b_o",
];
pub const IMAGE_W: &str = "image.w";
pub const IMAGE_B: &str = "image.b";
pub const IMAGE_POS: &str = "image.w_pos";
pub const ATT_V: &str = "attention.w_v";
pub const ATT_Q: &str = "attention.w_q";
pub const ATT_SCORE: &str = "attention.w";
pub const MLP_W1: &str = "mlp.w1";
pub const MLP_B1: &str = "mlp.b1";
pub const MLP_W2: &str = "mlp.w2";
pub const MLP_B2: &str = "mlp.b2";

/// Output layer: the 17-way single head or one of the per-task heads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    Single,
    Wh,
    Yn,
}

impl Head {
    pub fn for_task(task: TaskKind) -> Head {
        match task {
            TaskKind::Wh => Head::Wh,
            TaskKind::Yn => Head::Yn,
        }
    }

    pub fn size(self) -> usize {
        match self {
            Head::Single => NUM_LABELS,
            Head::Wh => 15,
            Head::Yn => 2,
        }
    }

    /// Output index of `label`, if this head can produce it.
    pub fn class_of(self, label: Label) -> Option<usize> {
        let i = label.index();
        match self {
            Head::Single => Some(i),
            Head::Wh => (i < 15).then_some(i),
            Head::Yn => (i >= 15).then(|| i - 15),
        }
    }

    pub fn label_of(self, class: usize) -> Label {
        let global = match self {
            Head::Single | Head::Wh => class,
            Head::Yn => class + 15,
        };
        Label::new(global).expect("class index within head")
    }

    /// Labels this head can emit, in output order.
    pub fn labels(self) -> Vec<Label> {
        (0..self.size()).map(|c| self.label_of(c)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub attention_hops: usize,
    pub mlp_hidden_dim: usize,
    pub head: Head,
    pub grid_size: usize,
    pub channels: usize,
    /// Adds a learned map of each cell's (row, column) coordinates to the
    /// cell encoding; without it left/right referents are unresolvable.
    #[serde(default = "default_true")]
    pub positional: bool,
}

fn default_true() -> bool {
    true
}

impl ModelConfig {
    /// Default dimensions: E=32, H=64, two attention hops, P=64.
    pub fn new(vocab_size: usize, grid_size: usize, head: Head) -> Self {
        ModelConfig {
            vocab_size,
            embed_dim: 32,
            hidden_dim: 64,
            attention_hops: 2,
            mlp_hidden_dim: 64,
            head,
            grid_size,
            channels: CHANNELS,
            positional: true,
        }
    }

    pub fn with_head(&self, head: Head) -> Self {
        ModelConfig {
            head,
            ..self.clone()
        }
    }

    pub fn cells(&self) -> usize {
        self.grid_size * self.grid_size
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.vocab_size,
            self.embed_dim,
            self.hidden_dim,
            self.attention_hops,
            self.mlp_hidden_dim,
            self.grid_size,
            self.channels,
        ];
        if dims.contains(&0) {
            return Err(Error::Config(format!("model dimensions must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// One question paired with its scene features.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub qid: u64,
    pub task: TaskKind,
    pub subtype: Subtype,
    pub tokens: Vec<usize>,
    /// `G × G × 16` feature grid, shared between questions on one scene.
    pub features: Arc<[f64]>,
    pub label: Label,
}

/// Feature grids for every scene of a bundle, computed once.
pub struct FeatureCache {
    grids: Vec<Arc<[f64]>>,
}

impl FeatureCache {
    pub fn new(bundle: &DatasetBundle) -> Self {
        FeatureCache {
            grids: bundle
                .scenes
                .iter()
                .map(|s| Arc::from(encode_features(s).data))
                .collect(),
        }
    }

    pub fn examples(&self, bundle: &DatasetBundle, task: TaskKind, split: Split) -> Vec<Example> {
        bundle
            .questions(task, split)
            .iter()
            .map(|q| Example {
                qid: q.qid,
                task: q.task,
                subtype: q.subtype,
                tokens: q.tokens.clone(),
                features: Arc::clone(&self.grids[q.scene_id as usize]),
                label: q.answer,
            })
            .collect()
    }
}

pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ParamStore> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (e, h, p, c) = (
        config.embed_dim,
        config.hidden_dim,
        config.mlp_hidden_dim,
        config.head.size(),
    );
    let mut params = ParamStore::new(seed);
    params.insert(EMBEDDING, glorot_uniform(config.vocab_size, e, &mut rng));
    for name in LSTM_W {
        params.insert(name, glorot_uniform(e + h, h, &mut rng));
    }
    for name in LSTM_B {
        params.insert(name, zeros_bias(h));
    }
    params.insert(IMAGE_W, glorot_uniform(config.channels, h, &mut rng));
    params.insert(IMAGE_B, zeros_bias(h));
    if config.positional {
        params.insert(IMAGE_POS, Tensor::zeros(&[2, h]));
    }
    params.insert(ATT_V, glorot_uniform(h, h, &mut rng));
    params.insert(ATT_Q, glorot_uniform(h, h, &mut rng));
    params.insert(ATT_SCORE, glorot_uniform(h, 1, &mut rng));
    params.insert(MLP_W1, glorot_uniform(h, p, &mut rng));
    params.insert(MLP_B1, zeros_bias(p));
    params.insert(MLP_W2, glorot_uniform(p, c, &mut rng));
    params.insert(MLP_B2, zeros_bias(c));
    Ok(params)
}

/// Registers parameters on a tape on first use, once per tape.
pub struct Binder<'p> {
    params: &'p ParamStore,
    bound: HashMap<&'static str, Var>,
}

impl<'p> Binder<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Binder {
            params,
            bound: HashMap::new(),
        }
    }

    pub fn get(&mut self, tape: &mut Tape, name: &'static str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let t = self
            .params
            .get(name)
            .ok_or_else(|| Error::Invalid(format!("missing parameter {name}")))?;
        let v = tape.param(name, t);
        self.bound.insert(name, v);
        Ok(v)
    }
}

/// LSTM over a batch of token sequences; returns the final hidden states `[B, H]`.
pub fn encode_question(
    tape: &mut Tape,
    binder: &mut Binder,
    config: &ModelConfig,
    sequences: &[&[usize]],
) -> Result<Var> {
    if sequences.is_empty() || sequences.iter().any(|s| s.is_empty()) {
        return Err(Error::Empty("question token sequence"));
    }
    let b = sequences.len();
    let h = config.hidden_dim;
    let steps = sequences.iter().map(|s| s.len()).max().unwrap();
    let table = binder.get(tape, EMBEDDING)?;
    let w: Vec<Var> = LSTM_W
        .iter()
        .map(|n| binder.get(tape, n))
        .collect::<Result<_>>()?;
    let bias: Vec<Var> = LSTM_B
        .iter()
        .map(|n| binder.get(tape, n))
        .collect::<Result<_>>()?;
    let mut hidden = tape.constant(Tensor::zeros(&[b, h]));
    let mut cell = tape.constant(Tensor::zeros(&[b, h]));
    for t in 0..steps {
        let ids: Vec<usize> = sequences.iter().map(|s| s.get(t).copied().unwrap_or(0)).collect();
        let x = tape.embedding(table, &ids)?;
        let xh = tape.concat(&[x, hidden])?;
        let mut gates = Vec::with_capacity(4);
        for k in 0..4 {
            let z = tape.matmul(xh, w[k])?;
            gates.push(tape.add(z, bias[k])?);
        }
        let i = tape.sigmoid(gates[0]);
        let f = tape.sigmoid(gates[1]);
        let g = tape.tanh(gates[2]);
        let o = tape.sigmoid(gates[3]);
        let fc = tape.mul(f, cell)?;
        let ig = tape.mul(i, g)?;
        let new_cell = tape.add(fc, ig)?;
        let tc = tape.tanh(new_cell);
        let new_hidden = tape.mul(o, tc)?;
        if sequences.iter().all(|s| s.len() > t) {
            cell = new_cell;
            hidden = new_hidden;
        } else {
            let keep: Vec<f64> = sequences
                .iter()
                .map(|s| if s.len() > t { 1.0 } else { 0.0 })
                .collect();
            let hold: Vec<f64> = keep.iter().map(|k| 1.0 - k).collect();
            let keep = tape.constant(Tensor::from_parts(vec![b, 1], keep));
            let hold = tape.constant(Tensor::from_parts(vec![b, 1], hold));
            cell = blend(tape, new_cell, cell, keep, hold)?;
            hidden = blend(tape, new_hidden, hidden, keep, hold)?;
        }
    }
    Ok(hidden)
}

fn blend(tape: &mut Tape, new: Var, old: Var, keep: Var, hold: Var) -> Result<Var> {
    let a = tape.mul(new, keep)?;
    let b = tape.mul(old, hold)?;
    tape.add(a, b)
}

/// Shared affine map plus tanh from 16 channels to H, per cell: `[B·G², H]`.
/// With `positional`, a learned linear term in the cell's coordinates is
/// added before the tanh; it starts at zero.
pub fn encode_image(
    tape: &mut Tape,
    binder: &mut Binder,
    config: &ModelConfig,
    grids: &[&[f64]],
) -> Result<Var> {
    let cells = config.cells();
    let expected = cells * config.channels;
    if let Some(bad) = grids.iter().find(|g| g.len() != expected) {
        return Err(Error::Shape {
            op: "encode_image",
            shapes: vec![vec![bad.len()], vec![cells, config.channels]],
        });
    }
    let mut data = Vec::with_capacity(grids.len() * expected);
    for g in grids {
        data.extend_from_slice(g);
    }
    let x = tape.constant(Tensor::new(vec![grids.len() * cells, config.channels], data)?);
    let w = binder.get(tape, IMAGE_W)?;
    let bias = binder.get(tape, IMAGE_B)?;
    let z = tape.matmul(x, w)?;
    let mut z = tape.add(z, bias)?;
    if config.positional {
        let coords = tape.constant(cell_coordinates(config.grid_size, grids.len()));
        let w_pos = binder.get(tape, IMAGE_POS)?;
        let p = tape.matmul(coords, w_pos)?;
        z = tape.add(z, p)?;
    }
    Ok(tape.tanh(z))
}

/// `[batch·G², 2]` row and column coordinates scaled to [-1, 1].
fn cell_coordinates(grid: usize, batch: usize) -> Tensor {
    let scale = |i: usize| if grid > 1 { 2.0 * i as f64 / (grid - 1) as f64 - 1.0 } else { 0.0 };
    let mut data = Vec::with_capacity(batch * grid * grid * 2);
    for _ in 0..batch {
        for r in 0..grid {
            for c in 0..grid {
                data.push(scale(r));
                data.push(scale(c));
            }
        }
    }
    Tensor::from_parts(vec![batch * grid * grid, 2], data)
}

/// Stacked spatial attention. Per hop, scores `wᵀ tanh(W_v V_i + W_q u)`
/// are normalised over cells and the attended cell vector is added to `u`.
/// Returns the fused vector `[B, H]` and one `[B, G²]` map per hop.
pub fn attend(
    tape: &mut Tape,
    binder: &mut Binder,
    config: &ModelConfig,
    question: Var,
    cells: Var,
) -> Result<(Var, Vec<Var>)> {
    let h = config.hidden_dim;
    let n = config.cells();
    let b = tape.shape(question)[0];
    if tape.shape(cells) != [b * n, h] {
        return Err(Error::Shape {
            op: "attend",
            shapes: vec![tape.shape(question).to_vec(), tape.shape(cells).to_vec()],
        });
    }
    let w_v = binder.get(tape, ATT_V)?;
    let w_q = binder.get(tape, ATT_Q)?;
    let w = binder.get(tape, ATT_SCORE)?;
    let projected = tape.matmul(cells, w_v)?;
    let projected = tape.reshape(projected, &[b, n, h])?;
    let values = tape.reshape(cells, &[b, n, h])?;
    let mut u = question;
    let mut maps = Vec::with_capacity(config.attention_hops);
    for _ in 0..config.attention_hops {
        let pq = tape.matmul(u, w_q)?;
        let pq = tape.reshape(pq, &[b, 1, h])?;
        let joint = tape.add(projected, pq)?;
        let joint = tape.tanh(joint);
        let joint = tape.reshape(joint, &[b * n, h])?;
        let scores = tape.matmul(joint, w)?;
        let scores = tape.reshape(scores, &[b, n])?;
        let attention = tape.softmax(scores);
        maps.push(attention);
        let weights = tape.reshape(attention, &[b, n, 1])?;
        let weighted = tape.mul(weights, values)?;
        let context = tape.sum_axis(weighted, 1)?;
        u = tape.add(u, context)?;
    }
    Ok((u, maps))
}

/// MLP head: `relu(W₁u + b₁)` is the penultimate layer, then an affine map
/// to logits. Returns `(logits, penultimate)`.
pub fn classify(tape: &mut Tape, binder: &mut Binder, fused: Var) -> Result<(Var, Var)> {
    let w1 = binder.get(tape, MLP_W1)?;
    let b1 = binder.get(tape, MLP_B1)?;
    let w2 = binder.get(tape, MLP_W2)?;
    let b2 = binder.get(tape, MLP_B2)?;
    let z = tape.matmul(fused, w1)?;
    let z = tape.add(z, b1)?;
    let penultimate = tape.relu(z);
    let logits = tape.matmul(penultimate, w2)?;
    let logits = tape.add(logits, b2)?;
    Ok((logits, penultimate))
}

/// Tape handles for one batch.
pub struct BatchOutput {
    /// `[B, head size]`.
    pub logits: Var,
    /// `[B, P]`.
    pub penultimate: Var,
    /// One `[B, G²]` map per hop.
    pub attention: Vec<Var>,
}

pub fn forward_batch(
    tape: &mut Tape,
    params: &ParamStore,
    config: &ModelConfig,
    batch: &[&Example],
) -> Result<BatchOutput> {
    let mut binder = Binder::new(params);
    let sequences: Vec<&[usize]> = batch.iter().map(|e| e.tokens.as_slice()).collect();
    let grids: Vec<&[f64]> = batch.iter().map(|e| &e.features[..]).collect();
    let q = encode_question(tape, &mut binder, config, &sequences)?;
    let v = encode_image(tape, &mut binder, config, &grids)?;
    let (u, attention) = attend(tape, &mut binder, config, q, v)?;
    let (logits, penultimate) = classify(tape, &mut binder, u)?;
    Ok(BatchOutput {
        logits,
        penultimate,
        attention,
    })
}

/// Head-local targets for a batch; labels the head cannot emit are rejected.
pub fn targets(head: Head, batch: &[&Example]) -> Result<Vec<usize>> {
    batch
        .iter()
        .map(|e| {
            head.class_of(e.label).ok_or_else(|| {
                Error::Invalid(format!(
                    "label {} of question {} is outside the {head:?} head",
                    e.label, e.qid
                ))
            })
        })
        .collect()
}

/// Mean cross-entropy of a batch under the configured head.
pub fn batch_loss(
    tape: &mut Tape,
    params: &ParamStore,
    config: &ModelConfig,
    batch: &[&Example],
) -> Result<Var> {
    let out = forward_batch(tape, params, config, batch)?;
    let t = targets(config.head, batch)?;
    tape.cross_entropy(out.logits, &t)
}

/// Values produced for a single example.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardResult {
    pub logits: Tensor,
    pub penultimate: Tensor,
    /// One probability grid over the `G²` cells per hop.
    pub attention_maps: Vec<Tensor>,
}

pub fn forward(example: &Example, params: &ParamStore, config: &ModelConfig) -> Result<ForwardResult> {
    let mut tape = Tape::new();
    let out = forward_batch(&mut tape, params, config, &[example])?;
    let row = |v: Var| Tensor::vector(tape.value(v).data().to_vec());
    Ok(ForwardResult {
        logits: row(out.logits),
        penultimate: row(out.penultimate),
        attention_maps: out.attention.iter().map(|&v| row(v)).collect(),
    })
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Prediction and penultimate activations for one example.
#[derive(Clone, Debug, PartialEq)]
pub struct Inference {
    pub predicted: Label,
    pub logits: Vec<f64>,
    pub penultimate: Vec<f64>,
}

/// Forward-only pass over `examples` in fixed-size chunks, in input order.
pub fn infer(
    params: &ParamStore,
    config: &ModelConfig,
    examples: &[Example],
    batch_size: usize,
) -> Result<Vec<Inference>> {
    let batch_size = batch_size.max(1);
    let mut out = Vec::with_capacity(examples.len());
    let mut tape = Tape::new();
    for chunk in examples.chunks(batch_size) {
        tape.clear();
        let refs: Vec<&Example> = chunk.iter().collect();
        let res = forward_batch(&mut tape, params, config, &refs)?;
        let logits = tape.value(res.logits);
        let pen = tape.value(res.penultimate);
        let (c, p) = (config.head.size(), config.mlp_hidden_dim);
        for i in 0..chunk.len() {
            let l = &logits.data()[i * c..(i + 1) * c];
            out.push(Inference {
                predicted: config.head.label_of(argmax(l)),
                logits: l.to_vec(),
                penultimate: pen.data()[i * p..(i + 1) * p].to_vec(),
            });
        }
    }
    Ok(out)
}
