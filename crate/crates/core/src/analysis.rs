//! Penultimate-layer activation analysis: stratified question samples,
//! a 2-D principal-component projection and silhouette scores over
//! question subtypes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diff::ParamStore;
use crate::error::{Error, Result};
use crate::model::{infer, Example, ModelConfig};
use crate::synth::{Label, Subtype, TaskKind};
use crate::trainer::EVAL_BATCH;

/// Uniform sample of `n` examples without replacement, split equally over
/// the subtypes present when `n` divides evenly; returned in qid order.
pub fn sample_questions(examples: &[Example], n: usize, seed: u64) -> Result<Vec<Example>> {
    if n > examples.len() {
        return Err(Error::Invalid(format!(
            "sample of {n} requested from {} questions",
            examples.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups: BTreeMap<Subtype, Vec<usize>> = BTreeMap::new();
    for (i, e) in examples.iter().enumerate() {
        groups.entry(e.subtype).or_default().push(i);
    }
    let per_group = n / groups.len().max(1);
    let stratified = n < examples.len()
        && n.is_multiple_of(groups.len().max(1))
        && groups.values().all(|g| g.len() >= per_group);
    let mut picked: Vec<usize> = if n == examples.len() {
        (0..n).collect()
    } else if stratified {
        groups
            .values()
            .flat_map(|g| {
                sample(&mut rng, g.len(), per_group)
                    .into_iter()
                    .map(|j| g[j])
                    .collect::<Vec<_>>()
            })
            .collect()
    } else {
        sample(&mut rng, examples.len(), n).into_vec()
    };
    picked.sort_by_key(|&i| examples[i].qid);
    Ok(picked.into_iter().map(|i| examples[i].clone()).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowMeta {
    pub qid: u64,
    pub task: TaskKind,
    pub subtype: Subtype,
    pub gold: Label,
    pub predicted: Label,
}

/// Penultimate activations, one row per question.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationSet {
    pub rows: Vec<Vec<f64>>,
    pub meta: Vec<RowMeta>,
}

impl ActivationSet {
    /// Rows whose question belongs to `task`, as a new set.
    pub fn filter_task(&self, task: TaskKind) -> ActivationSet {
        let keep: Vec<usize> = (0..self.meta.len()).filter(|&i| self.meta[i].task == task).collect();
        ActivationSet {
            rows: keep.iter().map(|&i| self.rows[i].clone()).collect(),
            meta: keep.iter().map(|&i| self.meta[i].clone()).collect(),
        }
    }

    pub fn subtypes(&self) -> Vec<Subtype> {
        self.meta.iter().map(|m| m.subtype).collect()
    }
}

pub fn extract_activations(params: &ParamStore, model: &ModelConfig, questions: &[Example]) -> Result<ActivationSet> {
    let out = infer(params, model, questions, EVAL_BATCH)?;
    if out.iter().flat_map(|r| &r.penultimate).any(|v| !v.is_finite()) {
        return Err(Error::Degenerate("non-finite activation".into()));
    }
    Ok(ActivationSet {
        meta: questions
            .iter()
            .zip(&out)
            .map(|(q, r)| RowMeta {
                qid: q.qid,
                task: q.task,
                subtype: q.subtype,
                gold: q.label,
                predicted: r.predicted,
            })
            .collect(),
        rows: out.into_iter().map(|r| r.penultimate).collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Projection2D {
    pub coords: Vec<[f64; 2]>,
    /// Share of total variance carried by each component, descending.
    pub explained_variance: [f64; 2],
    /// Unit loading vectors of the two components.
    pub components: [Vec<f64>; 2],
}

/// Top-two principal components of the mean-centred rows.
///
/// Each component's largest-magnitude loading is made positive (first such
/// index on ties). Zero-variance input projects to the origin.
pub fn pca_project(rows: &[Vec<f64>]) -> Result<Projection2D> {
    let n = rows.len();
    if n < 3 {
        return Err(Error::Invalid(format!("PCA needs at least 3 rows, got {n}")));
    }
    let d = rows[0].len();
    if d == 0 || rows.iter().any(|r| r.len() != d) {
        return Err(Error::Invalid("PCA rows must share a positive dimension".into()));
    }
    let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let centred = DMatrix::from_fn(n, d, |i, j| rows[i][j] - mean[j]);
    let cov = centred.transpose() * &centred / (n as f64 - 1.0);
    let trace = cov.trace();
    if trace <= 0.0 {
        return Ok(Projection2D {
            coords: vec![[0.0, 0.0]; n],
            explained_variance: [0.0, 0.0],
            components: [vec![0.0; d], vec![0.0; d]],
        });
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let component = |k: usize| -> (Vec<f64>, f64) {
        let Some(&col) = order.get(k) else {
            return (vec![0.0; d], 0.0);
        };
        let mut v: Vec<f64> = eig.eigenvectors.column(col).iter().copied().collect();
        let mut pivot = 0;
        for (i, x) in v.iter().enumerate() {
            if x.abs() > v[pivot].abs() {
                pivot = i;
            }
        }
        if v[pivot] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        (v, (eig.eigenvalues[col] / trace).clamp(0.0, 1.0))
    };
    let (c0, e0) = component(0);
    let (c1, e1) = component(1);
    let coords = (0..n)
        .map(|i| {
            let row = centred.row(i);
            let dot = |c: &[f64]| row.iter().zip(c).map(|(a, b)| a * b).sum::<f64>();
            [dot(&c0), dot(&c1)]
        })
        .collect();
    Ok(Projection2D {
        coords,
        explained_variance: [e0, e1],
        components: [c0, c1],
    })
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Mean silhouette with Euclidean distance.
///
/// Needs at least two clusters of at least two members each. A point whose
/// own-cluster and nearest-cluster distances are both zero scores 0.
pub fn silhouette<L: Ord + Clone>(rows: &[Vec<f64>], labels: &[L]) -> Result<f64> {
    if rows.len() != labels.len() {
        return Err(Error::Invalid(format!("{} rows for {} labels", rows.len(), labels.len())));
    }
    let mut clusters: BTreeMap<L, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        clusters.entry(l.clone()).or_default().push(i);
    }
    if clusters.len() < 2 || clusters.values().any(|c| c.len() < 2) {
        return Err(Error::Degenerate(
            "silhouette needs at least two clusters with two or more members".into(),
        ));
    }
    if rows.iter().all(|r| r == &rows[0]) {
        return Err(Error::Degenerate("all points identical".into()));
    }
    let members: Vec<&Vec<usize>> = clusters.values().collect();
    let own: Vec<usize> = labels
        .iter()
        .map(|l| clusters.keys().position(|k| k == l).expect("label present"))
        .collect();
    let mut total = 0.0;
    for i in 0..rows.len() {
        let mean_to = |c: &[usize], skip_self: bool| {
            let (sum, count) = c
                .iter()
                .filter(|&&j| !(skip_self && j == i))
                .fold((0.0, 0usize), |(s, k), &j| (s + distance(&rows[i], &rows[j]), k + 1));
            sum / count as f64
        };
        let a = mean_to(members[own[i]], true);
        let b = members
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != own[i])
            .map(|(_, c)| mean_to(c, false))
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        total += if m == 0.0 { 0.0 } else { (b - a) / m };
    }
    Ok(total / rows.len() as f64)
}

/// Silhouette scores of one model's activations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SilhouetteReport {
    /// Over the subtypes of each task's questions, in the full space.
    pub by_task: BTreeMap<TaskKind, f64>,
    /// Over all subtypes of both tasks.
    pub all_subtypes: Option<f64>,
    /// With the task as the cluster label.
    pub task_split: Option<f64>,
}

pub fn silhouette_report(set: &ActivationSet) -> Result<SilhouetteReport> {
    let mut by_task = BTreeMap::new();
    for task in TaskKind::ALL {
        let sub = set.filter_task(task);
        if !sub.rows.is_empty() {
            by_task.insert(task, silhouette(&sub.rows, &sub.subtypes())?);
        }
    }
    let tasks: Vec<TaskKind> = set.meta.iter().map(|m| m.task).collect();
    let both = by_task.len() == 2;
    Ok(SilhouetteReport {
        by_task,
        all_subtypes: if both { Some(silhouette(&set.rows, &set.subtypes())?) } else { None },
        task_split: if both { Some(silhouette(&set.rows, &tasks)?) } else { None },
    })
}

/// CSV text with columns `qid,task,subtype,gold,predicted,x,y`, sorted by qid.
pub fn projection_csv(projection: &Projection2D, meta: &[RowMeta]) -> Result<String> {
    if projection.coords.len() != meta.len() {
        return Err(Error::Invalid(format!(
            "{} coordinates for {} rows",
            projection.coords.len(),
            meta.len()
        )));
    }
    let mut order: Vec<usize> = (0..meta.len()).collect();
    order.sort_by_key(|&i| meta[i].qid);
    let mut out = String::from("qid,task,subtype,gold,predicted,x,y\n");
    for i in order {
        let m = &meta[i];
        let [x, y] = projection.coords[i];
        // `{:?}` prints the shortest string that parses back to the same f64.
        let _ = writeln!(out, "{},{},{},{},{},{x:?},{y:?}", m.qid, m.task, m.subtype, m.gold, m.predicted);
    }
    Ok(out)
}

pub fn emit_projection_csv(projection: &Projection2D, meta: &[RowMeta], path: &Path) -> Result<()> {
    fs::write(path, projection_csv(projection, meta)?)?;
    Ok(())
}

/// One parsed row of a projection CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionRow {
    pub qid: u64,
    pub task: TaskKind,
    pub subtype: String,
    pub gold: Label,
    pub predicted: Label,
    pub x: f64,
    pub y: f64,
}

pub fn parse_projection_csv(text: &str) -> Result<Vec<ProjectionRow>> {
    let mut lines = text.lines();
    if lines.next() != Some("qid,task,subtype,gold,predicted,x,y") {
        return Err(Error::Parse {
            line: 1,
            message: "unexpected header".into(),
        });
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let err = |m: String| Error::Parse { line: i + 2, message: m };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(err(format!("expected 7 fields, found {}", f.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| err(e.to_string()));
            Ok(ProjectionRow {
                qid: f[0].parse().map_err(|e: std::num::ParseIntError| err(e.to_string()))?,
                task: f[1].parse().map_err(|e: Error| err(e.to_string()))?,
                subtype: f[2].to_string(),
                gold: Label::from_name(f[3]).map_err(|e| err(e.to_string()))?,
                predicted: Label::from_name(f[4]).map_err(|e| err(e.to_string()))?,
                x: num(f[5])?,
                y: num(f[6])?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, FeatureCache, Head};
    use crate::synth::{build_dataset, DataConfig, Split, Vocab};

    fn data() -> Vec<Example> {
        let bundle = build_dataset(
            &DataConfig {
                train_size: 8,
                val_size: 8,
                test_size: 40,
                ..DataConfig::default()
            },
            4,
        )
        .unwrap();
        FeatureCache::new(&bundle).examples(&bundle, TaskKind::Wh, Split::Test)
    }

    #[test]
    fn sample_sizes_and_stratification() {
        let ex = data();
        let s = sample_questions(&ex, 20, 1).unwrap();
        assert_eq!(s.len(), 20);
        let mut counts: BTreeMap<Subtype, usize> = BTreeMap::new();
        for e in &s {
            *counts.entry(e.subtype).or_default() += 1;
        }
        assert!(counts.values().all(|&c| c == 5), "{counts:?}");
        assert!(s.windows(2).all(|w| w[0].qid < w[1].qid));
        assert_eq!(s, sample_questions(&ex, 20, 1).unwrap());
        assert_eq!(sample_questions(&ex, 40, 9).unwrap().len(), 40);
        assert!(sample_questions(&ex, 41, 0).is_err());
    }

    #[test]
    fn hand_computed_three_point_pca() {
        // Points on the line y = x: one component carries all variance.
        let rows = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, 2.0]];
        let p = pca_project(&rows).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((p.components[0][0] - s).abs() < 1e-9 && (p.components[0][1] - s).abs() < 1e-9);
        assert!((p.explained_variance[0] - 1.0).abs() < 1e-9);
        assert!(p.explained_variance[1].abs() < 1e-9);
        for (c, e) in p.coords.iter().zip([-2f64.sqrt(), 0.0, 2f64.sqrt()]) {
            assert!((c[0] - e).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_variance_projects_to_origin() {
        let rows = vec![vec![1.0, 2.0]; 4];
        let p = pca_project(&rows).unwrap();
        assert!(p.coords.iter().all(|c| *c == [0.0, 0.0]));
        assert_eq!(p.explained_variance, [0.0, 0.0]);
        assert!(pca_project(&rows[..2]).is_err());
    }

    #[test]
    fn silhouette_extremes() {
        let rows = vec![vec![0.0], vec![0.1], vec![10.0], vec![10.1]];
        let s = silhouette(&rows, &[0, 0, 1, 1]).unwrap();
        assert!(s > 0.98);
        assert!(silhouette(&vec![vec![1.0]; 4], &[0, 0, 1, 1]).is_err());
        assert!(silhouette(&rows, &[0, 0, 0, 1]).is_err());
        assert!(silhouette(&rows, &[0, 0, 0, 0]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let ex = data();
        let cfg = ModelConfig {
            hidden_dim: 8,
            embed_dim: 4,
            mlp_hidden_dim: 6,
            ..ModelConfig::new(Vocab::standard().len(), 6, Head::Single)
        };
        let params = init_params(&cfg, 0).unwrap();
        let set = extract_activations(&params, &cfg, &ex).unwrap();
        assert_eq!(set.rows.len(), ex.len());
        let p = pca_project(&set.rows).unwrap();
        let text = projection_csv(&p, &set.meta).unwrap();
        let parsed = parse_projection_csv(&text).unwrap();
        assert_eq!(parsed.len(), ex.len());
        for (row, (m, c)) in parsed.iter().zip(set.meta.iter().zip(&p.coords)) {
            assert_eq!(row.qid, m.qid);
            assert_eq!([row.x, row.y], *c);
        }
    }
}
