//! Accuracy instruments: confusion matrices, cross-type error rate, CL
//! score and stratified random baselines. Run aggregation lives in
//! [`report`].

pub mod report;

use std::fmt::Write as _;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::{Label, NUM_LABELS};

pub use report::{build_report, compute_baselines, render_table, Baselines, CellSummary, CriterionCheck, EvalReport, MeanStd};

/// How two validation accuracies are folded into one selection score.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClScoreKind {
    #[default]
    Mean,
    Harmonic,
}

impl ClScoreKind {
    pub fn score(self, acc_a: f64, acc_b: f64) -> f64 {
        match self {
            ClScoreKind::Mean => (acc_a + acc_b) / 2.0,
            ClScoreKind::Harmonic if acc_a + acc_b == 0.0 => 0.0,
            ClScoreKind::Harmonic => 2.0 * acc_a * acc_b / (acc_a + acc_b),
        }
    }
}

/// Unweighted mean of the two tasks' accuracies.
pub fn cl_score(acc_a: f64, acc_b: f64) -> f64 {
    ClScoreKind::Mean.score(acc_a, acc_b)
}

/// Counts over the 17 single-head labels; rows are gold, columns predicted.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl Default for ConfusionMatrix {
    fn default() -> Self {
        ConfusionMatrix {
            counts: vec![vec![0; NUM_LABELS]; NUM_LABELS],
        }
    }
}

impl ConfusionMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs(predicted: &[Label], gold: &[Label]) -> Result<Self> {
        if predicted.len() != gold.len() {
            return Err(Error::Invalid(format!(
                "{} predictions for {} gold labels",
                predicted.len(),
                gold.len()
            )));
        }
        let mut m = Self::new();
        for (&p, &g) in predicted.iter().zip(gold) {
            m.record(g, p);
        }
        Ok(m)
    }

    /// Builds a matrix from raw label indices, rejecting unknown labels.
    pub fn from_indices(predicted: &[usize], gold: &[usize]) -> Result<Self> {
        let conv = |v: &[usize]| v.iter().map(|&i| Label::new(i)).collect::<Result<Vec<_>>>();
        Self::from_pairs(&conv(predicted)?, &conv(gold)?)
    }

    pub fn record(&mut self, gold: Label, predicted: Label) {
        self.counts[gold.index()][predicted.index()] += 1;
    }

    pub fn get(&self, gold: Label, predicted: Label) -> u64 {
        self.counts[gold.index()][predicted.index()]
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_total(&self, gold: Label) -> u64 {
        self.counts[gold.index()].iter().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..NUM_LABELS).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> Result<f64> {
        match self.total() {
            0 => Err(Error::Empty("confusion matrix")),
            t => Ok(self.correct() as f64 / t as f64),
        }
    }

    /// Errors whose predicted label belongs to the same attribute (or the
    /// same yes/no group) as the gold label, as a share of all errors.
    pub fn within_group_error_share(&self) -> Option<f64> {
        let group = |l: Label| l.attr_kind().map(|k| k.index()).unwrap_or(usize::MAX);
        let (mut within, mut errors) = (0u64, 0u64);
        for g in Label::all() {
            for p in Label::all() {
                let n = self.get(g, p);
                if g != p {
                    errors += n;
                    if group(g) == group(p) {
                        within += n;
                    }
                }
            }
        }
        (errors > 0).then(|| within as f64 / errors as f64)
    }

    /// Header row of label names, then one row per gold label.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("gold");
        for l in Label::all() {
            out.push(',');
            out.push_str(l.name());
        }
        out.push('\n');
        for g in Label::all() {
            out.push_str(g.name());
            for c in &self.counts[g.index()] {
                let _ = write!(out, ",{c}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or(Error::Empty("confusion CSV"))?;
        let expected: Vec<&str> = std::iter::once("gold").chain(Label::all().map(|l| l.name())).collect();
        if header.split(',').collect::<Vec<_>>() != expected {
            return Err(Error::Parse {
                line: 1,
                message: "unexpected header".into(),
            });
        }
        let mut m = Self::new();
        let mut rows = 0;
        for (i, line) in lines.enumerate() {
            let err = |message: String| Error::Parse { line: i + 2, message };
            let mut cells = line.split(',');
            let gold = Label::from_name(cells.next().unwrap_or_default()).map_err(|e| err(e.to_string()))?;
            let values: Vec<u64> = cells
                .map(|c| c.parse::<u64>().map_err(|e| err(e.to_string())))
                .collect::<Result<_>>()?;
            if values.len() != NUM_LABELS || gold.index() != rows {
                return Err(err("malformed row".into()));
            }
            m.counts[gold.index()] = values;
            rows += 1;
        }
        if rows != NUM_LABELS {
            return Err(Error::Parse {
                line: rows + 1,
                message: format!("expected {NUM_LABELS} rows, found {rows}"),
            });
        }
        Ok(m)
    }
}

/// Fraction of examples whose predicted answer type (attribute value vs
/// yes/no) differs from the gold answer type. Zero for an empty matrix.
pub fn cross_type_error_rate(matrix: &ConfusionMatrix) -> f64 {
    let total = matrix.total();
    if total == 0 {
        return 0.0;
    }
    let mut crossed = 0;
    for g in Label::all() {
        for p in Label::all() {
            if g.task() != p.task() {
                crossed += matrix.get(g, p);
            }
        }
    }
    crossed as f64 / total as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    /// Closed form `Σ_c p_c q_c`.
    pub analytic: f64,
    pub monte_carlo: f64,
    pub trials: usize,
}

fn frequencies(labels: &[Label]) -> Vec<f64> {
    let mut f = vec![0.0; NUM_LABELS];
    for l in labels {
        f[l.index()] += 1.0;
    }
    let n = labels.len() as f64;
    f.iter_mut().for_each(|x| *x /= n);
    f
}

/// Random predictor that draws answers from the `reference` label
/// distribution, scored against `eval` gold labels.
pub fn stratified_random_baseline(
    reference: &[Label],
    eval: &[Label],
    seed: u64,
    trials: usize,
) -> Result<Baseline> {
    if reference.is_empty() {
        return Err(Error::Empty("reference label distribution"));
    }
    if eval.is_empty() {
        return Err(Error::Empty("evaluation labels"));
    }
    let q = frequencies(reference);
    let p = frequencies(eval);
    let analytic = analytic_baseline(&p, &q)?;
    let draw = WeightedIndex::new(&q).map_err(|e| Error::Invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    for _ in 0..trials {
        let gold = eval[rng.gen_range(0..eval.len())];
        if draw.sample(&mut rng) == gold.index() {
            hits += 1;
        }
    }
    Ok(Baseline {
        analytic,
        monte_carlo: if trials == 0 { analytic } else { hits as f64 / trials as f64 },
        trials,
    })
}

/// `Σ_c p_c q_c` for two distributions over the same classes.
pub fn analytic_baseline(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.is_empty() || p.len() != q.len() {
        return Err(Error::Invalid(format!(
            "distributions of length {} and {}",
            p.len(),
            q.len()
        )));
    }
    Ok(p.iter().zip(q).map(|(a, b)| a * b).sum())
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::TaskKind;

    fn l(i: usize) -> Label {
        Label::new(i).unwrap()
    }

    #[test]
    fn cl_score_examples() {
        assert_eq!(cl_score(0.0, 0.0), 0.0);
        assert_eq!(cl_score(1.0, 1.0), 1.0);
        assert!((cl_score(0.81, 0.74) - 0.775).abs() < 1e-12);
        assert_eq!(ClScoreKind::Harmonic.score(0.0, 0.0), 0.0);
        assert!((ClScoreKind::Harmonic.score(0.5, 1.0) - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_predictions_are_diagonal() {
        let gold: Vec<Label> = (0..17).map(l).chain((0..5).map(l)).collect();
        let m = ConfusionMatrix::from_pairs(&gold, &gold).unwrap();
        assert_eq!(m.total(), 22);
        assert_eq!(m.accuracy().unwrap(), 1.0);
        assert_eq!(cross_type_error_rate(&m), 0.0);
        assert_eq!(m.within_group_error_share(), None);
    }

    #[test]
    fn all_yes_on_wh_is_fully_crossed() {
        let gold: Vec<Label> = (0..15).map(l).collect();
        let pred = vec![Label::YES; 15];
        let m = ConfusionMatrix::from_pairs(&pred, &gold).unwrap();
        assert_eq!(cross_type_error_rate(&m), 1.0);
        let mut mixed = m.clone();
        mixed.record(Label::NO, Label::NO);
        assert!((cross_type_error_rate(&mixed) - 15.0 / 16.0).abs() < 1e-12);
    }

    #[test]
    fn unknown_label_and_length_mismatch_are_errors() {
        assert!(ConfusionMatrix::from_indices(&[17], &[0]).is_err());
        assert!(ConfusionMatrix::from_pairs(&[Label::YES], &[]).is_err());
    }

    #[test]
    fn within_group_share_counts_same_attribute_confusions() {
        // red→blue stays within color; cube→yes crosses groups.
        let m = ConfusionMatrix::from_pairs(&[l(1), Label::YES], &[l(6), l(8)]).unwrap();
        assert_eq!(m.within_group_error_share(), Some(0.5));
    }

    #[test]
    fn csv_round_trip_and_shape() {
        let m = ConfusionMatrix::from_pairs(&[l(3), l(15), l(16)], &[l(3), l(16), l(16)]).unwrap();
        let csv = m.to_csv();
        assert_eq!(csv.lines().count(), 18);
        assert!(csv.starts_with("gold,gray,"));
        assert_eq!(ConfusionMatrix::from_csv(&csv).unwrap(), m);
        let truncated: String = csv.lines().take(10).collect::<Vec<_>>().join("\n");
        assert!(ConfusionMatrix::from_csv(&truncated).is_err());
    }

    #[test]
    fn analytic_baselines() {
        let yn: Vec<Label> = (0..1000).map(|i| Label::from_bool(i % 2 == 0)).collect();
        let b = stratified_random_baseline(&yn, &yn, 0, 10_000).unwrap();
        assert!((b.analytic - 0.5).abs() < 1e-12);
        assert!((b.monte_carlo - b.analytic).abs() < 0.02);
        let wh: Vec<Label> = (0..1500).map(|i| l(i % 15)).collect();
        let b = stratified_random_baseline(&wh, &wh, 1, 10_000).unwrap();
        assert!((b.analytic - 1.0 / 15.0).abs() < 1e-12);
        assert!((b.monte_carlo - b.analytic).abs() < 0.02);
        assert!(TaskKind::Wh.labels().iter().all(|x| x.index() < 15));
    }

    #[test]
    fn empty_distribution_is_an_error() {
        assert!(stratified_random_baseline(&[], &[Label::YES], 0, 10).is_err());
        assert!(stratified_random_baseline(&[Label::YES], &[], 0, 10).is_err());
    }

    #[test]
    fn mean_std_examples() {
        let (m, s) = mean_std(&[0.2, 0.4, 0.6]).unwrap();
        assert!((m - 0.4).abs() < 1e-12);
        assert!((s - (0.08f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(mean_std(&[0.7]), Some((0.7, 0.0)));
        assert_eq!(mean_std(&[]), None);
    }
}
