//! Aggregation of sequence results into a Table-1-shaped report.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{mean_std, stratified_random_baseline, Baseline};
use crate::error::{Error, Result};
use crate::strategies::{cell_name, SequenceResult, Strategy, TaskOrder};
use crate::synth::{DatasetBundle, Label, Split, TaskKind};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<MeanStd> {
        mean_std(values).map(|(mean, std)| MeanStd {
            mean,
            std,
            n: values.len(),
        })
    }
}

/// Random-guessing reference accuracies on each task's test split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Baselines {
    /// Draws from the task's own training answer distribution.
    pub per_task: BTreeMap<TaskKind, Baseline>,
    /// Draws from the pooled answer distribution of both training sets.
    pub both_tasks: BTreeMap<TaskKind, Baseline>,
}

pub fn compute_baselines(bundle: &DatasetBundle, seed: u64, trials: usize) -> Result<Baselines> {
    let answers = |task: TaskKind, split: Split| -> Vec<Label> {
        bundle.questions(task, split).iter().map(|q| q.answer).collect()
    };
    let pooled: Vec<Label> = TaskKind::ALL
        .into_iter()
        .flat_map(|t| answers(t, Split::Train))
        .collect();
    let mut per_task = BTreeMap::new();
    let mut both_tasks = BTreeMap::new();
    for (i, task) in TaskKind::ALL.into_iter().enumerate() {
        let test = answers(task, Split::Test);
        let s = seed.wrapping_add(2 * i as u64);
        per_task.insert(task, stratified_random_baseline(&answers(task, Split::Train), &test, s, trials)?);
        both_tasks.insert(task, stratified_random_baseline(&pooled, &test, s + 1, trials)?);
    }
    Ok(Baselines { per_task, both_tasks })
}

/// One (strategy, order) cell aggregated over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub strategy: Strategy,
    pub order: TaskOrder,
    pub seeds: Vec<u64>,
    /// Test accuracy per task after the second phase.
    pub final_accuracy: BTreeMap<TaskKind, MeanStd>,
    /// Test accuracy per task after the first phase.
    pub first_phase_accuracy: BTreeMap<TaskKind, MeanStd>,
    /// Cross-type error rate per task after the second phase.
    pub cross_type_error: BTreeMap<TaskKind, MeanStd>,
    /// First-task accuracy after the second phase.
    pub retention: MeanStd,
    pub per_seed_retention: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriterionCheck {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config_hash: String,
    pub cells: Vec<CellSummary>,
    /// First-phase accuracy of each task trained alone under the single head.
    pub single_task: BTreeMap<TaskKind, MeanStd>,
    pub baselines: Option<Baselines>,
    /// Expected cells with no result, as `strategy_order_seed`.
    pub missing: Vec<String>,
    pub criteria: Vec<CriterionCheck>,
}

impl EvalReport {
    pub fn cell(&self, strategy: Strategy, order: TaskOrder) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.strategy == strategy && c.order == order)
    }

    pub fn retention(&self, strategy: Strategy, order: TaskOrder) -> Option<f64> {
        self.cell(strategy, order).map(|c| c.retention.mean)
    }
}

/// Aggregates results over seeds. `expected` lists the cells a complete
/// grid should contain; absent ones are reported, never filled in.
pub fn build_report(
    results: &[SequenceResult],
    baselines: Option<Baselines>,
    expected: &[(Strategy, TaskOrder, u64)],
) -> Result<EvalReport> {
    let hash = match results.first() {
        Some(r) => r.config_hash.clone(),
        None => return Err(Error::Empty("sequence results")),
    };
    if let Some(bad) = results.iter().find(|r| r.config_hash != hash) {
        return Err(Error::Invalid(format!(
            "run {} has config hash {} but {} was expected",
            bad.name(),
            bad.config_hash,
            hash
        )));
    }
    let mut groups: BTreeMap<(Strategy, TaskOrder), Vec<&SequenceResult>> = BTreeMap::new();
    for r in results {
        groups.entry((r.strategy, r.order)).or_default().push(r);
    }
    let mut cells = Vec::new();
    for ((strategy, order), mut rs) in groups {
        rs.sort_by_key(|r| r.seed);
        rs.dedup_by_key(|r| r.seed);
        let per_task = |f: &dyn Fn(&SequenceResult, TaskKind) -> f64| -> BTreeMap<TaskKind, MeanStd> {
            TaskKind::ALL
                .into_iter()
                .map(|t| {
                    let v: Vec<f64> = rs.iter().map(|r| f(r, t)).collect();
                    (t, MeanStd::of(&v).expect("non-empty group"))
                })
                .collect()
        };
        let retention: Vec<f64> = rs.iter().map(|r| r.retention()).collect();
        cells.push(CellSummary {
            strategy,
            order,
            seeds: rs.iter().map(|r| r.seed).collect(),
            final_accuracy: per_task(&|r, t| r.after_second.accuracy(t)),
            first_phase_accuracy: per_task(&|r, t| r.after_first.accuracy(t)),
            cross_type_error: per_task(&|r, t| r.after_second.test[&t].cross_type_error),
            retention: MeanStd::of(&retention).expect("non-empty group"),
            per_seed_retention: retention,
        });
    }

    // Phase 1 of any non-cumulative sequence is the single-task model of its first task.
    let mut single: BTreeMap<TaskKind, BTreeMap<u64, f64>> = BTreeMap::new();
    for r in results.iter().filter(|r| r.strategy != Strategy::Cumulative) {
        let t = r.order.first();
        single.entry(t).or_default().insert(r.seed, r.after_first.accuracy(t));
    }
    let single_task = single
        .into_iter()
        .map(|(t, m)| (t, MeanStd::of(&m.into_values().collect::<Vec<_>>()).expect("non-empty")))
        .collect();

    let present: Vec<(Strategy, TaskOrder, u64)> = results.iter().map(|r| (r.strategy, r.order, r.seed)).collect();
    let missing = expected
        .iter()
        .filter(|e| !present.contains(e))
        .map(|&(s, o, seed)| cell_name(s, o, seed))
        .collect();

    let mut report = EvalReport {
        config_hash: hash,
        cells,
        single_task,
        baselines,
        missing,
        criteria: Vec::new(),
    };
    report.criteria = check_criteria(&report);
    Ok(report)
}

/// Qualitative checks that can be read off an aggregated report.
fn check_criteria(report: &EvalReport) -> Vec<CriterionCheck> {
    let mut out = Vec::new();
    let mut push = |name: &str, verdict: Option<(bool, String)>| match verdict {
        Some((pass, detail)) => out.push(CriterionCheck {
            name: name.into(),
            pass,
            detail,
        }),
        None => out.push(CriterionCheck {
            name: name.into(),
            pass: false,
            detail: "cells missing".into(),
        }),
    };
    let ret = |s, o| report.retention(s, o);

    push(
        "naive forgets the first task (≤ 0.05, both orders)",
        (|| {
            let a = ret(Strategy::Naive, TaskOrder::WH_YN)?;
            let b = ret(Strategy::Naive, TaskOrder::YN_WH)?;
            Some((a <= 0.05 && b <= 0.05, format!("wh-yn {a:.3}, yn-wh {b:.3}")))
        })(),
    );
    push(
        "wh-yn retention: rehearsal > ewc + 0.05, ewc ≥ naive, rehearsal ≥ 0.5",
        (|| {
            let o = TaskOrder::WH_YN;
            let (r, e, n) = (ret(Strategy::Rehearsal, o)?, ret(Strategy::Ewc, o)?, ret(Strategy::Naive, o)?);
            Some((
                r > e + 0.05 && e >= n && r >= 0.5,
                format!("rehearsal {r:.3}, ewc {e:.3}, naive {n:.3}"),
            ))
        })(),
    );
    push(
        "cumulative matches single-task models (±0.05) and never crosses types",
        (|| {
            let cum = report.cell(Strategy::Cumulative, TaskOrder::WH_YN)?;
            let mut ok = true;
            let mut detail = String::new();
            for t in TaskKind::ALL {
                let c = cum.final_accuracy[&t].mean;
                let s = report.single_task.get(&t)?.mean;
                let x = cum.cross_type_error[&t].mean;
                ok &= (c - s).abs() <= 0.05 && x < 0.05;
                let _ = write!(detail, "{t}: cumulative {c:.3} vs single {s:.3}, crossed {x:.3}; ");
            }
            for o in TaskOrder::ALL {
                let x = report.cell(Strategy::Naive, o)?.cross_type_error[&o.first()].mean;
                ok &= x > 0.5;
                let _ = write!(detail, "naive {o} crossed {x:.3}; ");
            }
            Some((ok, detail.trim_end_matches("; ").to_string()))
        })(),
    );
    push(
        "order asymmetry: wh-yn retention ≥ yn-wh + 0.05 for rehearsal and ewc",
        (|| {
            let mut ok = true;
            let mut detail = String::new();
            for s in [Strategy::Rehearsal, Strategy::Ewc] {
                let (a, b) = (ret(s, TaskOrder::WH_YN)?, ret(s, TaskOrder::YN_WH)?);
                ok &= a >= b + 0.05;
                let _ = write!(detail, "{s}: {a:.3} vs {b:.3}; ");
            }
            Some((ok, detail.trim_end_matches("; ").to_string()))
        })(),
    );
    out
}

fn fmt_cell(v: Option<&MeanStd>) -> String {
    match v {
        Some(m) => format!("{:.3}±{:.3}", m.mean, m.std),
        None => "--".into(),
    }
}

fn task_header(t: TaskKind) -> &'static str {
    match t {
        TaskKind::Wh => "Wh",
        TaskKind::Yn => "Y/N",
    }
}

/// Plain-text table with the per-task block on top and one row per
/// strategy below, columns grouped by task order.
pub fn render_table(report: &EvalReport) -> String {
    const W: usize = 14;
    let mut s = String::new();
    let _ = writeln!(s, "config {}", report.config_hash);
    let _ = writeln!(s, "{:<22}{:>W$}{:>W$}", "", "Wh", "Y/N");
    if let Some(b) = &report.baselines {
        let _ = writeln!(
            s,
            "{:<22}{:>W$.3}{:>W$.3}",
            "Random (per-task)", b.per_task[&TaskKind::Wh].analytic, b.per_task[&TaskKind::Yn].analytic
        );
    }
    let _ = writeln!(
        s,
        "{:<22}{:>W$}{:>W$}",
        "Single-task model",
        fmt_cell(report.single_task.get(&TaskKind::Wh)),
        fmt_cell(report.single_task.get(&TaskKind::Yn))
    );
    let _ = writeln!(s);
    let _ = writeln!(s, "{:<22}{:>w2$}{:>w2$}", "CL setups", "I) Wh->Y/N", "II) Y/N->Wh", w2 = 2 * W);
    let mut header = format!("{:<22}", "");
    for o in TaskOrder::ALL {
        for t in [o.first(), o.second()] {
            let _ = write!(header, "{:>W$}", task_header(t));
        }
    }
    let _ = writeln!(s, "{header}");
    if let Some(b) = &report.baselines {
        let mut row = format!("{:<22}", "Random (both tasks)");
        for o in TaskOrder::ALL {
            for t in [o.first(), o.second()] {
                let _ = write!(row, "{:>W$.3}", b.both_tasks[&t].analytic);
            }
        }
        let _ = writeln!(s, "{row}");
    }
    for strategy in Strategy::ALL {
        let label = match strategy {
            Strategy::Naive => "Naive",
            Strategy::Cumulative => "Cumulative",
            Strategy::Ewc => "EWC",
            Strategy::Rehearsal => "Rehearsal",
        };
        let mut row = format!("{label:<22}");
        for o in TaskOrder::ALL {
            for t in [o.first(), o.second()] {
                let v = report.cell(strategy, o).map(|c| &c.final_accuracy[&t]);
                let _ = write!(row, "{:>W$}", fmt_cell(v));
            }
        }
        let _ = writeln!(s, "{row}");
    }
    if !report.missing.is_empty() {
        let _ = writeln!(s, "\nmissing: {}", report.missing.join(", "));
    }
    if !report.criteria.is_empty() {
        let _ = writeln!(s);
        for c in &report.criteria {
            let _ = writeln!(s, "[{}] {} ({})", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
        }
    }
    s
}
