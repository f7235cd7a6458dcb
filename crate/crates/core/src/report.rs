//! Evaluation metrics and report files.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Labels;
use crate::error::{Error, Result};
use crate::gating::FeatureGroups;

/// Test-time gate decisions, `sequence × step × gate`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SelectionTrace {
    pub n_gates: usize,
    pub gates: Vec<Vec<Vec<bool>>>,
}

impl SelectionTrace {
    pub fn total_steps(&self) -> usize {
        self.gates.iter().map(Vec::len).sum()
    }

    /// Steps in which the gate vector differs from the previous step.
    pub fn changes(&self) -> usize {
        self.gates.iter().map(|s| s.windows(2).filter(|w| w[0] != w[1]).count()).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub macro_f1: f64,
}

fn f1(tp: usize, fp: usize, fn_: usize) -> Option<f64> {
    let denom = 2 * tp + fp + fn_;
    (denom > 0).then(|| 2.0 * tp as f64 / denom as f64)
}

/// Accuracy and macro-F1 (percent) over labelled steps. Predictions are
/// decoded per step: one class for multiclass, the active labels for
/// multilabel. Classes that never occur in labels or predictions are
/// left out of the macro average.
pub fn classification_metrics(
    preds: &[Vec<Vec<usize>>],
    labels: &[Labels],
    n_outputs: usize,
) -> Result<ClassificationMetrics> {
    if preds.len() != labels.len() {
        return Err(Error::shape("classification_metrics", format!("{} vs {} sequences", preds.len(), labels.len())));
    }
    let mut tp = vec![0usize; n_outputs];
    let mut fp = vec![0usize; n_outputs];
    let mut fneg = vec![0usize; n_outputs];
    let (mut hit, mut total) = (0usize, 0usize);
    for (p, l) in preds.iter().zip(labels) {
        if p.len() != l.len() {
            return Err(Error::shape("classification_metrics", format!("{} predictions for {} steps", p.len(), l.len())));
        }
        match l {
            Labels::Classes(y) => {
                for (pt, yt) in p.iter().zip(y) {
                    let Some(y) = *yt else { continue };
                    let guess = pt.first().copied().unwrap_or(usize::MAX);
                    total += 1;
                    if guess == y {
                        hit += 1;
                        tp[y] += 1;
                    } else {
                        fneg[y] += 1;
                        if guess < n_outputs {
                            fp[guess] += 1;
                        }
                    }
                }
            }
            Labels::Multi { n_labels, cells } => {
                for (t, pt) in p.iter().enumerate() {
                    for c in 0..*n_labels {
                        let Some(truth) = cells[t * n_labels + c] else { continue };
                        let on = pt.contains(&c);
                        total += 1;
                        hit += usize::from(on == truth);
                        match (on, truth) {
                            (true, true) => tp[c] += 1,
                            (true, false) => fp[c] += 1,
                            (false, true) => fneg[c] += 1,
                            (false, false) => {}
                        }
                    }
                }
            }
        }
    }
    if total == 0 {
        return Err(Error::DegenerateBatch);
    }
    let scores: Vec<f64> = (0..n_outputs).filter_map(|c| f1(tp[c], fp[c], fneg[c])).collect();
    let macro_f1 = if scores.is_empty() { 0.0 } else { 100.0 * scores.iter().sum::<f64>() / scores.len() as f64 };
    Ok(ClassificationMetrics { accuracy: 100.0 * hit as f64 / total as f64, macro_f1 })
}

/// Average and union feature-gate usage in percent.
pub fn selection_metrics(trace: &SelectionTrace) -> (f64, f64) {
    let g = trace.n_gates;
    let steps = trace.total_steps();
    if g == 0 || steps == 0 {
        return (0.0, 0.0);
    }
    let mut ever = vec![false; g];
    let mut on = 0usize;
    for z in trace.gates.iter().flatten() {
        for (e, &b) in ever.iter_mut().zip(z) {
            *e |= b;
            on += usize::from(b);
        }
    }
    let avg = 100.0 * on as f64 / (steps * g) as f64;
    let union = 100.0 * ever.iter().filter(|&&e| e).count() as f64 / g as f64;
    (avg, union)
}

/// Per-activity gate usage rates. Unlabelled steps go under `"none"`.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    /// `(activity, step count, usage rate per gate)`.
    pub rows: Vec<(String, usize, Vec<f64>)>,
}

pub const UNLABELLED_KEY: &str = "none";

pub fn per_activity_heatmap(trace: &SelectionTrace, labels: &[Labels], class_names: Option<&[String]>) -> Result<Heatmap> {
    if trace.gates.len() != labels.len() {
        return Err(Error::shape("per_activity_heatmap", "trace and labels differ in sequence count"));
    }
    let g = trace.n_gates;
    let mut acc: BTreeMap<usize, (usize, Vec<usize>)> = BTreeMap::new();
    let none = usize::MAX;
    for (seq, l) in trace.gates.iter().zip(labels) {
        if seq.len() != l.len() {
            return Err(Error::shape("per_activity_heatmap", "trace and labels differ in length"));
        }
        for (t, z) in seq.iter().enumerate() {
            let keys: Vec<usize> = match l {
                Labels::Classes(c) => vec![c[t].unwrap_or(none)],
                Labels::Multi { n_labels, cells } => {
                    let on: Vec<usize> = (0..*n_labels).filter(|&c| cells[t * n_labels + c] == Some(true)).collect();
                    if on.is_empty() { vec![none] } else { on }
                }
            };
            for key in keys {
                let entry = acc.entry(key).or_insert_with(|| (0, vec![0; g]));
                entry.0 += 1;
                entry.1.iter_mut().zip(z).for_each(|(n, &b)| *n += usize::from(b));
            }
        }
    }
    let rows = acc
        .into_iter()
        .map(|(key, (n, counts))| {
            let name = if key == none {
                UNLABELLED_KEY.to_string()
            } else {
                class_names.and_then(|c| c.get(key).cloned()).unwrap_or_else(|| key.to_string())
            };
            (name, n, counts.iter().map(|&c| c as f64 / n as f64).collect())
        })
        .collect();
    Ok(Heatmap { rows })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowRow {
    pub window_start: usize,
    pub accuracy: f64,
    /// Population standard deviation across sequences.
    pub std: f64,
}

fn step_score(pred: &[usize], labels: &Labels, t: usize) -> (usize, usize) {
    match labels {
        Labels::Classes(c) => match c[t] {
            Some(y) => (usize::from(pred.first() == Some(&y)), 1),
            None => (0, 0),
        },
        Labels::Multi { n_labels, cells } => (0..*n_labels).fold((0, 0), |(h, n), c| match cells[t * n_labels + c] {
            Some(truth) => (h + usize::from(pred.contains(&c) == truth), n + 1),
            None => (h, n),
        }),
    }
}

/// Accuracy per non-overlapping window of `window` steps, averaged over
/// time-aligned sequences that have labelled steps in the window.
pub fn moving_window_accuracy(preds: &[Vec<Vec<usize>>], labels: &[Labels], window: usize) -> Result<Vec<WindowRow>> {
    if window == 0 {
        return Err(Error::invalid("window must be at least 1"));
    }
    let longest = labels.iter().map(Labels::len).max().unwrap_or(0);
    let mut rows = Vec::new();
    for start in (0..longest).step_by(window) {
        let mut accs = Vec::new();
        for (p, l) in preds.iter().zip(labels) {
            let (mut hit, mut n) = (0, 0);
            for t in start..(start + window).min(l.len()) {
                let (h, m) = step_score(&p[t], l, t);
                hit += h;
                n += m;
            }
            if n > 0 {
                accs.push(100.0 * hit as f64 / n as f64);
            }
        }
        if accs.is_empty() {
            continue;
        }
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        let var = accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / accs.len() as f64;
        rows.push(WindowRow { window_start: start, accuracy: mean, std: var.sqrt() });
    }
    Ok(rows)
}

/// Micro-averaged precision and recall of selected features against the
/// relevant set of each step's true context. Precision is 0 when nothing
/// is ever selected.
pub fn selection_precision_recall(
    trace: &SelectionTrace,
    groups: &FeatureGroups,
    relevance: Option<&[Vec<usize>]>,
    contexts: &[Option<Vec<usize>>],
) -> Result<(f64, f64)> {
    let relevance = relevance.ok_or(Error::MissingGroundTruth)?;
    if contexts.len() != trace.gates.len() {
        return Err(Error::shape("selection_precision_recall", "one context track per sequence required"));
    }
    let (mut tp, mut selected, mut relevant) = (0usize, 0usize, 0usize);
    let mut chosen = vec![false; groups.n_features()];
    for (seq, ctx) in trace.gates.iter().zip(contexts) {
        let ctx = ctx.as_ref().ok_or(Error::MissingGroundTruth)?;
        for (z, &c) in seq.iter().zip(ctx) {
            chosen.iter_mut().for_each(|v| *v = false);
            for (gate, &on) in z.iter().enumerate() {
                if on {
                    groups.groups()[gate].iter().for_each(|&k| chosen[k] = true);
                }
            }
            let rel = relevance.get(c).ok_or(Error::MissingGroundTruth)?;
            selected += chosen.iter().filter(|&&v| v).count();
            relevant += rel.len();
            tp += rel.iter().filter(|&&k| chosen[k]).count();
        }
    }
    let precision = if selected == 0 { 0.0 } else { tp as f64 / selected as f64 };
    let recall = if relevant == 0 { 0.0 } else { tp as f64 / relevant as f64 };
    Ok((precision, recall))
}

/// Flat summary of one evaluated run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub avg_feature_pct: f64,
    pub union_feature_pct: f64,
    pub selection_precision: Option<f64>,
    pub selection_recall: Option<f64>,
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TradeoffRow {
    pub lambda: f64,
    pub alpha: Option<f64>,
    pub seed: u64,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub avg_feature_pct: f64,
    pub union_feature_pct: f64,
}

fn create(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn finish(mut w: csv::Writer<std::fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_report(path: &Path, r: &RunReport) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(["accuracy", "macro_f1", "avg_feature_pct", "union_feature_pct", "selection_precision", "selection_recall", "steps"])?;
    w.write_record([
        r.accuracy.to_string(),
        r.macro_f1.to_string(),
        r.avg_feature_pct.to_string(),
        r.union_feature_pct.to_string(),
        opt(r.selection_precision),
        opt(r.selection_recall),
        r.steps.to_string(),
    ])?;
    finish(w, path)
}

pub fn read_report(path: &Path) -> Result<RunReport> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
    let rec = r.records().next().ok_or_else(|| Error::invalid(format!("{} has no rows", path.display())))??;
    let num = |i: usize| -> Result<f64> {
        rec.get(i).unwrap_or("").parse().map_err(|_| Error::Parse { path: path.display().to_string(), line: 2, message: format!("column {i}") })
    };
    let maybe = |i: usize| rec.get(i).filter(|s| !s.is_empty()).and_then(|s| s.parse().ok());
    Ok(RunReport {
        accuracy: num(0)?,
        macro_f1: num(1)?,
        avg_feature_pct: num(2)?,
        union_feature_pct: num(3)?,
        selection_precision: maybe(4),
        selection_recall: maybe(5),
        steps: num(6)? as usize,
    })
}

pub fn write_heatmap(path: &Path, heatmap: &Heatmap, gate_names: &[String]) -> Result<()> {
    let mut w = create(path)?;
    let mut header = vec!["activity".to_string(), "steps".into()];
    header.extend(gate_names.iter().cloned());
    w.write_record(&header)?;
    for (name, n, rates) in &heatmap.rows {
        let mut rec = vec![name.clone(), n.to_string()];
        rec.extend(rates.iter().map(|r| r.to_string()));
        w.write_record(&rec)?;
    }
    finish(w, path)
}

pub fn write_tradeoff(path: &Path, rows: &[TradeoffRow]) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(["lambda", "alpha", "seed", "accuracy", "macro_f1", "avg_feature_pct", "union_feature_pct"])?;
    for r in rows {
        w.write_record([
            r.lambda.to_string(),
            opt(r.alpha),
            r.seed.to_string(),
            r.accuracy.to_string(),
            r.macro_f1.to_string(),
            r.avg_feature_pct.to_string(),
            r.union_feature_pct.to_string(),
        ])?;
    }
    finish(w, path)
}

pub fn write_selection_trace(path: &Path, trace: &SelectionTrace, seq_ids: &[String]) -> Result<()> {
    let mut w = create(path)?;
    let mut header = vec!["t".to_string(), "seq".into()];
    header.extend((1..=trace.n_gates).map(|g| format!("g{g}")));
    w.write_record(&header)?;
    for (seq, id) in trace.gates.iter().zip(seq_ids) {
        for (t, z) in seq.iter().enumerate() {
            let mut rec = vec![t.to_string(), id.clone()];
            rec.extend(z.iter().map(|&b| if b { "1" } else { "0" }.to_string()));
            w.write_record(&rec)?;
        }
    }
    finish(w, path)
}

pub fn write_moving_accuracy(path: &Path, rows: &[WindowRow]) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(["window_start", "accuracy", "std"])?;
    for r in rows {
        w.write_record([r.window_start.to_string(), r.accuracy.to_string(), r.std.to_string()])?;
    }
    finish(w, path)
}

/// Human-readable summary of a report.
pub fn summarize(r: &RunReport) -> String {
    let mut s = format!(
        "accuracy        {:.2}%\nmacro-F1        {:.2}%\navg features    {:.2}%\nunion features  {:.2}%\nlabelled steps  {}\n",
        r.accuracy, r.macro_f1, r.avg_feature_pct, r.union_feature_pct, r.steps
    );
    if let (Some(p), Some(q)) = (r.selection_precision, r.selection_recall) {
        s.push_str(&format!("selection precision {p:.3}, recall {q:.3}\n"));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(v: &[usize]) -> Vec<Vec<usize>> {
        v.iter().map(|&c| vec![c]).collect()
    }

    #[test]
    fn perfect_predictions() {
        let labels = vec![Labels::Classes(vec![Some(0), Some(1), Some(2)])];
        let m = classification_metrics(&[one(&[0, 1, 2])], &labels, 3).unwrap();
        assert_eq!((m.accuracy, m.macro_f1), (100.0, 100.0));
    }

    #[test]
    fn constant_predictor_on_balanced_labels() {
        let labels = vec![Labels::Classes(vec![Some(0), Some(1), Some(0), Some(1)])];
        let m = classification_metrics(&[one(&[0, 0, 0, 0])], &labels, 2).unwrap();
        assert_eq!(m.accuracy, 50.0);
        assert!((m.macro_f1 - 100.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn masked_steps_ignored() {
        let labels = vec![Labels::Classes(vec![Some(0), None])];
        let a = classification_metrics(&[one(&[0, 0])], &labels, 2).unwrap();
        let b = classification_metrics(&[one(&[0, 1])], &labels, 2).unwrap();
        assert_eq!(a, b);
        let none = vec![Labels::Classes(vec![None])];
        assert!(classification_metrics(&[one(&[0])], &none, 2).is_err());
    }

    #[test]
    fn selection_arithmetic() {
        let trace = SelectionTrace { n_gates: 2, gates: vec![vec![vec![true, false], vec![true, false], vec![false, false]]] };
        let (avg, union) = selection_metrics(&trace);
        assert!((avg - 100.0 / 3.0).abs() < 1e-9);
        assert_eq!(union, 50.0);
        let zero = SelectionTrace { n_gates: 2, gates: vec![vec![vec![false, false]]] };
        assert_eq!(selection_metrics(&zero), (0.0, 0.0));
    }

    #[test]
    fn heatmap_rows() {
        let trace = SelectionTrace { n_gates: 2, gates: vec![vec![vec![true, false]; 3]] };
        let labels = vec![Labels::Classes(vec![Some(1), Some(1), None])];
        let h = per_activity_heatmap(&trace, &labels, None).unwrap();
        assert_eq!(h.rows.len(), 2);
        assert_eq!(h.rows[0], ("1".to_string(), 2, vec![1.0, 0.0]));
        assert_eq!(h.rows[1].0, UNLABELLED_KEY);
    }

    #[test]
    fn window_equal_to_length_gives_overall_accuracy() {
        let labels = vec![Labels::Classes(vec![Some(0), Some(1), Some(1), Some(0)])];
        let preds = vec![one(&[0, 0, 1, 0])];
        let rows = moving_window_accuracy(&preds, &labels, 4).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].accuracy, 75.0);
        assert_eq!(rows[0].std, 0.0);
    }

    #[test]
    fn select_all_precision_is_relevant_fraction() {
        let groups = FeatureGroups::singletons(4);
        let trace = SelectionTrace { n_gates: 4, gates: vec![vec![vec![true; 4]; 2]] };
        let relevance = vec![vec![0], vec![2]];
        let (p, r) = selection_precision_recall(&trace, &groups, Some(&relevance), &[Some(vec![0, 1])]).unwrap();
        assert_eq!((p, r), (0.25, 1.0));
        assert!(matches!(selection_precision_recall(&trace, &groups, None, &[None]), Err(Error::MissingGroundTruth)));
    }

    #[test]
    fn report_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let r = RunReport {
            accuracy: 91.5,
            macro_f1: 90.25,
            avg_feature_pct: 10.0,
            union_feature_pct: 35.0,
            selection_precision: Some(0.9),
            selection_recall: None,
            steps: 800,
        };
        let path = dir.path().join("report.csv");
        write_report(&path, &r).unwrap();
        assert_eq!(read_report(&path).unwrap(), r);
    }
}
