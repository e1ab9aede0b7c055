//! Evaluation protocol: confusion matrices, top-k accuracy, macro-averaged
//! precision/recall/F1 and mean/std aggregation over repeated runs.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub k: usize,
    /// Row-major; `(i, j)` counts true class `i` predicted as `j`.
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    #[inline]
    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|i| self.get(i, i)).sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        (0..self.k).map(|j| self.get(i, j)).sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        (0..self.k).map(|i| self.get(i, j)).sum()
    }

    pub fn accuracy(&self) -> f64 {
        let t = self.total();
        if t == 0 {
            0.0
        } else {
            self.trace() as f64 / t as f64
        }
    }

    /// Plain-text table with optional class names.
    pub fn render(&self, names: Option<&[String]>) -> String {
        let label = |i: usize| names.and_then(|n| n.get(i).cloned()).unwrap_or_else(|| i.to_string());
        let width = (0..self.k)
            .map(|i| label(i).len())
            .chain(self.counts.iter().map(|c| c.to_string().len()))
            .max()
            .unwrap_or(1)
            .max(4);
        let mut s = String::new();
        let _ = write!(s, "{:>width$}", "t\\p");
        for j in 0..self.k {
            let _ = write!(s, " {:>width$}", label(j));
        }
        s.push('\n');
        for i in 0..self.k {
            let _ = write!(s, "{:>width$}", label(i));
            for j in 0..self.k {
                let _ = write!(s, " {:>width$}", self.get(i, j));
            }
            s.push('\n');
        }
        s
    }
}

pub fn confusion(truth: &[usize], pred: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if truth.len() != pred.len() {
        return Err(Error::Shape(format!(
            "{} true labels vs {} predictions",
            truth.len(),
            pred.len()
        )));
    }
    let mut counts = vec![0u64; k * k];
    for (&t, &p) in truth.iter().zip(pred) {
        if t >= k || p >= k {
            return Err(Error::InvalidArgument(format!("label ({t}, {p}) outside [0, {k})")));
        }
        counts[t * k + p] += 1;
    }
    Ok(ConfusionMatrix { k, counts })
}

/// Classes ordered by descending score; equal scores keep the lower index first.
pub fn ranked_classes(row: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    idx
}

pub fn argmax_rows(scores: &[Vec<f64>]) -> Vec<usize> {
    scores.iter().map(|r| ranked_classes(r)[0]).collect()
}

pub fn topk_accuracy(scores: &[Vec<f64>], truth: &[usize], k: usize) -> Result<f64> {
    if scores.len() != truth.len() {
        return Err(Error::Shape(format!("{} score rows vs {} labels", scores.len(), truth.len())));
    }
    if scores.is_empty() {
        return Ok(0.0);
    }
    let n_classes = scores[0].len();
    if scores.iter().any(|r| r.len() != n_classes) {
        return Err(Error::Shape("score rows have different lengths".into()));
    }
    if k < 1 || k > n_classes {
        return Err(Error::InvalidArgument(format!("k = {k} outside [1, {n_classes}]")));
    }
    let mut hits = 0usize;
    for (row, &t) in scores.iter().zip(truth) {
        if t >= n_classes {
            return Err(Error::InvalidArgument(format!("label {t} outside [0, {n_classes})")));
        }
        if ranked_classes(row)[..k].contains(&t) {
            hits += 1;
        }
    }
    Ok(hits as f64 / scores.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassPrf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn per_class_prf(m: &ConfusionMatrix) -> Vec<ClassPrf> {
    (0..m.k)
        .map(|c| {
            let tp = m.get(c, c) as f64;
            let predicted = m.col_sum(c) as f64;
            let actual = m.row_sum(c) as f64;
            let precision = if predicted > 0.0 { tp / predicted } else { 0.0 };
            let recall = if actual > 0.0 { tp / actual } else { 0.0 };
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassPrf { precision, recall, f1 }
        })
        .collect()
}

/// Unweighted class means of precision, recall and F1.
pub fn macro_prf(m: &ConfusionMatrix) -> (f64, f64, f64) {
    let per = per_class_prf(m);
    let k = per.len().max(1) as f64;
    (
        per.iter().map(|p| p.precision).sum::<f64>() / k,
        per.iter().map(|p| p.recall).sum::<f64>() / k,
        per.iter().map(|p| p.f1).sum::<f64>() / k,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub top1: f64,
    pub top2: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f: f64,
    pub confusion: ConfusionMatrix,
}

impl MetricsReport {
    pub const METRIC_NAMES: [&'static str; 5] = ["top1", "top2", "macro_precision", "macro_recall", "macro_f"];

    pub fn scalars(&self) -> [f64; 5] {
        [self.top1, self.top2, self.macro_precision, self.macro_recall, self.macro_f]
    }
}

/// Full report from per-class scores (probabilities or SVM scores).
pub fn evaluate(scores: &[Vec<f64>], truth: &[usize]) -> Result<MetricsReport> {
    let k = scores.first().map(|r| r.len()).unwrap_or(0);
    let pred = argmax_rows(scores);
    let confusion = confusion(truth, &pred, k)?;
    let top1 = topk_accuracy(scores, truth, 1)?;
    let top2 = topk_accuracy(scores, truth, 2.min(k.max(1)))?;
    let (macro_precision, macro_recall, macro_f) = macro_prf(&confusion);
    Ok(MetricsReport {
        top1,
        top2,
        macro_precision,
        macro_recall,
        macro_f,
        confusion,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> MeanStd {
    let n = values.len() as f64;
    if values.is_empty() {
        return MeanStd { mean: 0.0, std: 0.0 };
    }
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    MeanStd { mean, std: var.sqrt() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionSummary {
    pub seeds: Vec<u64>,
    pub reports: Vec<MetricsReport>,
    /// One entry per name in [`MetricsReport::METRIC_NAMES`].
    pub aggregates: Vec<(String, MeanStd)>,
}

impl RepetitionSummary {
    pub fn from_reports(seeds: Vec<u64>, reports: Vec<MetricsReport>) -> Result<Self> {
        if reports.is_empty() {
            return Err(Error::InvalidArgument("at least one repetition required".into()));
        }
        let aggregates = MetricsReport::METRIC_NAMES
            .iter()
            .enumerate()
            .map(|(i, name)| {
                let v: Vec<f64> = reports.iter().map(|r| r.scalars()[i]).collect();
                (name.to_string(), mean_std(&v))
            })
            .collect();
        Ok(Self {
            seeds,
            reports,
            aggregates,
        })
    }

    pub fn get(&self, metric: &str) -> Option<MeanStd> {
        self.aggregates.iter().find(|(n, _)| n == metric).map(|(_, m)| *m)
    }

    /// Per-repetition rows followed by `mean` and `std` rows.
    pub fn to_csv(&self) -> String {
        let mut s = format!("repetition,seed,{}\n", MetricsReport::METRIC_NAMES.join(","));
        for (i, (r, seed)) in self.reports.iter().zip(&self.seeds).enumerate() {
            let vals: Vec<String> = r.scalars().iter().map(|v| format!("{v:.6}")).collect();
            let _ = writeln!(s, "{i},{seed},{}", vals.join(","));
        }
        let means: Vec<String> = self.aggregates.iter().map(|(_, m)| format!("{:.6}", m.mean)).collect();
        let stds: Vec<String> = self.aggregates.iter().map(|(_, m)| format!("{:.6}", m.std)).collect();
        let _ = writeln!(s, "mean,,{}", means.join(","));
        let _ = writeln!(s, "std,,{}", stds.join(","));
        s
    }

    /// Accuracies as percentages with two decimals, in the style of a results table.
    pub fn render_table(&self) -> String {
        let mut s = String::new();
        for (name, m) in &self.aggregates {
            if name.starts_with("top") {
                let _ = writeln!(s, "{name:<16} {:>6.2} ± {:.2} %", 100.0 * m.mean, 100.0 * m.std);
            } else {
                let _ = writeln!(s, "{name:<16} {:>6.4} ± {:.4}", m.mean, m.std);
            }
        }
        s
    }
}

/// Runs `run` with seeds `base_seed .. base_seed + r` (in parallel) and aggregates.
pub fn repeat_protocol<F>(run: F, r: usize, base_seed: u64) -> Result<RepetitionSummary>
where
    F: Fn(u64) -> Result<MetricsReport> + Sync,
{
    if r < 1 {
        return Err(Error::InvalidArgument("at least one repetition required".into()));
    }
    let seeds: Vec<u64> = (0..r as u64).map(|i| base_seed.wrapping_add(i)).collect();
    let reports = seeds.par_iter().map(|&s| run(s)).collect::<Result<Vec<_>>>()?;
    RepetitionSummary::from_reports(seeds, reports)
}
