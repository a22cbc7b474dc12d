//! Ranking and classification metrics for multi-label scores.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Mean precision at the ranks of positive examples. Examples are sorted by
/// descending score, ties by ascending index. `None` without positives.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len(), "scores and labels differ in length");
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(sum / positives as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PredictionMode {
    /// Positive iff score > 0.
    Threshold,
    /// The three highest-scoring labels of every example.
    Top3,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassificationMetrics {
    pub cp: f64,
    pub cr: f64,
    pub cf1: f64,
    pub op: f64,
    pub or: f64,
    pub of1: f64,
    /// Labels with no predicted positives, left out of CP.
    pub suppressed_precision: usize,
    /// Labels with no true positives, left out of CR.
    pub suppressed_recall: usize,
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Boolean prediction matrix under `mode`.
pub fn predictions(scores: &Tensor, mode: PredictionMode) -> Result<Vec<Vec<bool>>> {
    if scores.rank() != 2 {
        return Err(Error::shape(format!(
            "score matrix must be M×N, got {:?}",
            scores.shape()
        )));
    }
    let n = scores.cols();
    if mode == PredictionMode::Top3 && n < 3 {
        return Err(Error::Invalid(format!("top-3 metrics need at least 3 labels, got {n}")));
    }
    Ok((0..scores.rows())
        .map(|m| {
            let row = scores.row(m);
            match mode {
                PredictionMode::Threshold => row.iter().map(|&s| s > 0.0).collect(),
                PredictionMode::Top3 => {
                    let mut order: Vec<usize> = (0..n).collect();
                    order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
                    let mut out = vec![false; n];
                    for &i in &order[..3] {
                        out[i] = true;
                    }
                    out
                }
            }
        })
        .collect())
}

fn check_labels(scores: &Tensor, labels: &[Vec<bool>]) -> Result<()> {
    if scores.rank() != 2 || labels.len() != scores.rows() || labels.iter().any(|l| l.len() != scores.cols()) {
        return Err(Error::shape(format!(
            "scores {:?} and a {}-row label matrix disagree",
            scores.shape(),
            labels.len()
        )));
    }
    Ok(())
}

pub fn classification_metrics(
    scores: &Tensor,
    labels: &[Vec<bool>],
    mode: PredictionMode,
) -> Result<ClassificationMetrics> {
    check_labels(scores, labels)?;
    let predicted = predictions(scores, mode)?;
    let n = scores.cols();
    let (mut tp, mut fp, mut fn_) = (vec![0usize; n], vec![0usize; n], vec![0usize; n]);
    for (pred, truth) in predicted.iter().zip(labels) {
        for i in 0..n {
            match (pred[i], truth[i]) {
                (true, true) => tp[i] += 1,
                (true, false) => fp[i] += 1,
                (false, true) => fn_[i] += 1,
                (false, false) => {}
            }
        }
    }
    let per_class = |den: &dyn Fn(usize) -> usize| {
        let valid: Vec<usize> = (0..n).filter(|&i| den(i) > 0).collect();
        let mean = if valid.is_empty() {
            0.0
        } else {
            valid.iter().map(|&i| ratio(tp[i], den(i))).sum::<f64>() / valid.len() as f64
        };
        (mean, n - valid.len())
    };
    let (cp, suppressed_precision) = per_class(&|i| tp[i] + fp[i]);
    let (cr, suppressed_recall) = per_class(&|i| tp[i] + fn_[i]);
    let (stp, sfp, sfn): (usize, usize, usize) = (tp.iter().sum(), fp.iter().sum(), fn_.iter().sum());
    let op = ratio(stp, stp + sfp);
    let or = ratio(stp, stp + sfn);
    Ok(ClassificationMetrics {
        cp,
        cr,
        cf1: f1(cp, cr),
        op,
        or,
        of1: f1(op, or),
        suppressed_precision,
        suppressed_recall,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub map: f64,
    /// `None` for labels without positives in the evaluated set.
    pub per_label_ap: Vec<Option<f64>>,
    pub all: ClassificationMetrics,
    pub top3: ClassificationMetrics,
    pub num_examples: usize,
}

/// All metrics for an `M × N` score matrix.
pub fn evaluate_scores(scores: &Tensor, labels: &[Vec<bool>]) -> Result<EvalResult> {
    check_labels(scores, labels)?;
    let (m, n) = (scores.rows(), scores.cols());
    if m == 0 {
        return Err(Error::Invalid("cannot evaluate an empty set".into()));
    }
    let per_label_ap: Vec<Option<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let col: Vec<f64> = (0..m).map(|r| scores.get2(r, i)).collect();
            let truth: Vec<bool> = labels.iter().map(|l| l[i]).collect();
            average_precision(&col, &truth)
        })
        .collect();
    let defined: Vec<f64> = per_label_ap.iter().flatten().copied().collect();
    let skipped = n - defined.len();
    if skipped > 0 {
        log::warn!("{skipped} of {n} labels have no positives; excluded from mAP");
    }
    let map = if defined.is_empty() {
        0.0
    } else {
        defined.iter().sum::<f64>() / defined.len() as f64
    };
    let all = classification_metrics(scores, labels, PredictionMode::Threshold)?;
    let top3 = if n >= 3 {
        classification_metrics(scores, labels, PredictionMode::Top3)?
    } else {
        log::warn!("top-3 metrics need at least 3 labels; reporting zeros");
        ClassificationMetrics {
            cp: 0.0,
            cr: 0.0,
            cf1: 0.0,
            op: 0.0,
            or: 0.0,
            of1: 0.0,
            suppressed_precision: n,
            suppressed_recall: n,
        }
    };
    Ok(EvalResult {
        map,
        per_label_ap,
        all,
        top3,
        num_examples: m,
    })
}

/// Anything that turns outfits into an `M × N` score matrix.
pub trait Predictor: Sync {
    fn predict(&self, dataset: &Dataset, outfits: &[usize]) -> Result<Tensor>;
}

/// Scores the labelled outfits of `split` and computes every metric.
pub fn evaluate(model: &dyn Predictor, dataset: &Dataset, split: Split) -> Result<EvalResult> {
    let indices = dataset.labelled_indices(split);
    if indices.is_empty() {
        return Err(Error::Invalid(format!(
            "{} split has no labelled outfits",
            split.name()
        )));
    }
    let scores = model.predict(dataset, &indices)?;
    let labels: Vec<Vec<bool>> = indices.iter().map(|&i| dataset.outfits()[i].labels.clone()).collect();
    evaluate_scores(&scores, &labels)
}

fn pct(v: f64) -> String {
    format!("{:.2}", v * 100.0)
}

const COLUMNS: [&str; 6] = ["CP", "CR", "CF1", "OP", "OR", "OF1"];

fn columns(c: &ClassificationMetrics) -> [f64; 6] {
    [c.cp, c.cr, c.cf1, c.op, c.or, c.of1]
}

impl EvalResult {
    /// Percentages with two decimals; undefined per-label AP is `null`.
    pub fn to_json(&self, labels: &[String]) -> String {
        let mut s = String::from("{\n");
        let _ = writeln!(s, "  \"mAP\": {},", pct(self.map));
        for (name, v) in COLUMNS.iter().zip(columns(&self.all)) {
            let _ = writeln!(s, "  \"{name}\": {},", pct(v));
        }
        s.push_str("  \"top3\": {\n");
        for (k, (name, v)) in COLUMNS.iter().zip(columns(&self.top3)).enumerate() {
            let sep = if k + 1 < COLUMNS.len() { "," } else { "" };
            let _ = writeln!(s, "    \"{name}\": {}{sep}", pct(v));
        }
        s.push_str("  },\n  \"per_label_AP\": {\n");
        for (k, (name, ap)) in labels.iter().zip(&self.per_label_ap).enumerate() {
            let sep = if k + 1 < labels.len() { "," } else { "" };
            let v = ap.map_or_else(|| "null".to_string(), pct);
            let _ = writeln!(s, "    {}: {v}{sep}", serde_json::Value::from(name.as_str()));
        }
        let _ = writeln!(s, "  }},\n  \"suppressed\": {{");
        let _ = writeln!(
            s,
            "    \"CP\": {},\n    \"CR\": {},\n    \"top3_CP\": {},\n    \"top3_CR\": {}",
            self.all.suppressed_precision,
            self.all.suppressed_recall,
            self.top3.suppressed_precision,
            self.top3.suppressed_recall
        );
        let _ = writeln!(s, "  }},\n  \"num_examples\": {}\n}}", self.num_examples);
        s
    }

    pub fn to_markdown(&self, labels: &[String]) -> String {
        let mut s = String::new();
        s.push_str("| mAP | CP | CR | CF1 | OP | OR | OF1 | Top-3 CP | Top-3 CR | Top-3 CF1 | Top-3 OP | Top-3 OR | Top-3 OF1 |\n");
        s.push_str(&format!("|{}\n", "---:|".repeat(13)));
        let cells: Vec<String> = std::iter::once(self.map)
            .chain(columns(&self.all))
            .chain(columns(&self.top3))
            .map(pct)
            .collect();
        let _ = writeln!(s, "| {} |", cells.join(" | "));
        s.push_str("\n| label | AP |\n|---|---:|\n");
        for (name, ap) in labels.iter().zip(&self.per_label_ap) {
            let _ = writeln!(s, "| {name} | {} |", ap.map_or_else(|| "n/a".to_string(), pct));
        }
        s
    }

    pub fn write(&self, labels: &[String], json: &Path, markdown: &Path) -> Result<()> {
        std::fs::write(json, self.to_json(labels)).map_err(|e| Error::io(json, e))?;
        std::fs::write(markdown, self.to_markdown(labels)).map_err(|e| Error::io(markdown, e))
    }
}
