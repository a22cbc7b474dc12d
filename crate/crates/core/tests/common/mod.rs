//! Oracles shared by integration tests and the acceptance harness. They are
//! written from the definitions and share no code with the library paths
//! they check.
#![allow(dead_code)]

use fcn_core::data::{Dataset, PlantedRule};

/// `(precision-at-hits mean)` from pairwise rank counts.
pub fn oracle_ap(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let m = scores.len();
    let beats = |j: usize, i: usize| scores[j] > scores[i] || (scores[j] == scores[i] && j < i);
    let positives: Vec<usize> = (0..m).filter(|&i| labels[i]).collect();
    if positives.is_empty() {
        return None;
    }
    let mut total = 0.0;
    for &i in &positives {
        let rank = 1 + (0..m).filter(|&j| j != i && beats(j, i)).count();
        let hits_above = 1 + positives.iter().filter(|&&j| j != i && beats(j, i)).count();
        total += hits_above as f64 / rank as f64;
    }
    Some(total / positives.len() as f64)
}

pub struct OracleMetrics {
    pub map: f64,
    pub threshold: [f64; 6],
    pub top3: [f64; 6],
}

fn oracle_prf(pred: &[Vec<bool>], truth: &[Vec<bool>]) -> [f64; 6] {
    let n = truth[0].len();
    let mut precisions = Vec::new();
    let mut recalls = Vec::new();
    let (mut all_tp, mut all_pred, mut all_true) = (0.0, 0.0, 0.0);
    for l in 0..n {
        let tp = (0..truth.len()).filter(|&r| pred[r][l] && truth[r][l]).count() as f64;
        let predicted = (0..truth.len()).filter(|&r| pred[r][l]).count() as f64;
        let actual = (0..truth.len()).filter(|&r| truth[r][l]).count() as f64;
        if predicted > 0.0 {
            precisions.push(tp / predicted);
        }
        if actual > 0.0 {
            recalls.push(tp / actual);
        }
        all_tp += tp;
        all_pred += predicted;
        all_true += actual;
    }
    let mean = |v: &[f64]| {
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    let harmonic = |p: f64, r: f64| if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    let cp = mean(&precisions);
    let cr = mean(&recalls);
    let op = if all_pred > 0.0 { all_tp / all_pred } else { 0.0 };
    let or = if all_true > 0.0 { all_tp / all_true } else { 0.0 };
    [cp, cr, harmonic(cp, cr), op, or, harmonic(op, or)]
}

/// Every metric straight from its definition. `scores` is row-major `M × N`.
pub fn oracle_metrics(scores: &[Vec<f64>], truth: &[Vec<bool>]) -> OracleMetrics {
    let n = truth[0].len();
    let aps: Vec<f64> = (0..n)
        .filter_map(|l| {
            let col: Vec<f64> = scores.iter().map(|r| r[l]).collect();
            let lab: Vec<bool> = truth.iter().map(|r| r[l]).collect();
            oracle_ap(&col, &lab)
        })
        .collect();
    let map = if aps.is_empty() {
        0.0
    } else {
        aps.iter().sum::<f64>() / aps.len() as f64
    };
    let threshold: Vec<Vec<bool>> = scores.iter().map(|r| r.iter().map(|&s| s > 0.0).collect()).collect();
    let top3: Vec<Vec<bool>> = scores
        .iter()
        .map(|r| {
            (0..n)
                .map(|l| {
                    let above = (0..n).filter(|&k| r[k] > r[l] || (r[k] == r[l] && k < l)).count();
                    above < 3
                })
                .collect()
        })
        .collect();
    OracleMetrics {
        map,
        threshold: oracle_prf(&threshold, truth),
        top3: oracle_prf(&top3, truth),
    }
}

/// Best `(slot, start, width)` for `label` by exhaustive search. For every
/// slot and attribute row, `‖mean(positives) − mean(negatives)‖` measures how
/// much that row moves with the label; a window scores the sum of its rows'
/// shifts minus half the largest shift, so it covers exactly the rows that
/// carry the signal.
pub fn detect_rule(dataset: &Dataset, label: usize, slots: usize, max_width: usize) -> (usize, usize, usize) {
    let outfits: Vec<_> = dataset.outfits().iter().filter(|o| o.compatible).collect();
    let d = dataset.feat_dim();
    let n_attrs = dataset.n_attrs();
    let shift: Vec<Vec<f64>> = (0..slots)
        .map(|slot| {
            (0..n_attrs)
                .map(|r| {
                    let mut pos = vec![0.0; d];
                    let mut neg = vec![0.0; d];
                    let (mut np, mut nn) = (0.0, 0.0);
                    for o in &outfits {
                        let row = dataset.item(&o.item_ids[slot]).unwrap().features.row(r);
                        let (acc, cnt) = if o.labels[label] {
                            (&mut pos, &mut np)
                        } else {
                            (&mut neg, &mut nn)
                        };
                        *cnt += 1.0;
                        for (a, b) in acc.iter_mut().zip(row) {
                            *a += b;
                        }
                    }
                    if np == 0.0 || nn == 0.0 {
                        return 0.0;
                    }
                    pos.iter()
                        .zip(&neg)
                        .map(|(p, q)| (p / np - q / nn).powi(2))
                        .sum::<f64>()
                        .sqrt()
                })
                .collect()
        })
        .collect();
    let floor = 0.5 * shift.iter().flatten().copied().fold(0.0, f64::max);
    let mut best = (f64::NEG_INFINITY, (0, 0, 0));
    for (slot, rows) in shift.iter().enumerate() {
        for width in 1..=max_width.min(n_attrs) {
            for start in 0..=n_attrs - width {
                let score: f64 = rows[start..start + width].iter().map(|s| s - floor).sum();
                if score > best.0 {
                    best = (score, (slot, start, width));
                }
            }
        }
    }
    best.1
}

/// Fraction of rules whose slot and window are recovered exactly.
pub fn rule_recovery(dataset: &Dataset, rules: &[PlantedRule], slots: usize, max_width: usize) -> f64 {
    let hits = rules
        .iter()
        .filter(|r| detect_rule(dataset, r.label, slots, max_width) == (r.slot, r.start, r.width))
        .count();
    hits as f64 / rules.len() as f64
}
