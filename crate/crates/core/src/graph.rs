//! Label co-occurrence graph: conditional-probability adjacency and its
//! symmetric degree normalization.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct LabelGraph {
    /// `counts[i][j]`: outfits where labels i and j both fire; diagonal is the
    /// per-label count.
    pub counts: Vec<Vec<u64>>,
    /// `A[i][j] = P(label j | label i)`, zero diagonal.
    pub adjacency: Tensor,
    /// `D̃^{-1/2} (A + I) D̃^{-1/2}`
    pub normalized: Tensor,
}

impl LabelGraph {
    pub fn from_labels<'a>(num_labels: usize, labels: impl IntoIterator<Item = &'a [bool]>) -> Result<Self> {
        Ok(Self::from_counts(count_cooccurrence(num_labels, labels)?))
    }

    pub fn from_counts(counts: Vec<Vec<u64>>) -> Self {
        let adjacency = build_adjacency(&counts);
        let normalized = normalize_adjacency(&adjacency).expect("adjacency is square");
        Self {
            counts,
            adjacency,
            normalized,
        }
    }

    pub fn num_labels(&self) -> usize {
        self.counts.len()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = GraphFile {
            n: self.num_labels(),
            counts: self.counts.clone(),
            a: self.adjacency.to_rows(),
            a_hat: self.normalized.to_rows(),
        };
        let mut text = serde_json::to_string_pretty(&file).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: GraphFile = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
        let square = |rows: usize, cols: &[usize]| rows == file.n && cols.iter().all(|&c| c == file.n);
        let widths = |m: &[Vec<f64>]| m.iter().map(Vec::len).collect::<Vec<_>>();
        if !square(file.counts.len(), &file.counts.iter().map(Vec::len).collect::<Vec<_>>())
            || !square(file.a.len(), &widths(&file.a))
            || !square(file.a_hat.len(), &widths(&file.a_hat))
        {
            return Err(Error::format(path, format!("matrices are not {0}×{0}", file.n)));
        }
        Ok(Self {
            counts: file.counts,
            adjacency: Tensor::from_rows(&file.a)?,
            normalized: Tensor::from_rows(&file.a_hat)?,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct GraphFile {
    #[serde(rename = "N")]
    n: usize,
    counts: Vec<Vec<u64>>,
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "A_hat")]
    a_hat: Vec<Vec<f64>>,
}

pub fn count_cooccurrence<'a>(
    num_labels: usize,
    labels: impl IntoIterator<Item = &'a [bool]>,
) -> Result<Vec<Vec<u64>>> {
    let mut counts = vec![vec![0u64; num_labels]; num_labels];
    let mut on = Vec::with_capacity(num_labels);
    for row in labels {
        if row.len() != num_labels {
            return Err(Error::shape(format!(
                "label vector of length {} for {num_labels} labels",
                row.len()
            )));
        }
        on.clear();
        on.extend(row.iter().enumerate().filter_map(|(i, &b)| b.then_some(i)));
        for &i in &on {
            for &j in &on {
                counts[i][j] += 1;
            }
        }
    }
    Ok(counts)
}

pub fn build_adjacency(counts: &[Vec<u64>]) -> Tensor {
    let n = counts.len();
    let mut a = Tensor::zeros(&[n, n]);
    for i in 0..n {
        let seen = counts[i][i];
        if seen == 0 {
            continue;
        }
        for j in 0..n {
            if i != j {
                a.set2(i, j, counts[i][j] as f64 / seen as f64);
            }
        }
    }
    a
}

/// Row-sum degrees of `A + I`, applied on both sides.
pub fn normalize_adjacency(a: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || a.rows() != a.cols() {
        return Err(Error::shape(format!("adjacency must be square, got {:?}", a.shape())));
    }
    if a.data().iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::Invalid("adjacency entries must be non-negative".into()));
    }
    let n = a.rows();
    let mut tilde = a.clone();
    for i in 0..n {
        tilde.set2(i, i, a.get2(i, i) + 1.0);
    }
    let inv_sqrt: Vec<f64> = (0..n).map(|i| 1.0 / tilde.row(i).iter().sum::<f64>().sqrt()).collect();
    let mut out = tilde;
    for i in 0..n {
        for j in 0..n {
            let v = out.get2(i, j) * inv_sqrt[i] * inv_sqrt[j];
            out.set2(i, j, v);
        }
    }
    Ok(out)
}
