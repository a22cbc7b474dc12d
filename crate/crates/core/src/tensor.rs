//! Dense row-major `f64` tensors and the small set of kernels the model uses.
//!
//! Every forward kernel has an explicit backward counterpart. There is no tape:
//! composites (encoder, GCN, loss) call the backward functions themselves.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 4 {
            return Err(Error::shape(format!("unsupported rank {}", shape.len())));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(format!(
                "shape {:?} needs {} elements, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let mut t = Self::zeros(shape);
        t.data.fill(value);
        t
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("ragged rows"));
        }
        Self::matrix(rows.len(), cols, rows.concat())
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn get2(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.shape[1] + j]
    }

    pub fn set2(&mut self, i: usize, j: usize, value: f64) {
        let cols = self.shape[1];
        self.data[i * cols + j] = value;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let cols = self.shape[1];
        &self.data[i * cols..(i + 1) * cols]
    }

    /// Contiguous sub-block along the leading axis.
    pub fn outer_slice(&self, i: usize) -> &[f64] {
        let stride = self.data.len() / self.shape[0];
        &self.data[i * stride..(i + 1) * stride]
    }

    pub fn outer_slice_mut(&mut self, i: usize) -> &mut [f64] {
        let stride = self.data.len() / self.shape[0];
        &mut self.data[i * stride..(i + 1) * stride]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.shape[1]).map(<[f64]>::to_vec).collect()
    }

    pub fn transpose(&self) -> Result<Tensor> {
        require_rank(self, 2, "transpose")?;
        let (m, n) = (self.rows(), self.cols());
        let mut out = Tensor::zeros(&[n, m]);
        for i in 0..m {
            for j in 0..n {
                out.data[j * m + i] = self.data[i * n + j];
            }
        }
        Ok(out)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn scale(&self, alpha: f64) -> Tensor {
        self.map(|x| alpha * x)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        require_same_shape(self, other, "add")?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &Tensor) -> Result<()> {
        require_same_shape(self, other, "axpy")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        require_same_shape(self, other, "dot")?;
        Ok(dot(&self.data, &other.data))
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        require_same_shape(self, other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

fn require_rank(t: &Tensor, rank: usize, op: &str) -> Result<()> {
    if t.rank() != rank {
        return Err(Error::shape(format!(
            "{op} expects rank {rank}, got shape {:?}",
            t.shape
        )));
    }
    Ok(())
}

fn require_same_shape(a: &Tensor, b: &Tensor, op: &str) -> Result<()> {
    if a.shape != b.shape {
        return Err(Error::shape(format!(
            "{op}: shapes {:?} and {:?} differ",
            a.shape, b.shape
        )));
    }
    Ok(())
}

/// Dot product with four independent accumulators.
///
/// Lane assignment depends only on the element index, so two calls over
/// identical operand pairs always round identically.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for k in 0..chunks {
        let i = 4 * k;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub(crate) fn axpy_slice(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (a, b) in y.iter_mut().zip(x) {
        *a += alpha * b;
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows() {
        return Err(Error::shape(format!(
            "matmul: cannot multiply {:?} by {:?}",
            a.shape, b.shape
        )));
    }
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a.data[i * k + p];
            if aip != 0.0 {
                axpy_slice(row, aip, &b.data[p * n..(p + 1) * n]);
            }
        }
    }
    Tensor::matrix(m, n, out)
}

/// Returns `(grad_a, grad_b) = (g·bᵀ, aᵀ·g)`.
pub fn matmul_backward(a: &Tensor, b: &Tensor, grad: &Tensor) -> Result<(Tensor, Tensor)> {
    let grad_a = matmul(grad, &b.transpose()?)?;
    let grad_b = matmul(&a.transpose()?, grad)?;
    Ok((grad_a, grad_b))
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Masks `grad` wherever the forward input was `<= 0`.
pub fn relu_backward(x: &Tensor, grad: &Tensor) -> Result<Tensor> {
    require_same_shape(x, grad, "relu_backward")?;
    let data = x
        .data
        .iter()
        .zip(&grad.data)
        .map(|(&xi, &gi)| if xi > 0.0 { gi } else { 0.0 })
        .collect();
    Tensor::new(x.shape.clone(), data)
}

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

/// Backward through the sigmoid given its forward *output* `s`.
pub fn sigmoid_backward(s: &Tensor, grad: &Tensor) -> Result<Tensor> {
    require_same_shape(s, grad, "sigmoid_backward")?;
    let data = s
        .data
        .iter()
        .zip(&grad.data)
        .map(|(&si, &gi)| gi * si * (1.0 - si))
        .collect();
    Tensor::new(s.shape.clone(), data)
}

pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    require_rank(x, 2, "softmax_rows")?;
    let n = x.cols();
    let mut out = x.data.clone();
    for row in out.chunks_mut(n) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Tensor::new(x.shape.clone(), out)
}

/// Backward through a row softmax given its forward *output* `y`.
pub fn softmax_rows_backward(y: &Tensor, grad: &Tensor) -> Result<Tensor> {
    require_rank(y, 2, "softmax_rows_backward")?;
    require_same_shape(y, grad, "softmax_rows_backward")?;
    let n = y.cols();
    let mut out = vec![0.0; y.len()];
    for ((o, yr), gr) in out.chunks_mut(n).zip(y.data.chunks(n)).zip(grad.data.chunks(n)) {
        let inner = dot(yr, gr);
        for j in 0..n {
            o[j] = yr[j] * (gr[j] - inner);
        }
    }
    Tensor::new(y.shape.clone(), out)
}

/// Sliding full-width dot product over the attribute axis of a
/// `[channels × n_attrs × dim]` volume.
///
/// Only the first `channels` channels of `z` and `filter` are read, so callers
/// can skip known all-zero padding channels.
pub(crate) fn conv_window_raw(
    z: &[f64],
    n_attrs: usize,
    dim: usize,
    filter: &[f64],
    height: usize,
    channels: usize,
    out: &mut [f64],
) {
    let positions = n_attrs + 1 - height;
    debug_assert_eq!(out.len(), positions);
    let span = height * dim;
    out.fill(0.0);
    for c in 0..channels {
        let zc = &z[c * n_attrs * dim..(c + 1) * n_attrs * dim];
        let fc = &filter[c * span..(c + 1) * span];
        for (t, o) in out.iter_mut().enumerate() {
            *o += dot(&zc[t * dim..t * dim + span], fc);
        }
    }
}

fn conv_shapes(z: &Tensor, filter: &Tensor) -> Result<(usize, usize, usize, usize)> {
    if z.rank() != 3 || filter.rank() != 3 {
        return Err(Error::shape(format!(
            "conv_window expects rank-3 input and filter, got {:?} and {:?}",
            z.shape, filter.shape
        )));
    }
    let (channels, n_attrs, dim) = (z.shape[0], z.shape[1], z.shape[2]);
    let height = filter.shape[1];
    if filter.shape[0] != channels || filter.shape[2] != dim {
        return Err(Error::shape(format!(
            "conv_window: filter {:?} does not match input {:?}",
            filter.shape, z.shape
        )));
    }
    if height == 0 || height > n_attrs {
        return Err(Error::shape(format!(
            "conv_window: window height {height} exceeds attribute count {n_attrs}"
        )));
    }
    Ok((channels, n_attrs, dim, height))
}

/// `z: [n × N_a × d]`, `filter: [n × h × d]` → `[N_a − h + 1]`, stride 1, no padding.
pub fn conv_window(z: &Tensor, filter: &Tensor) -> Result<Tensor> {
    let (channels, n_attrs, dim, height) = conv_shapes(z, filter)?;
    let mut out = vec![0.0; n_attrs + 1 - height];
    conv_window_raw(&z.data, n_attrs, dim, &filter.data, height, channels, &mut out);
    Ok(Tensor::vector(out))
}

/// Returns `(grad_z, grad_filter)` for [`conv_window`].
pub fn conv_window_backward(z: &Tensor, filter: &Tensor, grad: &Tensor) -> Result<(Tensor, Tensor)> {
    let (channels, n_attrs, dim, height) = conv_shapes(z, filter)?;
    let positions = n_attrs + 1 - height;
    if grad.shape != [positions] {
        return Err(Error::shape(format!(
            "conv_window_backward: gradient {:?} but output has {positions} positions",
            grad.shape
        )));
    }
    let span = height * dim;
    let mut gz = Tensor::zeros(&z.shape);
    let mut gf = Tensor::zeros(&filter.shape);
    for c in 0..channels {
        let base = c * n_attrs * dim;
        for (t, &g) in grad.data.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let window = base + t * dim;
            axpy_slice(
                &mut gf.data[c * span..(c + 1) * span],
                g,
                &z.data[window..window + span],
            );
            axpy_slice(
                &mut gz.data[window..window + span],
                g,
                &filter.data[c * span..(c + 1) * span],
            );
        }
    }
    Ok((gz, gf))
}

/// First-occurrence argmax, so ties resolve to the lowest index.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Global max over positions; returns the value and the argmax index.
pub fn maxpool_positions(v: &Tensor) -> Result<(f64, usize)> {
    if v.rank() != 1 || v.is_empty() {
        return Err(Error::shape(format!(
            "maxpool_positions expects a non-empty vector, got {:?}",
            v.shape
        )));
    }
    let idx = argmax(&v.data);
    Ok((v.data[idx], idx))
}

pub fn maxpool_backward(len: usize, argmax: usize, grad: f64) -> Tensor {
    let mut out = Tensor::zeros(&[len]);
    out.data[argmax] = grad;
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::finite_diff::finite_diff_check;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let len = shape.iter().product();
        let data = (0..len).map(|_| StandardNormal.sample(rng)).collect();
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    #[test]
    fn new_rejects_inconsistent_length() {
        assert!(matches!(Tensor::new(vec![2, 3], vec![0.0; 5]), Err(Error::Shape(_))));
    }

    #[test]
    fn matmul_identity_and_inner_product() {
        let m = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(matmul(&Tensor::eye(2), &m).unwrap(), m);

        let a = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![3.0], vec![4.0]]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().data(), &[11.0]);
    }

    #[test]
    fn matmul_mismatch_names_both_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        let msg = matmul(&a, &b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]") && msg.matches("[2, 3]").count() == 2, "{msg}");
    }

    #[test]
    fn matmul_backward_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = randn(&[3, 4], &mut rng);
        let b = randn(&[4, 2], &mut rng);
        let w = randn(&[3, 2], &mut rng);
        let (ga, gb) = matmul_backward(&a, &b, &w).unwrap();
        let f = |p: &[Tensor]| matmul(&p[0], &p[1]).unwrap().dot(&w).unwrap();
        let report = finite_diff_check(f, &[a, b], &[ga, gb], 1e-5).unwrap();
        assert!(report.max_error() < 1e-6, "{report:?}");
    }

    #[test]
    fn relu_values_and_mask() {
        let x = Tensor::vector(vec![-1.0, 0.0, 2.0]);
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let neg = Tensor::vector(vec![-3.0, -0.5]);
        assert_eq!(relu(&neg).data(), &[0.0, 0.0]);
        let g = relu_backward(&neg, &Tensor::vector(vec![1.0, 1.0])).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0]);
    }

    #[test]
    fn relu_gradient_away_from_kink() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = randn(&[12], &mut rng).map(|v| if v.abs() < 1e-2 { 0.5 } else { v });
        let w = randn(&[12], &mut rng);
        let analytic = relu_backward(&x, &w).unwrap();
        let f = |p: &[Tensor]| relu(&p[0]).dot(&w).unwrap();
        let report = finite_diff_check(f, &[x], &[analytic], 1e-5).unwrap();
        assert!(report.max_error() < 1e-6, "{report:?}");
    }

    #[test]
    fn sigmoid_values_and_saturation() {
        assert_eq!(sigmoid_scalar(0.0), 0.5);
        let s = sigmoid_scalar(-100.0);
        assert!(s > 0.0 && s < 1e-40);
        assert!(sigmoid_scalar(100.0) <= 1.0);
    }

    #[test]
    fn sigmoid_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = randn(&[10], &mut rng);
        let w = randn(&[10], &mut rng);
        let analytic = sigmoid_backward(&sigmoid(&x), &w).unwrap();
        let f = |p: &[Tensor]| sigmoid(&p[0]).dot(&w).unwrap();
        let report = finite_diff_check(f, &[x], &[analytic], 1e-5).unwrap();
        assert!(report.max_error() < 1e-6, "{report:?}");
    }

    #[test]
    fn softmax_analytic_rows() {
        let z = softmax_rows(&Tensor::zeros(&[1, 4])).unwrap();
        for &v in z.data() {
            assert!((v - 0.25).abs() < 1e-15);
        }
        let x = Tensor::from_rows(&[vec![1f64.ln(), 3f64.ln()]]).unwrap();
        let y = softmax_rows(&x).unwrap();
        assert!((y.data()[0] - 0.25).abs() < 1e-15);
        assert!((y.data()[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn softmax_rows_sum_and_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = randn(&[5, 7], &mut rng);
        let y = softmax_rows(&x).unwrap();
        for r in 0..5 {
            let s: f64 = y.row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        let w = randn(&[5, 7], &mut rng);
        let analytic = softmax_rows_backward(&y, &w).unwrap();
        let f = |p: &[Tensor]| softmax_rows(&p[0]).unwrap().dot(&w).unwrap();
        let report = finite_diff_check(f, &[x], &[analytic], 1e-5).unwrap();
        assert!(report.max_error() < 1e-5, "{report:?}");
    }

    #[test]
    fn softmax_large_inputs_stay_finite() {
        let x = Tensor::from_rows(&[vec![1000.0, 999.0, -1000.0]]).unwrap();
        let y = softmax_rows(&x).unwrap();
        assert!(y.is_finite());
        assert!((y.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn conv_output_length_and_zero_filter() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = randn(&[2, 14, 3], &mut rng);
        let out = conv_window(&z, &Tensor::zeros(&[2, 4, 3])).unwrap();
        assert_eq!(out.shape(), &[11]);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_rejects_tall_window() {
        let z = Tensor::zeros(&[1, 3, 2]);
        assert!(matches!(
            conv_window(&z, &Tensor::zeros(&[1, 4, 2])),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn conv_one_hot_filter_selects_first_column() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z = randn(&[2, 5, 3], &mut rng);
        let mut f = Tensor::zeros(&[2, 2, 3]);
        f.data_mut()[0] = 1.0; // channel 0, window row 0, feature 0
        let out = conv_window(&z, &f).unwrap();
        assert_eq!(out.len(), 4);
        for t in 0..4 {
            assert_eq!(out.data()[t], z.data()[t * 3]);
        }
    }

    #[test]
    fn conv_backward_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let z = randn(&[3, 6, 4], &mut rng);
        let f = randn(&[3, 2, 4], &mut rng);
        let w = randn(&[5], &mut rng);
        let (gz, gf) = conv_window_backward(&z, &f, &w).unwrap();
        let obj = |p: &[Tensor]| conv_window(&p[0], &p[1]).unwrap().dot(&w).unwrap();
        let report = finite_diff_check(obj, &[z, f], &[gz, gf], 1e-5).unwrap();
        assert!(report.max_error() < 1e-6, "{report:?}");
    }

    #[test]
    fn maxpool_value_index_and_ties() {
        assert_eq!(
            maxpool_positions(&Tensor::vector(vec![1.0, 5.0, 3.0])).unwrap(),
            (5.0, 1)
        );
        let (v, idx) = maxpool_positions(&Tensor::vector(vec![2.0; 4])).unwrap();
        assert_eq!((v, idx), (2.0, 0));
        assert_eq!(maxpool_backward(4, idx, 1.5).data(), &[1.5, 0.0, 0.0, 0.0]);
        assert!(maxpool_positions(&Tensor::vector(vec![])).is_err());
    }

    #[test]
    fn pooled_conv_is_shift_invariant_for_isolated_pattern() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (n_attrs, dim, h) = (10, 3, 3);
        let pattern = randn(&[2, dim], &mut rng);
        let filter = randn(&[1, h, dim], &mut rng);
        let place = |row: usize| {
            let mut z = Tensor::zeros(&[1, n_attrs, dim]);
            z.data_mut()[row * dim..(row + 2) * dim].copy_from_slice(pattern.data());
            z
        };
        // Pattern rows r, r+1 need every overlapping window in bounds: r ≥ h−1, r+1 ≤ N_a−h.
        let a = maxpool_positions(&conv_window(&place(2), &filter).unwrap()).unwrap().0;
        let b = maxpool_positions(&conv_window(&place(3), &filter).unwrap()).unwrap().0;
        assert_eq!(a, b);
    }

    fn tensor_strategy(shape: Vec<usize>) -> impl Strategy<Value = Tensor> {
        let len: usize = shape.iter().product();
        proptest::collection::vec(-3.0f64..3.0, len).prop_map(move |d| Tensor::new(shape.clone(), d).unwrap())
    }

    proptest! {
        #[test]
        fn matmul_is_associative(
            a in tensor_strategy(vec![3, 4]),
            b in tensor_strategy(vec![4, 2]),
            c in tensor_strategy(vec![2, 5]),
        ) {
            let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
            let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
            prop_assert!(left.max_abs_diff(&right).unwrap() < 1e-9);
        }

        #[test]
        fn softmax_rows_lie_on_simplex(x in tensor_strategy(vec![4, 6])) {
            let y = softmax_rows(&x.scale(5.0)).unwrap();
            for r in 0..4 {
                let s: f64 = y.row(r).iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-12);
                prop_assert!(y.row(r).iter().all(|&v| v > 0.0 && v < 1.0));
            }
        }

        #[test]
        fn conv_is_linear_in_filter(
            z in tensor_strategy(vec![2, 7, 3]),
            f1 in tensor_strategy(vec![2, 3, 3]),
            f2 in tensor_strategy(vec![2, 3, 3]),
            alpha in -2.0f64..2.0,
            beta in -2.0f64..2.0,
        ) {
            let mut mixed = f1.scale(alpha);
            mixed.axpy(beta, &f2).unwrap();
            let lhs = conv_window(&z, &mixed).unwrap();
            let mut rhs = conv_window(&z, &f1).unwrap().scale(alpha);
            rhs.axpy(beta, &conv_window(&z, &f2).unwrap()).unwrap();
            prop_assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-9);
        }

        #[test]
        fn conv_ignores_filter_on_zero_channel(
            z in tensor_strategy(vec![3, 6, 2]),
            f in tensor_strategy(vec![3, 2, 2]),
            other in tensor_strategy(vec![2, 2]),
        ) {
            let mut z = z;
            z.outer_slice_mut(2).fill(0.0);
            let mut g = f.clone();
            g.outer_slice_mut(2).copy_from_slice(other.data());
            prop_assert_eq!(conv_window(&z, &f).unwrap(), conv_window(&z, &g).unwrap());
        }
    }
}
