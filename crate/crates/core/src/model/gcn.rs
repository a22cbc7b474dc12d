//! Stacked GCN that turns label embeddings into per-label classifiers.
//!
//! Each layer computes `Â H W`; ReLU sits between layers and the last layer
//! is optionally wrapped in a row softmax.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{matmul, relu, relu_backward, softmax_rows, softmax_rows_backward, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinalActivation {
    Softmax,
    None,
}

/// Intermediates kept for the backward pass.
#[derive(Clone, Debug)]
pub struct GcnPass {
    /// `Â H_l` for every layer.
    propagated: Vec<Tensor>,
    /// `Â H_l W_l` for every layer.
    pre_activation: Vec<Tensor>,
    activation: FinalActivation,
    /// Classifier matrix `N × F`.
    pub z: Tensor,
}

pub fn gcn_forward_pass(
    x: &Tensor,
    a_hat: &Tensor,
    weights: &[Tensor],
    activation: FinalActivation,
) -> Result<GcnPass> {
    if weights.is_empty() {
        return Err(Error::shape("GCN needs at least one layer"));
    }
    if a_hat.rank() != 2 || a_hat.rows() != a_hat.cols() || a_hat.rows() != x.rows() {
        return Err(Error::shape(format!(
            "normalized adjacency {:?} does not match embeddings {:?}",
            a_hat.shape(),
            x.shape()
        )));
    }
    let mut propagated = Vec::with_capacity(weights.len());
    let mut pre_activation = Vec::with_capacity(weights.len());
    let mut h = x.clone();
    for (l, w) in weights.iter().enumerate() {
        let ah = matmul(a_hat, &h)?;
        let p = matmul(&ah, w)?;
        propagated.push(ah);
        if l + 1 < weights.len() {
            h = relu(&p);
        }
        pre_activation.push(p);
    }
    let last = pre_activation.last().expect("at least one layer");
    let z = match activation {
        FinalActivation::Softmax => softmax_rows(last)?,
        FinalActivation::None => last.clone(),
    };
    Ok(GcnPass {
        propagated,
        pre_activation,
        activation,
        z,
    })
}

impl GcnPass {
    /// Sign pattern of the hidden ReLUs.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let hidden = self.pre_activation.len().saturating_sub(1);
        self.pre_activation[..hidden]
            .iter()
            .flat_map(|t| t.data().iter().map(|&v| v > 0.0))
            .collect()
    }
}

/// `Z = f(X, Â)`.
pub fn gcn_forward(x: &Tensor, a_hat: &Tensor, weights: &[Tensor], activation: FinalActivation) -> Result<Tensor> {
    Ok(gcn_forward_pass(x, a_hat, weights, activation)?.z)
}

/// Returns per-layer weight gradients and the gradient with respect to the
/// label embeddings.
pub fn gcn_backward(
    pass: &GcnPass,
    a_hat: &Tensor,
    weights: &[Tensor],
    grad_z: &Tensor,
) -> Result<(Vec<Tensor>, Tensor)> {
    let mut grad_pre = match pass.activation {
        FinalActivation::Softmax => softmax_rows_backward(&pass.z, grad_z)?,
        FinalActivation::None => grad_z.clone(),
    };
    let a_hat_t = a_hat.transpose()?;
    let mut grad_w = vec![Tensor::zeros(&[0]); weights.len()];
    for l in (0..weights.len()).rev() {
        grad_w[l] = matmul(&pass.propagated[l].transpose()?, &grad_pre)?;
        let grad_prop = matmul(&grad_pre, &weights[l].transpose()?)?;
        let grad_h = matmul(&a_hat_t, &grad_prop)?;
        if l == 0 {
            return Ok((grad_w, grad_h));
        }
        grad_pre = relu_backward(&pass.pre_activation[l - 1], &grad_h)?;
    }
    unreachable!("loop returns at layer 0")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::finite_diff::finite_diff_check;
    use crate::graph::LabelGraph;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let len = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..len).map(|_| StandardNormal.sample(rng)).collect()).unwrap()
    }

    fn hand_graph() -> LabelGraph {
        let labels = [
            vec![true, true, false],
            vec![true, false, false],
            vec![false, true, true],
        ];
        LabelGraph::from_labels(3, labels.iter().map(Vec::as_slice)).unwrap()
    }

    #[test]
    fn single_layer_identity_propagation() {
        let x = Tensor::from_rows(&[vec![1.0, -2.0], vec![-0.5, 3.0]]).unwrap();
        let z = gcn_forward(&x, &Tensor::eye(2), &[Tensor::eye(2)], FinalActivation::None).unwrap();
        // ReLU only separates layers, so a single linear layer passes X through.
        assert_eq!(z, x);
        let nonneg = relu(&x);
        let z = gcn_forward(&nonneg, &Tensor::eye(2), &[Tensor::eye(2)], FinalActivation::None).unwrap();
        assert_eq!(z, relu(&x));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = randn(&[3, 4], &mut rng);
        let w = [randn(&[4, 5], &mut rng), randn(&[5, 6], &mut rng)];
        let z = gcn_forward(&x, &hand_graph().normalized, &w, FinalActivation::Softmax).unwrap();
        for r in 0..3 {
            assert!((z.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn two_layer_ones_hand_case() {
        let a_hat = hand_graph().normalized;
        let w = [Tensor::filled(&[3, 2], 1.0), Tensor::filled(&[2, 2], 1.0)];
        let z = gcn_forward(&Tensor::eye(3), &a_hat, &w, FinalActivation::None).unwrap();
        // Oracle: row i = 2 · (Â · (Â · 1))_i, replicated across both columns.
        let ones = Tensor::matrix(3, 1, vec![1.0; 3]).unwrap();
        let inner = matmul(&a_hat, &ones).unwrap();
        let outer = matmul(&a_hat, &inner).unwrap();
        for i in 0..3 {
            let expected = 2.0 * outer.data()[i];
            assert!((z.get2(i, 0) - expected).abs() < 1e-12);
            assert_eq!(z.get2(i, 0), z.get2(i, 1));
        }
    }

    #[test]
    fn backward_matches_central_differences_for_each_depth() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let a_hat = hand_graph().normalized;
        for (depth, activation) in [
            (1, FinalActivation::None),
            (2, FinalActivation::Softmax),
            (2, FinalActivation::None),
            (3, FinalActivation::Softmax),
        ] {
            let x = randn(&[3, 4], &mut rng);
            let mut dims = vec![4];
            dims.extend(std::iter::repeat_n(5, depth - 1));
            dims.push(3);
            let weights: Vec<Tensor> = dims.windows(2).map(|d| randn(&[d[0], d[1]], &mut rng)).collect();
            let probe = randn(&[3, 3], &mut rng);

            let pass = gcn_forward_pass(&x, &a_hat, &weights, activation).unwrap();
            let (gw, gx) = gcn_backward(&pass, &a_hat, &weights, &probe).unwrap();
            let mut params = weights.clone();
            params.push(x.clone());
            let mut analytic = gw;
            analytic.push(gx);
            let f = |p: &[Tensor]| {
                let (w, x) = p.split_at(depth);
                gcn_forward(&x[0], &a_hat, w, activation).unwrap().dot(&probe).unwrap()
            };
            let report = finite_diff_check(f, &params, &analytic, 1e-5).unwrap();
            assert!(report.max_error() < 1e-5, "depth {depth} {activation:?}: {report:?}");
        }
    }
}
