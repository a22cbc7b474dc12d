//! Multi-label loss, L2 objective, momentum SGD with exponential decay and
//! early stopping on validation mAP. Also hosts the linear baseline.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, Predictor};
use crate::model::{assemble_outfit_tensor, encode_outfit_backward, score, Fcn};
use crate::tensor::{matmul, Tensor};

/// Improvements at or below this do not reset patience.
pub const MIN_DELTA: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_gamma: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 10,
            lr0: 0.1,
            momentum: 0.9,
            weight_decay: 5e-5,
            lr_gamma: 0.9,
            max_epochs: 200,
            patience: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.batch_size == 0 {
            out.push("train.batch_size must be at least 1".into());
        }
        // lr0 = 0 is allowed: it freezes the parameters.
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) {
            out.push(format!("train.lr0 must be finite and non-negative, got {}", self.lr0));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            out.push(format!("train.momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            out.push(format!(
                "train.weight_decay must be non-negative, got {}",
                self.weight_decay
            ));
        }
        if !(self.lr_gamma > 0.0 && self.lr_gamma <= 1.0) {
            out.push(format!("train.lr_gamma must lie in (0, 1], got {}", self.lr_gamma));
        }
        if self.max_epochs == 0 {
            out.push("train.max_epochs must be at least 1".into());
        }
        if self.patience == 0 {
            out.push("train.patience must be at least 1".into());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p))
        }
    }

    /// `lr0 · lr_gamma^epoch`
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        self.lr0 * self.lr_gamma.powi(epoch as i32)
    }
}

/// `−Σ [y log σ(ŷ) + (1−y) log(1−σ(ŷ))]` and its gradient `σ(ŷ) − y`.
pub fn bce_loss(scores: &Tensor, targets: &Tensor) -> Result<(f64, Tensor)> {
    if scores.shape() != targets.shape() {
        return Err(Error::shape(format!(
            "scores {:?} and targets {:?}",
            scores.shape(),
            targets.shape()
        )));
    }
    if let Some(bad) = targets.data().iter().find(|&&y| y != 0.0 && y != 1.0) {
        return Err(Error::Invalid(format!("targets must be 0 or 1, found {bad}")));
    }
    let mut loss = 0.0;
    let grad = scores
        .data()
        .iter()
        .zip(targets.data())
        .map(|(&s, &y)| {
            // softplus(s) − y·s, with softplus(s) = max(s, 0) + ln(1 + e^{−|s|})
            loss += s.max(0.0) + (-s.abs()).exp().ln_1p() - y * s;
            crate::tensor::sigmoid_scalar(s) - y
        })
        .collect();
    Ok((loss, Tensor::new(scores.shape().to_vec(), grad)?))
}

pub(crate) fn target_vector(labels: &[bool]) -> Tensor {
    Tensor::vector(labels.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect())
}

/// `(λ/2) Σ ‖Θ‖²`
pub fn l2_penalty(params: &[&Tensor], weight_decay: f64) -> f64 {
    0.5 * weight_decay * params.iter().map(|t| t.sum_squares()).sum::<f64>()
}

/// A model the training loop can optimize.
pub trait Trainable: Predictor + Clone + Send {
    fn param_names(&self) -> Vec<String>;
    fn params(&self) -> Vec<&Tensor>;
    fn params_mut(&mut self) -> Vec<&mut Tensor>;
    /// Mean BCE over `batch` and its gradient for every parameter.
    fn data_loss(&self, dataset: &Dataset, batch: &[usize]) -> Result<(f64, Vec<Tensor>)>;
}

/// `J = mean BCE + (λ/2) ‖Θ‖²` and `∂J/∂Θ`.
pub fn objective<M: Trainable>(
    model: &M,
    dataset: &Dataset,
    batch: &[usize],
    weight_decay: f64,
) -> Result<(f64, Vec<Tensor>)> {
    if batch.is_empty() {
        return Err(Error::Invalid("empty batch".into()));
    }
    let (loss, mut grads) = model.data_loss(dataset, batch)?;
    let params = model.params();
    let j = loss + l2_penalty(&params, weight_decay);
    if weight_decay != 0.0 {
        for (g, p) in grads.iter_mut().zip(&params) {
            g.axpy(weight_decay, p)?;
        }
    }
    Ok((j, grads))
}

/// `v ← μv + g`, `Θ ← Θ − lr·v`. Nothing is updated if any gradient is
/// non-finite.
pub fn sgd_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    velocity: &mut [Tensor],
    names: &[String],
    momentum: f64,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || grads.len() != velocity.len() {
        return Err(Error::shape(format!(
            "{} parameters, {} gradients, {} velocities",
            params.len(),
            grads.len(),
            velocity.len()
        )));
    }
    for (k, g) in grads.iter().enumerate() {
        if !g.is_finite() {
            let name = names.get(k).cloned().unwrap_or_else(|| format!("tensor {k}"));
            return Err(Error::NonFinite(format!("gradient of {name}")));
        }
    }
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        if p.shape() != g.shape() || v.shape() != g.shape() {
            return Err(Error::shape(format!(
                "parameter {:?}, gradient {:?}, velocity {:?}",
                p.shape(),
                g.shape(),
                v.shape()
            )));
        }
        for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vv = momentum * *vv + gv;
            *pv -= lr * *vv;
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean batch objective over the epoch.
    pub train_loss: f64,
    pub val_map: f64,
    pub lr: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<M> {
    /// Parameters from the epoch with the highest validation mAP.
    pub model: M,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_map: f64,
}

/// Seeded epoch loop shared by every [`Trainable`] model.
pub fn train_model<M: Trainable>(mut model: M, dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome<M>> {
    cfg.validate()?;
    let train = dataset.labelled_indices(Split::Train);
    if train.is_empty() {
        return Err(Error::Invalid("training split has no labelled outfits".into()));
    }
    if dataset.labelled_indices(Split::Val).is_empty() {
        return Err(Error::Invalid("validation split has no labelled outfits".into()));
    }
    let names = model.param_names();
    let mut velocity: Vec<Tensor> = model.params().iter().map(|t| Tensor::zeros(t.shape())).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order = train;
    let mut history = Vec::new();
    let mut best: Option<(M, usize, f64)> = None;
    let mut reference = f64::NEG_INFINITY;
    let mut stale = 0;

    for epoch in 0..cfg.max_epochs {
        let lr = cfg.learning_rate(epoch);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for batch in order.chunks(cfg.batch_size) {
            let (j, grads) = objective(&model, dataset, batch, cfg.weight_decay)?;
            if !j.is_finite() {
                return Err(Error::NonFinite(format!("objective at epoch {epoch}")));
            }
            sgd_step(&mut model.params_mut(), &grads, &mut velocity, &names, cfg.momentum, lr)?;
            total += j;
            batches += 1;
        }
        let val_map = evaluate(&model, dataset, Split::Val)?.map;
        let train_loss = total / batches as f64;
        log::info!("epoch {epoch}: loss {train_loss:.5} val mAP {val_map:.4} lr {lr:.3e}");
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_map,
            lr,
        });
        if best.as_ref().is_none_or(|(_, _, m)| val_map > *m) {
            best = Some((model.clone(), epoch, val_map));
        }
        if val_map > reference + MIN_DELTA {
            reference = val_map;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                log::info!("no validation improvement for {stale} epochs; stopping");
                break;
            }
        }
    }
    let (model, best_epoch, best_val_map) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
        best_val_map,
    })
}

/// An [`Fcn`] bound to the normalized adjacency it is trained with.
#[derive(Clone, Debug)]
pub struct GraphFcn<'a> {
    pub model: Fcn,
    pub a_hat: &'a Tensor,
}

impl GraphFcn<'_> {
    /// Pooled positions for every outfit in `batch` plus the hidden GCN
    /// ReLU signs: the piece of the piecewise-smooth objective in use.
    pub fn activation_pattern(&self, dataset: &Dataset, batch: &[usize]) -> Result<(Vec<usize>, Vec<bool>)> {
        let mut argmax = Vec::new();
        for &i in batch {
            let (_, _, enc) = self.model.encode_outfit(&dataset.outfits()[i], dataset)?;
            argmax.extend(enc.argmax);
        }
        Ok((argmax, self.model.classifiers(self.a_hat)?.relu_pattern()))
    }
}

impl Predictor for GraphFcn<'_> {
    fn predict(&self, dataset: &Dataset, outfits: &[usize]) -> Result<Tensor> {
        self.model.check_dataset(dataset)?;
        let z = self.model.classifiers(self.a_hat)?.z;
        let rows = outfits
            .par_iter()
            .map(|&i| {
                let (_, _, enc) = self.model.encode_outfit(&dataset.outfits()[i], dataset)?;
                Ok(score(&z, &enc.g)?.into_data())
            })
            .collect::<Result<Vec<_>>>()?;
        Tensor::matrix(outfits.len(), z.rows(), rows.concat())
    }
}

impl Trainable for GraphFcn<'_> {
    fn param_names(&self) -> Vec<String> {
        self.model.config.param_names()
    }

    fn params(&self) -> Vec<&Tensor> {
        self.model.params.trainable(self.model.config.train_embeddings)
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.model.params.trainable_mut(self.model.config.train_embeddings)
    }

    fn data_loss(&self, dataset: &Dataset, batch: &[usize]) -> Result<(f64, Vec<Tensor>)> {
        let fcn = &self.model;
        let gcn = fcn.classifiers(self.a_hat)?;
        let n_max = fcn.config.encoder.n_max;
        // Encoding is the expensive part and runs in parallel; accumulation
        // below stays sequential so sums are order-stable.
        let encoded = batch
            .par_iter()
            .map(|&i| {
                let outfit = &dataset.outfits()[i];
                let (z, active) = assemble_outfit_tensor(outfit, dataset, n_max)?;
                let enc = fcn.encode(&z, active)?;
                Ok((z, active, enc))
            })
            .collect::<Result<Vec<_>>>()?;

        let scale = 1.0 / batch.len() as f64;
        let mut grads = fcn.zero_grads();
        let mut grad_z = Tensor::zeros(gcn.z.shape());
        let n_filters = fcn.params.filters.len();
        let mut loss = 0.0;
        for (&i, (z, active, enc)) in batch.iter().zip(&encoded) {
            let scores = score(&gcn.z, &enc.g)?;
            let (l, dscores) = bce_loss(&scores, &target_vector(&dataset.outfits()[i].labels))?;
            loss += l * scale;
            let dscores = dscores.scale(scale);
            let grad_g = Fcn::score_backward(&gcn.z, &enc.g, dscores.data(), &mut grad_z);
            encode_outfit_backward(&fcn.config.encoder, z, *active, enc, &grad_g, &mut grads[..n_filters]);
        }
        fcn.gcn_grads_into(&gcn, self.a_hat, &grad_z, &mut grads)?;
        Ok((loss, grads))
    }
}

/// Trains `model` against the graph `a_hat`.
pub fn train(model: Fcn, a_hat: &Tensor, dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome<Fcn>> {
    model.check_dataset(dataset)?;
    let out = train_model(GraphFcn { model, a_hat }, dataset, cfg)?;
    Ok(TrainOutcome {
        model: out.model.model,
        history: out.history,
        best_epoch: out.best_epoch,
        best_val_map: out.best_val_map,
    })
}

/// `ŷ = W₂ · ReLU(W₁ · x̄)` where `x̄` averages all attribute rows of all items.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearBaseline {
    /// `H × d`
    pub w1: Tensor,
    /// `N × H`
    pub w2: Tensor,
}

impl LinearBaseline {
    pub fn init(feat_dim: usize, hidden: usize, num_labels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut glorot = |rows: usize, cols: usize| {
            let limit = (6.0 / (rows + cols) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
            Tensor::matrix(rows, cols, (0..rows * cols).map(|_| dist.sample(&mut rng)).collect())
                .expect("consistent shape")
        };
        let w1 = glorot(hidden, feat_dim);
        let w2 = glorot(num_labels, hidden);
        Self { w1, w2 }
    }

    pub fn mean_features(dataset: &Dataset, outfit: usize) -> Result<Tensor> {
        let outfit = &dataset.outfits()[outfit];
        let d = dataset.feat_dim();
        let mut x = vec![0.0; d];
        let mut rows = 0usize;
        for id in &outfit.item_ids {
            let item = dataset.item(id).ok_or_else(|| Error::DanglingItem {
                outfit_id: outfit.outfit_id.clone(),
                item_id: id.clone(),
            })?;
            for row in item.features.data().chunks_exact(d) {
                crate::tensor::axpy_slice(&mut x, 1.0, row);
                rows += 1;
            }
        }
        let inv = 1.0 / rows.max(1) as f64;
        Tensor::matrix(d, 1, x.into_iter().map(|v| v * inv).collect())
    }

    fn forward(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let pre = matmul(&self.w1, x)?;
        let y = matmul(&self.w2, &crate::tensor::relu(&pre))?;
        Ok((pre, y))
    }
}

impl Predictor for LinearBaseline {
    fn predict(&self, dataset: &Dataset, outfits: &[usize]) -> Result<Tensor> {
        if dataset.feat_dim() != self.w1.cols() || dataset.num_labels() != self.w2.rows() {
            return Err(Error::shape("dataset does not match the baseline's dimensions"));
        }
        let rows = outfits
            .par_iter()
            .map(|&i| Ok(self.forward(&Self::mean_features(dataset, i)?)?.1.into_data()))
            .collect::<Result<Vec<_>>>()?;
        Tensor::matrix(outfits.len(), self.w2.rows(), rows.concat())
    }
}

impl Trainable for LinearBaseline {
    fn param_names(&self) -> Vec<String> {
        vec!["baseline.W1".into(), "baseline.W2".into()]
    }

    fn params(&self) -> Vec<&Tensor> {
        vec![&self.w1, &self.w2]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.w1, &mut self.w2]
    }

    fn data_loss(&self, dataset: &Dataset, batch: &[usize]) -> Result<(f64, Vec<Tensor>)> {
        let scale = 1.0 / batch.len() as f64;
        let mut g1 = Tensor::zeros(self.w1.shape());
        let mut g2 = Tensor::zeros(self.w2.shape());
        let mut loss = 0.0;
        for &i in batch {
            let x = Self::mean_features(dataset, i)?;
            let (pre, y) = self.forward(&x)?;
            let y = Tensor::vector(y.into_data());
            let (l, dy) = bce_loss(&y, &target_vector(&dataset.outfits()[i].labels))?;
            loss += l * scale;
            let dy = Tensor::matrix(dy.len(), 1, dy.scale(scale).into_data())?;
            let h = crate::tensor::relu(&pre);
            g2.axpy(1.0, &matmul(&dy, &h.transpose()?)?)?;
            let dh = matmul(&self.w2.transpose()?, &dy)?;
            let dpre = crate::tensor::relu_backward(&pre, &dh)?;
            g1.axpy(1.0, &matmul(&dpre, &x.transpose()?)?)?;
        }
        Ok((loss, vec![g1, g2]))
    }
}

pub fn train_linear_baseline(
    dataset: &Dataset,
    hidden: usize,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<LinearBaseline>> {
    let model = LinearBaseline::init(dataset.feat_dim(), hidden, dataset.num_labels(), cfg.seed);
    train_model(model, dataset, cfg)
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,train_loss,val_mAP,lr\n");
    for r in history {
        let _ = writeln!(s, "{},{},{},{}", r.epoch, r.train_loss, r.val_map, r.lr);
    }
    s
}

pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    std::fs::write(path, history_csv(history)).map_err(|e| Error::io(path, e))
}
