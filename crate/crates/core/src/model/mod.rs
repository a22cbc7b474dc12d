//! The fashion cognitive network: outfit encoder, label GCN and dot-product
//! scoring head.

mod encoder;
mod gcn;
mod io;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Outfit};
use crate::error::{Error, Result};
use crate::tensor::{matmul, Tensor};

pub use encoder::{assemble_outfit_tensor, encode_outfit, encode_outfit_backward, Encoding};
pub use gcn::{gcn_backward, gcn_forward, gcn_forward_pass, FinalActivation, GcnPass};
pub use io::{load_model, save_model, MODEL_FORMAT_VERSION};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub window_sizes: Vec<usize>,
    pub kernels_per_filter: usize,
    pub n_max: usize,
    #[serde(rename = "N_a")]
    pub n_attrs: usize,
    #[serde(rename = "d")]
    pub feat_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            window_sizes: vec![1, 2, 4, 6, 8],
            kernels_per_filter: 24,
            n_max: 10,
            n_attrs: 14,
            feat_dim: 512,
        }
    }
}

impl EncoderConfig {
    /// `F = K · |window_sizes|`
    pub fn embedding_dim(&self) -> usize {
        self.kernels_per_filter * self.window_sizes.len()
    }

    fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.window_sizes.is_empty() {
            out.push("encoder.window_sizes must not be empty".into());
        }
        for &h in &self.window_sizes {
            if h == 0 || h > self.n_attrs {
                out.push(format!(
                    "encoder window size {h} must lie in 1..={} (N_a)",
                    self.n_attrs
                ));
            }
        }
        if self.kernels_per_filter == 0 {
            out.push("encoder.kernels_per_filter must be at least 1".into());
        }
        if self.n_max == 0 || self.n_attrs == 0 || self.feat_dim == 0 {
            out.push("encoder n_max, N_a and d must be positive".into());
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GcnConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub num_layers: usize,
    pub final_activation: FinalActivation,
}

impl Default for GcnConfig {
    fn default() -> Self {
        Self {
            input_dim: 100,
            hidden_dim: 200,
            output_dim: 120,
            num_layers: 2,
            final_activation: FinalActivation::Softmax,
        }
    }
}

impl GcnConfig {
    /// `(rows, cols)` of every weight matrix: `C → H → … → H → F`.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.input_dim];
        dims.extend(std::iter::repeat_n(self.hidden_dim, self.num_layers.saturating_sub(1)));
        dims.push(self.output_dim);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub gcn: GcnConfig,
    pub num_labels: usize,
    /// Treat label embeddings as trainable parameters.
    #[serde(default)]
    pub train_embeddings: bool,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = self.encoder.problems();
        let f = self.encoder.embedding_dim();
        if self.gcn.output_dim != f {
            problems.push(format!(
                "gcn.output_dim {} must equal encoder output K·|windows| = {f}",
                self.gcn.output_dim
            ));
        }
        if self.gcn.num_layers == 0 {
            problems.push("gcn.num_layers must be at least 1".into());
        }
        if self.gcn.input_dim == 0 || self.gcn.hidden_dim == 0 {
            problems.push("gcn input and hidden dims must be positive".into());
        }
        if self.num_labels < 2 {
            problems.push("at least 2 labels are required".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    /// Names of trainable tensors in [`ModelParams::trainable`] order.
    pub fn param_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .encoder
            .window_sizes
            .iter()
            .enumerate()
            .map(|(i, h)| format!("encoder.filter[{i}] (h={h})"))
            .collect();
        names.extend((0..self.gcn.num_layers).map(|l| format!("gcn.W{l}")));
        if self.train_embeddings {
            names.push("label_embeddings".into());
        }
        names
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    /// Per window size: `[K × n_max × h × d]`.
    pub filters: Vec<Tensor>,
    pub gcn_weights: Vec<Tensor>,
    /// `N × C` GCN input.
    pub label_embeddings: Tensor,
}

impl ModelParams {
    pub fn trainable(&self, train_embeddings: bool) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = self.filters.iter().chain(&self.gcn_weights).collect();
        if train_embeddings {
            out.push(&self.label_embeddings);
        }
        out
    }

    pub fn trainable_mut(&mut self, train_embeddings: bool) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = self.filters.iter_mut().chain(&mut self.gcn_weights).collect();
        if train_embeddings {
            out.push(&mut self.label_embeddings);
        }
        out
    }

    fn check_shapes(&self, cfg: &ModelConfig) -> Result<()> {
        let enc = &cfg.encoder;
        let mut expected: Vec<Vec<usize>> = enc
            .window_sizes
            .iter()
            .map(|&h| vec![enc.kernels_per_filter, enc.n_max, h, enc.feat_dim])
            .collect();
        expected.extend(cfg.gcn.layer_shapes().into_iter().map(|(r, c)| vec![r, c]));
        expected.push(vec![cfg.num_labels, cfg.gcn.input_dim]);
        let actual: Vec<&Tensor> = self
            .filters
            .iter()
            .chain(&self.gcn_weights)
            .chain(std::iter::once(&self.label_embeddings))
            .collect();
        if actual.len() != expected.len() || actual.iter().zip(&expected).any(|(t, e)| t.shape() != e.as_slice()) {
            return Err(Error::shape(format!(
                "parameter shapes {:?} do not match configuration {:?}",
                actual.iter().map(|t| t.shape()).collect::<Vec<_>>(),
                expected
            )));
        }
        Ok(())
    }
}

fn glorot(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
    let len = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..len).map(|_| dist.sample(rng)).collect()).expect("consistent shape")
}

/// Glorot-uniform filters and GCN weights. Convolution fans count the
/// `h × d` receptive field per input channel (items) and output channel (kernels).
pub fn init_params(cfg: &ModelConfig, label_embeddings: Tensor, seed: u64) -> Result<ModelParams> {
    cfg.validate()?;
    if label_embeddings.shape() != [cfg.num_labels, cfg.gcn.input_dim] {
        return Err(Error::shape(format!(
            "label embeddings {:?}, expected [{}, {}]",
            label_embeddings.shape(),
            cfg.num_labels,
            cfg.gcn.input_dim
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let enc = &cfg.encoder;
    let filters = enc
        .window_sizes
        .iter()
        .map(|&h| {
            let field = h * enc.feat_dim;
            glorot(
                &[enc.kernels_per_filter, enc.n_max, h, enc.feat_dim],
                enc.n_max * field,
                enc.kernels_per_filter * field,
                &mut rng,
            )
        })
        .collect();
    let gcn_weights = cfg
        .gcn
        .layer_shapes()
        .into_iter()
        .map(|(r, c)| glorot(&[r, c], r, c, &mut rng))
        .collect();
    Ok(ModelParams {
        filters,
        gcn_weights,
        label_embeddings,
    })
}

/// `ŷ = Z · g`
pub fn score(z: &Tensor, g: &Tensor) -> Result<Tensor> {
    if z.rank() != 2 || g.rank() != 1 || z.cols() != g.len() {
        return Err(Error::shape(format!(
            "cannot score classifiers {:?} against embedding {:?}",
            z.shape(),
            g.shape()
        )));
    }
    let col = Tensor::matrix(g.len(), 1, g.data().to_vec())?;
    Ok(Tensor::vector(matmul(z, &col)?.into_data()))
}

/// Everything `Fcn::backward` needs from one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    pub input: Tensor,
    pub active: usize,
    pub encoding: Encoding,
    pub gcn: GcnPass,
    pub scores: Tensor,
}

/// Configuration plus parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Fcn {
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl Fcn {
    pub fn new(config: ModelConfig, params: ModelParams) -> Result<Self> {
        config.validate()?;
        params.check_shapes(&config)?;
        Ok(Self { config, params })
    }

    pub fn init(config: ModelConfig, label_embeddings: Tensor, seed: u64) -> Result<Self> {
        let params = init_params(&config, label_embeddings, seed)?;
        Self::new(config, params)
    }

    /// Rejects datasets whose shapes the model cannot consume.
    pub fn check_dataset(&self, dataset: &Dataset) -> Result<()> {
        let enc = &self.config.encoder;
        let mut problems = Vec::new();
        if dataset.n_attrs() != enc.n_attrs || dataset.feat_dim() != enc.feat_dim {
            problems.push(format!(
                "dataset items are {}×{}, model expects {}×{}",
                dataset.n_attrs(),
                dataset.feat_dim(),
                enc.n_attrs,
                enc.feat_dim
            ));
        }
        if dataset.num_labels() != self.config.num_labels {
            problems.push(format!(
                "dataset has {} labels, model has {}",
                dataset.num_labels(),
                self.config.num_labels
            ));
        }
        if dataset.max_outfit_len() > enc.n_max {
            problems.push(format!(
                "dataset has outfits of {} items, model n_max is {}",
                dataset.max_outfit_len(),
                enc.n_max
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    pub fn classifiers(&self, a_hat: &Tensor) -> Result<GcnPass> {
        gcn_forward_pass(
            &self.params.label_embeddings,
            a_hat,
            &self.params.gcn_weights,
            self.config.gcn.final_activation,
        )
    }

    pub fn encode(&self, z: &Tensor, active: usize) -> Result<Encoding> {
        encode_outfit(&self.config.encoder, &self.params.filters, z, active)
    }

    pub fn encode_outfit(&self, outfit: &Outfit, dataset: &Dataset) -> Result<(Tensor, usize, Encoding)> {
        let (z, active) = assemble_outfit_tensor(outfit, dataset, self.config.encoder.n_max)?;
        let enc = self.encode(&z, active)?;
        Ok((z, active, enc))
    }

    /// assemble → encode → GCN → score, keeping intermediates.
    pub fn forward(&self, outfit: &Outfit, dataset: &Dataset, a_hat: &Tensor) -> Result<ForwardPass> {
        let (input, active, encoding) = self.encode_outfit(outfit, dataset)?;
        let gcn = self.classifiers(a_hat)?;
        let scores = score(&gcn.z, &encoding.g)?;
        Ok(ForwardPass {
            input,
            active,
            encoding,
            gcn,
            scores,
        })
    }

    /// Zero tensors shaped like [`ModelParams::trainable`].
    pub fn zero_grads(&self) -> Vec<Tensor> {
        self.params
            .trainable(self.config.train_embeddings)
            .into_iter()
            .map(|t| Tensor::zeros(t.shape()))
            .collect()
    }

    /// Adds `∂L/∂Z` and `∂L/∂g` for scores `ŷ = Z·g` and upstream `∂L/∂ŷ`.
    pub(crate) fn score_backward(z: &Tensor, g: &Tensor, grad_scores: &[f64], grad_z: &mut Tensor) -> Vec<f64> {
        let f = g.len();
        let mut grad_g = vec![0.0; f];
        for (i, &dy) in grad_scores.iter().enumerate() {
            if dy == 0.0 {
                continue;
            }
            crate::tensor::axpy_slice(&mut grad_z.data_mut()[i * f..(i + 1) * f], dy, g.data());
            crate::tensor::axpy_slice(&mut grad_g, dy, z.row(i));
        }
        grad_g
    }

    /// Gradients of `Σ_i grad_scores[i] · ŷ_i` with respect to every trainable
    /// tensor, in [`ModelParams::trainable`] order.
    pub fn backward(&self, pass: &ForwardPass, a_hat: &Tensor, grad_scores: &Tensor) -> Result<Vec<Tensor>> {
        if grad_scores.shape() != pass.scores.shape() {
            return Err(Error::shape(format!(
                "score gradient {:?} for scores {:?}",
                grad_scores.shape(),
                pass.scores.shape()
            )));
        }
        let mut grad_z = Tensor::zeros(pass.gcn.z.shape());
        let grad_g = Self::score_backward(&pass.gcn.z, &pass.encoding.g, grad_scores.data(), &mut grad_z);
        let mut grads = self.zero_grads();
        let n_filters = self.params.filters.len();
        encode_outfit_backward(
            &self.config.encoder,
            &pass.input,
            pass.active,
            &pass.encoding,
            &grad_g,
            &mut grads[..n_filters],
        );
        self.gcn_grads_into(&pass.gcn, a_hat, &grad_z, &mut grads)?;
        Ok(grads)
    }

    pub(crate) fn gcn_grads_into(
        &self,
        pass: &GcnPass,
        a_hat: &Tensor,
        grad_z: &Tensor,
        grads: &mut [Tensor],
    ) -> Result<()> {
        let n_filters = self.params.filters.len();
        let (gw, gx) = gcn_backward(pass, a_hat, &self.params.gcn_weights, grad_z)?;
        for (dst, src) in grads[n_filters..].iter_mut().zip(gw) {
            dst.axpy(1.0, &src)?;
        }
        if self.config.train_embeddings {
            grads.last_mut().expect("embedding slot").axpy(1.0, &gx)?;
        }
        Ok(())
    }
}
