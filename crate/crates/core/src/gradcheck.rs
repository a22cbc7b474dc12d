//! End-to-end gradient check of the training objective on a small synthetic
//! problem.

use serde::{Deserialize, Serialize};

use crate::data::{generate_synthetic, split_dataset, Split, SyntheticConfig};
use crate::error::{Error, Result};
use crate::finite_diff::finite_diff_check_piecewise;
use crate::graph::LabelGraph;
use crate::model::{EncoderConfig, Fcn, FinalActivation, GcnConfig, ModelConfig};
use crate::tensor::Tensor;
use crate::training::{objective, GraphFcn, Trainable};

/// Default pass threshold on the worst relative error of any tensor.
pub const TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckConfig {
    pub model: ModelConfig,
    pub eps: f64,
    pub weight_decay: f64,
    pub batch: usize,
    pub num_outfits: usize,
    pub seed: u64,
    pub tolerance: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            model: tiny_model_config(FinalActivation::Softmax),
            eps: 1e-3,
            weight_decay: 5e-5,
            batch: 4,
            num_outfits: 40,
            seed: 0,
            tolerance: TOLERANCE,
        }
    }
}

/// N=5, C=6, H=4, windows (1,2) × 4 kernels so F=8; N_a=6, d=8, n_max=3.
pub fn tiny_model_config(final_activation: FinalActivation) -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig {
            window_sizes: vec![1, 2],
            kernels_per_filter: 4,
            n_max: 3,
            n_attrs: 6,
            feat_dim: 8,
        },
        gcn: GcnConfig {
            input_dim: 6,
            hidden_dim: 4,
            output_dim: 8,
            num_layers: 2,
            final_activation,
        },
        num_labels: 5,
        train_embeddings: false,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub max_rel_error: f64,
    /// Coordinates left out because their step crossed a kink.
    pub skipped: usize,
    pub passed: bool,
}

/// Test hook: distorts the analytic gradient of the first tensor so the
/// check has something to catch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Corruption {
    #[default]
    None,
    ScaleFirstGradient,
}

pub fn check_gradients(cfg: &GradCheckConfig, corruption: Corruption) -> Result<Vec<TensorCheck>> {
    cfg.model.validate()?;
    if !(cfg.eps > 0.0) || cfg.batch == 0 {
        return Err(Error::Config(vec!["gradcheck eps and batch must be positive".into()]));
    }
    let enc = &cfg.model.encoder;
    let data = generate_synthetic(&SyntheticConfig {
        num_outfits: cfg.num_outfits,
        num_labels: cfg.model.num_labels,
        n_attrs: enc.n_attrs,
        feat_dim: enc.feat_dim,
        embed_dim: cfg.model.gcn.input_dim,
        n_max: enc.n_max,
        seed: cfg.seed,
        ..SyntheticConfig::default()
    })?;
    let ds = split_dataset(data.dataset, [8, 1, 1], cfg.seed)?;
    let train = ds.labelled_indices(Split::Train);
    let graph = LabelGraph::from_labels(
        ds.num_labels(),
        train.iter().map(|&i| ds.outfits()[i].labels.as_slice()),
    )?;
    let batch: Vec<usize> = train.into_iter().take(cfg.batch).collect();
    if batch.is_empty() {
        return Err(Error::Invalid("no labelled outfits to check against".into()));
    }
    let model = GraphFcn {
        model: Fcn::init(cfg.model.clone(), data.embeddings, cfg.seed)?,
        a_hat: &graph.normalized,
    };

    let (_, mut analytic) = objective(&model, &ds, &batch, cfg.weight_decay)?;
    if corruption == Corruption::ScaleFirstGradient {
        analytic[0] = analytic[0].scale(1.5);
    }
    let params: Vec<Tensor> = model.params().into_iter().cloned().collect();
    let mut failure = None;
    let f = |p: &[Tensor]| {
        let mut m = model.clone();
        for (dst, src) in m.params_mut().into_iter().zip(p) {
            *dst = src.clone();
        }
        let eval =
            objective(&m, &ds, &batch, cfg.weight_decay).and_then(|(j, _)| Ok((j, m.activation_pattern(&ds, &batch)?)));
        match eval {
            Ok(v) => (v.0, Some(v.1)),
            Err(e) => {
                failure.get_or_insert(e);
                (f64::NAN, None)
            }
        }
    };
    let report = finite_diff_check_piecewise(f, &params, &analytic, cfg.eps)?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(model
        .param_names()
        .into_iter()
        .zip(report.per_tensor.into_iter().zip(report.skipped))
        .map(|(name, (err, skipped))| TensorCheck {
            name,
            max_rel_error: err,
            skipped,
            passed: err < cfg.tolerance,
        })
        .collect())
}
