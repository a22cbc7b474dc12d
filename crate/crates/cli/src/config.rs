//! Run configuration: JSON file plus dotted `key=value` overrides.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use fcn_core::data::Dataset;
use fcn_core::model::{EncoderConfig, FinalActivation, GcnConfig, ModelConfig};
use fcn_core::training::TrainConfig;

use crate::ValidationError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSection {
    pub window_sizes: Vec<usize>,
    pub kernels_per_filter: usize,
    pub n_max: usize,
}

impl Default for EncoderSection {
    fn default() -> Self {
        let e = EncoderConfig::default();
        Self {
            window_sizes: e.window_sizes,
            kernels_per_filter: e.kernels_per_filter,
            n_max: e.n_max,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GcnSection {
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub final_activation: FinalActivation,
    pub train_embeddings: bool,
}

impl Default for GcnSection {
    fn default() -> Self {
        let g = GcnConfig::default();
        Self {
            hidden_dim: g.hidden_dim,
            num_layers: g.num_layers,
            final_activation: g.final_activation,
            train_embeddings: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSection {
    pub hidden_dim: usize,
}

impl Default for BaselineSection {
    fn default() -> Self {
        Self { hidden_dim: 64 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub data: Option<PathBuf>,
    pub graph: Option<PathBuf>,
    pub run_dir: Option<PathBuf>,
}

/// Everything a training run needs. Item and label dimensions come from the
/// dataset; `gcn` output width follows from the encoder.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub encoder: EncoderSection,
    pub gcn: GcnSection,
    pub train: TrainConfig,
    pub baseline: BaselineSection,
    pub paths: PathsSection,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        load_json(path)
    }

    pub fn with_overrides(self, overrides: &[String]) -> anyhow::Result<Self> {
        apply_overrides(self, overrides)
    }

    /// Model configuration for `dataset`, or every problem found.
    pub fn model_config(&self, dataset: &Dataset) -> Result<ModelConfig, ValidationError> {
        let cfg = ModelConfig {
            encoder: EncoderConfig {
                window_sizes: self.encoder.window_sizes.clone(),
                kernels_per_filter: self.encoder.kernels_per_filter,
                n_max: self.encoder.n_max,
                n_attrs: dataset.n_attrs(),
                feat_dim: dataset.feat_dim(),
            },
            gcn: GcnConfig {
                input_dim: dataset.embed_dim(),
                hidden_dim: self.gcn.hidden_dim,
                output_dim: self.encoder.kernels_per_filter * self.encoder.window_sizes.len(),
                num_layers: self.gcn.num_layers,
                final_activation: self.gcn.final_activation,
            },
            num_labels: dataset.num_labels(),
            train_embeddings: self.gcn.train_embeddings,
        };
        let mut problems = self.train.problems();
        if let Err(fcn_core::Error::Config(p)) = cfg.validate() {
            problems.extend(p);
        }
        if dataset.max_outfit_len() > cfg.encoder.n_max {
            problems.push(format!(
                "encoder.n_max {} is smaller than the longest outfit ({} items)",
                cfg.encoder.n_max,
                dataset.max_outfit_len()
            ));
        }
        if self.baseline.hidden_dim == 0 {
            problems.push("baseline.hidden_dim must be positive".into());
        }
        if problems.is_empty() {
            Ok(cfg)
        } else {
            Err(ValidationError(problems))
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }
}

/// Applies `a.b.c=value` overrides to any JSON-shaped config. Values parse
/// as JSON when they can and fall back to plain strings. Unknown keys are
/// rejected; all problems are reported together.
pub fn apply_overrides<T: Serialize + DeserializeOwned>(config: T, overrides: &[String]) -> anyhow::Result<T> {
    if overrides.is_empty() {
        return Ok(config);
    }
    let mut tree = serde_json::to_value(&config)?;
    let mut problems = Vec::new();
    for o in overrides {
        let Some((key, raw)) = o.split_once('=') else {
            problems.push(format!("override {o:?} is not key=value"));
            continue;
        };
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        if let Err(e) = set_path(&mut tree, key, value) {
            problems.push(e);
        }
    }
    if !problems.is_empty() {
        return Err(ValidationError(problems).into());
    }
    serde_json::from_value(tree).map_err(|e| ValidationError(vec![format!("override: {e}")]).into())
}

/// Reads a JSON config, or the default when no path is given.
pub fn load_json<T: DeserializeOwned + Default>(path: Option<&Path>) -> anyhow::Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| ValidationError(vec![format!("{}: {e}", path.display())]).into())
}

fn set_path(tree: &mut Value, key: &str, value: Value) -> Result<(), String> {
    let mut node = tree;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let map = node
            .as_object_mut()
            .ok_or_else(|| format!("override key {key:?}: {} is not a section", parts[..i].join(".")))?;
        // Optional paths serialize as null but are still valid keys.
        let entry = map
            .get_mut(*part)
            .ok_or_else(|| format!("unknown configuration key {key:?}"))?;
        if i + 1 == parts.len() {
            *entry = value;
            return Ok(());
        }
        node = entry;
    }
    Err(format!("empty override key {key:?}"))
}

pub fn require(path: &Option<PathBuf>, what: &str) -> anyhow::Result<PathBuf> {
    path.clone().ok_or_else(|| {
        anyhow!(ValidationError(vec![format!(
            "missing {what} path (flag or paths.{what})"
        )]))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reported_settings() {
        let c = RunConfig::default();
        assert_eq!(c.encoder.window_sizes, vec![1, 2, 4, 6, 8]);
        assert_eq!(c.encoder.kernels_per_filter, 24);
        assert_eq!(c.train.batch_size, 10);
        assert_eq!(c.train.lr0, 0.1);
        assert_eq!(c.train.momentum, 0.9);
        assert_eq!(c.train.weight_decay, 5e-5);
        assert_eq!(c.gcn.num_layers, 2);
    }

    #[test]
    fn dotted_overrides() {
        let c = RunConfig::default()
            .with_overrides(&[
                "train.lr0=0.01".into(),
                "encoder.window_sizes=[1,2]".into(),
                "gcn.final_activation=none".into(),
                "paths.data=/tmp/x".into(),
            ])
            .unwrap();
        assert_eq!(c.train.lr0, 0.01);
        assert_eq!(c.encoder.window_sizes, vec![1, 2]);
        assert_eq!(c.gcn.final_activation, FinalActivation::None);
        assert_eq!(c.paths.data, Some(PathBuf::from("/tmp/x")));
    }

    #[test]
    fn bad_overrides_are_all_reported() {
        let err = RunConfig::default()
            .with_overrides(&["train.nope=1".into(), "novalue".into(), "train.lr0.x=1".into()])
            .unwrap_err();
        let v = err.downcast::<ValidationError>().unwrap();
        assert_eq!(v.0.len(), 3, "{v:?}");
    }

    #[test]
    fn round_trips_through_json() {
        let c = RunConfig::default().with_overrides(&["train.seed=7".into()]).unwrap();
        let back: RunConfig = serde_json::from_str(&c.to_json()).unwrap();
        assert_eq!(back, c);
    }
}
