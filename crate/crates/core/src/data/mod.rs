//! Items, outfits, the physical-label vocabulary and the train/val/test split.

mod io;
mod synth;

use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use io::{
    load_dataset, load_label_embeddings, save_dataset, save_label_embeddings, LabelEmbeddings, EMBEDDINGS_FILE,
    FEATURES_FILE, FORMAT_VERSION, MANIFEST_FILE,
};
pub use synth::{generate_synthetic, PlantedRule, SyntheticConfig, SyntheticData, COMPATIBLE_RATE, MAX_RULE_WIDTH};

/// Minimum number of items in an outfit (clothing, bag, shoes).
pub const MIN_OUTFIT_ITEMS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelGroup {
    BodyShape,
    SkinColor,
    HairStyle,
    HairColor,
    Height,
    BreastsSize,
    ColorContrast,
}

impl LabelGroup {
    pub const ALL: [LabelGroup; 7] = [
        LabelGroup::BodyShape,
        LabelGroup::SkinColor,
        LabelGroup::HairStyle,
        LabelGroup::HairColor,
        LabelGroup::Height,
        LabelGroup::BreastsSize,
        LabelGroup::ColorContrast,
    ];
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Label {
    pub name: String,
    pub group: LabelGroup,
}

/// Ordered set of physical labels; a label's position is its index in every
/// score vector and label vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelVocabulary {
    labels: Vec<Label>,
}

impl LabelVocabulary {
    pub fn new(labels: Vec<Label>) -> Result<Self> {
        if labels.len() < 2 {
            return Err(Error::Invalid(format!(
                "vocabulary needs at least 2 labels, got {}",
                labels.len()
            )));
        }
        let mut seen = HashSet::new();
        for label in &labels {
            if label.name.is_empty() || label.name.chars().any(char::is_whitespace) {
                return Err(Error::Invalid(format!(
                    "label name {:?} must be non-empty and free of whitespace",
                    label.name
                )));
            }
            if !seen.insert(label.name.as_str()) {
                return Err(Error::Invalid(format!("duplicate label name {}", label.name)));
            }
        }
        Ok(Self { labels })
    }

    /// The 17 labels evaluated in the reference experiments: the per-label
    /// columns of the body-shape and remaining-attribute result tables.
    pub fn default_o4u() -> Self {
        use LabelGroup::*;
        let table: [(&str, LabelGroup); 17] = [
            ("top-hourglass", BodyShape),
            ("hourglass", BodyShape),
            ("athletics", BodyShape),
            ("inverted-triangle", BodyShape),
            ("triangle", BodyShape),
            ("spoon", BodyShape),
            ("round", BodyShape),
            ("dimension", BodyShape),
            ("skin-yellow", SkinColor),
            ("skin-dark", SkinColor),
            ("skin-brown", SkinColor),
            ("hair-light-brown", HairColor),
            ("hair-grey", HairColor),
            ("height-high", Height),
            ("height-low", Height),
            ("breasts-big", BreastsSize),
            ("contrast-low", ColorContrast),
        ];
        let labels = table
            .iter()
            .map(|&(name, group)| Label {
                name: name.to_string(),
                group,
            })
            .collect();
        Self { labels }
    }

    /// `n` labels. The default vocabulary is used for `n == 17`, generic
    /// names otherwise.
    pub fn with_size(n: usize) -> Result<Self> {
        if n == 17 {
            return Ok(Self::default_o4u());
        }
        let labels = (0..n)
            .map(|i| Label {
                name: format!("label-{i:02}"),
                group: LabelGroup::ALL[i % LabelGroup::ALL.len()],
            })
            .collect();
        Self::new(labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.labels.iter().map(|l| l.name.as_str())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.labels.iter().position(|l| l.name == name)
    }
}

/// One item's `N_a × d` attribute feature matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct ItemFeatures {
    pub item_id: String,
    pub category: String,
    pub features: Tensor,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Outfit {
    pub outfit_id: String,
    pub item_ids: Vec<String>,
    /// Fashion-compatibility flag.
    pub compatible: bool,
    /// `labels[j]` is true when the outfit is incompatible with physical label `j`.
    pub labels: Vec<bool>,
}

impl Outfit {
    pub fn positive_indices(&self) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, &on)| on.then_some(i))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Invalid(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    vocabulary: LabelVocabulary,
    n_attrs: usize,
    feat_dim: usize,
    embed_dim: usize,
    items: Vec<ItemFeatures>,
    item_index: HashMap<String, usize>,
    outfits: Vec<Outfit>,
    split: Vec<Option<Split>>,
}

impl Dataset {
    pub fn new(
        vocabulary: LabelVocabulary,
        n_attrs: usize,
        feat_dim: usize,
        embed_dim: usize,
        items: Vec<ItemFeatures>,
        outfits: Vec<Outfit>,
    ) -> Result<Self> {
        if n_attrs == 0 || feat_dim == 0 || embed_dim == 0 {
            return Err(Error::Invalid("N_a, d and C must be positive".into()));
        }
        let mut item_index = HashMap::with_capacity(items.len());
        for (i, item) in items.iter().enumerate() {
            if item.features.shape() != [n_attrs, feat_dim] {
                return Err(Error::shape(format!(
                    "item {} has features {:?}, expected [{n_attrs}, {feat_dim}]",
                    item.item_id,
                    item.features.shape()
                )));
            }
            if !item.features.is_finite() {
                return Err(Error::Invalid(format!("item {} has non-finite features", item.item_id)));
            }
            if item_index.insert(item.item_id.clone(), i).is_some() {
                return Err(Error::Invalid(format!("duplicate item id {}", item.item_id)));
            }
        }
        let mut outfit_ids = HashSet::with_capacity(outfits.len());
        for outfit in &outfits {
            if !outfit_ids.insert(outfit.outfit_id.as_str()) {
                return Err(Error::Invalid(format!("duplicate outfit id {}", outfit.outfit_id)));
            }
            if outfit.item_ids.len() < MIN_OUTFIT_ITEMS {
                return Err(Error::Invalid(format!(
                    "outfit {} has {} items, minimum is {MIN_OUTFIT_ITEMS}",
                    outfit.outfit_id,
                    outfit.item_ids.len()
                )));
            }
            if let Some(missing) = outfit.item_ids.iter().find(|id| !item_index.contains_key(*id)) {
                return Err(Error::DanglingItem {
                    outfit_id: outfit.outfit_id.clone(),
                    item_id: missing.clone(),
                });
            }
            if outfit.labels.len() != vocabulary.len() {
                return Err(Error::shape(format!(
                    "outfit {} has {} labels, vocabulary has {}",
                    outfit.outfit_id,
                    outfit.labels.len(),
                    vocabulary.len()
                )));
            }
            if !outfit.compatible && outfit.labels.iter().any(|&l| l) {
                return Err(Error::Invalid(format!(
                    "outfit {} is not compatible but carries physical labels",
                    outfit.outfit_id
                )));
            }
        }
        let split = vec![None; outfits.len()];
        Ok(Self {
            vocabulary,
            n_attrs,
            feat_dim,
            embed_dim,
            items,
            item_index,
            outfits,
            split,
        })
    }

    pub fn vocabulary(&self) -> &LabelVocabulary {
        &self.vocabulary
    }

    pub fn num_labels(&self) -> usize {
        self.vocabulary.len()
    }

    /// `N_a`
    pub fn n_attrs(&self) -> usize {
        self.n_attrs
    }

    /// `d`
    pub fn feat_dim(&self) -> usize {
        self.feat_dim
    }

    /// `C`, the label-embedding width.
    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn items(&self) -> &[ItemFeatures] {
        &self.items
    }

    pub fn item(&self, id: &str) -> Option<&ItemFeatures> {
        self.item_index.get(id).map(|&i| &self.items[i])
    }

    pub fn outfits(&self) -> &[Outfit] {
        &self.outfits
    }

    pub fn split_of(&self, outfit: usize) -> Option<Split> {
        self.split[outfit]
    }

    pub fn max_outfit_len(&self) -> usize {
        self.outfits.iter().map(|o| o.item_ids.len()).max().unwrap_or(0)
    }

    /// Indices of outfits assigned to `split`, in dataset order.
    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        (0..self.outfits.len())
            .filter(|&i| self.split[i] == Some(split))
            .collect()
    }

    /// Outfits in `split` that carry a physical-label target (`l_f = true`).
    /// These are the only outfits used for the multi-label loss and metrics.
    pub fn labelled_indices(&self, split: Split) -> Vec<usize> {
        self.split_indices(split)
            .into_iter()
            .filter(|&i| self.outfits[i].compatible)
            .collect()
    }

    pub(crate) fn assign_split(&mut self, split: Vec<Option<Split>>) -> Result<()> {
        if split.len() != self.outfits.len() {
            return Err(Error::Invalid("split assignment length mismatch".into()));
        }
        self.split = split;
        Ok(())
    }
}

/// Shuffles outfits with `seed` and assigns them to train/val/test in
/// proportion to `ratios`, using floor allocation with the remainder going
/// to the largest fractional parts.
pub fn split_dataset(mut dataset: Dataset, ratios: [u32; 3], seed: u64) -> Result<Dataset> {
    if ratios.contains(&0) {
        return Err(Error::Invalid(format!("split ratios must be positive, got {ratios:?}")));
    }
    let m = dataset.outfits.len();
    if m < 3 {
        return Err(Error::Invalid(format!("cannot split {m} outfits into three parts")));
    }
    let sizes = proportional_sizes(m, ratios);
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut assignment = vec![None; m];
    let mut cursor = 0;
    for (split, &size) in Split::ALL.iter().zip(&sizes) {
        for &idx in &order[cursor..cursor + size] {
            assignment[idx] = Some(*split);
        }
        cursor += size;
    }
    dataset.assign_split(assignment)?;
    Ok(dataset)
}

pub(crate) fn proportional_sizes(total: usize, ratios: [u32; 3]) -> [usize; 3] {
    let denom: u64 = ratios.iter().map(|&r| r as u64).sum();
    let mut sizes = [0usize; 3];
    let mut fractions = [0u64; 3];
    for k in 0..3 {
        let num = total as u64 * ratios[k] as u64;
        sizes[k] = (num / denom) as usize;
        fractions[k] = num % denom;
    }
    let mut remainder = total - sizes.iter().sum::<usize>();
    let mut by_fraction = [0usize, 1, 2];
    by_fraction.sort_by(|&a, &b| fractions[b].cmp(&fractions[a]).then(a.cmp(&b)));
    for &k in by_fraction.iter().cycle() {
        if remainder == 0 {
            break;
        }
        sizes[k] += 1;
        remainder -= 1;
    }
    sizes
}
