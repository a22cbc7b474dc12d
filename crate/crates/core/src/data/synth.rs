//! Synthetic outfit data with planted attribute-window rules.
//!
//! Items come from four category pools (clothing, bag, shoes, accessory) and
//! outfits always fill slots 0..3 with one clothing item, one bag and one pair
//! of shoes, followed by accessories. Every item carries Gaussian noise
//! features; for each planted rule `j`, an item independently receives the
//! rule's signal direction on the rule's attribute window with probability
//! `prior_j`. Label `j` fires for an outfit exactly when the item in the rule's
//! slot projects above half the signal amplitude on that window. Items in other
//! slots carry the same patterns as distractors.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Dataset, ItemFeatures, LabelVocabulary, Outfit, MIN_OUTFIT_ITEMS};
use crate::error::{Error, Result};
use crate::tensor::{dot, Tensor};

/// Share of good outfits in the reference dataset (15,748 of 29,352).
pub const COMPATIBLE_RATE: f64 = 15_748.0 / 29_352.0;

const CATEGORIES: [&str; 4] = ["clothing", "bag", "shoes", "accessory"];
/// Widest attribute window a planted rule may cover.
pub const MAX_RULE_WIDTH: usize = 4;
const EMBEDDING_STD: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub num_outfits: usize,
    pub num_labels: usize,
    /// `N_a`
    pub n_attrs: usize,
    /// `d`
    pub feat_dim: usize,
    /// `C`
    pub embed_dim: usize,
    pub n_max: usize,
    pub seed: u64,
    /// Labels `0..rule_count` follow planted rules; the rest are label noise.
    /// Defaults to every label.
    pub rule_count: Option<usize>,
    /// Item pool size across all categories; defaults to `num_outfits`.
    pub num_items: Option<usize>,
    /// Amplitude added along a rule's direction on each planted row.
    pub signal: f64,
    pub compatible_rate: f64,
    /// Label priors decay geometrically from `max_prior` to `min_prior`.
    pub max_prior: f64,
    pub min_prior: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_outfits: 2000,
            num_labels: 17,
            n_attrs: 14,
            feat_dim: 512,
            embed_dim: 100,
            n_max: 10,
            seed: 0,
            rule_count: None,
            num_items: None,
            signal: 5.0,
            compatible_rate: COMPATIBLE_RATE,
            max_prior: 0.5,
            min_prior: 0.08,
        }
    }
}

impl SyntheticConfig {
    fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.num_outfits == 0 {
            problems.push("num_outfits must be positive".to_string());
        }
        if self.num_labels < 2 {
            problems.push("num_labels must be at least 2".to_string());
        }
        if self.rule_count.is_some_and(|r| r > self.num_labels) {
            problems.push("rule_count cannot exceed num_labels".to_string());
        }
        if self.n_attrs == 0 || self.feat_dim == 0 || self.embed_dim == 0 {
            problems.push("n_attrs, feat_dim and embed_dim must be positive".to_string());
        }
        if self.n_max < MIN_OUTFIT_ITEMS {
            problems.push(format!("n_max must be at least {MIN_OUTFIT_ITEMS}"));
        }
        if !(self.signal > 0.0) {
            problems.push("signal must be positive".to_string());
        }
        if !(0.0..=1.0).contains(&self.compatible_rate) {
            problems.push("compatible_rate must lie in [0, 1]".to_string());
        }
        if !(0.0 < self.min_prior && self.min_prior <= self.max_prior && self.max_prior < 1.0) {
            problems.push("priors must satisfy 0 < min_prior <= max_prior < 1".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    pub fn prior(&self, label: usize) -> f64 {
        if self.num_labels < 2 {
            return self.max_prior;
        }
        let t = label as f64 / (self.num_labels - 1) as f64;
        self.max_prior * (self.min_prior / self.max_prior).powf(t)
    }
}

/// Ground truth for one planted label.
#[derive(Clone, Debug, PartialEq)]
pub struct PlantedRule {
    pub label: usize,
    pub slot: usize,
    pub start: usize,
    pub width: usize,
    /// Unit vector in feature space.
    pub direction: Vec<f64>,
}

impl PlantedRule {
    /// Mean projection of the window rows onto the rule direction.
    pub fn response(&self, features: &Tensor) -> f64 {
        let total: f64 = (self.start..self.start + self.width)
            .map(|r| dot(features.row(r), &self.direction))
            .sum();
        total / self.width as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticData {
    pub dataset: Dataset,
    pub rules: Vec<PlantedRule>,
    /// `N × C` stand-in for word embeddings of the label names.
    pub embeddings: Tensor,
}

pub fn generate_synthetic(config: &SyntheticConfig) -> Result<SyntheticData> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (n_attrs, dim) = (config.n_attrs, config.feat_dim);

    let rules: Vec<PlantedRule> = (0..config.rule_count.unwrap_or(config.num_labels))
        .map(|label| {
            let width = rng.random_range(1..=MAX_RULE_WIDTH.min(n_attrs));
            let start = rng.random_range(0..=n_attrs - width);
            let mut direction: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
            direction.iter_mut().for_each(|v| *v /= norm);
            PlantedRule {
                label,
                slot: label % MIN_OUTFIT_ITEMS,
                start,
                width,
                direction,
            }
        })
        .collect();

    let embeddings = Tensor::matrix(
        config.num_labels,
        config.embed_dim,
        (0..config.num_labels * config.embed_dim)
            .map(|_| {
                let x: f64 = StandardNormal.sample(&mut rng);
                EMBEDDING_STD * x
            })
            .collect(),
    )?;

    let pool_size = (config.num_items.unwrap_or(config.num_outfits) / CATEGORIES.len()).max(config.n_max);
    let mut items = Vec::with_capacity(pool_size * CATEGORIES.len());
    for category in CATEGORIES {
        for k in 0..pool_size {
            let mut data: Vec<f64> = (0..n_attrs * dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            for rule in &rules {
                if rng.random_bool(config.prior(rule.label)) {
                    for r in rule.start..rule.start + rule.width {
                        for (x, u) in data[r * dim..(r + 1) * dim].iter_mut().zip(&rule.direction) {
                            *x += config.signal * u;
                        }
                    }
                }
            }
            // Stored as f32 on disk; keep the in-memory copy identical.
            data.iter_mut().for_each(|x| *x = *x as f32 as f64);
            items.push(ItemFeatures {
                item_id: format!("{category}-{k:05}"),
                category: category.to_string(),
                features: Tensor::matrix(n_attrs, dim, data)?,
            });
        }
    }
    let pool = |c: usize| &items[c * pool_size..(c + 1) * pool_size];

    let threshold = config.signal / 2.0;
    let mut outfits = Vec::with_capacity(config.num_outfits);
    for o in 0..config.num_outfits {
        let len = rng.random_range(MIN_OUTFIT_ITEMS..=config.n_max);
        let mut chosen: Vec<&ItemFeatures> = (0..MIN_OUTFIT_ITEMS)
            .map(|c| &pool(c)[rng.random_range(0..pool_size)])
            .collect();
        let accessories = index::sample(&mut rng, pool_size, len - MIN_OUTFIT_ITEMS);
        chosen.extend(accessories.iter().map(|k| &pool(3)[k]));

        let compatible = rng.random_bool(config.compatible_rate);
        let mut labels = vec![false; config.num_labels];
        for (j, label) in labels.iter_mut().enumerate() {
            let fires = match rules.get(j) {
                Some(rule) => rule.response(&chosen[rule.slot].features) > threshold,
                None => rng.random_bool(config.prior(j)),
            };
            *label = compatible && fires;
        }
        outfits.push(Outfit {
            outfit_id: format!("outfit-{o:05}"),
            item_ids: chosen.iter().map(|it| it.item_id.clone()).collect(),
            compatible,
            labels,
        });
    }

    let vocabulary = LabelVocabulary::with_size(config.num_labels)?;
    let dataset = Dataset::new(vocabulary, n_attrs, dim, config.embed_dim, items, outfits)?;
    Ok(SyntheticData {
        dataset,
        rules,
        embeddings,
    })
}
