//! On-disk dataset layout: `manifest.json`, `features.bin`, optional `embeddings.txt`.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, ItemFeatures, Label, LabelVocabulary, Outfit, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const FEATURES_FILE: &str = "features.bin";
pub const EMBEDDINGS_FILE: &str = "embeddings.txt";

const FEATURES_MAGIC: &[u8; 4] = b"FCNF";
const FALLBACK_EMBEDDING_STD: f64 = 0.1;

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    #[serde(rename = "N_a")]
    n_attrs: usize,
    d: usize,
    #[serde(rename = "C")]
    embed_dim: usize,
    vocabulary: Vec<Label>,
    items: Vec<ManifestItem>,
    outfits: Vec<ManifestOutfit>,
    #[serde(default)]
    split: ManifestSplit,
}

#[derive(Serialize, Deserialize)]
struct ManifestItem {
    item_id: String,
    category: String,
}

#[derive(Serialize, Deserialize)]
struct ManifestOutfit {
    outfit_id: String,
    item_ids: Vec<String>,
    l_f: bool,
    l_p: Vec<usize>,
}

#[derive(Default, Serialize, Deserialize)]
struct ManifestSplit {
    train: Vec<String>,
    val: Vec<String>,
    test: Vec<String>,
}

pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut split = ManifestSplit::default();
    for (i, outfit) in dataset.outfits().iter().enumerate() {
        let bucket = match dataset.split_of(i) {
            Some(Split::Train) => &mut split.train,
            Some(Split::Val) => &mut split.val,
            Some(Split::Test) => &mut split.test,
            None => continue,
        };
        bucket.push(outfit.outfit_id.clone());
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        n_attrs: dataset.n_attrs(),
        d: dataset.feat_dim(),
        embed_dim: dataset.embed_dim(),
        vocabulary: dataset.vocabulary().labels().to_vec(),
        items: dataset
            .items()
            .iter()
            .map(|it| ManifestItem {
                item_id: it.item_id.clone(),
                category: it.category.clone(),
            })
            .collect(),
        outfits: dataset
            .outfits()
            .iter()
            .map(|o| ManifestOutfit {
                outfit_id: o.outfit_id.clone(),
                item_ids: o.item_ids.clone(),
                l_f: o.compatible,
                l_p: o.positive_indices(),
            })
            .collect(),
        split,
    };
    let path = dir.join(MANIFEST_FILE);
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, &manifest).map_err(|e| Error::Json {
        path: path.clone(),
        source: e,
    })?;
    w.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
    w.flush().map_err(|e| Error::io(&path, e))?;

    write_features(dataset, &dir.join(FEATURES_FILE))
}

fn write_features(dataset: &Dataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(FEATURES_MAGIC).map_err(io)?;
    for v in [dataset.items().len(), dataset.n_attrs(), dataset.feat_dim()] {
        w.write_all(&(v as u32).to_le_bytes()).map_err(io)?;
    }
    for item in dataset.items() {
        for &x in item.features.data() {
            w.write_all(&(x as f32).to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.clone(),
        source: e,
    })?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Version {
            found: manifest.format_version,
            expected: FORMAT_VERSION,
        });
    }
    let vocabulary = LabelVocabulary::new(manifest.vocabulary)?;
    let n = vocabulary.len();

    let features = read_features(
        &dir.join(FEATURES_FILE),
        manifest.items.len(),
        manifest.n_attrs,
        manifest.d,
    )?;
    let items = manifest
        .items
        .into_iter()
        .zip(features)
        .map(|(it, features)| ItemFeatures {
            item_id: it.item_id,
            category: it.category,
            features,
        })
        .collect();

    let mut outfits = Vec::with_capacity(manifest.outfits.len());
    for o in manifest.outfits {
        let mut labels = vec![false; n];
        for &j in &o.l_p {
            if j >= n {
                return Err(Error::format(
                    &path,
                    format!("outfit {} has label index {j} outside 0..{n}", o.outfit_id),
                ));
            }
            labels[j] = true;
        }
        outfits.push(Outfit {
            outfit_id: o.outfit_id,
            item_ids: o.item_ids,
            compatible: o.l_f,
            labels,
        });
    }

    let mut dataset = Dataset::new(
        vocabulary,
        manifest.n_attrs,
        manifest.d,
        manifest.embed_dim,
        items,
        outfits,
    )?;

    let position: HashMap<&str, usize> = dataset
        .outfits()
        .iter()
        .enumerate()
        .map(|(i, o)| (o.outfit_id.as_str(), i))
        .collect();
    let mut assignment = vec![None; dataset.outfits().len()];
    for (split, ids) in [
        (Split::Train, &manifest.split.train),
        (Split::Val, &manifest.split.val),
        (Split::Test, &manifest.split.test),
    ] {
        for id in ids {
            let &i = position
                .get(id.as_str())
                .ok_or_else(|| Error::format(&path, format!("split references unknown outfit {id}")))?;
            if assignment[i].replace(split).is_some() {
                return Err(Error::format(&path, format!("outfit {id} is in two splits")));
            }
        }
    }
    dataset.assign_split(assignment)?;
    Ok(dataset)
}

fn read_features(path: &Path, count: usize, n_attrs: usize, dim: usize) -> Result<Vec<Tensor>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut header = [0u8; 16];
    r.read_exact(&mut header).map_err(|e| Error::io(path, e))?;
    if &header[..4] != FEATURES_MAGIC {
        return Err(Error::format(path, "bad magic"));
    }
    let field = |k: usize| u32::from_le_bytes(header[4 + 4 * k..8 + 4 * k].try_into().unwrap()) as usize;
    let (h_count, h_attrs, h_dim) = (field(0), field(1), field(2));
    if (h_count, h_attrs, h_dim) != (count, n_attrs, dim) {
        return Err(Error::shape(format!(
            "{}: header says {h_count} items of {h_attrs}×{h_dim}, manifest says {count} items of {n_attrs}×{dim}",
            path.display()
        )));
    }

    let per_item = n_attrs * dim;
    let mut buf = vec![0u8; per_item * 4];
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        r.read_exact(&mut buf)
            .map_err(|_| Error::shape(format!("{}: truncated feature data", path.display())))?;
        let data = buf
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        out.push(Tensor::matrix(n_attrs, dim, data)?);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::shape(format!(
            "{}: trailing bytes after feature data",
            path.display()
        )));
    }
    Ok(out)
}

/// Label-embedding matrix plus the labels that had to be filled randomly.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelEmbeddings {
    pub matrix: Tensor,
    pub missing: Vec<String>,
}

/// Reads `name v1 … vC` lines into an `N × C` matrix in vocabulary order.
///
/// Labels absent from the file get a seeded `N(0, 0.1²)` row and a warning.
/// A missing file is treated like an empty one.
pub fn load_label_embeddings(
    path: &Path,
    vocabulary: &LabelVocabulary,
    dim: usize,
    seed: u64,
) -> Result<LabelEmbeddings> {
    let mut found: HashMap<String, Vec<f64>> = HashMap::new();
    if path.exists() {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let mut tokens = line.split_whitespace();
            let Some(name) = tokens.next() else { continue };
            let values = tokens
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::format(path, format!("line {}: {e}", lineno + 1)))?;
            if values.len() != dim {
                return Err(Error::format(
                    path,
                    format!(
                        "line {}: vector for {name} has length {}, expected {dim}",
                        lineno + 1,
                        values.len()
                    ),
                ));
            }
            if vocabulary.index_of(name).is_none() {
                log::warn!("embedding for unknown label {name} ignored");
                continue;
            }
            if found.insert(name.to_string(), values).is_some() {
                return Err(Error::format(path, format!("label {name} appears twice")));
            }
        }
    }

    let normal = Normal::new(0.0, FALLBACK_EMBEDDING_STD).expect("valid std");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(vocabulary.len() * dim);
    let mut missing = Vec::new();
    for name in vocabulary.names() {
        match found.get(name) {
            Some(v) => data.extend_from_slice(v),
            None => {
                log::warn!("no embedding for label {name}; using a random vector");
                missing.push(name.to_string());
                data.extend((0..dim).map(|_| normal.sample(&mut rng)));
            }
        }
    }
    Ok(LabelEmbeddings {
        matrix: Tensor::matrix(vocabulary.len(), dim, data)?,
        missing,
    })
}

pub fn save_label_embeddings(path: &Path, vocabulary: &LabelVocabulary, matrix: &Tensor) -> Result<()> {
    if matrix.rank() != 2 || matrix.rows() != vocabulary.len() {
        return Err(Error::shape(format!(
            "embedding matrix {:?} does not match {} labels",
            matrix.shape(),
            vocabulary.len()
        )));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (i, name) in vocabulary.names().enumerate() {
        let mut line = name.to_string();
        for v in matrix.row(i) {
            line.push(' ');
            line.push_str(&v.to_string());
        }
        line.push('\n');
        w.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
