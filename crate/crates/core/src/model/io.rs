//! `model.bin`: magic `FCNM`, u32 version, u32-length JSON config block, then
//! u32 tensor count and each tensor as u32 rank, u32 dims, f64 little-endian data.
//! Tensor order: filter banks, GCN weights, label embeddings.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Fcn, ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"FCNM";
pub const MODEL_FORMAT_VERSION: u32 = 1;

pub fn save_model(model: &Fcn, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    let config = serde_json::to_vec(&model.config).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&MODEL_FORMAT_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(config.len() as u32).to_le_bytes()).map_err(io)?;
    w.write_all(&config).map_err(io)?;

    let p = &model.params;
    let tensors: Vec<&Tensor> = p
        .filters
        .iter()
        .chain(&p.gcn_weights)
        .chain(std::iter::once(&p.label_embeddings))
        .collect();
    w.write_all(&(tensors.len() as u32).to_le_bytes()).map_err(io)?;
    for t in tensors {
        w.write_all(&(t.rank() as u32).to_le_bytes()).map_err(io)?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes()).map_err(io)?;
        }
        for &v in t.data() {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

fn read_u32(r: &mut impl Read, path: &Path) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| Error::format(path, "unexpected end of file"))?;
    Ok(u32::from_le_bytes(b))
}

pub fn load_model(path: &Path) -> Result<Fcn> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::format(path, "unexpected end of file"))?;
    if &magic != MAGIC {
        return Err(Error::format(path, "bad magic"));
    }
    let version = read_u32(&mut r, path)?;
    if version != MODEL_FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: MODEL_FORMAT_VERSION,
        });
    }
    let len = read_u32(&mut r, path)? as usize;
    let mut config = vec![0u8; len];
    r.read_exact(&mut config)
        .map_err(|_| Error::format(path, "truncated config block"))?;
    let config: ModelConfig = serde_json::from_slice(&config).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;

    let count = read_u32(&mut r, path)? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let rank = read_u32(&mut r, path)? as usize;
        if rank == 0 || rank > 4 {
            return Err(Error::format(path, format!("tensor rank {rank}")));
        }
        let shape = (0..rank)
            .map(|_| read_u32(&mut r, path).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let mut bytes = vec![0u8; len * 8];
        r.read_exact(&mut bytes)
            .map_err(|_| Error::format(path, "truncated tensor data"))?;
        let data = bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        tensors.push(Tensor::new(shape, data)?);
    }

    let n_filters = config.encoder.window_sizes.len();
    let n_layers = config.gcn.num_layers;
    if tensors.len() != n_filters + n_layers + 1 {
        return Err(Error::format(
            path,
            format!(
                "{} tensors stored, configuration needs {}",
                tensors.len(),
                n_filters + n_layers + 1
            ),
        ));
    }
    let label_embeddings = tensors.pop().expect("non-empty");
    let gcn_weights = tensors.split_off(n_filters);
    Fcn::new(
        config,
        ModelParams {
            filters: tensors,
            gcn_weights,
            label_embeddings,
        },
    )
}
