//! Multi-window convolutional outfit encoder.
//!
//! Items are input channels, the attribute axis is the sliding axis and every
//! kernel spans the full feature width. Each kernel's response is max-pooled
//! over positions; `g` lists window sizes in configured order, kernels within.

use super::EncoderConfig;
use crate::data::{Dataset, Outfit};
use crate::error::{Error, Result};
use crate::tensor::{argmax, axpy_slice, conv_window_raw, Tensor};

/// Stacks an outfit's item features into `[n_max × N_a × d]`, zero-padding
/// unused channels. Returns the tensor and the number of filled channels.
pub fn assemble_outfit_tensor(outfit: &Outfit, dataset: &Dataset, n_max: usize) -> Result<(Tensor, usize)> {
    let n = outfit.item_ids.len();
    if n > n_max {
        return Err(Error::shape(format!(
            "outfit {} has {n} items, more than n_max = {n_max}",
            outfit.outfit_id
        )));
    }
    let (n_attrs, dim) = (dataset.n_attrs(), dataset.feat_dim());
    let mut z = Tensor::zeros(&[n_max, n_attrs, dim]);
    for (c, id) in outfit.item_ids.iter().enumerate() {
        let item = dataset.item(id).ok_or_else(|| Error::DanglingItem {
            outfit_id: outfit.outfit_id.clone(),
            item_id: id.clone(),
        })?;
        z.outer_slice_mut(c).copy_from_slice(item.features.data());
    }
    Ok((z, n))
}

/// Outfit embedding with the pooled position of every entry.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoding {
    pub g: Tensor,
    pub argmax: Vec<usize>,
}

pub(crate) fn check_input(cfg: &EncoderConfig, z: &Tensor, active: usize) -> Result<()> {
    let expected = [cfg.n_max, cfg.n_attrs, cfg.feat_dim];
    if z.shape() != expected {
        return Err(Error::shape(format!(
            "encoder input {:?}, expected {:?}",
            z.shape(),
            expected
        )));
    }
    if active > cfg.n_max {
        return Err(Error::shape(format!(
            "{active} active channels exceed n_max {}",
            cfg.n_max
        )));
    }
    Ok(())
}

/// Encodes `z`, reading only its first `active` channels; the rest must be
/// zero padding.
pub fn encode_outfit(cfg: &EncoderConfig, filters: &[Tensor], z: &Tensor, active: usize) -> Result<Encoding> {
    check_input(cfg, z, active)?;
    let k = cfg.kernels_per_filter;
    let mut g = Vec::with_capacity(cfg.embedding_dim());
    let mut arg = Vec::with_capacity(cfg.embedding_dim());
    for (&h, bank) in cfg.window_sizes.iter().zip(filters) {
        let mut responses = vec![0.0; cfg.n_attrs + 1 - h];
        for kernel in 0..k {
            conv_window_raw(
                z.data(),
                cfg.n_attrs,
                cfg.feat_dim,
                bank.outer_slice(kernel),
                h,
                active,
                &mut responses,
            );
            let t = argmax(&responses);
            g.push(responses[t]);
            arg.push(t);
        }
    }
    Ok(Encoding {
        g: Tensor::vector(g),
        argmax: arg,
    })
}

/// Accumulates `∂L/∂filters` given `∂L/∂g` into `grads` (same layout as the
/// filter banks).
pub fn encode_outfit_backward(
    cfg: &EncoderConfig,
    z: &Tensor,
    active: usize,
    encoding: &Encoding,
    grad_g: &[f64],
    grads: &mut [Tensor],
) {
    let k = cfg.kernels_per_filter;
    let plane = cfg.n_attrs * cfg.feat_dim;
    for (w, &h) in cfg.window_sizes.iter().enumerate() {
        let span = h * cfg.feat_dim;
        for kernel in 0..k {
            let e = w * k + kernel;
            let dg = grad_g[e];
            if dg == 0.0 {
                continue;
            }
            let t = encoding.argmax[e];
            let kernel_grad = grads[w].outer_slice_mut(kernel);
            for c in 0..active {
                let start = c * plane + t * cfg.feat_dim;
                axpy_slice(
                    &mut kernel_grad[c * span..(c + 1) * span],
                    dg,
                    &z.data()[start..start + span],
                );
            }
        }
    }
}
