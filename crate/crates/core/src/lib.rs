//! Fashion cognitive network: tensors, data model, label graph, model,
//! training and evaluation.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod finite_diff;
pub mod gradcheck;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::Tensor;
