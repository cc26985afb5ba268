//! Black-box optimization in the discrete latent space of a vector-quantized
//! autoencoder.
//!
//! A gradient-boosted tree ensemble over categorical latent codes is used as a
//! surrogate of the black-box objective. Its prediction is maximized exactly by
//! branch-and-bound over a trust region of the most important latent
//! variables, and the autoencoder is periodically fine-tuned on rank-weighted
//! data so that its distribution drifts toward high-scoring samples.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the command
//! line and anything touching the operating system live in the `treelso`
//! companion crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod catset;
pub mod error;
pub mod eval;
pub mod gbt;
pub mod image;
mod linalg;
pub mod lso;
pub mod qae;
pub mod task;
pub mod treeopt;

pub use catset::CategorySet;
pub use error::{Error, Result};
pub use gbt::{CategoricalDataset, GbtConfig, TreeEnsemble};
pub use image::Image;
pub use lso::{LsoConfig, Objective, QueryRecord, Trajectory, WeightedDataset};
pub use qae::{LatentGrid, QaeConfig, QaeModel};
pub use treeopt::VariableDomain;
