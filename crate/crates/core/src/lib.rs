//! Unsupervised segmentation of triangle-mesh surfaces into textured and
//! non-textured facets.
//!
//! The pipeline runs in stages:
//!
//! 1. [`mesh`] loads and indexes the surface.
//! 2. [`patch`] builds an ordered-ring neighbourhood around every facet and
//!    rasterises geometric descriptors over it into a patch image.
//! 3. [`features`] maps patch images through a frozen extractor and cuts the
//!    resulting vectors into token sequences.
//! 4. [`models`] holds the transformer label generator / label cleaner pair
//!    (and the dense ablation pair), built on the small autograd engine in
//!    [`tensor`].
//! 5. [`trainer`] alternates generator and cleaner over batches and epochs.
//! 6. [`eval`] scores labels against ground truth and provides clustering
//!    baselines and a synthetic textured-mesh generator.
//!
//! [`pipeline`] wires the stages together; [`cli`] exposes them as the
//! `texseg` command.

pub mod cli;
pub mod cluster;
pub mod eval;
pub mod features;
pub mod labels;
pub mod mesh;
pub mod models;
pub mod patch;
pub mod pipeline;
pub mod rng;
pub mod tensor;
pub mod trainer;

mod binfmt;

pub use labels::{Label, LabelState};
pub use mesh::{Adjacency, Mesh};
