//! Composed video retrieval over fine-grained action taxonomies.
//!
//! Pipeline: load embedding tables, pair labels by caption similarity,
//! generate (query, modification, target) triplets, train a fusion head
//! with a hard-negative contrastive loss, and score rankings with mAP@K.

// Float guards are written `!(x > 0.0)` on purpose so NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ablation;
pub mod checkpoint;
pub mod cli;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod fixture;
pub mod fusion;
pub mod io;
pub mod linalg;
pub mod loss;
pub mod modification;
pub mod optim;
pub mod par;
pub mod taxonomy;
pub mod trainer;
pub mod tripletgen;

pub use error::{Error, Result};
