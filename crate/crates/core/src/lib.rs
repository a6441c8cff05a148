//! Multi-owner encrypted ranked keyword search.
//!
//! The crate covers the whole index pipeline a trusted proxy runs on behalf of
//! many data owners, and the search a cloud server runs over the result:
//!
//! - [`corpus`]: tokenization, the global keyword dictionary and binary indexes.
//! - [`partitioning`]: per-owner 2-way splits, L1 k-means into `s` partitions,
//!   dictionary segmentation and zero-dimension compression.
//! - [`weighting`]: keyword correlativity, average keyword popularity and
//!   normalized per-owner weights.
//! - [`padding`]: pseudo-keyword noise, the score discriminator and the
//!   precision/privacy equilibrium sweep.
//! - [`aspe`]: asymmetric scalar-product preserving encryption.
//! - [`forest`]: likelihood-ordered balanced trees, greedy depth-first top-k
//!   search, and dynamic insert/delete.
//! - [`engine`]: the owner / proxy / server / user roles wired together.
//! - [`eval`]: precision, rank privacy, the equilibrium score and the
//!   analytical efficiency and storage ratios.
//! - [`synth`]: seeded synthetic corpora and Zipf query workloads.
//!
//! Everything here is `no_std` + `alloc`; the `std` feature only enables
//! runtime SIMD detection in the matrix kernels.

#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod aspe;
pub mod corpus;
pub mod engine;
mod error;
pub mod eval;
pub mod forest;
pub mod linalg;
pub mod padding;
pub mod partitioning;
pub mod rng;
pub mod synth;
pub mod weighting;

pub use error::{Error, Result};

use core::fmt;
use serde::{Deserialize, Serialize};

/// Corpus-wide document identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DocId(pub u64);

/// Data owner identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct OwnerId(pub u32);

/// Index partition identifier, `0..s`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PartitionId(pub usize);

impl fmt::Display for DocId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for OwnerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for PartitionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}
