//! Keyword correlativity, average keyword popularity and per-owner weights.
//!
//! For owner `i` inside a partition:
//!
//! - `AKP_i[t]` is the owner's total count of keyword `t` divided by the number
//!   of the owner's documents containing `t` (zero when none do).
//! - `W_raw_i = S * AKP_i`, where `S` is the keyword correlativity matrix.
//! - `W_i[t] = W_raw_i[t] / max_j W_raw_j[t]` over the partition's owners.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::linalg::{dot, Matrix};
use crate::partitioning::{CompressedIndex, Partition};
use crate::{DocId, Error, OwnerId, PartitionId, Result};

/// Symmetric keyword-keyword similarity with unit diagonal and entries in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelativityMatrix(Matrix);

impl CorrelativityMatrix {
    /// Validates an externally supplied matrix.
    pub fn from_matrix(m: Matrix) -> Result<Self> {
        if m.rows() != m.cols() {
            return Err(Error::Dimension { expected: m.rows(), actual: m.cols() });
        }
        for i in 0..m.rows() {
            if m.get(i, i) != 1.0 {
                return Err(Error::InvalidParameter("correlativity diagonal must be 1"));
            }
            for j in 0..m.cols() {
                let x = m.get(i, j);
                if !(0.0..=1.0).contains(&x) {
                    return Err(Error::InvalidParameter("correlativity entries must lie in [0, 1]"));
                }
                if x != m.get(j, i) {
                    return Err(Error::InvalidParameter("correlativity matrix must be symmetric"));
                }
            }
        }
        Ok(Self(m))
    }

    pub fn identity(n: usize) -> Self {
        Self(Matrix::identity(n))
    }

    pub fn size(&self) -> usize {
        self.0.rows()
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.0.get(a, b)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }
}

/// Cosine similarity of keyword incidence columns inside one partition.
pub fn build_correlativity(partition: &Partition) -> CorrelativityMatrix {
    let n = partition.width();
    let mut co = Matrix::zeros(n, n);
    for member in &partition.members {
        let ones: Vec<usize> = member.counts.iter().map(|&(l, _)| l).collect();
        for (x, &a) in ones.iter().enumerate() {
            co.set(a, a, co.get(a, a) + 1.0);
            for &b in &ones[x + 1..] {
                co.set(a, b, co.get(a, b) + 1.0);
            }
        }
    }
    let df: Vec<f64> = (0..n).map(|a| co.get(a, a)).collect();
    let mut s = Matrix::identity(n);
    for a in 0..n {
        for b in a + 1..n {
            let c = co.get(a, b);
            let v = if c > 0.0 { (c / libm::sqrt(df[a] * df[b])).min(1.0) } else { 0.0 };
            s.set(a, b, v);
            s.set(b, a, v);
        }
    }
    CorrelativityMatrix(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OwnerWeights {
    pub owner: OwnerId,
    /// Number of the owner's documents containing each keyword.
    pub doc_freq: Vec<u32>,
    pub alpha: Vec<f64>,
    pub akp: Vec<f64>,
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionWeights {
    pub partition: PartitionId,
    pub owners: BTreeMap<OwnerId, OwnerWeights>,
    /// Per-keyword maximum raw weight over owners.
    pub max_raw: Vec<f64>,
}

impl PartitionWeights {
    pub fn owner(&self, owner: OwnerId) -> Option<&[f64]> {
        self.owners.get(&owner).map(|w| w.normalized.as_slice())
    }

    /// Weight vector for a document whose owner has no weights here yet:
    /// the mean of the known owners' normalized weights.
    pub fn fallback(&self) -> Vec<f64> {
        let n = self.max_raw.len();
        let mut out = vec![0.0; n];
        if self.owners.is_empty() {
            return out;
        }
        for w in self.owners.values() {
            for (o, x) in out.iter_mut().zip(&w.normalized) {
                *o += x;
            }
        }
        let k = self.owners.len() as f64;
        out.iter_mut().for_each(|o| *o /= k);
        out
    }

    /// Appends `extra` keyword dimensions. New keywords get weight 1 for
    /// `owner` (it is the only owner holding them) and 0 for everyone else.
    pub fn extend(&mut self, extra: usize, owner: OwnerId) {
        let n = self.max_raw.len() + extra;
        self.max_raw.resize(n, 1.0);
        for w in self.owners.values_mut() {
            let fill = if w.owner == owner { 1.0 } else { 0.0 };
            w.doc_freq.resize(n, 0);
            w.alpha.resize(n, 0.0);
            w.akp.resize(n, fill);
            w.raw.resize(n, fill);
            w.normalized.resize(n, fill);
        }
    }
}

pub fn compute_weights(partition: &Partition, corr: &CorrelativityMatrix) -> Result<PartitionWeights> {
    let n = partition.width();
    if corr.size() != n {
        return Err(Error::Dimension { expected: n, actual: corr.size() });
    }
    let mut by_owner: BTreeMap<OwnerId, Vec<&CompressedIndex>> = BTreeMap::new();
    for m in &partition.members {
        by_owner.entry(m.owner_id).or_default().push(m);
    }
    let mut owners = BTreeMap::new();
    for (owner, docs) in by_owner {
        let mut doc_freq = vec![0u32; n];
        let mut total = vec![0.0; n];
        for d in docs {
            for &(l, c) in &d.counts {
                doc_freq[l] += 1;
                total[l] += f64::from(c);
            }
        }
        let alpha: Vec<f64> = doc_freq.iter().map(|&f| if f > 0 { 1.0 / f64::from(f) } else { 0.0 }).collect();
        let akp: Vec<f64> = total.iter().zip(&alpha).map(|(t, a)| t * a).collect();
        let raw: Vec<f64> = (0..n).map(|t| dot(corr.0.row(t), &akp)).collect();
        owners.insert(owner, OwnerWeights { owner, doc_freq, alpha, akp, raw, normalized: Vec::new() });
    }
    let mut max_raw = vec![0.0f64; n];
    for w in owners.values() {
        for (m, &r) in max_raw.iter_mut().zip(&w.raw) {
            *m = m.max(r);
        }
    }
    for w in owners.values_mut() {
        w.normalized = w.raw.iter().zip(&max_raw).map(|(&r, &m)| if m > 0.0 { r / m } else { 0.0 }).collect();
    }
    Ok(PartitionWeights { partition: partition.id, owners, max_raw })
}

/// A compressed index scaled by its owner's weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedIndex {
    pub doc_id: DocId,
    pub owner_id: OwnerId,
    pub partition: PartitionId,
    pub values: Vec<f64>,
}

/// Elementwise product of a 0/1 vector and a weight vector.
pub fn apply_weights(bits: &[u8], weights: &[f64]) -> Result<Vec<f64>> {
    if bits.len() != weights.len() {
        return Err(Error::Dimension { expected: bits.len(), actual: weights.len() });
    }
    Ok(bits.iter().zip(weights).map(|(&b, &w)| if b == 1 { w } else { 0.0 }).collect())
}

pub fn weight_indexes(partition: &Partition, weights: &PartitionWeights) -> Result<Vec<WeightedIndex>> {
    partition
        .members
        .iter()
        .map(|m| {
            let w = weights.owner(m.owner_id).ok_or(Error::InvalidParameter("owner has no weights in partition"))?;
            Ok(WeightedIndex {
                doc_id: m.doc_id,
                owner_id: m.owner_id,
                partition: partition.id,
                values: apply_weights(&m.bits, w)?,
            })
        })
        .collect()
}
