//! Two-stage index clustering and keyword dictionary segmentation.
//!
//! Each owner's binary indexes are first split into (at most) two initial
//! partitions. The initial partitions' representative vectors are then grouped
//! into `s` final partitions by k-means under the L1 metric with median
//! centroids. Finally every keyword is given to the partition where its
//! document frequency is highest, and each partition's indexes are compressed
//! to that sub-dictionary.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{BinaryIndex, KeywordDictionary};
use crate::linalg::l1_distance;
use crate::{rng, DocId, Error, OwnerId, PartitionId, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialPartition {
    pub members: Vec<(DocId, OwnerId)>,
    /// Mean of the members' bit vectors.
    pub representative: Vec<f64>,
}

/// Splits one owner's index vectors into clusters. Implementations return
/// one or two non-empty groups of positions into `vectors`.
pub trait LocalSplitter {
    fn split(&self, vectors: &[Vec<f64>]) -> Vec<Vec<usize>>;
}

/// 2-means under the L1 metric with component-wise median centers.
#[derive(Debug, Clone, Copy)]
pub struct ManhattanTwoMeans {
    pub max_iter: usize,
}

impl Default for ManhattanTwoMeans {
    fn default() -> Self {
        Self { max_iter: 50 }
    }
}

impl LocalSplitter for ManhattanTwoMeans {
    fn split(&self, vectors: &[Vec<f64>]) -> Vec<Vec<usize>> {
        if vectors.len() < 2 {
            return vec![(0..vectors.len()).collect()];
        }
        // seed with the first vector and the vector farthest from it
        let mut far = 0;
        let mut far_dist = 0.0;
        for (i, v) in vectors.iter().enumerate() {
            let d = l1_distance(&vectors[0], v);
            if d > far_dist {
                far = i;
                far_dist = d;
            }
        }
        if far_dist == 0.0 {
            return vec![(0..vectors.len()).collect()];
        }
        let mut centers = [vectors[0].clone(), vectors[far].clone()];
        let mut assign = vec![usize::MAX; vectors.len()];
        for _ in 0..self.max_iter {
            let next: Vec<usize> = vectors
                .iter()
                .map(|v| usize::from(l1_distance(v, &centers[1]) < l1_distance(v, &centers[0])))
                .collect();
            if next == assign {
                break;
            }
            assign = next;
            for (c, center) in centers.iter_mut().enumerate() {
                let members: Vec<&[f64]> =
                    vectors.iter().zip(&assign).filter(|(_, &a)| a == c).map(|(v, _)| v.as_slice()).collect();
                if !members.is_empty() {
                    *center = median(&members);
                }
            }
        }
        let groups: Vec<Vec<usize>> =
            (0..2).map(|c| (0..vectors.len()).filter(|&i| assign[i] == c).collect()).collect();
        groups.into_iter().filter(|g| !g.is_empty()).collect()
    }
}

/// Component-wise median; even counts take the midpoint of the middle pair.
pub fn median(vectors: &[&[f64]]) -> Vec<f64> {
    let dim = vectors.first().map_or(0, |v| v.len());
    let mut column = Vec::with_capacity(vectors.len());
    (0..dim)
        .map(|j| {
            column.clear();
            column.extend(vectors.iter().map(|v| v[j]));
            column.sort_unstable_by(f64::total_cmp);
            let n = column.len();
            if n % 2 == 1 {
                column[n / 2]
            } else {
                0.5 * (column[n / 2 - 1] + column[n / 2])
            }
        })
        .collect()
}

fn mean(vectors: &[&[f64]]) -> Vec<f64> {
    let dim = vectors.first().map_or(0, |v| v.len());
    let mut out = vec![0.0; dim];
    for v in vectors {
        for (o, x) in out.iter_mut().zip(v.iter()) {
            *o += x;
        }
    }
    let n = vectors.len() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    out
}

fn dense(index: &BinaryIndex) -> Vec<f64> {
    index.bits().iter().map(|&b| f64::from(b)).collect()
}

/// Splits one owner's indexes with the default splitter.
pub fn local_split(owner_indexes: &[&BinaryIndex]) -> Result<Vec<InitialPartition>> {
    local_split_with(&ManhattanTwoMeans::default(), owner_indexes)
}

pub fn local_split_with<S: LocalSplitter + ?Sized>(
    splitter: &S,
    owner_indexes: &[&BinaryIndex],
) -> Result<Vec<InitialPartition>> {
    if owner_indexes.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let vectors: Vec<Vec<f64>> = owner_indexes.iter().map(|i| dense(i)).collect();
    let groups = splitter.split(&vectors);
    Ok(groups
        .into_iter()
        .map(|group| {
            let refs: Vec<&[f64]> = group.iter().map(|&i| vectors[i].as_slice()).collect();
            InitialPartition {
                members: group.iter().map(|&i| (owner_indexes[i].doc_id, owner_indexes[i].owner_id)).collect(),
                representative: mean(&refs),
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy)]
pub struct KMeansConfig {
    pub max_iter: usize,
    pub seed: u64,
}

impl KMeansConfig {
    pub fn new(seed: u64) -> Self {
        Self { max_iter: 100, seed }
    }
}

/// Groups initial partitions into `s` final partitions by L1 k-means with
/// median centroids and k-means++ seeding. Returns the final partition of
/// each initial partition.
pub fn global_cluster(initials: &[InitialPartition], s: usize, config: KMeansConfig) -> Result<Vec<PartitionId>> {
    if s == 0 || s > initials.len() {
        return Err(Error::PartitionCount { s, max: initials.len() });
    }
    let points: Vec<&[f64]> = initials.iter().map(|p| p.representative.as_slice()).collect();
    let mut rng = rng::stream(config.seed, &[rng::label::CLUSTER]);

    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(s);
    let mut chosen = vec![false; points.len()];
    let first = rng.gen_range(0..points.len());
    chosen[first] = true;
    centers.push(points[first].to_vec());
    while centers.len() < s {
        let weights: Vec<f64> = points.iter().map(|p| nearest(p, &centers).1).collect();
        let total: f64 = weights.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = weights.len() - 1;
            for (i, w) in weights.iter().enumerate() {
                if *w > 0.0 && target < *w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            chosen.iter().position(|c| !c).unwrap_or(0)
        };
        chosen[pick] = true;
        centers.push(points[pick].to_vec());
    }

    let mut assign: Vec<usize> = vec![usize::MAX; points.len()];
    for _ in 0..config.max_iter {
        let mut next: Vec<usize> = points.iter().map(|p| nearest(p, &centers).0).collect();
        fill_empty_clusters(&points, &centers, &mut next, s);
        if next == assign {
            break;
        }
        assign = next;
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<&[f64]> = points.iter().zip(&assign).filter(|(_, &a)| a == c).map(|(p, _)| *p).collect();
            *center = median(&members);
        }
    }
    Ok(assign.into_iter().map(PartitionId).collect())
}

/// Moves the point farthest from its center into each empty cluster.
fn fill_empty_clusters(points: &[&[f64]], centers: &[Vec<f64>], assign: &mut [usize], s: usize) {
    for c in 0..s {
        if assign.contains(&c) {
            continue;
        }
        let mut sizes = vec![0usize; s];
        assign.iter().for_each(|&a| sizes[a] += 1);
        let donor = (0..points.len())
            .filter(|&i| sizes[assign[i]] > 1)
            .max_by(|&a, &b| {
                let da = l1_distance(points[a], &centers[assign[a]]);
                let db = l1_distance(points[b], &centers[assign[b]]);
                da.total_cmp(&db).then(b.cmp(&a))
            });
        if let Some(i) = donor {
            assign[i] = c;
        }
    }
}

fn nearest(p: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centers.iter().enumerate() {
        let d = l1_distance(p, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// An index vector restricted to its partition's sub-dictionary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressedIndex {
    pub doc_id: DocId,
    pub owner_id: OwnerId,
    pub bits: Vec<u8>,
    /// `(local dimension, term count)` for set bits.
    pub counts: Vec<(usize, u32)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub id: PartitionId,
    /// Global dictionary dimensions of this sub-dictionary, in local order.
    pub keywords: Vec<usize>,
    #[serde(skip)]
    local: BTreeMap<usize, usize>,
    /// Members, ascending by doc id.
    pub members: Vec<CompressedIndex>,
}

impl Partition {
    pub fn new(id: PartitionId, keywords: Vec<usize>, members: Vec<CompressedIndex>) -> Self {
        let local = keywords.iter().enumerate().map(|(l, &g)| (g, l)).collect();
        Self { id, keywords, local, members }
    }

    /// Rebuilds the global-to-local lookup after deserialization.
    pub fn reindex(&mut self) {
        self.local = self.keywords.iter().enumerate().map(|(l, &g)| (g, l)).collect();
    }

    /// Sub-dictionary size `N_i`.
    pub fn width(&self) -> usize {
        self.keywords.len()
    }

    pub fn local_dim(&self, global: usize) -> Option<usize> {
        self.local.get(&global).copied()
    }

    /// Adds global keyword dimensions at the end of the sub-dictionary and
    /// widens every member with zero bits.
    pub fn extend_keywords(&mut self, globals: &[usize]) {
        for &g in globals {
            if self.local.contains_key(&g) {
                continue;
            }
            self.local.insert(g, self.keywords.len());
            self.keywords.push(g);
        }
        let width = self.keywords.len();
        for m in &mut self.members {
            m.bits.resize(width, 0);
        }
    }

    /// Compresses a full-dictionary index to this partition's dimensions.
    pub fn compress(&self, index: &BinaryIndex) -> CompressedIndex {
        let mut bits = vec![0u8; self.width()];
        let mut counts = Vec::new();
        for &(g, c) in index.counts() {
            if let Some(l) = self.local_dim(g) {
                bits[l] = 1;
                counts.push((l, c));
            }
        }
        counts.sort_unstable();
        CompressedIndex { doc_id: index.doc_id, owner_id: index.owner_id, bits, counts }
    }

    /// Scatters a compressed vector back to `n` global dimensions.
    pub fn scatter(&self, index: &CompressedIndex, n: usize) -> Vec<u8> {
        let mut out = vec![0u8; n];
        for (l, &g) in self.keywords.iter().enumerate() {
            out[g] = index.bits[l];
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSet {
    pub assignments: BTreeMap<DocId, PartitionId>,
    pub partitions: Vec<Partition>,
}

impl PartitionSet {
    pub fn s(&self) -> usize {
        self.partitions.len()
    }

    pub fn partition(&self, id: PartitionId) -> Result<&Partition> {
        self.partitions.get(id.0).ok_or(Error::UnknownPartition(id))
    }

    /// Partition owning a global keyword dimension.
    pub fn home_of(&self, global: usize) -> Option<(PartitionId, usize)> {
        self.partitions.iter().find_map(|p| p.local_dim(global).map(|l| (p.id, l)))
    }
}

/// Assigns each keyword to the partition with its highest document frequency
/// (ties to the lowest id) and compresses every partition's indexes.
pub fn segment_dictionary(
    assignments: &BTreeMap<DocId, PartitionId>,
    indexes: &[BinaryIndex],
    dict: &KeywordDictionary,
    s: usize,
) -> Result<PartitionSet> {
    let n = dict.len();
    let mut df = vec![vec![0u32; n]; s];
    for idx in indexes {
        let p = *assignments.get(&idx.doc_id).ok_or(Error::UnknownDocument(idx.doc_id))?;
        if p.0 >= s {
            return Err(Error::UnknownPartition(p));
        }
        for d in idx.ones() {
            df[p.0][d] += 1;
        }
    }
    let mut keywords = vec![Vec::new(); s];
    for w in 0..n {
        let mut home = None;
        let mut best = 0;
        for (p, counts) in df.iter().enumerate() {
            if counts[w] > best {
                best = counts[w];
                home = Some(p);
            }
        }
        if let Some(p) = home {
            keywords[p].push(w);
        }
    }
    // A partition whose every word is more frequent elsewhere would be empty;
    // give it its most frequent word from a partition that can spare one.
    for p in 0..s {
        if !keywords[p].is_empty() {
            continue;
        }
        let donor = (0..n)
            .filter(|&w| df[p][w] > 0)
            .filter_map(|w| keywords.iter().position(|kw| kw.len() > 1 && kw.contains(&w)).map(|q| (w, q)))
            .max_by_key(|&(w, _)| (df[p][w], core::cmp::Reverse(w)));
        if let Some((w, q)) = donor {
            keywords[q].retain(|&x| x != w);
            keywords[p].push(w);
        }
    }
    let mut partitions: Vec<Partition> =
        keywords.into_iter().enumerate().map(|(p, kw)| Partition::new(PartitionId(p), kw, Vec::new())).collect();
    let mut sorted: Vec<&BinaryIndex> = indexes.iter().collect();
    sorted.sort_by_key(|i| i.doc_id);
    for idx in sorted {
        let p = assignments[&idx.doc_id];
        let compressed = partitions[p.0].compress(idx);
        partitions[p.0].members.push(compressed);
    }
    Ok(PartitionSet { assignments: assignments.clone(), partitions })
}

/// Default partition count: one partition per ~1000 keywords.
pub fn default_partition_count(n: usize) -> usize {
    n.div_ceil(1000).max(1)
}

/// Runs local splitting, global clustering and segmentation.
pub fn partition_corpus(
    indexes: &[BinaryIndex],
    dict: &KeywordDictionary,
    s: usize,
    seed: u64,
) -> Result<PartitionSet> {
    if indexes.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut by_owner: BTreeMap<OwnerId, Vec<&BinaryIndex>> = BTreeMap::new();
    for idx in indexes {
        by_owner.entry(idx.owner_id).or_default().push(idx);
    }
    let mut initials = Vec::new();
    for (_, mut owned) in by_owner {
        owned.sort_by_key(|i| i.doc_id);
        initials.extend(local_split(&owned)?);
    }
    if s == 0 || s > initials.len() {
        return Err(Error::PartitionCount { s, max: initials.len() });
    }
    let finals = global_cluster(&initials, s, KMeansConfig::new(seed))?;
    let mut assignments = BTreeMap::new();
    for (initial, p) in initials.iter().zip(&finals) {
        for &(doc, _) in &initial.members {
            assignments.insert(doc, *p);
        }
    }
    segment_dictionary(&assignments, indexes, dict, s)
}
