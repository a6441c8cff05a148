//! Likelihood-ordered balanced index trees and greedy depth-first top-k search.
//!
//! A tree is built bottom-up from leaves laid out in descending order of their
//! accumulated score against a set of random probe queries. Each internal node
//! stores the elementwise maximum of its children, so for any non-negative
//! query its score bounds every leaf below it and subtrees can be pruned once
//! the per-tree candidate list is full.
//!
//! Trees live in an arena. The plaintext tree (held by the proxy) and the
//! encrypted tree (held by the server) share slot numbers, which lets an
//! update re-encrypt only the nodes it touched.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use rand::distributions::{Distribution, WeightedIndex};
use serde::{Deserialize, Serialize};

use crate::aspe::{self, EncryptedVector, PartitionKey, Trapdoor};
use crate::linalg::{dot, max_into};
use crate::{rng, DocId, Error, PartitionId, Result};

/// Scores are rounded to multiples of this before ranking so that equal
/// plaintext scores stay equal after the encrypted computation perturbs them
/// in the last bits, and the doc-id tie rule applies identically on both sides.
pub const SCORE_GRID: f64 = 1.0 / (1u64 << 24) as f64;

/// Adding `0.0` turns `-0.0` into `0.0`, which `total_cmp` would otherwise
/// rank below it.
pub fn snap(score: f64) -> f64 {
    libm::round(score / SCORE_GRID) * SCORE_GRID + 0.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub doc_id: DocId,
    pub score: f64,
}

/// Ranking order: higher score first, then lower doc id.
pub fn rank_cmp(a: &Hit, b: &Hit) -> Ordering {
    b.score.total_cmp(&a.score).then(a.doc_id.cmp(&b.doc_id))
}

/// Top `k` of `(doc, raw score)` pairs under the ranking order.
pub fn top_k<I: IntoIterator<Item = (DocId, f64)>>(scores: I, k: usize) -> Vec<Hit> {
    let mut hits: Vec<Hit> = scores.into_iter().map(|(doc_id, s)| Hit { doc_id, score: snap(s) }).collect();
    hits.sort_by(rank_cmp);
    hits.truncate(k);
    hits
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node<P> {
    pub payload: P,
    pub doc: Option<DocId>,
    pub parent: Option<usize>,
    /// Empty for leaves, two entries otherwise.
    pub children: Vec<usize>,
}

impl<P> Node<P> {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

/// Arena tree. Removed slots are `None` until the tree is compacted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree<P> {
    pub partition: PartitionId,
    nodes: Vec<Option<Node<P>>>,
    root: Option<usize>,
    leaves: BTreeMap<DocId, usize>,
}

/// Preorder shape token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Shape {
    Leaf(DocId),
    Internal,
}

impl<P> Tree<P> {
    pub fn empty(partition: PartitionId) -> Self {
        Self { partition, nodes: Vec::new(), root: None, leaves: BTreeMap::new() }
    }

    /// Assembles a tree from preorder records `(doc, payload)`, where
    /// internal nodes have `doc = None` and exactly two children.
    pub fn from_preorder(partition: PartitionId, records: Vec<(Option<DocId>, P)>) -> Result<Self> {
        let mut tree = Self::empty(partition);
        if records.is_empty() {
            return Ok(tree);
        }
        // stack of (slot, children still expected)
        let mut open: Vec<(usize, usize)> = Vec::new();
        for (doc, payload) in records {
            if tree.root.is_some() && open.is_empty() {
                return Err(Error::InvalidParameter("trailing records after a complete tree"));
            }
            let parent = open.last().map(|&(p, _)| p);
            let slot = tree.push(Node { payload, doc, parent, children: Vec::new() });
            match parent {
                Some(p) => {
                    tree.node_mut(p).children.push(slot);
                    let top = open.last_mut().unwrap();
                    top.1 -= 1;
                    if top.1 == 0 {
                        open.pop();
                        while let Some(&(_, 0)) = open.last() {
                            open.pop();
                        }
                    }
                }
                None => tree.root = Some(slot),
            }
            match doc {
                Some(d) => {
                    if tree.leaves.insert(d, slot).is_some() {
                        return Err(Error::DuplicateDocument(d));
                    }
                }
                None => open.push((slot, 2)),
            }
        }
        if !open.is_empty() {
            return Err(Error::InvalidParameter("truncated tree record"));
        }
        Ok(tree)
    }

    fn push(&mut self, node: Node<P>) -> usize {
        self.nodes.push(Some(node));
        self.nodes.len() - 1
    }

    pub fn root(&self) -> Option<usize> {
        self.root
    }

    pub fn node(&self, slot: usize) -> &Node<P> {
        self.nodes[slot].as_ref().expect("live slot")
    }

    fn node_mut(&mut self, slot: usize) -> &mut Node<P> {
        self.nodes[slot].as_mut().expect("live slot")
    }

    pub fn get(&self, slot: usize) -> Option<&Node<P>> {
        self.nodes.get(slot).and_then(Option::as_ref)
    }

    /// Number of arena slots, including removed ones.
    pub fn capacity(&self) -> usize {
        self.nodes.len()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_some()).count()
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }

    pub fn leaf(&self, doc: DocId) -> Option<usize> {
        self.leaves.get(&doc).copied()
    }

    pub fn contains(&self, doc: DocId) -> bool {
        self.leaves.contains_key(&doc)
    }

    pub fn docs(&self) -> impl Iterator<Item = DocId> + '_ {
        self.leaves.keys().copied()
    }

    /// Slots in preorder.
    pub fn preorder(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack: Vec<usize> = self.root.into_iter().collect();
        while let Some(s) = stack.pop() {
            out.push(s);
            stack.extend(self.node(s).children.iter().rev());
        }
        out
    }

    /// Leaf slots from left to right.
    pub fn leaf_order(&self) -> Vec<usize> {
        self.preorder().into_iter().filter(|&s| self.node(s).is_leaf()).collect()
    }

    /// Nodes on the path from `slot` to the root, counting both ends.
    pub fn depth_of(&self, slot: usize) -> usize {
        let mut d = 1;
        let mut cur = slot;
        while let Some(p) = self.node(cur).parent {
            d += 1;
            cur = p;
        }
        d
    }

    /// Number of levels; 0 for an empty tree.
    pub fn depth(&self) -> usize {
        self.leaves.values().map(|&s| self.depth_of(s)).max().unwrap_or(0)
    }

    /// Whether `ancestor` lies on the path from `slot` to the root.
    pub fn is_ancestor(&self, ancestor: usize, slot: usize) -> bool {
        let mut cur = Some(slot);
        while let Some(c) = cur {
            if c == ancestor {
                return true;
            }
            cur = self.node(c).parent;
        }
        false
    }

    pub fn shape(&self) -> Vec<Shape> {
        self.preorder()
            .into_iter()
            .map(|s| match self.node(s).doc {
                Some(d) => Shape::Leaf(d),
                None => Shape::Internal,
            })
            .collect()
    }

    /// FNV-1a hash of the preorder shape.
    pub fn shape_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |bytes: &[u8]| {
            for &b in bytes {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for token in self.shape() {
            match token {
                Shape::Leaf(d) => {
                    feed(&[1]);
                    feed(&d.0.to_le_bytes());
                }
                Shape::Internal => feed(&[0]),
            }
        }
        h
    }

    /// `(doc, payload)` records in preorder.
    pub fn to_preorder(&self) -> Vec<(Option<DocId>, &P)> {
        self.preorder().into_iter().map(|s| (self.node(s).doc, &self.node(s).payload)).collect()
    }

    /// Same shape and slot numbering with payloads produced from the live
    /// nodes, passed in slot order.
    pub fn map_batch<Q>(&self, f: impl FnOnce(&[&P]) -> Result<Vec<Q>>) -> Result<Tree<Q>> {
        let live: Vec<&P> = self.nodes.iter().flatten().map(|n| &n.payload).collect();
        let mut fresh = f(&live)?.into_iter();
        let nodes = self
            .nodes
            .iter()
            .map(|slot| {
                slot.as_ref().map(|n| Node {
                    payload: fresh.next().expect("one payload per live node"),
                    doc: n.doc,
                    parent: n.parent,
                    children: n.children.clone(),
                })
            })
            .collect();
        Ok(Tree { partition: self.partition, nodes, root: self.root, leaves: self.leaves.clone() })
    }

    /// Brings `mirror` to this tree's shape. Slots in `touched`, and slots
    /// `mirror` lacks, get payloads from `f` (called once with those slots in
    /// ascending order); the rest keep their mirror payload.
    pub fn sync_mirror<Q>(
        &self,
        mirror: Tree<Q>,
        touched: &BTreeSet<usize>,
        f: impl FnOnce(&[usize]) -> Result<Vec<Q>>,
    ) -> Result<Tree<Q>> {
        let mut old = mirror.nodes;
        let stale: Vec<usize> = (0..self.nodes.len())
            .filter(|&s| self.nodes[s].is_some() && (touched.contains(&s) || old.get(s).is_none_or(Option::is_none)))
            .collect();
        let produced = f(&stale)?;
        if produced.len() != stale.len() {
            return Err(Error::Dimension { expected: stale.len(), actual: produced.len() });
        }
        let mut fresh: BTreeMap<usize, Q> = stale.into_iter().zip(produced).collect();
        let nodes = self
            .nodes
            .iter()
            .enumerate()
            .map(|(s, slot)| {
                slot.as_ref().map(|n| {
                    let payload = match fresh.remove(&s) {
                        Some(p) => p,
                        None => old[s].take().expect("kept slot is live in mirror").payload,
                    };
                    Node { payload, doc: n.doc, parent: n.parent, children: n.children.clone() }
                })
            })
            .collect();
        Ok(Tree { partition: self.partition, nodes, root: self.root, leaves: self.leaves.clone() })
    }

    /// Structure without payloads.
    pub fn skeleton(&self) -> Tree<()> {
        self.map_batch(|live| Ok(alloc::vec![(); live.len()])).expect("infallible")
    }

    /// Renumbers slots in preorder and drops removed ones.
    pub fn compact(&self) -> Tree<P>
    where
        P: Clone,
    {
        let records = self.to_preorder().into_iter().map(|(d, p)| (d, p.clone())).collect();
        Tree::from_preorder(self.partition, records).expect("a live tree is well formed")
    }
}

impl Tree<Vec<f64>> {
    /// Lays leaves out in the given order and pairs them left to right level
    /// by level. A last unpaired node moves up unchanged.
    pub fn build(partition: PartitionId, leaves: Vec<(DocId, Vec<f64>)>) -> Result<Self> {
        let mut tree = Self::empty(partition);
        let mut level = Vec::with_capacity(leaves.len());
        for (doc, v) in leaves {
            let slot = tree.push(Node { payload: v, doc: Some(doc), parent: None, children: Vec::new() });
            if tree.leaves.insert(doc, slot).is_some() {
                return Err(Error::DuplicateDocument(doc));
            }
            level.push(slot);
        }
        while level.len() > 1 {
            let mut next = Vec::with_capacity(level.len().div_ceil(2));
            for pair in level.chunks(2) {
                if let [a, b] = *pair {
                    let slot = tree.join(a, b);
                    next.push(slot);
                } else {
                    next.push(pair[0]);
                }
            }
            level = next;
        }
        tree.root = level.first().copied();
        Ok(tree)
    }

    fn join(&mut self, a: usize, b: usize) -> usize {
        let mut v = self.node(a).payload.clone();
        max_into(&mut v, &self.node(b).payload);
        let slot = self.push(Node { payload: v, doc: None, parent: None, children: vec![a, b] });
        self.node_mut(a).parent = Some(slot);
        self.node_mut(b).parent = Some(slot);
        slot
    }

    fn refresh(&mut self, slot: usize) {
        let [a, b] = [self.node(slot).children[0], self.node(slot).children[1]];
        let mut v = self.node(a).payload.clone();
        max_into(&mut v, &self.node(b).payload);
        self.node_mut(slot).payload = v;
    }

    /// Recomputes the max vectors from `slot` up to the root, recording each.
    fn refresh_upward(&mut self, mut slot: Option<usize>, touched: &mut BTreeSet<usize>) {
        while let Some(s) = slot {
            self.refresh(s);
            touched.insert(s);
            slot = self.node(s).parent;
        }
    }

    /// Leaves `(doc, vector)` from left to right.
    pub fn leaves_in_order(&self) -> Vec<(DocId, Vec<f64>)> {
        self.leaf_order().into_iter().map(|s| (self.node(s).doc.unwrap(), self.node(s).payload.clone())).collect()
    }

    /// Appends zero entries at position `at` of every node vector.
    pub fn widen(&mut self, at: usize, extra: usize) {
        for n in self.nodes.iter_mut().flatten() {
            n.payload.splice(at..at, core::iter::repeat_n(0.0, extra));
        }
    }
}

/// Depth allowed for a tree holding `m` leaves.
pub fn depth_bound(m: usize) -> usize {
    if m <= 1 {
        m
    } else {
        (usize::BITS - (m - 1).leading_zeros()) as usize + 1
    }
}

/// Aggregated probe queries. Since scoring is linear, the accumulated score of
/// an index over all probes is its inner product with their sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSet {
    pub count: usize,
    pub aggregate: Vec<f64>,
}

impl ProbeSet {
    pub fn from_queries(queries: &[Vec<f64>]) -> Result<Self> {
        let first = queries.first().ok_or(Error::InvalidParameter("at least one probe query is required"))?;
        let mut aggregate = vec![0.0; first.len()];
        for q in queries {
            if q.len() != aggregate.len() {
                return Err(Error::Dimension { expected: aggregate.len(), actual: q.len() });
            }
            aggregate.iter_mut().zip(q).for_each(|(a, x)| *a += x);
        }
        Ok(Self { count: queries.len(), aggregate })
    }

    /// `count` random queries over a `dim`-wide vector. Each picks `terms`
    /// keyword positions from `0..popularity.len()` with Zipf probability over
    /// the popularity rank and weight 1 each; trailing pseudo positions stay 0.
    pub fn zipf(dim: usize, popularity: &[u32], count: usize, terms: usize, exponent: f64, seed: u64) -> Result<Self> {
        if count == 0 {
            return Err(Error::InvalidParameter("probe count R must be >= 1"));
        }
        if popularity.len() > dim {
            return Err(Error::Dimension { expected: dim, actual: popularity.len() });
        }
        let mut aggregate = vec![0.0; dim];
        if popularity.is_empty() {
            return Ok(Self { count, aggregate });
        }
        let mut ranked: Vec<usize> = (0..popularity.len()).collect();
        ranked.sort_by(|&a, &b| popularity[b].cmp(&popularity[a]).then(a.cmp(&b)));
        let weights: Vec<f64> = (1..=ranked.len()).map(|r| libm::pow(r as f64, -exponent)).collect();
        let dist = WeightedIndex::new(&weights).map_err(|_| Error::InvalidParameter("bad Zipf weights"))?;
        let mut r = rng::stream(seed, &[rng::label::PROBES]);
        for _ in 0..count {
            for _ in 0..terms {
                aggregate[ranked[dist.sample(&mut r)]] += 1.0;
            }
        }
        Ok(Self { count, aggregate })
    }

    pub fn likelihood(&self, v: &[f64]) -> f64 {
        dot(&v[..self.aggregate.len().min(v.len())], &self.aggregate[..self.aggregate.len().min(v.len())])
    }
}

/// Permutation of `indexes` sorted by descending accumulated probe score,
/// ties to the lower doc id.
pub fn order_by_likelihood(indexes: &[(DocId, &[f64])], probes: &ProbeSet) -> Vec<usize> {
    let scores: Vec<f64> = indexes.iter().map(|(_, v)| probes.likelihood(v)).collect();
    let mut order: Vec<usize> = (0..indexes.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(indexes[a].0.cmp(&indexes[b].0)));
    order
}

/// Nodes whose vectors were created or changed by an update.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct UpdateReport {
    pub partition: Option<PartitionId>,
    pub touched: BTreeSet<usize>,
    pub rebuilt: bool,
}

impl UpdateReport {
    pub fn touched_count(&self) -> usize {
        self.touched.len()
    }
}

/// A plaintext tree plus what it needs to place new leaves consistently.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlsbTree {
    pub tree: Tree<Vec<f64>>,
    pub probes: ProbeSet,
    /// Leaf count at the last full build.
    pub built_size: usize,
}

impl MlsbTree {
    pub fn build(partition: PartitionId, indexes: Vec<(DocId, Vec<f64>)>, probes: ProbeSet) -> Result<Self> {
        let order = {
            let refs: Vec<(DocId, &[f64])> = indexes.iter().map(|(d, v)| (*d, v.as_slice())).collect();
            order_by_likelihood(&refs, &probes)
        };
        let mut slots: Vec<Option<(DocId, Vec<f64>)>> = indexes.into_iter().map(Some).collect();
        let ordered = order.into_iter().map(|i| slots[i].take().unwrap()).collect::<Vec<_>>();
        let built_size = ordered.len();
        Ok(Self { tree: Tree::build(partition, ordered)?, probes, built_size })
    }

    pub fn partition(&self) -> PartitionId {
        self.tree.partition
    }

    fn rebuild(&mut self) -> Result<UpdateReport> {
        let leaves = self.tree.leaves_in_order();
        *self = Self::build(self.tree.partition, leaves, self.probes.clone())?;
        Ok(UpdateReport {
            partition: Some(self.tree.partition),
            touched: (0..self.tree.capacity()).collect(),
            rebuilt: true,
        })
    }

    fn needs_rebuild(&self) -> bool {
        let m = self.tree.len();
        m >= 2 * self.built_size.max(1) || 2 * m <= self.built_size || self.tree.depth() > depth_bound(m)
    }

    /// Places a new leaf next to the leaf closest to its probe rank among those
    /// that can take a sibling without breaking the depth bound.
    pub fn insert(&mut self, doc: DocId, v: Vec<f64>) -> Result<UpdateReport> {
        if self.tree.contains(doc) {
            return Err(Error::DuplicateDocument(doc));
        }
        if let Some(first) = self.tree.nodes.iter().flatten().next() {
            if first.payload.len() != v.len() {
                return Err(Error::Dimension { expected: first.payload.len(), actual: v.len() });
            }
        }
        let partition = self.tree.partition;
        let mut report = UpdateReport { partition: Some(partition), ..UpdateReport::default() };
        let Some(_) = self.tree.root else {
            let slot = self.tree.push(Node { payload: v, doc: Some(doc), parent: None, children: Vec::new() });
            self.tree.leaves.insert(doc, slot);
            self.tree.root = Some(slot);
            self.built_size = 1;
            report.touched.insert(slot);
            return Ok(report);
        };
        if self.tree.len() + 1 >= 2 * self.built_size.max(1) {
            self.tree.leaves.insert(doc, usize::MAX);
            let mut leaves = self.tree.leaves_in_order();
            self.tree.leaves.remove(&doc);
            leaves.push((doc, v));
            *self = Self::build(partition, leaves, self.probes.clone())?;
            return Ok(UpdateReport { partition: Some(partition), touched: (0..self.tree.capacity()).collect(), rebuilt: true });
        }
        let score = self.probes.likelihood(&v);
        let order = self.tree.leaf_order();
        // rank position among current leaves
        let pos = order
            .iter()
            .position(|&s| {
                let n = self.tree.node(s);
                let ls = self.probes.likelihood(&n.payload);
                score > ls || (score == ls && doc < n.doc.unwrap())
            })
            .unwrap_or(order.len());
        let limit = depth_bound(self.tree.len() + 1);
        let eligible = |s: usize| self.tree.depth_of(s) < limit;
        let mut target = None;
        for dist in 0..=order.len() {
            // a leaf at `pos` would go to its left, at `pos - 1` to its right
            let right = pos + dist;
            if right < order.len() && eligible(order[right]) {
                target = Some((order[right], true));
                break;
            }
            if dist < pos && eligible(order[pos - 1 - dist]) {
                target = Some((order[pos - 1 - dist], false));
                break;
            }
        }
        let Some((sibling, new_first)) = target else {
            self.tree.leaves.insert(doc, usize::MAX);
            let mut leaves = self.tree.leaves_in_order();
            self.tree.leaves.remove(&doc);
            leaves.insert(pos, (doc, v));
            *self = Self::build(partition, leaves, self.probes.clone())?;
            return Ok(UpdateReport { partition: Some(partition), touched: (0..self.tree.capacity()).collect(), rebuilt: true });
        };
        let parent = self.tree.node(sibling).parent;
        let leaf = self.tree.push(Node { payload: v, doc: Some(doc), parent: None, children: Vec::new() });
        self.tree.leaves.insert(doc, leaf);
        let (a, b) = if new_first { (leaf, sibling) } else { (sibling, leaf) };
        let joined = self.tree.join(a, b);
        self.tree.node_mut(joined).parent = parent;
        match parent {
            Some(p) => {
                let c = &mut self.tree.node_mut(p).children;
                let i = c.iter().position(|&x| x == sibling).unwrap();
                c[i] = joined;
            }
            None => self.tree.root = Some(joined),
        }
        report.touched.insert(leaf);
        report.touched.insert(joined);
        self.tree.refresh_upward(parent, &mut report.touched);
        Ok(report)
    }

    /// Removes a leaf and promotes its sibling.
    pub fn delete(&mut self, doc: DocId) -> Result<UpdateReport> {
        let leaf = self.tree.leaves.remove(&doc).ok_or(Error::UnknownDocument(doc))?;
        let mut report = UpdateReport { partition: Some(self.tree.partition), ..UpdateReport::default() };
        let parent = self.tree.node(leaf).parent;
        self.tree.nodes[leaf] = None;
        let Some(p) = parent else {
            self.tree.root = None;
            self.built_size = 0;
            return Ok(report);
        };
        let sibling = *self.tree.node(p).children.iter().find(|&&c| c != leaf).unwrap();
        let grand = self.tree.node(p).parent;
        self.tree.nodes[p] = None;
        self.tree.node_mut(sibling).parent = grand;
        match grand {
            Some(g) => {
                let c = &mut self.tree.node_mut(g).children;
                let i = c.iter().position(|&x| x == p).unwrap();
                c[i] = sibling;
            }
            None => self.tree.root = Some(sibling),
        }
        self.tree.refresh_upward(grand, &mut report.touched);
        if self.needs_rebuild() {
            return self.rebuild();
        }
        Ok(report)
    }
}

/// Scores a node payload against a query.
pub trait NodeScorer<P> {
    fn score(&self, payload: &P) -> f64;
}

/// Plaintext query vector.
pub struct PlainQuery<'a>(pub &'a [f64]);

impl NodeScorer<Vec<f64>> for PlainQuery<'_> {
    fn score(&self, payload: &Vec<f64>) -> f64 {
        dot(payload, self.0)
    }
}

impl NodeScorer<EncryptedVector> for Trapdoor {
    fn score(&self, payload: &EncryptedVector) -> f64 {
        aspe::score_unchecked(payload, self)
    }
}

/// Per-tree candidate list size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Quota {
    /// `ceil(k / t)` candidates from each of the `t` searched trees.
    PerTree,
    /// `k` candidates from each tree, so the merged result is exact.
    Full,
}

impl Quota {
    pub fn per_tree(self, k: usize, t: usize) -> usize {
        match self {
            Quota::PerTree => k.div_ceil(t.max(1)),
            Quota::Full => k,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeSearch {
    pub partition: PartitionId,
    /// Best `quota` leaves, ranked.
    pub hits: Vec<Hit>,
    /// Nodes whose score was computed.
    pub visited: usize,
    /// Roots of subtrees skipped by the bound.
    pub pruned: Vec<usize>,
}

struct Candidates {
    hits: Vec<Hit>,
    quota: usize,
}

impl Candidates {
    fn full(&self) -> bool {
        self.hits.len() >= self.quota
    }

    /// A subtree whose bound is strictly below the worst kept score cannot
    /// contribute; an equal bound might still hold a lower doc id.
    fn prunes(&self, bound: f64) -> bool {
        self.full() && bound < self.hits[self.hits.len() - 1].score
    }

    fn offer(&mut self, hit: Hit) {
        if self.quota == 0 {
            return;
        }
        let at = self.hits.partition_point(|h| rank_cmp(h, &hit) == Ordering::Less);
        if at < self.quota {
            self.hits.insert(at, hit);
            self.hits.truncate(self.quota);
        }
    }
}

/// Greedy depth-first search of one tree for its best `quota` leaves.
pub fn search_tree<P, S: NodeScorer<P> + ?Sized>(tree: &Tree<P>, scorer: &S, quota: usize) -> TreeSearch {
    let mut out = TreeSearch { partition: tree.partition, hits: Vec::new(), visited: 0, pruned: Vec::new() };
    let Some(root) = tree.root else { return out };
    let mut cand = Candidates { hits: Vec::with_capacity(quota + 1), quota };
    let root_score = snap(scorer.score(&tree.node(root).payload));
    out.visited += 1;
    descend(tree, scorer, root, root_score, &mut cand, &mut out);
    out.hits = cand.hits;
    out
}

fn descend<P, S: NodeScorer<P> + ?Sized>(
    tree: &Tree<P>,
    scorer: &S,
    slot: usize,
    score: f64,
    cand: &mut Candidates,
    out: &mut TreeSearch,
) {
    if cand.prunes(score) {
        out.pruned.push(slot);
        return;
    }
    let node = tree.node(slot);
    if let Some(doc) = node.doc {
        cand.offer(Hit { doc_id: doc, score });
        return;
    }
    let (a, b) = (node.children[0], node.children[1]);
    let sa = snap(scorer.score(&tree.node(a).payload));
    let sb = snap(scorer.score(&tree.node(b).payload));
    out.visited += 2;
    let (first, second) = if sb > sa { ((b, sb), (a, sa)) } else { ((a, sa), (b, sb)) };
    descend(tree, scorer, first.0, first.1, cand, out);
    descend(tree, scorer, second.0, second.1, cand, out);
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestSearch {
    pub hits: Vec<Hit>,
    pub per_tree: Vec<TreeSearch>,
}

impl ForestSearch {
    pub fn visited(&self) -> usize {
        self.per_tree.iter().map(|t| t.visited).sum()
    }
}

/// Searches each `(tree, scorer)` pair for its quota and merges the
/// candidates into the global top `k`.
pub fn gdfs_search<P, S: NodeScorer<P>>(targets: &[(&Tree<P>, &S)], k: usize, quota: Quota) -> Result<ForestSearch> {
    if targets.is_empty() {
        return Err(Error::NoPartitions);
    }
    if k == 0 {
        return Err(Error::InvalidParameter("k must be >= 1"));
    }
    let per = quota.per_tree(k, targets.len());
    let per_tree: Vec<TreeSearch> = targets.iter().map(|(t, s)| search_tree(*t, *s, per)).collect();
    let mut hits: Vec<Hit> = per_tree.iter().flat_map(|t| t.hits.iter().copied()).collect();
    hits.sort_by(rank_cmp);
    hits.truncate(k);
    Ok(ForestSearch { hits, per_tree })
}

/// Plaintext forest held by the proxy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<MlsbTree>,
}

/// Encrypted forest held by the server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncryptedForest {
    pub trees: Vec<Tree<EncryptedVector>>,
}

impl Forest {
    pub fn s(&self) -> usize {
        self.trees.len()
    }

    pub fn tree(&self, id: PartitionId) -> Result<&MlsbTree> {
        self.trees.get(id.0).ok_or(Error::UnknownPartition(id))
    }

    pub fn tree_mut(&mut self, id: PartitionId) -> Result<&mut MlsbTree> {
        self.trees.get_mut(id.0).ok_or(Error::UnknownPartition(id))
    }

    /// Partition holding `doc`.
    pub fn locate(&self, doc: DocId) -> Option<PartitionId> {
        self.trees.iter().find(|t| t.tree.contains(doc)).map(MlsbTree::partition)
    }

    pub fn insert(&mut self, partition: PartitionId, doc: DocId, v: Vec<f64>) -> Result<UpdateReport> {
        if self.locate(doc).is_some() {
            return Err(Error::DuplicateDocument(doc));
        }
        self.tree_mut(partition)?.insert(doc, v)
    }

    pub fn delete(&mut self, doc: DocId) -> Result<UpdateReport> {
        let p = self.locate(doc).ok_or(Error::UnknownDocument(doc))?;
        self.tree_mut(p)?.delete(doc)
    }

    pub fn search(&self, queries: &[(PartitionId, &[f64])], k: usize, quota: Quota) -> Result<ForestSearch> {
        let scorers: Vec<PlainQuery<'_>> = queries.iter().map(|(_, q)| PlainQuery(q)).collect();
        let targets = queries
            .iter()
            .zip(&scorers)
            .map(|((p, _), s)| Ok((&self.tree(*p)?.tree, s)))
            .collect::<Result<Vec<_>>>()?;
        gdfs_search(&targets, k, quota)
    }
}

fn encrypt_tree(tree: &Tree<Vec<f64>>, key: &PartitionKey, seed: u64) -> Result<Tree<EncryptedVector>> {
    let mut r = rng::stream(seed, &[rng::label::ENCRYPT, tree.partition.0 as u64]);
    tree.map_batch(|vs| {
        let refs: Vec<&[f64]> = vs.iter().map(|v| v.as_slice()).collect();
        aspe::encrypt_batch(&refs, key, &mut r)
    })
}

/// Encrypts every node of every tree with its partition key.
pub fn encrypt_forest(forest: &Forest, keys: &aspe::SecretKey, seed: u64) -> Result<EncryptedForest> {
    if keys.partitions.len() != forest.s() {
        return Err(Error::Dimension { expected: forest.s(), actual: keys.partitions.len() });
    }
    let trees = forest
        .trees
        .iter()
        .map(|t| encrypt_tree(&t.tree, keys.partition(t.partition())?, seed))
        .collect::<Result<_>>()?;
    Ok(EncryptedForest { trees })
}

impl EncryptedForest {
    pub fn tree(&self, id: PartitionId) -> Result<&Tree<EncryptedVector>> {
        self.trees.get(id.0).ok_or(Error::UnknownPartition(id))
    }

    pub fn search(&self, trapdoors: &[Trapdoor], k: usize, quota: Quota) -> Result<ForestSearch> {
        let targets = trapdoors.iter().map(|t| Ok((self.tree(t.partition)?, t))).collect::<Result<Vec<_>>>()?;
        gdfs_search(&targets, k, quota)
    }

    /// Applies a proxy update to one tree.
    pub fn apply_patch(&mut self, patch: TreePatch) -> Result<()> {
        let p = patch.skeleton.partition;
        let slot = self.trees.get_mut(p.0).ok_or(Error::UnknownPartition(p))?;
        let old = core::mem::replace(slot, Tree::empty(p));
        let TreePatch { skeleton, mut payloads } = patch;
        let touched: BTreeSet<usize> = payloads.keys().copied().collect();
        *slot = skeleton.sync_mirror(old, &touched, |stale| {
            stale
                .iter()
                .map(|s| payloads.remove(s).ok_or(Error::InvalidParameter("patch lacks a payload for a new node")))
                .collect()
        })?;
        Ok(())
    }
}

/// What the server needs to mirror an update of one plaintext tree: the new
/// structure and ciphertexts for every changed node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreePatch {
    pub skeleton: Tree<()>,
    pub payloads: BTreeMap<usize, EncryptedVector>,
}

impl TreePatch {
    pub fn partition(&self) -> PartitionId {
        self.skeleton.partition
    }
}

impl MlsbTree {
    /// Encrypts the nodes in `touched` (all nodes when `None`).
    pub fn patch<R: rand::Rng + ?Sized>(&self, touched: Option<&BTreeSet<usize>>, key: &PartitionKey, rng: &mut R) -> Result<TreePatch> {
        let slots: Vec<usize> = match touched {
            Some(t) => t.iter().copied().filter(|&s| self.tree.get(s).is_some()).collect(),
            None => (0..self.tree.capacity()).filter(|&s| self.tree.get(s).is_some()).collect(),
        };
        let refs: Vec<&[f64]> = slots.iter().map(|&s| self.tree.node(s).payload.as_slice()).collect();
        let enc = aspe::encrypt_batch(&refs, key, rng)?;
        Ok(TreePatch { skeleton: self.tree.skeleton(), payloads: slots.into_iter().zip(enc).collect() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(n: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        v
    }

    fn leaves(vs: &[Vec<f64>]) -> Vec<(DocId, Vec<f64>)> {
        vs.iter().enumerate().map(|(i, v)| (DocId(i as u64 + 1), v.clone())).collect()
    }

    #[test]
    fn single_leaf_is_root() {
        let t = Tree::build(PartitionId(0), leaves(&[vec![0.5]])).unwrap();
        assert_eq!(t.root(), Some(0));
        assert_eq!(t.depth(), 1);
    }

    #[test]
    fn root_is_elementwise_max() {
        let t = Tree::build(PartitionId(0), leaves(&[unit(4, 0), unit(4, 1), unit(4, 2), unit(4, 3)])).unwrap();
        assert_eq!(t.node(t.root().unwrap()).payload, vec![1.0; 4]);
        assert_eq!(t.depth(), 3);
    }

    #[test]
    fn odd_node_is_promoted() {
        let t = Tree::build(PartitionId(0), leaves(&[unit(3, 0), unit(3, 1), unit(3, 2)])).unwrap();
        let root = t.node(t.root().unwrap());
        assert_eq!(root.children.len(), 2);
        assert_eq!(t.node(root.children[1]).doc, Some(DocId(3)));
        for m in 1..40 {
            let vs: Vec<Vec<f64>> = (0..m).map(|i| vec![i as f64]).collect();
            assert!(Tree::build(PartitionId(0), leaves(&vs)).unwrap().depth() <= depth_bound(m));
        }
    }

    #[test]
    fn all_ones_probe_orders_by_sum() {
        let vs = [vec![0.1, 0.2], vec![0.9, 0.0], vec![0.3, 0.3], vec![0.45, 0.45]];
        let refs: Vec<(DocId, &[f64])> = vs.iter().enumerate().map(|(i, v)| (DocId(i as u64), v.as_slice())).collect();
        let probes = ProbeSet::from_queries(&[vec![1.0, 1.0]]).unwrap();
        assert_eq!(order_by_likelihood(&refs, &probes), vec![1, 3, 2, 0]);
    }

    #[test]
    fn preorder_roundtrip_and_compaction() {
        let mut t = MlsbTree::build(
            PartitionId(1),
            leaves(&[unit(3, 0), unit(3, 1), unit(3, 2), vec![0.5; 3], vec![0.2; 3]]),
            ProbeSet::from_queries(&[vec![1.0; 3]]).unwrap(),
        )
        .unwrap();
        t.delete(DocId(2)).unwrap();
        let c = t.tree.compact();
        assert_eq!(c.shape(), t.tree.shape());
        assert_eq!(c.capacity(), c.node_count());
        let records = c.to_preorder().into_iter().map(|(d, p)| (d, p.clone())).collect();
        assert_eq!(Tree::from_preorder(PartitionId(1), records).unwrap(), c);
        assert!(Tree::<Vec<f64>>::from_preorder(PartitionId(0), vec![(None, vec![])]).is_err());
    }

    #[test]
    fn zero_query_returns_lowest_ids() {
        let vs: Vec<Vec<f64>> = (0..9).map(|i| vec![i as f64 / 10.0, 1.0 - i as f64 / 10.0]).collect();
        let t = Tree::build(PartitionId(0), leaves(&vs)).unwrap();
        let out = search_tree(&t, &PlainQuery(&[0.0, 0.0]), 3);
        let ids: Vec<u64> = out.hits.iter().map(|h| h.doc_id.0).collect();
        assert_eq!(ids, vec![1, 2, 3]);
    }

    #[test]
    fn insert_into_single_leaf() {
        let probes = ProbeSet::from_queries(&[vec![1.0, 1.0]]).unwrap();
        let mut t = MlsbTree::build(PartitionId(0), leaves(&[vec![0.2, 0.7]]), probes).unwrap();
        let report = t.insert(DocId(9), vec![0.5, 0.1]).unwrap();
        assert_eq!(t.tree.len(), 2);
        assert_eq!(t.tree.node(t.tree.root().unwrap()).payload, vec![0.5, 0.7]);
        assert!(report.touched_count() <= 2 * (t.tree.depth() + 1));
    }

    #[test]
    fn delete_to_empty_and_errors() {
        let probes = ProbeSet::from_queries(&[vec![1.0]]).unwrap();
        let mut t = MlsbTree::build(PartitionId(0), leaves(&[vec![0.2]]), probes).unwrap();
        assert!(t.insert(DocId(1), vec![0.3]).is_err());
        assert!(t.insert(DocId(5), vec![0.3, 0.1]).is_err());
        t.delete(DocId(1)).unwrap();
        assert!(t.tree.is_empty());
        assert_eq!(t.tree.root(), None);
        assert_eq!(t.delete(DocId(1)), Err(Error::UnknownDocument(DocId(1))));
    }

    #[test]
    fn quota_sizes() {
        assert_eq!(Quota::PerTree.per_tree(10, 3), 4);
        assert_eq!(Quota::PerTree.per_tree(10, 1), 10);
        assert_eq!(Quota::Full.per_tree(10, 3), 10);
        let t: Tree<Vec<f64>> = Tree::empty(PartitionId(0));
        assert_eq!(gdfs_search::<Vec<f64>, PlainQuery>(&[], 1, Quota::Full).unwrap_err(), Error::NoPartitions);
        assert!(gdfs_search(&[(&t, &PlainQuery(&[]))], 0, Quota::Full).is_err());
    }

    #[test]
    fn depth_bounds() {
        assert_eq!(depth_bound(1), 1);
        assert_eq!(depth_bound(2), 2);
        assert_eq!(depth_bound(4), 3);
        assert_eq!(depth_bound(5), 4);
        assert_eq!(depth_bound(128), 8);
        assert_eq!(depth_bound(129), 9);
    }
}
