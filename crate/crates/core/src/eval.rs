//! Retrieval quality and cost metrics, plus the node-count benchmarks.
//!
//! Rankings are compared position by position: precision is the overlap with
//! the exact top-k, rank privacy the mean absolute rank displacement scaled by
//! `1/k`. Benchmarks count scored tree nodes, which is machine independent;
//! wall-clock time is measured through a [`Clock`] supplied by the caller.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use rand::seq::SliceRandom;

use crate::corpus::{BinaryIndex, Document};
use crate::engine::{build_index, EngineConfig, IndexBuild, SearchRequest, Selection};
use crate::forest::{search_tree, PlainQuery, Quota, Tree};
use crate::synth::{self, SynthConfig};
use crate::weighting::{apply_weights, WeightedIndex};
use crate::{padding, rng, DocId, Error, Result};

/// `k' / k`: share of `retrieved` found in `exact`. Empty input gives 0.
pub fn precision(retrieved: &[DocId], exact: &[DocId]) -> f64 {
    if retrieved.is_empty() {
        return 0.0;
    }
    let hits = retrieved.iter().filter(|d| exact.contains(d)).count();
    hits as f64 / retrieved.len() as f64
}

/// `sum |r_i - r'_i| / k^2` over the documents of `retrieved`, where `r'_i`
/// is the document's position in `exact` and a document missing from
/// `exact` is displaced by `k`.
pub fn rank_privacy(retrieved: &[DocId], exact: &[DocId]) -> f64 {
    let k = retrieved.len();
    if k == 0 {
        return 0.0;
    }
    let position: BTreeMap<DocId, usize> = exact.iter().enumerate().map(|(i, &d)| (d, i)).collect();
    let total: usize = retrieved
        .iter()
        .enumerate()
        .map(|(i, d)| position.get(d).map_or(k, |&j| i.abs_diff(j)))
        .sum();
    total as f64 / (k * k) as f64
}

/// Equilibrium score `x^2/95 + y^2/80` for percentages `x`, `y`.
pub fn equilibrium(x: f64, y: f64) -> f64 {
    x * x / 95.0 + y * y / 80.0
}

/// `eta = s log N / (log N - log s)`.
pub fn efficiency_ratio(n: f64, s: f64) -> Result<f64> {
    if !(s >= 1.0) || !(n > s) {
        return Err(Error::InvalidParameter("efficiency ratio needs N > s >= 1"));
    }
    let ln = libm::log2(n);
    Ok(s * ln / (ln - libm::log2(s)))
}

/// Nodes of one tree over `N` leaves against one of `N / s` leaves:
/// `(2^log2 N - 1/2) / (2^log2(N/s) - 1/2)`.
pub fn storage_ratio(n: f64, s: f64) -> Result<f64> {
    if !(s >= 1.0) || !(n >= s) {
        return Err(Error::InvalidParameter("storage ratio needs N >= s >= 1"));
    }
    Ok((n - 0.5) / (n / s - 0.5))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub k: usize,
    pub true_positives: usize,
    pub precision: f64,
    pub rank_privacy: f64,
    pub f: f64,
}

impl MetricsRow {
    pub fn new(retrieved: &[DocId], exact: &[DocId]) -> Self {
        let precision = precision(retrieved, exact);
        let rank_privacy = rank_privacy(retrieved, exact);
        Self {
            k: retrieved.len(),
            true_positives: retrieved.iter().filter(|d| exact.contains(d)).count(),
            precision,
            rank_privacy,
            f: equilibrium(100.0 * precision, 100.0 * rank_privacy),
        }
    }
}

/// Mean and sample variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub variance: f64,
}

impl Summary {
    pub fn of(xs: &[f64]) -> Self {
        let count = xs.len();
        if count == 0 {
            return Self { count, mean: 0.0, variance: 0.0 };
        }
        let mean = xs.iter().sum::<f64>() / count as f64;
        let variance = if count > 1 {
            xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (count - 1) as f64
        } else {
            0.0
        };
        Self { count, mean, variance }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    /// Documents `N`.
    pub docs: usize,
    /// Dictionary size `n`.
    pub vocabulary: usize,
    pub owners: usize,
    pub topics: usize,
    pub s: usize,
    pub sigma_grid: Vec<f64>,
    pub k: usize,
    pub t: usize,
    pub queries: usize,
    pub repetitions: usize,
    pub updates: usize,
    pub seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            docs: 2000,
            vocabulary: 4000,
            owners: 8,
            topics: 4,
            s: 4,
            sigma_grid: padding::sigma_grid(0.01, 0.2, 0.01).unwrap_or_default(),
            k: 10,
            t: 1,
            queries: 1000,
            repetitions: 1,
            updates: 100,
            seed: 0,
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.docs, self.vocabulary, self.owners, self.topics, self.s, self.k, self.t, self.queries, self.repetitions];
        if positive.contains(&0) {
            return Err(Error::InvalidParameter("benchmark sizes must be positive"));
        }
        if self.t > self.s {
            return Err(Error::InvalidParameter("t must not exceed s"));
        }
        Ok(())
    }
}

/// Time source for benchmarks.
pub trait Clock {
    type Instant;
    fn now(&self) -> Self::Instant;
    fn seconds_since(&self, start: &Self::Instant) -> f64;
}

/// Clock that never advances, for node-count-only runs.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoClock;

impl Clock for NoClock {
    type Instant = ();
    fn now(&self) {}
    fn seconds_since(&self, _: &()) -> f64 {
        0.0
    }
}

/// Visited-node and timing statistics of one search variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub name: alloc::string::String,
    pub visited: Vec<usize>,
    pub seconds: Vec<f64>,
}

impl VariantReport {
    pub fn nodes(&self) -> Summary {
        let xs: Vec<f64> = self.visited.iter().map(|&v| v as f64).collect();
        Summary::of(&xs)
    }

    pub fn time(&self) -> Summary {
        Summary::of(&self.seconds)
    }

    pub fn total_visited(&self) -> usize {
        self.visited.iter().sum()
    }
}

/// Runs every query against a set of plaintext trees (one query vector per
/// searched tree), recording visited nodes and elapsed time per query.
pub fn run_variant<C: Clock>(
    name: &str,
    queries: &[Vec<(&Tree<Vec<f64>>, Vec<f64>)>],
    k: usize,
    quota: Quota,
    repetitions: usize,
    clock: &C,
) -> VariantReport {
    let mut visited = Vec::with_capacity(queries.len());
    let mut seconds = Vec::with_capacity(queries.len());
    for q in queries {
        let per = quota.per_tree(k, q.len());
        let mut nodes = 0;
        let start = clock.now();
        for _ in 0..repetitions.max(1) {
            nodes = q.iter().map(|(tree, v)| search_tree(*tree, &PlainQuery(v), per).visited).sum();
        }
        seconds.push(clock.seconds_since(&start) / repetitions.max(1) as f64);
        visited.push(nodes);
    }
    VariantReport { name: name.into(), visited, seconds }
}


/// Leaf layouts compared in the tree-order benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LeafOrder {
    /// Ordinary balanced tree over a random permutation.
    Random,
    /// Leaves grouped by owner, owners ascending.
    Grouped,
    /// Descending accumulated probe score.
    Likelihood,
}

impl LeafOrder {
    pub const ALL: [LeafOrder; 3] = [LeafOrder::Random, LeafOrder::Grouped, LeafOrder::Likelihood];

    pub fn name(self) -> &'static str {
        match self {
            LeafOrder::Random => "random",
            LeafOrder::Grouped => "grouped",
            LeafOrder::Likelihood => "mlsb",
        }
    }
}

/// Rebuilds one partition's tree with the given leaf order.
pub fn reorder_tree(build: &IndexBuild, partition: usize, order: LeafOrder, seed: u64) -> Result<Tree<Vec<f64>>> {
    let tree = &build.forest.trees.get(partition).ok_or(Error::UnknownPartition(crate::PartitionId(partition)))?;
    let mut leaves = tree.tree.leaves_in_order();
    match order {
        LeafOrder::Likelihood => {}
        LeafOrder::Random => {
            leaves.sort_by_key(|l| l.0);
            leaves.shuffle(&mut rng::stream(seed, &[rng::label::SHUFFLE, partition as u64]));
        }
        LeafOrder::Grouped => {
            let owner: BTreeMap<DocId, crate::OwnerId> = build.partitions.partitions[partition].members.iter().map(|m| (m.doc_id, m.owner_id)).collect();
            leaves.sort_by_key(|l| (owner[&l.0], l.0));
        }
    }
    Tree::build(tree.tree.partition, leaves)
}

/// Requests from a Zipf keyword workload, `terms` keywords each.
pub fn workload(docs: &[Document], config: &BenchmarkConfig, terms: usize) -> Result<Vec<SearchRequest>> {
    let queries = synth::zipf_queries(docs, config.queries, terms, 1.0, config.seed)?;
    Ok(queries.iter().map(|q| SearchRequest::new(q, config.k)).collect())
}

pub fn synthetic_corpus(config: &BenchmarkConfig) -> Result<Vec<Document>> {
    let mut synth = SynthConfig::new(config.docs, config.vocabulary, config.seed);
    synth.owners = config.owners;
    synth.topics = config.topics;
    synth::generate(&synth)
}

/// Single-tree search cost under each leaf order (`s` forced to 1).
pub fn bench_tree_orders<C: Clock>(docs: &[Document], config: &BenchmarkConfig, engine: &EngineConfig, clock: &C) -> Result<Vec<VariantReport>> {
    config.validate()?;
    let build = build_index(docs, &EngineConfig { s: Some(1), ..engine.clone() }, None)?;
    let requests = workload(docs, config, 2)?;
    let plans = requests.iter().enumerate().map(|(i, r)| build.plan(r, rng::mix(config.seed ^ i as u64))).collect::<Result<Vec<_>>>()?;
    LeafOrder::ALL
        .iter()
        .map(|&order| {
            let tree = reorder_tree(&build, 0, order, config.seed)?;
            let queries: Vec<Vec<(&Tree<Vec<f64>>, Vec<f64>)>> =
                plans.iter().map(|p| p.vectors.iter().map(|(_, v)| (&tree, v.clone())).collect()).collect();
            Ok(run_variant(order.name(), &queries, config.k, Quota::PerTree, config.repetitions, clock))
        })
        .collect()
}

/// One likelihood-ordered tree over everything against the forest searching
/// the `t` partitions covering each query.
pub fn bench_forest<C: Clock>(docs: &[Document], config: &BenchmarkConfig, engine: &EngineConfig, clock: &C) -> Result<[VariantReport; 2]> {
    config.validate()?;
    let single = build_index(docs, &EngineConfig { s: Some(1), ..engine.clone() }, None)?;
    let forest = build_index(docs, &EngineConfig { s: Some(config.s), ..engine.clone() }, None)?;
    let requests = workload(docs, config, 2)?;
    let run = |name: &str, build: &IndexBuild, selection: Selection| -> Result<VariantReport> {
        let plans = requests
            .iter()
            .enumerate()
            .map(|(i, r)| build.plan(&r.clone().select(selection.clone()), rng::mix(config.seed ^ i as u64)))
            .collect::<Result<Vec<_>>>()?;
        let queries: Vec<Vec<(&Tree<Vec<f64>>, Vec<f64>)>> = plans
            .iter()
            .map(|p| p.vectors.iter().map(|(pid, v)| (&build.forest.trees[pid.0].tree, v.clone())).collect())
            .collect();
        Ok(run_variant(name, &queries, config.k, Quota::PerTree, config.repetitions, clock))
    };
    Ok([run("single_tree", &single, Selection::All)?, run("forest", &forest, Selection::Covering(config.t))?])
}

/// Per-insert touched-node counts in a forest and in a single tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateBench {
    pub forest_touched: Vec<usize>,
    pub single_touched: Vec<usize>,
    /// Trees touched by each forest insert.
    pub trees_touched: Vec<usize>,
    pub forest_depth: usize,
    pub single_depth: usize,
    /// `log(N/s) / log N`: expected per-insert cost ratio.
    pub per_insert_ratio: f64,
    /// `(2/s) log(N/s) / (2 log N)`: ratio amortized over one insert per partition.
    pub amortized_ratio: f64,
}

/// Inserts `config.updates` fresh synthetic documents into a forest and into
/// a single tree built from the same corpus and counts touched nodes.
pub fn bench_update(docs: &[Document], fresh: &[Document], config: &BenchmarkConfig, engine: &EngineConfig) -> Result<UpdateBench> {
    let mut forest = build_index(docs, &EngineConfig { s: Some(config.s), ..engine.clone() }, None)?;
    let mut single = build_index(docs, &EngineConfig { s: Some(1), ..engine.clone() }, None)?;
    let forest_depth = forest.forest.trees.iter().map(|t| t.tree.depth()).max().unwrap_or(0);
    let single_depth = single.forest.trees[0].tree.depth();
    let mut out = UpdateBench {
        forest_touched: Vec::new(),
        single_touched: Vec::new(),
        trees_touched: Vec::new(),
        forest_depth,
        single_depth,
        per_insert_ratio: 0.0,
        amortized_ratio: 0.0,
    };
    for doc in fresh.iter().take(config.updates) {
        let before: Vec<u64> = forest.forest.trees.iter().map(|t| t.tree.shape_hash()).collect();
        let r = insert_plain(&mut forest, doc)?;
        let after: Vec<u64> = forest.forest.trees.iter().map(|t| t.tree.shape_hash()).collect();
        out.trees_touched.push(before.iter().zip(&after).filter(|(a, b)| a != b).count());
        out.forest_touched.push(r.touched_count());
        out.single_touched.push(insert_plain(&mut single, doc)?.touched_count());
    }
    let n = docs.len() as f64;
    let s = config.s as f64;
    out.per_insert_ratio = libm::log2(n / s) / libm::log2(n);
    out.amortized_ratio = (2.0 / s) * libm::log2(n / s) / (2.0 * libm::log2(n));
    Ok(out)
}

/// Plaintext-only insert: documents whose terms are all known go into the
/// partition covering most of them with their owner's (or the mean) weights.
fn insert_plain(build: &mut IndexBuild, doc: &Document) -> Result<crate::forest::UpdateReport> {
    let binary = BinaryIndex::from_document(doc, &build.dictionary)?;
    let mut cover = alloc::vec![0usize; build.partitions.s()];
    for g in binary.ones() {
        if let Some((p, _)) = build.partitions.home_of(g) {
            cover[p.0] += 1;
        }
    }
    let target = (0..cover.len()).max_by(|&a, &b| cover[a].cmp(&cover[b]).then(b.cmp(&a))).ok_or(Error::NoPartitions)?;
    let partition = &build.partitions.partitions[target];
    let compressed = partition.compress(&binary);
    let w = build.weights[target].owner(doc.owner_id).map(<[f64]>::to_vec).unwrap_or_else(|| build.weights[target].fallback());
    let weighted = WeightedIndex { doc_id: doc.doc_id, owner_id: doc.owner_id, partition: partition.id, values: apply_weights(&compressed.bits, &w)? };
    let secure = padding::pad_index(&weighted, &build.noise.partitions[target], build.noise.seed)?;
    build.forest.trees[target].insert(doc.doc_id, secure.values)
}

/// Mean visited nodes of the likelihood-ordered single tree and forest for
/// growing corpus sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub docs: usize,
    pub single_nodes: f64,
    pub forest_nodes: f64,
    pub single_seconds: f64,
    pub forest_seconds: f64,
}

pub fn bench_scaling<C: Clock>(sizes: &[usize], config: &BenchmarkConfig, engine: &EngineConfig, clock: &C) -> Result<Vec<ScalingRow>> {
    sizes
        .iter()
        .map(|&n| {
            let cfg = BenchmarkConfig { docs: n, vocabulary: config.vocabulary * n / config.docs.max(1), ..config.clone() };
            let docs = synthetic_corpus(&cfg)?;
            let [single, forest] = bench_forest(&docs, &cfg, engine, clock)?;
            Ok(ScalingRow {
                docs: n,
                single_nodes: single.nodes().mean,
                forest_nodes: forest.nodes().mean,
                single_seconds: single.time().mean,
                forest_seconds: forest.time().mean,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(xs: &[u64]) -> Vec<DocId> {
        xs.iter().map(|&x| DocId(x)).collect()
    }

    #[test]
    fn precision_cases() {
        assert_eq!(precision(&ids(&[1, 2, 3]), &ids(&[3, 2, 1])), 1.0);
        assert_eq!(precision(&ids(&[1, 2]), &ids(&[3, 4])), 0.0);
        assert_eq!(precision(&ids(&[1, 2, 3, 4]), &ids(&[1, 9, 3, 8])), 0.5);
    }

    #[test]
    fn rank_privacy_cases() {
        assert_eq!(rank_privacy(&ids(&[1, 2, 3]), &ids(&[1, 2, 3])), 0.0);
        assert_eq!(rank_privacy(&ids(&[2, 1]), &ids(&[1, 2])), 0.5);
        // missing docs displaced by k
        assert_eq!(rank_privacy(&ids(&[5, 6]), &ids(&[1, 2])), 1.0);
    }

    #[test]
    fn equilibrium_anchors() {
        assert_eq!(equilibrium(0.0, 0.0), 0.0);
        assert_eq!(equilibrium(95.0, 80.0), 175.0);
    }

    #[test]
    fn efficiency_cases() {
        assert!((efficiency_ratio(1000.0, 1.0).unwrap() - 1.0).abs() < 1e-12);
        assert!((efficiency_ratio(16.0, 4.0).unwrap() - 8.0).abs() < 1e-12);
        assert!((efficiency_ratio(20000.0, 80.0).unwrap() - 143.0).abs() < 1.0);
        assert!(efficiency_ratio(4.0, 4.0).is_err());
    }

    #[test]
    fn storage_cases() {
        assert_eq!(storage_ratio(100.0, 1.0).unwrap(), 1.0);
        let r = storage_ratio(1024.0, 4.0).unwrap();
        assert!((r - 4.0).abs() < 0.02, "{r}");
        assert!((storage_ratio(1e9, 16.0).unwrap() - 16.0).abs() < 1e-6);
        assert!(storage_ratio(2.0, 4.0).is_err());
    }

    #[test]
    fn metrics_row() {
        let row = MetricsRow::new(&ids(&[2, 1]), &ids(&[1, 2]));
        assert_eq!(row.true_positives, 2);
        assert_eq!(row.f, equilibrium(100.0, 50.0));
    }

    #[test]
    fn summary() {
        let s = Summary::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        assert!((s.variance - 5.0 / 3.0).abs() < 1e-12);
        assert_eq!(Summary::of(&[]).count, 0);
    }
}
