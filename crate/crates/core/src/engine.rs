//! The four roles wired together.
//!
//! Data owners hand documents to the trusted proxy, which builds binary
//! indexes, partitions, weights, noise padding, keys and the plaintext forest.
//! The cloud server only ever receives the encrypted forest, update patches
//! and trapdoors. Users query through an attribute-gated grant.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::aspe::{self, SecretKey, Trapdoor};
use crate::corpus::{build_binary_indexes, build_dictionary, tokenize, validate_corpus, BinaryIndex, Document, KeywordDictionary};
use crate::eval::MetricsRow;
use crate::forest::{self, EncryptedForest, Forest, ForestSearch, Hit, MlsbTree, ProbeSet, Quota, TreePatch};
use crate::padding::{self, NoiseDistribution, NoiseModel, NoiseTrial, PartitionNoise, SecureWeightedIndex, TrialOutcome};
use crate::partitioning::{default_partition_count, partition_corpus, PartitionSet};
use crate::weighting::{apply_weights, build_correlativity, compute_weights, weight_indexes, CorrelativityMatrix, PartitionWeights, WeightedIndex};
use crate::{rng, DocId, Error, OwnerId, PartitionId, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    /// Partition count; `None` picks one per ~1000 keywords.
    pub s: Option<usize>,
    /// `U_i = ceil(u_ratio * N_i)`.
    pub u_ratio: f64,
    /// Non-zero pseudo entries per vector; `None` means `ceil(U_i / 2)`.
    /// Values above `U_i` are capped.
    pub omega: Option<usize>,
    pub noise: NoiseDistribution,
    /// Probe queries `R` for leaf ordering.
    pub probes: usize,
    pub probe_terms: usize,
    pub probe_exponent: f64,
    pub seed: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            s: None,
            u_ratio: 0.1,
            omega: None,
            noise: NoiseDistribution::Normal { sigma: 0.05 },
            probes: 1000,
            probe_terms: 3,
            probe_exponent: 1.0,
            seed: 0,
        }
    }
}

impl EngineConfig {
    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.noise = NoiseDistribution::Normal { sigma };
        self
    }

    fn partition_noise(&self, width: usize) -> Result<PartitionNoise> {
        let base = PartitionNoise::with_ratio(width, self.u_ratio, self.noise)?;
        match self.omega {
            Some(w) => PartitionNoise::new(base.pseudo, w.min(base.pseudo), self.noise),
            None => Ok(base),
        }
    }
}

/// Plaintext artifacts of a build, in pipeline order.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexBuild {
    pub config: EngineConfig,
    pub dictionary: KeywordDictionary,
    pub indexes: Vec<BinaryIndex>,
    pub partitions: PartitionSet,
    pub correlativity: Vec<CorrelativityMatrix>,
    pub weights: Vec<PartitionWeights>,
    pub weighted: Vec<Vec<WeightedIndex>>,
    pub noise: NoiseModel,
    pub secure: Vec<Vec<SecureWeightedIndex>>,
    pub forest: Forest,
}

/// Every artifact of a build: the plaintext stages plus keys and the encrypted forest.
#[derive(Debug, Clone, PartialEq)]
pub struct Pipeline {
    pub index: IndexBuild,
    pub keys: SecretKey,
    pub encrypted: EncryptedForest,
}

impl core::ops::Deref for Pipeline {
    type Target = IndexBuild;
    fn deref(&self) -> &IndexBuild {
        &self.index
    }
}

pub fn build_pipeline(docs: &[Document], config: &EngineConfig) -> Result<Pipeline> {
    build_pipeline_with(docs, config, None)
}

/// As [`build_pipeline`], optionally with externally supplied correlativity
/// matrices (one per partition, matching sub-dictionary sizes).
pub fn build_pipeline_with(docs: &[Document], config: &EngineConfig, correlativity: Option<Vec<CorrelativityMatrix>>) -> Result<Pipeline> {
    let index = build_index(docs, config, correlativity)?;
    let dims: Vec<usize> = index.partitions.partitions.iter().zip(&index.noise.partitions).map(|(p, n)| p.width() + n.pseudo).collect();
    let keys = aspe::keygen(&dims, config.seed)?;
    let encrypted = forest::encrypt_forest(&index.forest, &keys, config.seed)?;
    Ok(Pipeline { index, keys, encrypted })
}

/// Runs every plaintext stage: dictionary, binary indexes, partitioning,
/// weighting, padding and the likelihood-ordered forest.
pub fn build_index(docs: &[Document], config: &EngineConfig, correlativity: Option<Vec<CorrelativityMatrix>>) -> Result<IndexBuild> {
    validate_corpus(docs)?;
    let dictionary = build_dictionary(docs)?;
    let indexes = build_binary_indexes(docs, &dictionary)?;
    let s = config.s.unwrap_or_else(|| default_partition_count(dictionary.len()));
    if s > docs.len() {
        return Err(Error::PartitionCount { s, max: docs.len() });
    }
    let partitions = partition_corpus(&indexes, &dictionary, s, config.seed)?;
    let correlativity = match correlativity {
        Some(c) => {
            if c.len() != s {
                return Err(Error::Dimension { expected: s, actual: c.len() });
            }
            c
        }
        None => partitions.partitions.iter().map(build_correlativity).collect(),
    };
    let mut weights = Vec::with_capacity(s);
    let mut weighted = Vec::with_capacity(s);
    for (p, corr) in partitions.partitions.iter().zip(&correlativity) {
        let w = compute_weights(p, corr)?;
        weighted.push(weight_indexes(p, &w)?);
        weights.push(w);
    }
    let noise = NoiseModel {
        partitions: partitions.partitions.iter().map(|p| config.partition_noise(p.width())).collect::<Result<_>>()?,
        seed: config.seed,
    };
    let secure = weighted
        .iter()
        .zip(&noise.partitions)
        .map(|(w, n)| padding::pad_partition(w, n, noise.seed))
        .collect::<Result<Vec<_>>>()?;
    let probes = partitions
        .partitions
        .iter()
        .zip(&noise.partitions)
        .map(|(p, n)| probe_set(p, p.width() + n.pseudo, config))
        .collect::<Result<Vec<_>>>()?;
    let forest = build_forest(&secure, &probes)?;
    Ok(IndexBuild { config: config.clone(), dictionary, indexes, partitions, correlativity, weights, weighted, noise, secure, forest })
}

impl IndexBuild {
    /// Plaintext query vectors with pseudo-keyword values drawn from `seed`.
    pub fn plan(&self, request: &SearchRequest, seed: u64) -> Result<QueryPlan> {
        let mut r = rng::stream(seed, &[rng::label::QUERY]);
        plan_with(&self.dictionary, &self.partitions, &self.noise, request, &mut r)
    }

    /// Exact ranking on unpadded weighted scores over every partition.
    pub fn exact_top_k(&self, request: &SearchRequest) -> Result<Vec<Hit>> {
        let resolved = resolve(&self.dictionary, &self.partitions, request)?;
        Ok(exact_scores(&self.forest, &self.partitions, &resolved, request.k))
    }
}

fn probe_set(p: &crate::partitioning::Partition, dim: usize, config: &EngineConfig) -> Result<ProbeSet> {
    let mut df = vec![0u32; p.width()];
    for m in &p.members {
        for &(l, _) in &m.counts {
            df[l] += 1;
        }
    }
    ProbeSet::zipf(dim, &df, config.probes, config.probe_terms, config.probe_exponent, rng::mix(config.seed ^ p.id.0 as u64))
}

fn build_forest(secure: &[Vec<SecureWeightedIndex>], probes: &[ProbeSet]) -> Result<Forest> {
    let trees = secure
        .iter()
        .zip(probes)
        .enumerate()
        .map(|(i, (idx, pr))| {
            let leaves = idx.iter().map(|x| (x.doc_id, x.values.clone())).collect();
            MlsbTree::build(PartitionId(i), leaves, pr.clone())
        })
        .collect::<Result<_>>()?;
    Ok(Forest { trees })
}

/// Documents each owner submitted.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OwnerRegistry {
    pub owners: BTreeMap<OwnerId, Vec<Document>>,
}

impl OwnerRegistry {
    pub fn from_documents(docs: &[Document]) -> Result<Self> {
        validate_corpus(docs)?;
        let mut reg = Self::default();
        for d in docs {
            reg.owners.entry(d.owner_id).or_default().push(d.clone());
        }
        Ok(reg)
    }

    pub fn contains(&self, doc: DocId) -> bool {
        self.owners.values().flatten().any(|d| d.doc_id == doc)
    }

    pub fn add(&mut self, doc: Document) -> Result<()> {
        if self.contains(doc.doc_id) {
            return Err(Error::DuplicateDocument(doc.doc_id));
        }
        self.owners.entry(doc.owner_id).or_default().push(doc);
        Ok(())
    }

    pub fn remove(&mut self, doc: DocId) -> Result<Document> {
        for docs in self.owners.values_mut() {
            if let Some(i) = docs.iter().position(|d| d.doc_id == doc) {
                return Ok(docs.remove(i));
            }
        }
        Err(Error::UnknownDocument(doc))
    }

    pub fn documents(&self) -> Vec<Document> {
        let mut all: Vec<Document> = self.owners.values().flatten().cloned().collect();
        all.sort_by_key(|d| d.doc_id);
        all
    }
}

/// Attributes required to query each partition.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AccessPolicy {
    pub required: BTreeMap<PartitionId, BTreeSet<String>>,
}

impl AccessPolicy {
    pub fn grant(&self, user_id: u64, attributes: BTreeSet<String>, s: usize) -> UserGrant {
        let partitions = (0..s)
            .map(PartitionId)
            .filter(|p| self.required.get(p).is_none_or(|need| need.is_subset(&attributes)))
            .collect();
        UserGrant { user_id, attributes, partitions }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserGrant {
    pub user_id: u64,
    pub attributes: BTreeSet<String>,
    pub partitions: BTreeSet<PartitionId>,
}

impl UserGrant {
    /// Grant covering partitions `0..s`.
    pub fn all(user_id: u64, s: usize) -> Self {
        Self { user_id, attributes: BTreeSet::new(), partitions: (0..s).map(PartitionId).collect() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Allow,
    Deny,
}

/// Allows a request iff every requested partition is granted.
pub fn authorize(grant: &UserGrant, requested: &[PartitionId]) -> Decision {
    if requested.iter().all(|p| grant.partitions.contains(p)) {
        Decision::Allow
    } else {
        Decision::Deny
    }
}

/// Which partitions a request searches.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Selection {
    All,
    /// The `t` partitions holding most of the query keywords (ties to the lower id).
    Covering(usize),
    Explicit(Vec<PartitionId>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRequest {
    /// Keywords with non-negative weights.
    pub keywords: Vec<(String, f64)>,
    pub k: usize,
    pub selection: Selection,
    pub quota: Quota,
}

impl SearchRequest {
    /// Unit weight per keyword, all partitions, `ceil(k/t)` per tree.
    pub fn new<S: AsRef<str>>(keywords: &[S], k: usize) -> Self {
        Self {
            keywords: keywords.iter().map(|w| (w.as_ref().to_string(), 1.0)).collect(),
            k,
            selection: Selection::All,
            quota: Quota::PerTree,
        }
    }

    pub fn select(mut self, selection: Selection) -> Self {
        self.selection = selection;
        self
    }

    pub fn quota(mut self, quota: Quota) -> Self {
        self.quota = quota;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub hits: Vec<Hit>,
    pub visited: Vec<(PartitionId, usize)>,
    /// Filled in by callers that can measure time.
    pub elapsed: Option<Duration>,
}

impl SearchResult {
    pub fn doc_ids(&self) -> Vec<DocId> {
        self.hits.iter().map(|h| h.doc_id).collect()
    }

    pub fn total_visited(&self) -> usize {
        self.visited.iter().map(|v| v.1).sum()
    }
}

impl From<ForestSearch> for SearchResult {
    fn from(f: ForestSearch) -> Self {
        Self { visited: f.per_tree.iter().map(|t| (t.partition, t.visited)).collect(), hits: f.hits, elapsed: None }
    }
}

/// Plaintext query vectors for the selected partitions.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryPlan {
    pub vectors: Vec<(PartitionId, Vec<f64>)>,
}

impl QueryPlan {
    pub fn partitions(&self) -> Vec<PartitionId> {
        self.vectors.iter().map(|v| v.0).collect()
    }
}

/// Normalizes request keywords like document terms and resolves each to
/// `(partition, local dimension, weight)`. Unknown keywords are dropped.
fn resolve(dictionary: &KeywordDictionary, partitions: &PartitionSet, request: &SearchRequest) -> Result<Vec<(PartitionId, usize, f64)>> {
    let mut out = Vec::new();
    for (i, (w, weight)) in request.keywords.iter().enumerate() {
        if !(*weight >= 0.0) {
            return Err(Error::NegativeQuery { position: i, value: *weight });
        }
        for token in tokenize(w) {
            if let Some((p, l)) = dictionary.position(&token).and_then(|g| partitions.home_of(g)) {
                out.push((p, l, *weight));
            }
        }
    }
    Ok(out)
}

fn select(partitions: &PartitionSet, resolved: &[(PartitionId, usize, f64)], selection: &Selection) -> Result<Vec<PartitionId>> {
    let s = partitions.s();
    let chosen = match selection {
        Selection::All => (0..s).map(PartitionId).collect(),
        Selection::Covering(t) => {
            if *t == 0 || *t > s {
                return Err(Error::InvalidParameter("t must be in 1..=s"));
            }
            let mut cover = vec![0usize; s];
            for (p, _, _) in resolved {
                cover[p.0] += 1;
            }
            let mut order: Vec<usize> = (0..s).collect();
            order.sort_by(|&a, &b| cover[b].cmp(&cover[a]).then(a.cmp(&b)));
            let mut picked: Vec<PartitionId> = order.into_iter().take(*t).map(PartitionId).collect();
            picked.sort();
            picked
        }
        Selection::Explicit(list) => {
            let mut list = list.clone();
            list.sort();
            list.dedup();
            for p in &list {
                partitions.partition(*p)?;
            }
            list
        }
    };
    if chosen.is_empty() {
        return Err(Error::NoPartitions);
    }
    Ok(chosen)
}

/// The proxy's view: everything except the server's encrypted forest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrustedProxy {
    pub config: EngineConfig,
    pub dictionary: KeywordDictionary,
    pub partitions: PartitionSet,
    pub weights: Vec<PartitionWeights>,
    pub noise: NoiseModel,
    #[serde(skip)]
    pub keys: SecretKey,
    #[serde(skip)]
    pub forest: Forest,
    /// Trapdoors issued so far; each gets its own random stream.
    pub issued: u64,
    /// Key and re-encryption generation, bumped on every update.
    pub epoch: u64,
}

impl Default for SecretKey {
    fn default() -> Self {
        Self { partitions: Vec::new() }
    }
}

impl Default for Forest {
    fn default() -> Self {
        Self { trees: Vec::new() }
    }
}

/// Outcome of a document insert or delete.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateOutcome {
    pub partition: PartitionId,
    /// Nodes re-encrypted and pushed to the server.
    pub touched: usize,
    pub rebuilt: bool,
    /// Keywords added to the dictionary (non-zero forces a key extension).
    pub new_keywords: usize,
    pub patch: TreePatch,
}

impl TrustedProxy {
    pub fn s(&self) -> usize {
        self.partitions.s()
    }

    /// Selected partitions for a request.
    pub fn selection(&self, request: &SearchRequest) -> Result<Vec<PartitionId>> {
        let resolved = resolve(&self.dictionary, &self.partitions, request)?;
        select(&self.partitions, &resolved, &request.selection)
    }

    /// Query vectors with fresh pseudo-keyword values `alpha ~ U[0, 1]`.
    pub fn plan(&mut self, request: &SearchRequest) -> Result<QueryPlan> {
        let mut r = rng::stream(self.config.seed, &[rng::label::QUERY, self.issued]);
        self.issued += 1;
        plan_with(&self.dictionary, &self.partitions, &self.noise, request, &mut r)
    }

    pub fn trapdoors(&mut self, plan: &QueryPlan) -> Result<Vec<Trapdoor>> {
        let mut r = rng::stream(self.config.seed, &[rng::label::TRAPDOOR, self.issued]);
        self.issued += 1;
        trapdoors_with(&self.keys, plan, &mut r)
    }

    /// Exact ranking on unpadded weighted scores over every partition.
    pub fn exact_top_k(&self, request: &SearchRequest) -> Result<Vec<Hit>> {
        let resolved = resolve(&self.dictionary, &self.partitions, request)?;
        Ok(exact_scores(&self.forest, &self.partitions, &resolved, request.k))
    }

    /// Server state rebuilt from scratch from the current leaves.
    pub fn rebuilt_server(&self) -> Result<CloudServer> {
        let forest = Forest {
            trees: self
                .forest
                .trees
                .iter()
                .map(|t| MlsbTree::build(t.partition(), t.tree.leaves_in_order(), t.probes.clone()))
                .collect::<Result<_>>()?,
        };
        Ok(CloudServer::new(forest::encrypt_forest(&forest, &self.keys, rng::mix(self.config.seed ^ self.epoch))?))
    }

    fn patch_rng(&mut self) -> rng::StreamRng {
        self.epoch += 1;
        rng::stream(self.config.seed, &[rng::label::ENCRYPT, u64::MAX, self.epoch])
    }

    /// Adds a document. Its owner's weights are used when the owner already
    /// has documents in the target partition, otherwise the mean over owners.
    /// Unseen keywords extend the dictionary and the target partition's key;
    /// that partition is then re-encrypted in full.
    pub fn insert(&mut self, doc: &Document) -> Result<UpdateOutcome> {
        if self.forest.locate(doc.doc_id).is_some() {
            return Err(Error::DuplicateDocument(doc.doc_id));
        }
        let mut cover = vec![0usize; self.s()];
        let mut unseen = Vec::new();
        for term in doc.distinct_terms() {
            match self.dictionary.position(term) {
                Some(g) => {
                    if let Some((p, _)) = self.partitions.home_of(g) {
                        cover[p.0] += 1;
                    }
                }
                None => unseen.push(term.to_string()),
            }
        }
        let target = (0..cover.len()).max_by(|&a, &b| cover[a].cmp(&cover[b]).then(b.cmp(&a))).ok_or(Error::NoPartitions)?;
        let pid = PartitionId(target);
        let new_globals: Vec<usize> = unseen.iter().map(|w| self.dictionary.push(w)).collect();
        let z = new_globals.len();
        if z > 0 {
            let width = self.partitions.partitions[target].width();
            self.partitions.partitions[target].extend_keywords(&new_globals);
            self.weights[target].extend(z, doc.owner_id);
            let tree = &mut self.forest.trees[target];
            tree.tree.widen(width, z);
            tree.probes.aggregate.splice(width..width, core::iter::repeat_n(0.0, z));
            let mut r = rng::stream(self.config.seed, &[rng::label::KEYGEN, target as u64, self.epoch + 1]);
            self.keys.partitions[target] = aspe::extend_key(&self.keys.partitions[target], z, &mut r)?;
        }
        let binary = BinaryIndex::from_document(doc, &self.dictionary)?;
        let partition = &mut self.partitions.partitions[target];
        let compressed = partition.compress(&binary);
        let weights = self.weights[target].owner(doc.owner_id).map(<[f64]>::to_vec).unwrap_or_else(|| {
            let mut w = self.weights[target].fallback();
            let n = w.len();
            w[n - z..].iter_mut().for_each(|x| *x = 1.0);
            w
        });
        let weighted = WeightedIndex { doc_id: doc.doc_id, owner_id: doc.owner_id, partition: pid, values: apply_weights(&compressed.bits, &weights)? };
        let secure = padding::pad_index(&weighted, &self.noise.partitions[target], self.noise.seed)?;
        let at = partition.members.partition_point(|m| m.doc_id < doc.doc_id);
        partition.members.insert(at, compressed);
        self.partitions.assignments.insert(doc.doc_id, pid);
        let report = self.forest.trees[target].insert(doc.doc_id, secure.values)?;
        let mut r = self.patch_rng();
        let full = z > 0 || report.rebuilt;
        let tree = &self.forest.trees[target];
        let patch = tree.patch(if full { None } else { Some(&report.touched) }, &self.keys.partitions[target], &mut r)?;
        Ok(UpdateOutcome { partition: pid, touched: patch.payloads.len(), rebuilt: report.rebuilt, new_keywords: z, patch })
    }

    pub fn delete(&mut self, doc: DocId) -> Result<UpdateOutcome> {
        let pid = self.forest.locate(doc).ok_or(Error::UnknownDocument(doc))?;
        let report = self.forest.trees[pid.0].delete(doc)?;
        self.partitions.assignments.remove(&doc);
        self.partitions.partitions[pid.0].members.retain(|m| m.doc_id != doc);
        let mut r = self.patch_rng();
        let tree = &self.forest.trees[pid.0];
        let patch = tree.patch(if report.rebuilt { None } else { Some(&report.touched) }, &self.keys.partitions[pid.0], &mut r)?;
        Ok(UpdateOutcome { partition: pid, touched: patch.payloads.len(), rebuilt: report.rebuilt, new_keywords: 0, patch })
    }

    /// Restores lookup tables after deserialization.
    pub fn reindex(&mut self) {
        self.dictionary.reindex();
        for p in &mut self.partitions.partitions {
            p.reindex();
        }
    }
}

fn plan_with<R: Rng + ?Sized>(
    dictionary: &KeywordDictionary,
    partitions: &PartitionSet,
    noise: &NoiseModel,
    request: &SearchRequest,
    r: &mut R,
) -> Result<QueryPlan> {
    if request.k == 0 {
        return Err(Error::InvalidParameter("k must be >= 1"));
    }
    let resolved = resolve(dictionary, partitions, request)?;
    let chosen = select(partitions, &resolved, &request.selection)?;
    let vectors = chosen
        .into_iter()
        .map(|p| {
            let width = partitions.partitions[p.0].width();
            let pseudo = noise.partitions[p.0].pseudo;
            let mut q = vec![0.0; width + pseudo];
            for &(home, l, w) in &resolved {
                if home == p {
                    q[l] += w;
                }
            }
            q[width..].iter_mut().for_each(|a| *a = r.gen::<f64>());
            (p, q)
        })
        .collect();
    Ok(QueryPlan { vectors })
}

fn trapdoors_with<R: Rng + ?Sized>(keys: &SecretKey, plan: &QueryPlan, r: &mut R) -> Result<Vec<Trapdoor>> {
    plan.vectors.iter().map(|(p, q)| aspe::make_trapdoor(*p, q, keys.partition(*p)?, r)).collect()
}

fn exact_scores(forest: &Forest, partitions: &PartitionSet, resolved: &[(PartitionId, usize, f64)], k: usize) -> Vec<Hit> {
    let mut scores = Vec::new();
    for tree in &forest.trees {
        let p = tree.partition();
        let width = partitions.partitions[p.0].width();
        let mut q = vec![0.0; width];
        for &(home, l, w) in resolved {
            if home == p {
                q[l] += w;
            }
        }
        for (doc, v) in tree.tree.leaves_in_order() {
            scores.push((doc, crate::linalg::dot(&v[..width], &q)));
        }
    }
    forest::top_k(scores, k)
}

/// The server holds the encrypted forest and nothing else.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloudServer {
    pub forest: EncryptedForest,
}

impl CloudServer {
    pub fn new(forest: EncryptedForest) -> Self {
        Self { forest }
    }

    pub fn search(&self, trapdoors: &[Trapdoor], k: usize, quota: Quota) -> Result<ForestSearch> {
        self.forest.search(trapdoors, k, quota)
    }

    pub fn apply(&mut self, patch: TreePatch) -> Result<()> {
        self.forest.apply_patch(patch)
    }
}

/// Owners, proxy and server in one process.
#[derive(Debug, Clone, PartialEq)]
pub struct Engine {
    pub owners: OwnerRegistry,
    pub proxy: TrustedProxy,
    pub server: CloudServer,
}

impl Engine {
    pub fn build(docs: &[Document], config: &EngineConfig) -> Result<Self> {
        Ok(Self::from_pipeline(build_pipeline(docs, config)?, OwnerRegistry::from_documents(docs)?))
    }

    pub fn from_pipeline(p: Pipeline, owners: OwnerRegistry) -> Self {
        let Pipeline { index: p, keys, encrypted } = p;
        let proxy = TrustedProxy {
            config: p.config,
            dictionary: p.dictionary,
            partitions: p.partitions,
            weights: p.weights,
            noise: p.noise,
            keys,
            forest: p.forest,
            issued: 0,
            epoch: 0,
        };
        Self { owners, proxy, server: CloudServer::new(encrypted) }
    }

    /// Authorizes, builds trapdoors and searches the encrypted forest.
    pub fn query(&mut self, request: &SearchRequest, grant: &UserGrant) -> Result<SearchResult> {
        let selected = self.proxy.selection(request)?;
        if authorize(grant, &selected) == Decision::Deny {
            return Err(Error::AccessDenied);
        }
        let plan = self.proxy.plan(request)?;
        let trapdoors = self.proxy.trapdoors(&plan)?;
        Ok(self.server.search(&trapdoors, request.k, request.quota)?.into())
    }

    pub fn insert_document(&mut self, doc: Document) -> Result<UpdateOutcome> {
        if self.owners.contains(doc.doc_id) {
            return Err(Error::DuplicateDocument(doc.doc_id));
        }
        let out = self.proxy.insert(&doc)?;
        self.server.apply(out.patch.clone())?;
        self.owners.add(doc)?;
        Ok(out)
    }

    pub fn delete_document(&mut self, doc: DocId) -> Result<UpdateOutcome> {
        let out = self.proxy.delete(doc)?;
        self.server.apply(out.patch.clone())?;
        self.owners.remove(doc)?;
        Ok(out)
    }
}

/// Re-runs padding, tree building, encryption and search for each noise level
/// on a fixed query sample. Keys, probes and query randomness are reused
/// across levels, so only the noise differs between trials.
pub struct NoiseSweep<'a> {
    pipeline: &'a Pipeline,
    requests: Vec<SearchRequest>,
    exact: Vec<Vec<Hit>>,
    probes: Vec<ProbeSet>,
    seed: u64,
}

impl<'a> NoiseSweep<'a> {
    pub fn new(pipeline: &'a Pipeline, requests: Vec<SearchRequest>, seed: u64) -> Result<Self> {
        let exact = requests
            .iter()
            .map(|r| {
                let resolved = resolve(&pipeline.dictionary, &pipeline.partitions, r)?;
                Ok(exact_scores(&pipeline.forest, &pipeline.partitions, &resolved, r.k))
            })
            .collect::<Result<Vec<_>>>()?;
        let probes = pipeline.forest.trees.iter().map(|t| t.probes.clone()).collect();
        Ok(Self { pipeline, requests, exact, probes, seed })
    }

    pub fn requests(&self) -> &[SearchRequest] {
        &self.requests
    }

    /// Results of every request at one noise level.
    pub fn run(&self, sigma: f64) -> Result<Vec<(ForestSearch, Vec<Hit>)>> {
        let p = self.pipeline;
        let dist = NoiseDistribution::Normal { sigma };
        let noise = NoiseModel {
            partitions: p.noise.partitions.iter().map(|n| n.with_distribution(dist)).collect::<Result<_>>()?,
            seed: p.noise.seed,
        };
        let secure = p
            .weighted
            .iter()
            .zip(&noise.partitions)
            .map(|(w, n)| padding::pad_partition(w, n, noise.seed))
            .collect::<Result<Vec<_>>>()?;
        let forest = build_forest(&secure, &self.probes)?;
        let encrypted = forest::encrypt_forest(&forest, &p.keys, self.seed)?;
        self.requests
            .iter()
            .zip(&self.exact)
            .enumerate()
            .map(|(i, (req, exact))| {
                let mut r = rng::stream(self.seed, &[rng::label::QUERY, i as u64]);
                let plan = plan_with(&p.dictionary, &p.partitions, &noise, req, &mut r)?;
                let trapdoors = trapdoors_with(&p.keys, &plan, &mut r)?;
                Ok((encrypted.search(&trapdoors, req.k, req.quota)?, exact.clone()))
            })
            .collect()
    }
}

impl NoiseTrial for NoiseSweep<'_> {
    fn trial(&mut self, sigma: f64) -> Result<TrialOutcome> {
        let runs = self.run(sigma)?;
        let n = runs.len().max(1) as f64;
        let (mut precision, mut privacy) = (0.0, 0.0);
        let (mut padded_scores, mut exact_scores) = (Vec::new(), Vec::new());
        for (got, exact) in &runs {
            let retrieved: Vec<DocId> = got.hits.iter().map(|h| h.doc_id).collect();
            let truth: Vec<DocId> = exact.iter().map(|h| h.doc_id).collect();
            let row = MetricsRow::new(&retrieved, &truth);
            precision += row.precision;
            privacy += row.rank_privacy;
            padded_scores.extend(got.hits.iter().map(|h| h.score));
            exact_scores.extend(exact.iter().take(got.hits.len()).map(|h| h.score));
        }
        padded_scores.truncate(exact_scores.len());
        Ok(TrialOutcome { precision: precision / n, rank_privacy: privacy / n, padded_scores, exact_scores })
    }
}

/// Metrics of one engine query against the exact ranking.
pub fn evaluate(result: &SearchResult, exact: &[Hit]) -> MetricsRow {
    let truth: Vec<DocId> = exact.iter().map(|h| h.doc_id).collect();
    MetricsRow::new(&result.doc_ids(), &truth)
}

/// Requests sampled from keyword lists, keeping only those with at least `k`
/// documents of positive exact score so precision is well defined.
pub fn sample_requests(pipeline: &IndexBuild, queries: &[Vec<String>], k: usize, selection: Selection, quota: Quota, limit: usize) -> Result<Vec<SearchRequest>> {
    let mut out = Vec::new();
    for q in queries {
        if out.len() == limit {
            break;
        }
        let req = SearchRequest::new(q, k).select(selection.clone()).quota(quota);
        let resolved = resolve(&pipeline.dictionary, &pipeline.partitions, &req)?;
        let exact = exact_scores(&pipeline.forest, &pipeline.partitions, &resolved, k);
        if exact.len() == k && exact.iter().all(|h| h.score > 0.0) {
            out.push(req);
        }
    }
    Ok(out)
}

