//! Seeded synthetic corpora and Zipf query workloads.
//!
//! The vocabulary is split evenly into topics; word `j` of topic `t` is the
//! string `t{t}w{j}`. Each owner writes mostly about one topic. Terms inside a
//! topic follow a Zipf law, and every vocabulary word is planted at least once
//! so the dictionary has exactly the requested size.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::{rng, DocId, Error, OwnerId, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub docs: usize,
    pub vocabulary: usize,
    pub owners: usize,
    pub topics: usize,
    /// Token count range per document, inclusive.
    pub doc_len: (usize, usize),
    pub zipf_exponent: f64,
    /// Probability that a document is about a topic other than its owner's.
    pub off_topic: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn new(docs: usize, vocabulary: usize, seed: u64) -> Self {
        let topics = vocabulary.div_ceil(500).clamp(1, docs.max(1));
        Self {
            docs,
            vocabulary,
            owners: (2 * topics).max(2),
            topics,
            doc_len: (30, 60),
            zipf_exponent: 1.0,
            off_topic: 0.1,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.docs == 0 || self.owners == 0 || self.topics == 0 {
            return Err(Error::InvalidParameter("docs, owners and topics must be positive"));
        }
        if self.vocabulary < self.topics {
            return Err(Error::InvalidParameter("need at least one word per topic"));
        }
        if self.doc_len.0 == 0 || self.doc_len.0 > self.doc_len.1 {
            return Err(Error::InvalidParameter("bad document length range"));
        }
        if !(0.0..=1.0).contains(&self.off_topic) {
            return Err(Error::InvalidParameter("off-topic rate must be in [0, 1]"));
        }
        Ok(())
    }
}

pub fn word(topic: usize, index: usize) -> String {
    format!("t{topic}w{index}")
}

/// Topic vocabulary sizes: `n / T` each, the first `n mod T` one larger.
pub fn topic_sizes(vocabulary: usize, topics: usize) -> Vec<usize> {
    (0..topics).map(|t| vocabulary / topics + usize::from(t < vocabulary % topics)).collect()
}

fn zipf(n: usize, exponent: f64) -> WeightedIndex<f64> {
    WeightedIndex::new((1..=n).map(|r| libm::pow(r as f64, -exponent))).expect("non-empty positive weights")
}

/// Document ids run `1..=docs`, owners `1..=owners` round robin.
pub fn generate(config: &SynthConfig) -> Result<Vec<Document>> {
    config.validate()?;
    let sizes = topic_sizes(config.vocabulary, config.topics);
    let dists: Vec<_> = sizes.iter().map(|&n| zipf(n, config.zipf_exponent)).collect();
    let mut r = rng::stream(config.seed, &[rng::label::CORPUS]);
    let mut topic_of = Vec::with_capacity(config.docs);
    let mut terms: Vec<Vec<String>> = Vec::with_capacity(config.docs);
    let mut used: Vec<Vec<bool>> = sizes.iter().map(|&n| alloc::vec![false; n]).collect();
    for d in 0..config.docs {
        let owner = d % config.owners;
        let topic = if r.gen::<f64>() < config.off_topic { r.gen_range(0..config.topics) } else { owner % config.topics };
        let len = r.gen_range(config.doc_len.0..=config.doc_len.1);
        let doc_terms = (0..len)
            .map(|_| {
                let j = dists[topic].sample(&mut r);
                used[topic][j] = true;
                word(topic, j)
            })
            .collect();
        topic_of.push(topic);
        terms.push(doc_terms);
    }
    for (topic, flags) in used.iter().enumerate() {
        let home: Vec<usize> = (0..config.docs).filter(|&d| topic_of[d] == topic).collect();
        for (j, _) in flags.iter().enumerate().filter(|(_, &u)| !u) {
            let d = if home.is_empty() { r.gen_range(0..config.docs) } else { home[r.gen_range(0..home.len())] };
            terms[d].push(word(topic, j));
        }
    }
    terms
        .into_iter()
        .enumerate()
        .map(|(d, t)| Document::from_terms(DocId(d as u64 + 1), OwnerId((d % config.owners) as u32 + 1), t))
        .collect()
}

/// Keyword queries drawn per topic: pick a topic in proportion to its
/// top document frequency, then `terms` distinct keywords with Zipf probability over
/// the topic's words ranked by document frequency.
pub fn zipf_queries(docs: &[Document], count: usize, terms: usize, exponent: f64, seed: u64) -> Result<Vec<Vec<String>>> {
    if docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    // document frequency per word, grouped by the topic prefix of the word
    let mut df: BTreeMap<String, BTreeMap<&str, usize>> = BTreeMap::new();
    for d in docs {
        for w in d.distinct_terms() {
            let topic = w.split_once('w').map_or("", |(t, _)| t);
            *df.entry(topic.into()).or_default().entry(w).or_default() += 1;
        }
    }
    let groups: Vec<Vec<&str>> = df
        .values()
        .map(|m| {
            let mut words: Vec<(&str, usize)> = m.iter().map(|(w, &c)| (*w, c)).collect();
            words.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
            words.into_iter().map(|(w, _)| w).collect()
        })
        .collect();
    let topic_weight: Vec<f64> = df.values().map(|m| m.values().copied().max().unwrap_or(1) as f64).collect();
    let pick_topic = WeightedIndex::new(&topic_weight).map_err(|_| Error::EmptyCorpus)?;
    let mut r = rng::stream(seed, &[rng::label::QUERY]);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let words = &groups[pick_topic.sample(&mut r)];
        let want = terms.min(words.len()).max(1);
        let dist = zipf(words.len(), exponent);
        let mut q: Vec<String> = Vec::with_capacity(want);
        while q.len() < want {
            let w = words[dist.sample(&mut r)];
            if !q.iter().any(|x| x == w) {
                q.push(w.into());
            }
        }
        out.push(q);
    }
    Ok(out)
}
