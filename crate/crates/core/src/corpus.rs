//! Documents, the global keyword dictionary and binary index vectors.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{DocId, Error, OwnerId, Result};

/// Whitespace split, lowercase, and drop every non-alphanumeric character.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|raw| raw.chars().filter(|c| c.is_alphanumeric()).flat_map(char::to_lowercase).collect::<String>())
        .filter(|t| !t.is_empty())
        .collect()
}

/// A document contributed by one owner. Term counts are kept for weighting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: DocId,
    pub owner_id: OwnerId,
    terms: BTreeMap<String, u32>,
}

impl Document {
    pub fn from_text(doc_id: DocId, owner_id: OwnerId, text: &str) -> Result<Self> {
        Self::from_terms(doc_id, owner_id, tokenize(text))
    }

    /// Builds a document from an already tokenized term list (repeats count).
    pub fn from_terms<I, S>(doc_id: DocId, owner_id: OwnerId, terms: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut counts = BTreeMap::new();
        for term in terms {
            let term = term.as_ref();
            if term.is_empty() {
                continue;
            }
            *counts.entry(term.to_string()).or_insert(0) += 1;
        }
        if counts.is_empty() {
            return Err(Error::EmptyDocument(doc_id));
        }
        Ok(Self { doc_id, owner_id, terms: counts })
    }

    /// Distinct terms, sorted.
    pub fn distinct_terms(&self) -> impl Iterator<Item = &str> {
        self.terms.keys().map(String::as_str)
    }

    pub fn term_counts(&self) -> impl Iterator<Item = (&str, u32)> {
        self.terms.iter().map(|(t, &c)| (t.as_str(), c))
    }

    pub fn count(&self, term: &str) -> u32 {
        self.terms.get(term).copied().unwrap_or(0)
    }
}

/// Checks corpus-level invariants: non-empty and unique ids.
pub fn validate_corpus(docs: &[Document]) -> Result<()> {
    if docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut seen = BTreeSet::new();
    for d in docs {
        if !seen.insert(d.doc_id) {
            return Err(Error::DuplicateDocument(d.doc_id));
        }
    }
    Ok(())
}

/// Lexicographically ordered keyword list; a word's position is its dimension.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordDictionary {
    words: Vec<String>,
    #[serde(skip)]
    position: BTreeMap<String, usize>,
}

impl KeywordDictionary {
    /// Sorts and deduplicates `words`.
    pub fn new<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = words.into_iter().map(Into::into).collect();
        let words: Vec<String> = set.into_iter().collect();
        let position = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Self { words, position }
    }

    /// Restores the position map after deserialization.
    pub fn reindex(&mut self) {
        self.position = self.words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn word(&self, dim: usize) -> Option<&str> {
        self.words.get(dim).map(String::as_str)
    }

    pub fn position(&self, word: &str) -> Option<usize> {
        self.position.get(word).copied()
    }

    /// Appends a word at the end, outside lexicographic order. Used when a
    /// dynamic update introduces a keyword unseen at build time.
    pub fn push(&mut self, word: &str) -> usize {
        if let Some(p) = self.position(word) {
            return p;
        }
        let p = self.words.len();
        self.words.push(word.to_string());
        self.position.insert(word.to_string(), p);
        p
    }
}

pub fn build_dictionary(docs: &[Document]) -> Result<KeywordDictionary> {
    if docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(KeywordDictionary::new(docs.iter().flat_map(|d| d.distinct_terms().map(ToString::to_string))))
}

/// Keyword incidence of one document over the whole dictionary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryIndex {
    pub doc_id: DocId,
    pub owner_id: OwnerId,
    bits: Vec<u8>,
    /// `(dimension, term count)` for every set bit, ascending by dimension.
    counts: Vec<(usize, u32)>,
}

impl BinaryIndex {
    pub fn from_document(doc: &Document, dict: &KeywordDictionary) -> Result<Self> {
        let mut bits = vec![0u8; dict.len()];
        let mut counts = Vec::new();
        for (term, count) in doc.term_counts() {
            let dim = dict
                .position(term)
                .ok_or_else(|| Error::UnknownTerm { doc: doc.doc_id, term: term.to_string() })?;
            bits[dim] = 1;
            counts.push((dim, count));
        }
        counts.sort_unstable();
        Ok(Self { doc_id: doc.doc_id, owner_id: doc.owner_id, bits, counts })
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn dim(&self) -> usize {
        self.bits.len()
    }

    pub fn get(&self, dim: usize) -> bool {
        self.bits.get(dim).is_some_and(|&b| b == 1)
    }

    /// Set dimensions with their term counts.
    pub fn counts(&self) -> &[(usize, u32)] {
        &self.counts
    }

    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.counts.iter().map(|&(d, _)| d)
    }
}

pub fn build_binary_indexes(docs: &[Document], dict: &KeywordDictionary) -> Result<Vec<BinaryIndex>> {
    docs.iter().map(|d| BinaryIndex::from_document(d, dict)).collect()
}
