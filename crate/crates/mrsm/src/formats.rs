//! On-disk formats.
//!
//! * corpus: JSON lines, `{"doc_id", "owner_id", "text"}` or `"terms"` instead of `"text"`
//! * dictionary: one keyword per line, line number = dimension
//! * correlativity: one matrix row per line, values separated by commas or whitespace
//! * keys, forests: little-endian binary with a magic tag and version
//!
//! Binary layout, all integers `u64` LE unless noted:
//!
//! ```text
//! keys:   "MRSMKEY1" count { dim split[dim]:u8 M1 M2 M1^-1 M2^-1 }   matrices dim*dim f64, row-major
//! index:  "MRSMIDX1" count { built_size probe_count probe_len probe[f64] tree }
//! forest: "MRSMENC1" count { tree }
//! tree:   partition nodes { tag:u8 (0 internal, 1 leaf) [doc_id] payload }   nodes in preorder
//! ```
//!
//! Plain payloads are `len f64[len]`; encrypted payloads are `len c1[len] c2[len]`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use mrsm_core::aspe::{EncryptedVector, PartitionKey, SecretKey};
use mrsm_core::corpus::{Document, KeywordDictionary};
use mrsm_core::forest::{EncryptedForest, Forest, MlsbTree, ProbeSet, Tree};
use mrsm_core::linalg::Matrix;
use mrsm_core::weighting::CorrelativityMatrix;
use mrsm_core::{DocId, OwnerId, PartitionId};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const KEY_MAGIC: &[u8; 8] = b"MRSMKEY1";
const INDEX_MAGIC: &[u8; 8] = b"MRSMIDX1";
const FOREST_MAGIC: &[u8; 8] = b"MRSMENC1";

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub doc_id: u64,
    pub owner_id: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terms: Option<Vec<String>>,
}

impl CorpusRecord {
    pub fn into_document(self) -> Result<Document> {
        let (id, owner) = (DocId(self.doc_id), OwnerId(self.owner_id));
        Ok(match (self.terms, self.text) {
            (Some(terms), _) => Document::from_terms(id, owner, terms)?,
            (None, Some(text)) => Document::from_text(id, owner, &text)?,
            (None, None) => return Err(Error::Format(format!("document {} has neither text nor terms", self.doc_id))),
        })
    }

    pub fn from_document(doc: &Document) -> Self {
        let terms = doc.term_counts().flat_map(|(t, c)| std::iter::repeat_n(t.to_string(), c as usize)).collect();
        Self { doc_id: doc.doc_id.0, owner_id: doc.owner_id.0, text: None, terms: Some(terms) }
    }
}

pub fn read_corpus(path: &Path) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    for (n, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: CorpusRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), n + 1)))?;
        docs.push(record.into_document()?);
    }
    Ok(docs)
}

pub fn write_corpus(path: &Path, docs: &[Document]) -> Result<()> {
    let mut w = create(path)?;
    for d in docs {
        serde_json::to_writer(&mut w, &CorpusRecord::from_document(d))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_dictionary(path: &Path, dict: &KeywordDictionary) -> Result<()> {
    let mut w = create(path)?;
    for word in dict.words() {
        writeln!(w, "{word}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_dictionary(path: &Path) -> Result<KeywordDictionary> {
    let words = open(path)?.lines().collect::<std::io::Result<Vec<_>>>().map_err(|e| Error::io(path, e))?;
    Ok(KeywordDictionary::new(words))
}

pub fn read_correlativity(path: &Path) -> Result<CorrelativityMatrix> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for line in open(path)?.lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>().map_err(|e| Error::Format(format!("{}: {e}", path.display()))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    let n = rows.len();
    let data: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(CorrelativityMatrix::from_matrix(Matrix::from_rows(n, n, data)?)?)
}

struct Out<W: Write>(W);

impl<W: Write> Out<W> {
    fn bytes(&mut self, b: &[u8]) -> std::io::Result<()> {
        self.0.write_all(b)
    }

    fn u64(&mut self, x: u64) -> std::io::Result<()> {
        self.bytes(&x.to_le_bytes())
    }

    fn f64s(&mut self, xs: &[f64]) -> std::io::Result<()> {
        xs.iter().try_for_each(|x| self.bytes(&x.to_le_bytes()))
    }

    fn vec(&mut self, xs: &[f64]) -> std::io::Result<()> {
        self.u64(xs.len() as u64)?;
        self.f64s(xs)
    }
}

struct In<R: Read>(R);

impl<R: Read> In<R> {
    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.0.read_exact(&mut b).map_err(|_| Error::Format("unexpected end of file".into()))?;
        Ok(b)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.array::<1>()?[0])
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    /// A length field, refusing sizes no real file could hold.
    fn len(&mut self) -> Result<usize> {
        let n = self.u64()?;
        if n > (1 << 32) {
            return Err(Error::Format(format!("implausible length {n}")));
        }
        Ok(n as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| Ok(f64::from_le_bytes(self.array()?))).collect()
    }

    fn vec(&mut self) -> Result<Vec<f64>> {
        let n = self.len()?;
        self.f64s(n)
    }

    fn magic(&mut self, expected: &[u8; 8]) -> Result<()> {
        if &self.array::<8>()? != expected {
            return Err(Error::Format(format!("bad magic, expected {}", String::from_utf8_lossy(expected))));
        }
        Ok(())
    }
}

fn finish<W: Write>(path: &Path, mut w: W) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_keys(path: &Path, keys: &SecretKey) -> Result<()> {
    let mut o = Out(create(path)?);
    let io = |e| Error::io(path, e);
    o.bytes(KEY_MAGIC).map_err(io)?;
    o.u64(keys.partitions.len() as u64).map_err(io)?;
    for k in &keys.partitions {
        o.u64(k.dim() as u64).map_err(io)?;
        o.bytes(k.split()).map_err(io)?;
        for m in k.matrices() {
            o.f64s(m.as_slice()).map_err(io)?;
        }
    }
    finish(path, o.0)
}

pub fn read_keys(path: &Path) -> Result<SecretKey> {
    let mut r = In(open(path)?);
    r.magic(KEY_MAGIC)?;
    let count = r.len()?;
    let mut partitions = Vec::with_capacity(count);
    for _ in 0..count {
        let dim = r.len()?;
        let split = (0..dim).map(|_| r.u8()).collect::<Result<Vec<_>>>()?;
        let mut mats = Vec::with_capacity(4);
        for _ in 0..4 {
            mats.push(Matrix::from_rows(dim, dim, r.f64s(dim * dim)?)?);
        }
        let [m1, m2, m1_inv, m2_inv]: [Matrix; 4] = mats.try_into().expect("four matrices");
        partitions.push(PartitionKey::from_parts(split, m1, m2, m1_inv, m2_inv)?);
    }
    Ok(SecretKey { partitions })
}

fn write_tree<W: Write, P>(o: &mut Out<W>, tree: &Tree<P>, payload: impl Fn(&mut Out<W>, &P) -> std::io::Result<()>) -> std::io::Result<()> {
    let records = tree.to_preorder();
    o.u64(tree.partition.0 as u64)?;
    o.u64(records.len() as u64)?;
    for (doc, p) in records {
        match doc {
            Some(d) => {
                o.bytes(&[1])?;
                o.u64(d.0)?;
            }
            None => o.bytes(&[0])?,
        }
        payload(o, p)?;
    }
    Ok(())
}

fn read_tree<R: Read, P>(r: &mut In<R>, payload: impl Fn(&mut In<R>) -> Result<P>) -> Result<Tree<P>> {
    let partition = PartitionId(r.len()?);
    let n = r.len()?;
    let mut records = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        let doc = match r.u8()? {
            0 => None,
            1 => Some(DocId(r.u64()?)),
            t => return Err(Error::Format(format!("bad node tag {t}"))),
        };
        records.push((doc, payload(r)?));
    }
    Ok(Tree::from_preorder(partition, records)?)
}

/// Plaintext forest with each tree's probe aggregate.
pub fn write_index(path: &Path, forest: &Forest) -> Result<()> {
    let mut o = Out(create(path)?);
    let io = |e| Error::io(path, e);
    o.bytes(INDEX_MAGIC).map_err(io)?;
    o.u64(forest.trees.len() as u64).map_err(io)?;
    for t in &forest.trees {
        o.u64(t.built_size as u64).map_err(io)?;
        o.u64(t.probes.count as u64).map_err(io)?;
        o.vec(&t.probes.aggregate).map_err(io)?;
        write_tree(&mut o, &t.tree, |o, p| o.vec(p)).map_err(io)?;
    }
    finish(path, o.0)
}

pub fn read_index(path: &Path) -> Result<Forest> {
    let mut r = In(open(path)?);
    r.magic(INDEX_MAGIC)?;
    let count = r.len()?;
    let mut trees = Vec::with_capacity(count);
    for _ in 0..count {
        let built_size = r.len()?;
        let probes = ProbeSet { count: r.len()?, aggregate: r.vec()? };
        let tree = read_tree(&mut r, |r| r.vec())?;
        trees.push(MlsbTree { tree, probes, built_size });
    }
    Ok(Forest { trees })
}

pub fn write_forest(path: &Path, forest: &EncryptedForest) -> Result<()> {
    let mut o = Out(create(path)?);
    let io = |e| Error::io(path, e);
    o.bytes(FOREST_MAGIC).map_err(io)?;
    o.u64(forest.trees.len() as u64).map_err(io)?;
    for t in &forest.trees {
        write_tree(&mut o, t, |o, e| {
            o.u64(e.c1.len() as u64)?;
            o.f64s(&e.c1)?;
            o.f64s(&e.c2)
        })
        .map_err(io)?;
    }
    finish(path, o.0)
}

pub fn read_forest(path: &Path) -> Result<EncryptedForest> {
    let mut r = In(open(path)?);
    r.magic(FOREST_MAGIC)?;
    let count = r.len()?;
    let trees = (0..count)
        .map(|_| {
            read_tree(&mut r, |r| {
                let n = r.len()?;
                Ok(EncryptedVector { c1: r.f64s(n)?, c2: r.f64s(n)? })
            })
        })
        .collect::<Result<_>>()?;
    Ok(EncryptedForest { trees })
}

/// Writes serializable rows as CSV with a header line.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    finish(path, w)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(open(path)?)?)
}
