//! Dense pre-fetching: tf-idf weighted embedding centroids and exact cosine
//! kNN over per-document vectors.
//!
//! Per-document vectors produced by external encoders (any model, any layer)
//! are ingested through [`DocVectorStore`]; this module never runs a model.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use log::warn;
use rayon::prelude::*;
use thiserror::Error;

use crate::corpus::Collection;
use crate::ranking::{RankedList, Stage};
use crate::text::IdfTable;

#[derive(Debug, Error)]
pub enum DenseError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("empty vector file {0}")]
    Empty(String),
    #[error("line {line}: expected {expected} values, found {found}")]
    InconsistentDim {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("dimension mismatch: query has {query}, store has {store}")]
    DimMismatch { query: usize, store: usize },
    #[error("query vector has zero norm")]
    ZeroQuery,
    #[error("no in-vocabulary token with positive weight")]
    EmptyCentroid,
    #[error("no vector for query `{0}`")]
    MissingQueryVector(String),
    #[error("{} vector id(s) not in the collection: {}", .0.len(), .0.join(", "))]
    UnknownIds(Vec<String>),
}

struct VectorLine {
    key: String,
    values: Vec<f32>,
}

/// Parses `key v1 ... vd` lines. `#`-prefixed lines are handed to `header`.
fn read_vector_lines<R: BufRead>(
    input: R,
    name: &str,
    mut header: impl FnMut(&str),
) -> Result<(usize, Vec<VectorLine>), DenseError> {
    let mut dim = None;
    let mut out = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|source| DenseError::Io {
            path: name.to_string(),
            source,
        })?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        if t.starts_with('#') {
            header(t);
            continue;
        }
        let mut parts = t.split_whitespace();
        let key = parts.next().unwrap_or_default().to_string();
        let values = parts
            .map(|v| v.parse::<f32>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| DenseError::Malformed {
                line: lineno,
                msg: e.to_string(),
            })?;
        match dim {
            None => {
                if values.is_empty() {
                    return Err(DenseError::Malformed {
                        line: lineno,
                        msg: "row has no values".into(),
                    });
                }
                dim = Some(values.len());
            }
            Some(d) if d != values.len() => {
                return Err(DenseError::InconsistentDim {
                    line: lineno,
                    expected: d,
                    found: values.len(),
                })
            }
            Some(_) => {}
        }
        out.push(VectorLine { key, values });
    }
    match dim {
        Some(d) => Ok((d, out)),
        None => Err(DenseError::Empty(name.to_string())),
    }
}

fn open(path: &Path) -> Result<BufReader<File>, DenseError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|source| DenseError::Io {
            path: path.display().to_string(),
            source,
        })
}

/// Word embeddings keyed by term.
#[derive(Debug, Clone)]
pub struct WordVectors {
    dim: usize,
    vectors: HashMap<String, Vec<f32>>,
}

impl WordVectors {
    pub fn new(dim: usize, vectors: HashMap<String, Vec<f32>>) -> Self {
        debug_assert!(vectors.values().all(|v| v.len() == dim));
        Self { dim, vectors }
    }

    /// Text format, one `term v1 ... vdim` entry per line; the dimension is
    /// taken from the first row.
    pub fn read<R: BufRead>(input: R, name: &str) -> Result<Self, DenseError> {
        let (dim, rows) = read_vector_lines(input, name, |_| {})?;
        let vectors = rows.into_iter().map(|r| (r.key, r.values)).collect();
        Ok(Self { dim, vectors })
    }

    pub fn load(path: &Path) -> Result<Self, DenseError> {
        Self::read(open(path)?, &path.display().to_string())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, term: &str) -> Option<&[f32]> {
        self.vectors.get(term).map(Vec::as_slice)
    }

    /// Copy with every vector scaled to unit length (zero vectors stay zero).
    pub fn normalized(&self) -> Self {
        let vectors = self
            .vectors
            .iter()
            .map(|(t, v)| {
                let n = norm(v);
                let v = if n > 0.0 {
                    v.iter().map(|x| (*x as f64 / n) as f32).collect()
                } else {
                    v.clone()
                };
                (t.clone(), v)
            })
            .collect();
        Self {
            dim: self.dim,
            vectors,
        }
    }
}

pub(crate) fn norm(v: &[f32]) -> f64 {
    v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt()
}

/// Per-document vectors with a free-form provenance tag (model, layer, ...).
#[derive(Debug, Clone, PartialEq)]
pub struct DocVectorStore {
    dim: usize,
    ids: Vec<String>,
    data: Vec<f32>,
    norms: Vec<f64>,
    positions: HashMap<String, usize>,
    pub provenance: String,
}

impl DocVectorStore {
    pub fn new(dim: usize, provenance: impl Into<String>) -> Self {
        Self {
            dim,
            ids: Vec::new(),
            data: Vec::new(),
            norms: Vec::new(),
            positions: HashMap::new(),
            provenance: provenance.into(),
        }
    }

    /// Appends or replaces a vector. Panics on a dimension mismatch.
    pub fn insert(&mut self, doc_id: impl Into<String>, v: &[f32]) {
        assert_eq!(v.len(), self.dim, "vector dimension mismatch");
        let doc_id = doc_id.into();
        match self.positions.get(&doc_id) {
            Some(&i) => {
                self.data[i * self.dim..(i + 1) * self.dim].copy_from_slice(v);
                self.norms[i] = norm(v);
            }
            None => {
                self.positions.insert(doc_id.clone(), self.ids.len());
                self.ids.push(doc_id);
                self.data.extend_from_slice(v);
                self.norms.push(norm(v));
            }
        }
    }

    /// Same line format as word vectors with doc ids as keys; an optional
    /// `#dim D #tag STRING` header line is checked against the data.
    pub fn read<R: BufRead>(input: R, name: &str) -> Result<Self, DenseError> {
        let mut declared_dim = None;
        let mut tag = String::new();
        let mut header_err = None;
        let (dim, rows) = read_vector_lines(input, name, |h| {
            let mut parts = h.split_whitespace();
            while let Some(p) = parts.next() {
                match p {
                    "#dim" => match parts.next().map(str::parse::<usize>) {
                        Some(Ok(d)) => declared_dim = Some(d),
                        _ => header_err = Some("bad #dim value".to_string()),
                    },
                    "#tag" => tag = parts.by_ref().collect::<Vec<_>>().join(" "),
                    _ => {}
                }
            }
        })?;
        if let Some(msg) = header_err {
            return Err(DenseError::Malformed { line: 1, msg });
        }
        if let Some(d) = declared_dim {
            if d != dim {
                return Err(DenseError::InconsistentDim {
                    line: 2,
                    expected: d,
                    found: dim,
                });
            }
        }
        let mut store = Self::new(dim, tag);
        for r in rows {
            store.insert(r.key, &r.values);
        }
        Ok(store)
    }

    pub fn load(path: &Path) -> Result<Self, DenseError> {
        Self::read(open(path)?, &path.display().to_string())
    }

    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "#dim {} #tag {}", self.dim, self.provenance)?;
        for (i, id) in self.ids.iter().enumerate() {
            write!(w, "{id}")?;
            for x in self.vector_at(i) {
                write!(w, " {x}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Every stored id must belong to `collection`.
    pub fn validate_against(&self, collection: &Collection) -> Result<(), DenseError> {
        let mut unknown: Vec<String> = self
            .ids
            .iter()
            .filter(|id| !collection.contains(id))
            .cloned()
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            unknown.sort();
            Err(DenseError::UnknownIds(unknown))
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    fn vector_at(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn get(&self, doc_id: &str) -> Option<&[f32]> {
        self.positions.get(doc_id).map(|&i| self.vector_at(i))
    }

    /// Multiplies every stored vector by `factor`.
    pub fn scaled(&self, factor: f32) -> Self {
        let mut out = self.clone();
        for x in &mut out.data {
            *x *= factor;
        }
        out.norms = (0..out.ids.len()).map(|i| norm(out.vector_at(i))).collect();
        out
    }
}

/// Cosine similarity, or `None` if either side has zero norm.
pub fn cosine(a: &[f32], b: &[f32]) -> Option<f64> {
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    Some(dot / (na * nb))
}

/// Exact kNN by descending cosine similarity. Zero-norm stored vectors get
/// similarity -1 and rank last; ties go to the smaller doc id.
pub fn knn_search(
    query_id: &str,
    query: &[f32],
    store: &DocVectorStore,
    k: usize,
    stage: Stage,
) -> Result<RankedList, DenseError> {
    if query.len() != store.dim {
        return Err(DenseError::DimMismatch {
            query: query.len(),
            store: store.dim,
        });
    }
    let qn = norm(query);
    if qn == 0.0 {
        return Err(DenseError::ZeroQuery);
    }
    let sims: Vec<(String, f64)> = (0..store.len())
        .into_par_iter()
        .map(|i| {
            let dn = store.norms[i];
            let sim = if dn == 0.0 {
                -1.0
            } else {
                let dot: f64 = store
                    .vector_at(i)
                    .iter()
                    .zip(query)
                    .map(|(x, y)| *x as f64 * *y as f64)
                    .sum();
                dot / (qn * dn)
            };
            (store.ids[i].clone(), sim)
        })
        .collect();
    Ok(RankedList::from_scores(query_id, sims, stage, k))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ZeroVectorPolicy {
    Error,
    #[default]
    SkipDocument,
}

/// Source of idf weights for centroid computation.
pub trait TermWeights {
    fn idf(&self, term: &str) -> f64;
}

impl TermWeights for IdfTable {
    fn idf(&self, term: &str) -> f64 {
        IdfTable::idf(self, term)
    }
}

impl TermWeights for HashMap<String, f64> {
    fn idf(&self, term: &str) -> f64 {
        self.get(term).copied().unwrap_or(0.0)
    }
}

/// tf-idf weighted centroid over distinct in-vocabulary terms.
pub fn centroid<S: AsRef<str>, W: TermWeights + ?Sized>(
    tokens: &[S],
    vectors: &WordVectors,
    idf: &W,
) -> Result<Vec<f64>, DenseError> {
    let mut tf: BTreeMap<&str, usize> = BTreeMap::new();
    for t in tokens {
        let t = t.as_ref();
        if vectors.get(t).is_some() {
            *tf.entry(t).or_insert(0) += 1;
        }
    }
    let mut sum = vec![0.0f64; vectors.dim()];
    let mut weight = 0.0;
    for (term, count) in tf {
        let w = count as f64 * idf.idf(term);
        if w == 0.0 {
            continue;
        }
        let v = vectors.get(term).expect("filtered to in-vocabulary terms");
        for (s, x) in sum.iter_mut().zip(v) {
            *s += w * *x as f64;
        }
        weight += w;
    }
    if weight <= 0.0 {
        return Err(DenseError::EmptyCentroid);
    }
    for s in &mut sum {
        *s /= weight;
    }
    Ok(sum)
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|x| *x as f32).collect()
}

/// Pre-fetcher over centroids of word embeddings. Pool centroids are
/// computed once at construction.
pub struct CentroidRetriever {
    vectors: WordVectors,
    idf: IdfTable,
    pool: DocVectorStore,
    pub skipped: Vec<String>,
}

impl CentroidRetriever {
    pub fn build<'a, I>(
        pool_docs: I,
        vectors: WordVectors,
        idf: IdfTable,
        policy: ZeroVectorPolicy,
    ) -> Result<Self, DenseError>
    where
        I: IntoIterator<Item = (&'a str, &'a [String])>,
    {
        let docs: Vec<(&str, &[String])> = pool_docs.into_iter().collect();
        let cents: Vec<(&str, Result<Vec<f64>, DenseError>)> = docs
            .par_iter()
            .map(|(id, toks)| (*id, centroid(toks, &vectors, &idf)))
            .collect();
        let mut pool = DocVectorStore::new(vectors.dim(), "w2v-cent");
        let mut skipped = Vec::new();
        for (id, c) in cents {
            match c {
                Ok(c) => pool.insert(id, &to_f32(&c)),
                Err(DenseError::EmptyCentroid) if policy == ZeroVectorPolicy::SkipDocument => {
                    skipped.push(id.to_string())
                }
                Err(e) => return Err(e),
            }
        }
        if !skipped.is_empty() {
            warn!(
                "{} pool documents have no centroid and were skipped",
                skipped.len()
            );
        }
        Ok(Self {
            vectors,
            idf,
            pool,
            skipped,
        })
    }

    pub fn pool(&self) -> &DocVectorStore {
        &self.pool
    }

    pub fn search<S: AsRef<str>>(
        &self,
        query_id: &str,
        tokens: &[S],
        k: usize,
    ) -> Result<RankedList, DenseError> {
        let q = centroid(tokens, &self.vectors, &self.idf)?;
        knn_search(query_id, &to_f32(&q), &self.pool, k, Stage::W2vCent)
    }
}

/// Pre-fetcher over externally produced query and pool vectors.
pub struct DocVectorRetriever {
    pub queries: DocVectorStore,
    pub pool: DocVectorStore,
}

impl DocVectorRetriever {
    pub fn search(&self, query_id: &str, k: usize) -> Result<RankedList, DenseError> {
        let q = self
            .queries
            .get(query_id)
            .ok_or_else(|| DenseError::MissingQueryVector(query_id.to_string()))?;
        knn_search(query_id, q, &self.pool, k, Stage::DocVectors)
    }
}

/// Either dense pre-fetching mode behind one interface.
pub enum DensePrefetcher {
    W2vCent(CentroidRetriever),
    DocVectors(DocVectorRetriever),
}

impl DensePrefetcher {
    pub fn prefetch<S: AsRef<str>>(
        &self,
        query_id: &str,
        denoised_query: &[S],
        k: usize,
    ) -> Result<RankedList, DenseError> {
        match self {
            DensePrefetcher::W2vCent(r) => r.search(query_id, denoised_query, k),
            DensePrefetcher::DocVectors(r) => r.search(query_id, k),
        }
    }
}
