//! Inverted index with Okapi BM25 scoring and a `(k1, b)` grid tuner.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::corpus::{Collection, Qrels};
use crate::eval::recall_at_k;
use crate::ranking::{RankedList, Stage};
use crate::text::{smoothed_idf, IdfTable, StopWords, TextPipeline};

const INDEX_MAGIC: &[u8; 8] = b"REGIRIDX";
const INDEX_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("cannot index an empty pool")]
    EmptyPool,
    #[error("unknown document `{0}`")]
    UnknownDocument(String),
    #[error("invalid BM25 parameters k1={k1}, b={b}")]
    InvalidParams { k1: f64, b: f64 },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt index file: {0}")]
    Corrupt(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn new(k1: f64, b: f64) -> Result<Self, IndexError> {
        if !(k1.is_finite() && b.is_finite() && k1 >= 0.0 && b >= 0.0) {
            return Err(IndexError::InvalidParams { k1, b });
        }
        Ok(Self { k1, b })
    }

    /// Saturated term-frequency component of one term in one document.
    #[inline]
    pub fn tf_part(&self, tf: f64, doc_len: f64, avg_len: f64) -> f64 {
        tf * (self.k1 + 1.0) / (tf + self.k1 * (1.0 - self.b + self.b * doc_len / avg_len))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

/// Postings keyed by interned term id; documents are addressed by their
/// position in `doc_ids`, and each postings list is sorted by that position.
#[derive(Debug, Clone, PartialEq)]
pub struct PostingsIndex {
    doc_ids: Vec<String>,
    doc_pos: HashMap<String, u32>,
    doc_len: Vec<u32>,
    avg_len: f64,
    terms: Vec<String>,
    term_ids: HashMap<String, u32>,
    postings: Vec<Vec<Posting>>,
    idf: Vec<f64>,
    /// Denoising resources used to build the index, if any; queries must go
    /// through the same pipeline.
    pipeline: Option<TextPipeline>,
}

impl PostingsIndex {
    /// Indexes pre-tokenized documents.
    pub fn build<I, S>(docs: I) -> Result<Self, IndexError>
    where
        I: IntoIterator<Item = (String, Vec<S>)>,
        S: AsRef<str>,
    {
        let mut doc_ids = Vec::new();
        let mut doc_len = Vec::new();
        let mut per_term: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        for (doc, (id, tokens)) in docs.into_iter().enumerate() {
            let mut tf: HashMap<&str, u32> = HashMap::new();
            for t in &tokens {
                *tf.entry(t.as_ref()).or_insert(0) += 1;
            }
            for (t, c) in tf {
                per_term.entry(t.to_owned()).or_default().push(Posting {
                    doc: doc as u32,
                    tf: c,
                });
            }
            doc_ids.push(id);
            doc_len.push(tokens.len() as u32);
        }
        if doc_ids.is_empty() {
            return Err(IndexError::EmptyPool);
        }
        let (terms, postings): (Vec<String>, Vec<Vec<Posting>>) = per_term.into_iter().unzip();
        Self::assemble(doc_ids, doc_len, terms, postings, None)
    }

    /// Indexes a collection through a fitted text pipeline.
    pub fn build_from_collection(
        pool: &Collection,
        pipeline: TextPipeline,
    ) -> Result<Self, IndexError> {
        let docs: Vec<(String, Vec<String>)> = pool
            .iter()
            .collect::<Vec<_>>()
            .par_iter()
            .map(|d| (d.doc_id.clone(), pipeline.process(&d.full_text()).tokens))
            .collect();
        let mut index = Self::build(docs)?;
        index.pipeline = Some(pipeline);
        Ok(index)
    }

    fn assemble(
        doc_ids: Vec<String>,
        doc_len: Vec<u32>,
        terms: Vec<String>,
        mut postings: Vec<Vec<Posting>>,
        pipeline: Option<TextPipeline>,
    ) -> Result<Self, IndexError> {
        let n = doc_ids.len();
        for p in &mut postings {
            p.sort_unstable_by_key(|x| x.doc);
        }
        let doc_pos = doc_ids
            .iter()
            .enumerate()
            .map(|(i, d)| (d.clone(), i as u32))
            .collect::<HashMap<_, _>>();
        if doc_pos.len() != n {
            return Err(IndexError::Corrupt("duplicate document ids".into()));
        }
        let term_ids = terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        let avg_len = doc_len.iter().map(|&l| l as f64).sum::<f64>() / n as f64;
        let idf = postings.iter().map(|p| smoothed_idf(n, p.len())).collect();
        Ok(Self {
            doc_ids,
            doc_pos,
            doc_len,
            avg_len,
            terms,
            term_ids,
            postings,
            idf,
            pipeline,
        })
    }

    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avg_len(&self) -> f64 {
        self.avg_len
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn doc_len(&self, doc_id: &str) -> Option<u32> {
        self.doc_pos.get(doc_id).map(|&i| self.doc_len[i as usize])
    }

    pub fn pipeline(&self) -> Option<&TextPipeline> {
        self.pipeline.as_ref()
    }

    pub fn vocabulary_size(&self) -> usize {
        self.terms.len()
    }

    /// `(doc_id, tf)` postings of a term, in index order.
    pub fn postings(&self, term: &str) -> Vec<(&str, u32)> {
        self.term_ids
            .get(term)
            .map(|&t| {
                self.postings[t as usize]
                    .iter()
                    .map(|p| (self.doc_ids[p.doc as usize].as_str(), p.tf))
                    .collect()
            })
            .unwrap_or_default()
    }

    /// Idf of an indexed term; `None` if the term is not in the index.
    pub fn idf(&self, term: &str) -> Option<f64> {
        self.term_ids.get(term).map(|&t| self.idf[t as usize])
    }

    pub fn df(&self, term: &str) -> usize {
        self.term_ids
            .get(term)
            .map_or(0, |&t| self.postings[t as usize].len())
    }

    /// Idf table over the indexed (post-denoising) vocabulary.
    pub fn idf_table(&self) -> IdfTable {
        let df = self
            .terms
            .iter()
            .zip(&self.postings)
            .map(|(t, p)| (t.clone(), p.len()))
            .collect();
        IdfTable::from_parts(df, self.doc_count(), 0.0)
    }

    fn tf_in(&self, term: u32, doc: u32) -> u32 {
        let list = &self.postings[term as usize];
        list.binary_search_by_key(&doc, |p| p.doc)
            .map(|i| list[i].tf)
            .unwrap_or(0)
    }

    /// BM25 score of one document. Every query token contributes, so a
    /// repeated term counts once per occurrence; terms absent from the index
    /// contribute nothing.
    pub fn bm25_score<S: AsRef<str>>(
        &self,
        query: &[S],
        doc_id: &str,
        params: Bm25Params,
    ) -> Result<f64, IndexError> {
        let doc = *self
            .doc_pos
            .get(doc_id)
            .ok_or_else(|| IndexError::UnknownDocument(doc_id.to_owned()))?;
        let len = self.doc_len[doc as usize] as f64;
        let mut score = 0.0;
        for q in query {
            if let Some(&t) = self.term_ids.get(q.as_ref()) {
                let tf = self.tf_in(t, doc);
                if tf > 0 {
                    score += self.idf[t as usize] * params.tf_part(tf as f64, len, self.avg_len);
                }
            }
        }
        Ok(score)
    }

    /// Interned query: `(term id, occurrences)` sorted by term id.
    fn query_terms<S: AsRef<str>>(&self, query: &[S]) -> Vec<(u32, u32)> {
        let mut counts: BTreeMap<u32, u32> = BTreeMap::new();
        for q in query {
            if let Some(&t) = self.term_ids.get(q.as_ref()) {
                *counts.entry(t).or_insert(0) += 1;
            }
        }
        counts.into_iter().collect()
    }

    /// Top-`k` documents by BM25, ties broken by ascending doc id. Returns
    /// `min(k, pool size)` entries; documents matching no query term score 0.
    pub fn bm25_search<S: AsRef<str>>(
        &self,
        query_id: &str,
        query: &[S],
        params: Bm25Params,
        k: usize,
    ) -> RankedList {
        let mut acc = vec![0.0f64; self.doc_count()];
        for (t, qtf) in self.query_terms(query) {
            let idf = self.idf[t as usize];
            for p in &self.postings[t as usize] {
                let len = self.doc_len[p.doc as usize] as f64;
                acc[p.doc as usize] +=
                    qtf as f64 * idf * params.tf_part(p.tf as f64, len, self.avg_len);
            }
        }
        RankedList::from_scores(
            query_id,
            self.doc_ids.iter().cloned().zip(acc),
            Stage::Bm25,
            k,
        )
    }

    /// Serializes to a versioned little-endian binary layout. Output is
    /// deterministic for a fixed index.
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(INDEX_MAGIC)?;
        put_u32(&mut w, INDEX_VERSION)?;
        put_u32(&mut w, self.doc_ids.len() as u32)?;
        for (id, len) in self.doc_ids.iter().zip(&self.doc_len) {
            put_str(&mut w, id)?;
            put_u32(&mut w, *len)?;
        }
        put_u32(&mut w, self.terms.len() as u32)?;
        for (t, list) in self.terms.iter().zip(&self.postings) {
            put_str(&mut w, t)?;
            put_u32(&mut w, list.len() as u32)?;
            for p in list {
                put_u32(&mut w, p.doc)?;
                put_u32(&mut w, p.tf)?;
            }
        }
        match &self.pipeline {
            None => w.write_all(&[0])?,
            Some(p) => {
                w.write_all(&[1, p.idf_filter as u8])?;
                let sw = p.stopwords.sorted();
                put_u32(&mut w, sw.len() as u32)?;
                for s in sw {
                    put_str(&mut w, s)?;
                }
                put_u32(&mut w, p.idf.doc_count() as u32)?;
                w.write_all(&p.idf.stopword_avg_idf().to_le_bytes())?;
                let df = p.idf.sorted_df();
                put_u32(&mut w, df.len() as u32)?;
                for (t, c) in df {
                    put_str(&mut w, t)?;
                    put_u32(&mut w, c as u32)?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, IndexError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != INDEX_MAGIC {
            return Err(IndexError::Corrupt("bad magic".into()));
        }
        let version = get_u32(&mut r)?;
        if version != INDEX_VERSION {
            return Err(IndexError::Corrupt(format!(
                "unsupported index version {version} (expected {INDEX_VERSION})"
            )));
        }
        let n = get_u32(&mut r)? as usize;
        let mut doc_ids = Vec::with_capacity(n);
        let mut doc_len = Vec::with_capacity(n);
        for _ in 0..n {
            doc_ids.push(get_str(&mut r)?);
            doc_len.push(get_u32(&mut r)?);
        }
        let nt = get_u32(&mut r)? as usize;
        let mut terms = Vec::with_capacity(nt);
        let mut postings = Vec::with_capacity(nt);
        for _ in 0..nt {
            terms.push(get_str(&mut r)?);
            let len = get_u32(&mut r)? as usize;
            let mut list = Vec::with_capacity(len);
            for _ in 0..len {
                let doc = get_u32(&mut r)?;
                let tf = get_u32(&mut r)?;
                if doc as usize >= n || tf == 0 {
                    return Err(IndexError::Corrupt("posting out of range".into()));
                }
                list.push(Posting { doc, tf });
            }
            postings.push(list);
        }
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let pipeline = match flag[0] {
            0 => None,
            1 => {
                r.read_exact(&mut flag)?;
                let idf_filter = flag[0] != 0;
                let nsw = get_u32(&mut r)? as usize;
                let mut words = String::new();
                for _ in 0..nsw {
                    words.push_str(&get_str(&mut r)?);
                    words.push('\n');
                }
                let doc_count = get_u32(&mut r)? as usize;
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                let avg = f64::from_le_bytes(b);
                let ndf = get_u32(&mut r)? as usize;
                let mut df = HashMap::with_capacity(ndf);
                for _ in 0..ndf {
                    let t = get_str(&mut r)?;
                    df.insert(t, get_u32(&mut r)? as usize);
                }
                Some(TextPipeline {
                    stopwords: StopWords::parse(&words),
                    idf: IdfTable::from_parts(df, doc_count, avg),
                    idf_filter,
                })
            }
            other => return Err(IndexError::Corrupt(format!("bad pipeline flag {other}"))),
        };
        Self::assemble(doc_ids, doc_len, terms, postings, pipeline)
    }

    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, IndexError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

fn put_u32<W: Write>(w: &mut W, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_str<W: Write>(w: &mut W, s: &str) -> std::io::Result<()> {
    put_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())
}

fn get_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_str<R: Read>(r: &mut R) -> Result<String, IndexError> {
    let len = get_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| IndexError::Corrupt(e.to_string()))
}

/// Inclusive arithmetic grid `start, start+step, ..., end`, built by integer
/// steps so the endpoints are exact.
pub fn linear_grid(start: f64, end: f64, step: f64) -> Vec<f64> {
    if step <= 0.0 || end < start {
        return vec![start];
    }
    let n = ((end - start) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| start + i as f64 * step).collect()
}

pub fn default_k1_grid() -> Vec<f64> {
    linear_grid(0.5, 8.0, 0.5)
}

pub fn default_b_grid() -> Vec<f64> {
    linear_grid(0.0, 1.0, 0.1)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridCell {
    pub k1: f64,
    pub b: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bm25Tuning {
    pub best: Bm25Params,
    pub best_recall: f64,
    /// Cells in `k1`-major, `b`-minor order.
    pub grid: Vec<GridCell>,
}

impl Bm25Tuning {
    /// CSV with header `k1,b,recall_at_k`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "k1,b,recall_at_k")?;
        for c in &self.grid {
            writeln!(w, "{},{},{:.6}", fmt_grid(c.k1), fmt_grid(c.b), c.recall)?;
        }
        Ok(())
    }
}

fn fmt_grid(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0');
    s.trim_end_matches('.').to_string()
}

/// Macro-averaged R@k of BM25 over the given queries.
pub fn mean_recall<S: AsRef<str> + Sync>(
    index: &PostingsIndex,
    queries: &[(String, Vec<S>)],
    qrels: &Qrels,
    params: Bm25Params,
    k: usize,
) -> f64 {
    let vals: Vec<f64> = queries
        .par_iter()
        .filter_map(|(qid, toks)| {
            let rel = qrels.relevant(qid)?;
            let list = index.bm25_search(qid, toks, params, k);
            recall_at_k(&list, rel, k)
        })
        .collect();
    if vals.is_empty() {
        0.0
    } else {
        vals.iter().sum::<f64>() / vals.len() as f64
    }
}

/// Evaluates R@k for every `(k1, b)` cell and returns the best cell; ties go
/// to the smaller `k1`, then the smaller `b`.
pub fn tune_bm25<S: AsRef<str> + Sync>(
    index: &PostingsIndex,
    queries: &[(String, Vec<S>)],
    qrels: &Qrels,
    k1_grid: &[f64],
    b_grid: &[f64],
    k: usize,
) -> Bm25Tuning {
    let mut cells: Vec<(f64, f64)> = Vec::with_capacity(k1_grid.len() * b_grid.len());
    for &k1 in k1_grid {
        for &b in b_grid {
            cells.push((k1, b));
        }
    }
    let grid: Vec<GridCell> = cells
        .par_iter()
        .map(|&(k1, b)| GridCell {
            k1,
            b,
            recall: mean_recall(index, queries, qrels, Bm25Params { k1, b }, k),
        })
        .collect();
    let best = grid
        .iter()
        .copied()
        .reduce(|best, c| {
            let better = c.recall > best.recall
                || (c.recall == best.recall
                    && (c.k1 < best.k1 || (c.k1 == best.k1 && c.b < best.b)));
            if better {
                c
            } else {
                best
            }
        })
        .unwrap_or(GridCell {
            k1: 1.2,
            b: 0.75,
            recall: 0.0,
        });
    Bm25Tuning {
        best: Bm25Params {
            k1: best.k1,
            b: best.b,
        },
        best_recall: best.recall,
        grid,
    }
}
