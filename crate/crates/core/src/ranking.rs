//! Ranked result lists shared by every retrieval stage.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use thiserror::Error;

/// Which stage produced an entry's score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    Bm25,
    W2vCent,
    DocVectors,
    Ensemble,
    Drmm,
    Pacrr,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Bm25 => "bm25",
            Stage::W2vCent => "w2v-cent",
            Stage::DocVectors => "doc-vectors",
            Stage::Ensemble => "ensemble",
            Stage::Drmm => "drmm",
            Stage::Pacrr => "pacrr",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "bm25" => Stage::Bm25,
            "w2v-cent" => Stage::W2vCent,
            "doc-vectors" => Stage::DocVectors,
            "ensemble" => Stage::Ensemble,
            "drmm" => Stage::Drmm,
            "pacrr" => Stage::Pacrr,
            other => return Err(format!("unknown stage tag `{other}`")),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedEntry {
    pub doc_id: String,
    pub score: f64,
    pub stage: Stage,
}

/// Ordered `(doc_id, score, stage)` triples for one query.
///
/// Scores are non-increasing and doc ids unique. Every constructor in this
/// crate sorts by descending score with ties broken by ascending doc id.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub query_id: String,
    pub entries: Vec<RankedEntry>,
}

/// Descending score, then ascending doc id.
pub fn rank_order(a_score: f64, a_id: &str, b_score: f64, b_id: &str) -> Ordering {
    b_score
        .partial_cmp(&a_score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a_id.cmp(b_id))
}

impl RankedList {
    pub fn new(query_id: impl Into<String>) -> Self {
        Self {
            query_id: query_id.into(),
            entries: Vec::new(),
        }
    }

    /// Builds a list from unsorted scored documents, keeping the best `k`.
    pub fn from_scores<I>(query_id: impl Into<String>, scored: I, stage: Stage, k: usize) -> Self
    where
        I: IntoIterator<Item = (String, f64)>,
    {
        let mut items: Vec<(String, f64)> = scored.into_iter().collect();
        top_k_in_place(&mut items, k);
        Self {
            query_id: query_id.into(),
            entries: items
                .into_iter()
                .map(|(doc_id, score)| RankedEntry {
                    doc_id,
                    score,
                    stage,
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.doc_id.as_str())
    }

    pub fn truncate(&mut self, k: usize) {
        self.entries.truncate(k);
    }

    pub fn truncated(mut self, k: usize) -> Self {
        self.entries.truncate(k);
        self
    }

    pub fn score_of(&self, doc_id: &str) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.doc_id == doc_id)
            .map(|e| e.score)
    }

    /// Checks the ordering and uniqueness invariants.
    pub fn is_well_formed(&self) -> bool {
        let mut seen = HashSet::with_capacity(self.entries.len());
        self.entries.iter().all(|e| seen.insert(e.doc_id.as_str()))
            && self.entries.windows(2).all(|w| {
                rank_order(w[0].score, &w[0].doc_id, w[1].score, &w[1].doc_id) != Ordering::Greater
            })
    }

    /// Re-sorts entries into canonical rank order.
    pub fn sort(&mut self) {
        self.entries
            .sort_by(|a, b| rank_order(a.score, &a.doc_id, b.score, &b.doc_id));
    }
}

/// Keeps the `k` best `(id, score)` pairs sorted in rank order.
pub fn top_k_in_place(items: &mut Vec<(String, f64)>, k: usize) {
    let cmp = |a: &(String, f64), b: &(String, f64)| rank_order(a.1, &a.0, b.1, &b.0);
    if k == 0 {
        items.clear();
        return;
    }
    if items.len() > k {
        items.select_nth_unstable_by(k - 1, cmp);
        items.truncate(k);
    }
    items.sort_by(cmp);
}

#[derive(Debug, Error)]
pub enum RunFileError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Writes lists in the six-column TREC run format:
/// `query_id Q0 doc_id rank score stage`.
pub fn write_run<W: Write>(mut out: W, lists: &[RankedList]) -> std::io::Result<()> {
    for list in lists {
        for (rank, e) in list.entries.iter().enumerate() {
            writeln!(
                out,
                "{} Q0 {} {} {:.17e} {}",
                list.query_id,
                e.doc_id,
                rank + 1,
                e.score,
                e.stage
            )?;
        }
    }
    Ok(())
}

/// Reads a TREC run file. Lists come back in first-seen query order, each
/// re-sorted into canonical rank order.
pub fn read_run<R: BufRead>(input: R) -> Result<Vec<RankedList>, RunFileError> {
    let mut lists: Vec<RankedList> = Vec::new();
    let mut position = std::collections::HashMap::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = trimmed.split_whitespace().collect();
        if cols.len() != 6 {
            return Err(RunFileError::Parse {
                line: lineno,
                msg: format!("expected 6 columns, found {}", cols.len()),
            });
        }
        let score: f64 = cols[4].parse().map_err(|_| RunFileError::Parse {
            line: lineno,
            msg: format!("bad score `{}`", cols[4]),
        })?;
        let stage: Stage = cols[5]
            .parse()
            .map_err(|msg| RunFileError::Parse { line: lineno, msg })?;
        let slot = *position.entry(cols[0].to_string()).or_insert_with(|| {
            lists.push(RankedList::new(cols[0]));
            lists.len() - 1
        });
        lists[slot].entries.push(RankedEntry {
            doc_id: cols[2].to_string(),
            score,
            stage,
        });
    }
    for list in &mut lists {
        list.sort();
        if !list.is_well_formed() {
            return Err(RunFileError::Parse {
                line: 0,
                msg: format!("duplicate document in list for query {}", list.query_id),
            });
        }
    }
    Ok(lists)
}
