//! Trainable re-rankers over the pre-fetched top-k.
//!
//! Two architectures share one scoring contract: a neural relevance score
//! `s_r` is computed from term-embedding similarities and combined with the
//! normalized pre-fetcher score `s_p` as `rel = w_r * s_r + w_p * s_p`.
//! `w_r` and `w_p` are trained jointly with the network weights under the
//! pairwise hinge loss `max(0, 1 - rel(q, d+) + rel(q, d-))`.
//!
//! All gradients are analytic; the test suites check them against central
//! finite differences.

pub mod checkpoint;
pub mod drmm;
pub mod features;
pub mod pacrr;
pub mod train;

use std::collections::HashMap;
use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

use crate::dense::{norm, DenseError, WordVectors};
use crate::ranking::{rank_order, RankedList, Stage};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use drmm::{build_histogram, histogram_from_similarities, DrmmConfig, DrmmFeatures};
pub use features::{FeatureBuilder, FeatureSpec, PairFeatures};
pub use pacrr::{PacrrConfig, PacrrFeatures};
pub use train::{
    sample_triples, sample_triples_seeded, train, Hyperparams, SampleStats, TrainData,
    TrainOutcome, TrainTriple,
};

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("query has no in-vocabulary terms")]
    EmptyQuery,
    #[error("document has no in-vocabulary terms")]
    EmptyDocument,
    #[error("no training triples")]
    NoTriples,
    #[error("training diverged at epoch {epoch}, batch {batch}: loss {loss}")]
    Diverged {
        epoch: usize,
        batch: usize,
        loss: f64,
    },
    #[error("hyperparameter error: {0}")]
    Hyperparams(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Dense(#[from] DenseError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Drmm,
    Pacrr,
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "drmm" => Ok(ModelKind::Drmm),
            "pacrr" => Ok(ModelKind::Pacrr),
            other => Err(format!("unknown model `{other}` (expected drmm or pacrr)")),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Drmm => "drmm",
            ModelKind::Pacrr => "pacrr",
        })
    }
}

impl ModelKind {
    pub fn stage(&self) -> Stage {
        match self {
            ModelKind::Drmm => Stage::Drmm,
            ModelKind::Pacrr => Stage::Pacrr,
        }
    }
}

/// Unit-length term embeddings for a tokenized text.
pub trait TokenEmbedder: Sync {
    fn dim(&self) -> usize;

    /// One entry per token; `None` for tokens without a vector.
    fn embed<'a>(&'a self, text_id: &str, tokens: &[String]) -> Vec<Option<&'a [f32]>>;
}

/// Static word vectors, normalized once at construction.
pub struct WordEmbedder {
    vectors: WordVectors,
}

impl WordEmbedder {
    pub fn new(vectors: &WordVectors) -> Self {
        Self {
            vectors: vectors.normalized(),
        }
    }
}

impl TokenEmbedder for WordEmbedder {
    fn dim(&self) -> usize {
        self.vectors.dim()
    }

    fn embed<'a>(&'a self, _text_id: &str, tokens: &[String]) -> Vec<Option<&'a [f32]>> {
        tokens.iter().map(|t| self.vectors.get(t)).collect()
    }
}

/// Frozen contextual vectors keyed by `(doc_id, token index)`, as produced by
/// an external encoder. Token indices refer to positions in the denoised
/// token sequence.
pub struct ContextualEmbedder {
    dim: usize,
    vectors: HashMap<String, HashMap<usize, Vec<f32>>>,
}

impl ContextualEmbedder {
    /// Lines of the form `doc_id token_index v1 ... vdim`.
    pub fn read<R: BufRead>(input: R) -> Result<Self, DenseError> {
        let mut dim = None;
        let mut vectors: HashMap<String, HashMap<usize, Vec<f32>>> = HashMap::new();
        for (idx, line) in input.lines().enumerate() {
            let lineno = idx + 1;
            let line = line.map_err(|source| DenseError::Io {
                path: "<contextual vectors>".into(),
                source,
            })?;
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let mut parts = t.split_whitespace();
            let doc = parts.next().unwrap_or_default().to_string();
            let pos: usize =
                parts
                    .next()
                    .and_then(|p| p.parse().ok())
                    .ok_or_else(|| DenseError::Malformed {
                        line: lineno,
                        msg: "missing token index".into(),
                    })?;
            let v = parts
                .map(str::parse::<f32>)
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| DenseError::Malformed {
                    line: lineno,
                    msg: e.to_string(),
                })?;
            let d = *dim.get_or_insert(v.len());
            if v.len() != d || d == 0 {
                return Err(DenseError::InconsistentDim {
                    line: lineno,
                    expected: d,
                    found: v.len(),
                });
            }
            let n = norm(&v);
            let v = if n > 0.0 {
                v.iter().map(|x| (*x as f64 / n) as f32).collect()
            } else {
                v
            };
            vectors.entry(doc).or_default().insert(pos, v);
        }
        let dim = dim.ok_or_else(|| DenseError::Empty("<contextual vectors>".into()))?;
        Ok(Self { dim, vectors })
    }
}

impl TokenEmbedder for ContextualEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed<'a>(&'a self, text_id: &str, tokens: &[String]) -> Vec<Option<&'a [f32]>> {
        let doc = self.vectors.get(text_id);
        (0..tokens.len())
            .map(|i| doc.and_then(|m| m.get(&i)).map(Vec::as_slice))
            .collect()
    }
}

/// Cosine similarities of all query-document term pairs, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Self {
            rows: rows.len(),
            cols,
            data: rows.into_iter().flatten().collect(),
        }
    }

    /// Builds the matrix from unit vectors. Identical terms score exactly 1;
    /// other pairs are clamped into `[-1, 1)` so that the top value is
    /// reserved for exact matches.
    pub fn build(
        query_terms: &[&str],
        query_vecs: &[&[f32]],
        doc_terms: &[&str],
        doc_vecs: &[&[f32]],
    ) -> Self {
        let rows = query_terms.len();
        let cols = doc_terms.len();
        let mut data = Vec::with_capacity(rows * cols);
        for (qt, qv) in query_terms.iter().zip(query_vecs) {
            for (dt, dv) in doc_terms.iter().zip(doc_vecs) {
                data.push(term_similarity(qt, qv, dt, dv));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

pub(crate) fn term_similarity(qt: &str, qv: &[f32], dt: &str, dv: &[f32]) -> f64 {
    if qt == dt {
        return 1.0;
    }
    let dot: f64 = qv.iter().zip(dv).map(|(a, b)| *a as f64 * *b as f64).sum();
    dot.clamp(-1.0, 1.0 - f64::EPSILON)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionWeights {
    pub w_r: f64,
    pub w_p: f64,
}

impl Default for FusionWeights {
    fn default() -> Self {
        Self { w_r: 1.0, w_p: 1.0 }
    }
}

/// `w_r * s_r + w_p * s_p`.
pub fn rel_score(s_r: f64, s_p: f64, weights: FusionWeights) -> f64 {
    weights.w_r * s_r + weights.w_p * s_p
}

/// Pairwise hinge loss with unit margin.
pub fn hinge_loss(rel_pos: f64, rel_neg: f64) -> f64 {
    (1.0 - rel_pos + rel_neg).max(0.0)
}

/// Network architecture; parameters live in [`Reranker::params`].
#[derive(Debug, Clone, PartialEq)]
pub enum Architecture {
    Drmm(DrmmConfig),
    Pacrr(PacrrConfig),
}

impl Architecture {
    pub fn kind(&self) -> ModelKind {
        match self {
            Architecture::Drmm(_) => ModelKind::Drmm,
            Architecture::Pacrr(_) => ModelKind::Pacrr,
        }
    }

    pub fn num_net_params(&self) -> usize {
        match self {
            Architecture::Drmm(c) => c.num_params(),
            Architecture::Pacrr(c) => c.num_params(),
        }
    }
}

/// Per-pair model input.
#[derive(Debug, Clone, PartialEq)]
pub enum Features {
    Drmm(DrmmFeatures),
    Pacrr(PacrrFeatures),
}

/// A network plus its fusion weights. The flat parameter vector holds the
/// network parameters followed by `w_r` and `w_p`.
#[derive(Debug, Clone, PartialEq)]
pub struct Reranker {
    pub arch: Architecture,
    pub params: Vec<f64>,
}

impl Reranker {
    pub fn init<R: Rng>(arch: Architecture, rng: &mut R) -> Self {
        let mut params = match &arch {
            Architecture::Drmm(c) => c.init(rng),
            Architecture::Pacrr(c) => c.init(rng),
        };
        let w = FusionWeights::default();
        params.push(w.w_r);
        params.push(w.w_p);
        Self { arch, params }
    }

    pub fn kind(&self) -> ModelKind {
        self.arch.kind()
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn weights(&self) -> FusionWeights {
        let n = self.params.len();
        FusionWeights {
            w_r: self.params[n - 2],
            w_p: self.params[n - 1],
        }
    }

    pub fn set_weights(&mut self, w: FusionWeights) {
        let n = self.params.len();
        self.params[n - 2] = w.w_r;
        self.params[n - 1] = w.w_p;
    }

    fn net(&self) -> &[f64] {
        &self.params[..self.params.len() - 2]
    }

    /// Neural relevance score `s_r`.
    pub fn neural_score(&self, f: &Features) -> f64 {
        match (&self.arch, f) {
            (Architecture::Drmm(c), Features::Drmm(x)) => c.forward(self.net(), x),
            (Architecture::Pacrr(c), Features::Pacrr(x)) => c.forward(self.net(), x),
            _ => panic!("feature kind does not match architecture"),
        }
    }

    /// `rel(q, d)`; missing features count as `s_r = 0`.
    pub fn rel(&self, f: Option<&Features>, s_p: f64) -> f64 {
        let s_r = f.map_or(0.0, |f| self.neural_score(f));
        rel_score(s_r, s_p, self.weights())
    }

    /// Adds `upstream * d rel / d params` into `grad` and returns `rel`.
    pub fn rel_with_grad(
        &self,
        f: Option<&Features>,
        s_p: f64,
        upstream: f64,
        grad: &mut [f64],
    ) -> f64 {
        let n = self.params.len();
        let w = self.weights();
        let s_r = match f {
            None => 0.0,
            Some(f) => {
                let (net_grad, _) = grad.split_at_mut(n - 2);
                match (&self.arch, f) {
                    (Architecture::Drmm(c), Features::Drmm(x)) => {
                        c.backward(self.net(), x, upstream * w.w_r, net_grad)
                    }
                    (Architecture::Pacrr(c), Features::Pacrr(x)) => {
                        c.backward(self.net(), x, upstream * w.w_r, net_grad)
                    }
                    _ => panic!("feature kind does not match architecture"),
                }
            }
        };
        grad[n - 2] += upstream * s_r;
        grad[n - 1] += upstream * s_p;
        rel_score(s_r, s_p, w)
    }
}

/// Re-scores the top `k` of a normalized pre-fetched list with `rel` and
/// re-sorts it. Entries past `k` are dropped.
pub fn rerank<P: PairFeatures + ?Sized>(
    model: &Reranker,
    prefetched: &RankedList,
    features: &P,
    k: usize,
) -> RankedList {
    let stage = model.kind().stage();
    let mut scored: Vec<(String, f64)> = prefetched
        .entries
        .iter()
        .take(k)
        .map(|e| {
            let f = features.features(&prefetched.query_id, &e.doc_id);
            (e.doc_id.clone(), model.rel(f.as_deref(), e.score))
        })
        .collect();
    scored.sort_by(|a, b| rank_order(a.1, &a.0, b.1, &b.0));
    RankedList {
        query_id: prefetched.query_id.clone(),
        entries: scored
            .into_iter()
            .map(|(doc_id, score)| crate::ranking::RankedEntry {
                doc_id,
                score,
                stage,
            })
            .collect(),
    }
}

/// Softmax of a slice, computed stably.
pub(crate) fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Glorot-uniform sample for a `fan_in x fan_out` weight.
pub(crate) fn glorot<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> f64 {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    rng.random_range(-limit..limit)
}
