//! Pairwise training with Adam and dev-set early stopping.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{
    hinge_loss, rerank, Architecture, DrmmConfig, ModelKind, NeuralError, PacrrConfig,
    PairFeatures, Reranker,
};
use crate::corpus::Qrels;
use crate::eval::recall_at_k;
use crate::ranking::RankedList;

#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    pub lr: f64,
    pub batch: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub negatives: usize,
    pub seed: u64,
    /// Cutoff of the dev recall used for early stopping.
    pub stop_k: usize,
    pub bins: usize,
    pub hidden: usize,
    pub kmax: usize,
    pub kernel_sizes: Vec<usize>,
    pub filters: usize,
    pub max_query_len: usize,
    pub max_doc_len: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        let d = DrmmConfig::default();
        let p = PacrrConfig::default();
        Self {
            lr: 1e-3,
            batch: 32,
            patience: 5,
            max_epochs: 100,
            negatives: 4,
            seed: 42,
            stop_k: 20,
            bins: d.bins,
            hidden: d.hidden,
            kmax: p.kmax,
            kernel_sizes: p.kernel_sizes,
            filters: p.filters,
            max_query_len: 256,
            max_doc_len: 1024,
        }
    }
}

impl Hyperparams {
    /// Parses `key = value` lines on top of the defaults. `#` starts a
    /// comment; unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self, NeuralError> {
        let mut hp = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                NeuralError::Hyperparams(format!("line {}: expected key = value", i + 1))
            })?;
            hp.set(key.trim(), value.trim())?;
        }
        hp.validate()?;
        Ok(hp)
    }

    pub fn load(path: &Path) -> Result<Self, NeuralError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), NeuralError> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, NeuralError> {
            v.parse()
                .map_err(|_| NeuralError::Hyperparams(format!("invalid value `{v}` for `{key}`")))
        }
        match key {
            "lr" => self.lr = num(key, value)?,
            "batch" => self.batch = num(key, value)?,
            "patience" => self.patience = num(key, value)?,
            "max_epochs" => self.max_epochs = num(key, value)?,
            "negatives" => self.negatives = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "stop_k" => self.stop_k = num(key, value)?,
            "bins" => self.bins = num(key, value)?,
            "hidden" => self.hidden = num(key, value)?,
            "kmax" => self.kmax = num(key, value)?,
            "filters" => self.filters = num(key, value)?,
            "max_query_len" => self.max_query_len = num(key, value)?,
            "max_doc_len" => self.max_doc_len = num(key, value)?,
            "kernel_sizes" => {
                self.kernel_sizes = value
                    .split(',')
                    .map(|v| num(key, v.trim()))
                    .collect::<Result<_, _>>()?
            }
            other => return Err(NeuralError::Hyperparams(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), NeuralError> {
        let bad = |m: &str| Err(NeuralError::Hyperparams(m.to_string()));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be a non-negative number");
        }
        if self.batch == 0 || self.negatives == 0 || self.stop_k == 0 {
            return bad("batch, negatives and stop_k must be positive");
        }
        if self.bins == 0 || self.hidden == 0 {
            return bad("bins and hidden must be positive");
        }
        if self.kmax == 0
            || self.filters == 0
            || self.kernel_sizes.is_empty()
            || self.kernel_sizes.contains(&0)
        {
            return bad("kmax, filters and kernel_sizes must be positive");
        }
        if self.max_query_len == 0 || self.max_doc_len == 0 {
            return bad("maximum lengths must be positive");
        }
        Ok(())
    }

    /// Canonical `key = value` form, accepted by [`Hyperparams::parse`].
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let ks: Vec<String> = self.kernel_sizes.iter().map(ToString::to_string).collect();
        let _ = writeln!(s, "lr = {}", self.lr);
        let _ = writeln!(s, "batch = {}", self.batch);
        let _ = writeln!(s, "patience = {}", self.patience);
        let _ = writeln!(s, "max_epochs = {}", self.max_epochs);
        let _ = writeln!(s, "negatives = {}", self.negatives);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "stop_k = {}", self.stop_k);
        let _ = writeln!(s, "bins = {}", self.bins);
        let _ = writeln!(s, "hidden = {}", self.hidden);
        let _ = writeln!(s, "kmax = {}", self.kmax);
        let _ = writeln!(s, "kernel_sizes = {}", ks.join(","));
        let _ = writeln!(s, "filters = {}", self.filters);
        let _ = writeln!(s, "max_query_len = {}", self.max_query_len);
        let _ = writeln!(s, "max_doc_len = {}", self.max_doc_len);
        s
    }

    pub fn architecture(&self, kind: ModelKind) -> Architecture {
        match kind {
            ModelKind::Drmm => Architecture::Drmm(DrmmConfig {
                bins: self.bins,
                hidden: self.hidden,
            }),
            ModelKind::Pacrr => Architecture::Pacrr(PacrrConfig {
                kernel_sizes: self.kernel_sizes.clone(),
                filters: self.filters,
                kmax: self.kmax,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainTriple {
    pub query_id: String,
    pub positive: String,
    pub negative: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SampleStats {
    pub queries: usize,
    pub triples: usize,
    /// Queries whose pre-fetched list holds no relevant document.
    pub skipped_no_positive: usize,
    /// Queries whose pre-fetched list holds only relevant documents.
    pub skipped_no_negative: usize,
}

/// For every relevant document in a query's pre-fetched list, samples up to
/// `negatives` non-relevant documents from the same list without
/// replacement.
pub fn sample_triples<R: Rng>(
    lists: &[RankedList],
    qrels: &Qrels,
    negatives: usize,
    rng: &mut R,
) -> (Vec<TrainTriple>, SampleStats) {
    let mut stats = SampleStats::default();
    let mut triples = Vec::new();
    for list in lists {
        let Some(rel) = qrels.relevant(&list.query_id) else {
            continue;
        };
        stats.queries += 1;
        let (pos, neg): (Vec<&str>, Vec<&str>) = list.doc_ids().partition(|d| rel.contains(*d));
        if pos.is_empty() {
            stats.skipped_no_positive += 1;
            continue;
        }
        if neg.is_empty() {
            stats.skipped_no_negative += 1;
            continue;
        }
        for p in pos {
            for n in neg.choose_multiple(rng, negatives) {
                triples.push(TrainTriple {
                    query_id: list.query_id.clone(),
                    positive: p.to_string(),
                    negative: n.to_string(),
                });
            }
        }
    }
    stats.triples = triples.len();
    (triples, stats)
}

/// [`sample_triples`] with a generator seeded from `seed`.
pub fn sample_triples_seeded(
    lists: &[RankedList],
    qrels: &Qrels,
    negatives: usize,
    seed: u64,
) -> (Vec<TrainTriple>, SampleStats) {
    sample_triples(
        lists,
        qrels,
        negatives,
        &mut ChaCha8Rng::seed_from_u64(seed),
    )
}

/// Inputs to [`train`]. Lists must carry min-max normalized pre-fetcher
/// scores, which act as `s_p`.
pub struct TrainData<'a> {
    pub train_lists: &'a [RankedList],
    pub triples: &'a [TrainTriple],
    pub dev_lists: &'a [RankedList],
    pub dev_qrels: &'a Qrels,
    pub features: &'a dyn PairFeatures,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_recall: f64,
    pub w_r: f64,
    pub w_p: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best dev recall.
    pub model: Reranker,
    pub best_epoch: usize,
    pub best_dev_recall: f64,
    pub log: Vec<EpochLog>,
    pub stopped_early: bool,
}

impl TrainOutcome {
    pub fn write_log_csv<W: Write>(&self, mut w: W, stop_k: usize) -> std::io::Result<()> {
        writeln!(w, "epoch,train_loss,dev_r{stop_k},w_r,w_p")?;
        for e in &self.log {
            writeln!(
                w,
                "{},{:.8},{:.6},{:.6},{:.6}",
                e.epoch, e.train_loss, e.dev_recall, e.w_r, e.w_p
            )?;
        }
        Ok(())
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = Self::B1 * *m + (1.0 - Self::B1) * g;
            *v = Self::B2 * *v + (1.0 - Self::B2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        }
    }
}

/// Hinge loss of one triple and its gradient.
pub fn triple_loss_grad(
    model: &Reranker,
    features: &dyn PairFeatures,
    triple: &TrainTriple,
    sp_pos: f64,
    sp_neg: f64,
) -> (f64, Vec<f64>) {
    let fp = features.features(&triple.query_id, &triple.positive);
    let fn_ = features.features(&triple.query_id, &triple.negative);
    let rel_pos = model.rel(fp.as_deref(), sp_pos);
    let rel_neg = model.rel(fn_.as_deref(), sp_neg);
    let loss = hinge_loss(rel_pos, rel_neg);
    let mut grad = vec![0.0; model.num_params()];
    if loss > 0.0 {
        model.rel_with_grad(fp.as_deref(), sp_pos, -1.0, &mut grad);
        model.rel_with_grad(fn_.as_deref(), sp_neg, 1.0, &mut grad);
    }
    (loss, grad)
}

/// Mean dev R@`k` after re-ranking each dev list.
pub fn dev_recall(
    model: &Reranker,
    lists: &[RankedList],
    qrels: &Qrels,
    features: &dyn PairFeatures,
    k: usize,
) -> f64 {
    let recalls: Vec<f64> = lists
        .par_iter()
        .filter_map(|l| {
            let rel = qrels.relevant(&l.query_id)?;
            recall_at_k(&rerank(model, l, features, l.len()), rel, k)
        })
        .collect();
    if recalls.is_empty() {
        0.0
    } else {
        recalls.iter().sum::<f64>() / recalls.len() as f64
    }
}

/// Trains a re-ranker from scratch, seeded by `hp.seed`.
pub fn train(
    kind: ModelKind,
    data: &TrainData<'_>,
    hp: &Hyperparams,
) -> Result<TrainOutcome, NeuralError> {
    hp.validate()?;
    if data.triples.is_empty() {
        return Err(NeuralError::NoTriples);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut model = Reranker::init(hp.architecture(kind), &mut rng);
    train_from(&mut model, data, hp, &mut rng)
}

/// Continues training `model` in place; returns the best checkpoint.
pub fn train_from<R: Rng>(
    model: &mut Reranker,
    data: &TrainData<'_>,
    hp: &Hyperparams,
    rng: &mut R,
) -> Result<TrainOutcome, NeuralError> {
    let s_p: HashMap<(&str, &str), f64> = data
        .train_lists
        .iter()
        .flat_map(|l| {
            l.entries
                .iter()
                .map(move |e| ((l.query_id.as_str(), e.doc_id.as_str()), e.score))
        })
        .collect();
    let sp = |q: &str, d: &str| s_p.get(&(q, d)).copied().unwrap_or(0.0);

    let mut adam = Adam::new(model.num_params());
    let mut order: Vec<usize> = (0..data.triples.len()).collect();
    let mut log = Vec::new();
    let mut best = (model.clone(), 0usize, f64::NEG_INFINITY);
    let mut waited = 0;
    let mut stopped_early = false;
    let mut losses = vec![0.0; data.triples.len()];

    for epoch in 1..=hp.max_epochs {
        order.shuffle(rng);
        for (bi, batch) in order.chunks(hp.batch).enumerate() {
            let results: Vec<(f64, Vec<f64>)> = batch
                .par_iter()
                .map(|&ti| {
                    let t = &data.triples[ti];
                    triple_loss_grad(
                        model,
                        data.features,
                        t,
                        sp(&t.query_id, &t.positive),
                        sp(&t.query_id, &t.negative),
                    )
                })
                .collect();
            let mut grad = vec![0.0; model.num_params()];
            let mut batch_loss = 0.0;
            for (&ti, (loss, g)) in batch.iter().zip(&results) {
                losses[ti] = *loss;
                batch_loss += loss;
                for (a, b) in grad.iter_mut().zip(g) {
                    *a += b;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            if !batch_loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(NeuralError::Diverged {
                    epoch,
                    batch: bi,
                    loss: batch_loss * scale,
                });
            }
            adam.step(&mut model.params, &grad, hp.lr);
        }
        let train_loss = losses.iter().sum::<f64>() / losses.len() as f64;
        let dev = dev_recall(
            model,
            data.dev_lists,
            data.dev_qrels,
            data.features,
            hp.stop_k,
        );
        let w = model.weights();
        log::info!(
            "epoch {epoch}: loss {train_loss:.6} dev R@{} {dev:.4} w_r {:.4} w_p {:.4}",
            hp.stop_k,
            w.w_r,
            w.w_p
        );
        log.push(EpochLog {
            epoch,
            train_loss,
            dev_recall: dev,
            w_r: w.w_r,
            w_p: w.w_p,
        });
        if dev > best.2 {
            best = (model.clone(), epoch, dev);
            waited = 0;
        } else {
            waited += 1;
            if waited >= hp.patience {
                stopped_early = true;
                break;
            }
        }
    }
    Ok(TrainOutcome {
        model: best.0,
        best_epoch: best.1,
        best_dev_recall: best.2.max(0.0),
        log,
        stopped_early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ranking::Stage;

    #[test]
    fn hyperparams_roundtrip() {
        let hp = Hyperparams::parse("lr = 0.01\nkernel_sizes = 2, 3, 4 # comment\n").unwrap();
        assert_eq!(hp.lr, 0.01);
        assert_eq!(hp.kernel_sizes, [2, 3, 4]);
        assert_eq!(hp.batch, 32);
        assert_eq!(Hyperparams::parse(&hp.to_text()).unwrap(), hp);
        assert!(Hyperparams::parse("nope = 1").is_err());
        assert!(Hyperparams::parse("batch = 0").is_err());
    }

    #[test]
    fn triples_only_from_lists() {
        let mut qrels = Qrels::new();
        qrels.insert("q1", "a");
        qrels.insert("q1", "far");
        qrels.insert("q2", "z");
        qrels.insert("q3", "x");
        let l = |q: &str, ds: &[&str]| {
            RankedList::from_scores(
                q,
                ds.iter()
                    .enumerate()
                    .map(|(i, d)| (d.to_string(), -(i as f64))),
                Stage::Bm25,
                10,
            )
        };
        let lists = [l("q1", &["a", "b", "c"]), l("q2", &["x"]), l("q3", &["x"])];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (t, stats) = sample_triples(&lists, &qrels, 4, &mut rng);
        assert_eq!(t.len(), 2);
        assert!(t.iter().all(|t| t.positive == "a" && t.negative != "a"));
        assert_eq!(stats.skipped_no_positive, 1);
        assert_eq!(stats.skipped_no_negative, 1);
        assert_eq!(stats.queries, 3);
    }
}
