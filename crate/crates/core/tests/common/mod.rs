//! Shared fixtures and reference implementations for integration tests.
#![allow(dead_code)]

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use regir::neural::{Features, Reranker};
use regir::ranking::{RankedEntry, RankedList, Stage};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn vocab(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("w{i}")).collect()
}

/// Zipf-ish draw so that some terms are frequent and many are rare.
pub fn draw_term<'a, R: Rng>(rng: &mut R, vocab: &'a [String]) -> &'a str {
    let u: f64 = rng.random();
    let i = ((vocab.len() as f64).powf(u) - 1.0) as usize;
    &vocab[i.min(vocab.len() - 1)]
}

pub fn random_corpus<R: Rng>(
    rng: &mut R,
    n_docs: usize,
    vocab: &[String],
) -> Vec<(String, Vec<String>)> {
    (0..n_docs)
        .map(|d| {
            let len = rng.random_range(1..60);
            let toks = (0..len)
                .map(|_| draw_term(rng, vocab).to_string())
                .collect();
            (format!("d{d:04}"), toks)
        })
        .collect()
}

/// Full-scan BM25 scorer written directly from the textbook formula.
pub struct NaiveBm25 {
    docs: Vec<(String, HashMap<String, f64>, f64)>,
    df: HashMap<String, f64>,
    avg_len: f64,
}

impl NaiveBm25 {
    pub fn new(docs: &[(String, Vec<String>)]) -> Self {
        let mut df: HashMap<String, f64> = HashMap::new();
        let docs: Vec<(String, HashMap<String, f64>, f64)> = docs
            .iter()
            .map(|(id, toks)| {
                let mut tf = HashMap::new();
                for t in toks {
                    *tf.entry(t.clone()).or_insert(0.0) += 1.0;
                }
                for t in tf.keys() {
                    *df.entry(t.clone()).or_insert(0.0) += 1.0;
                }
                (id.clone(), tf, toks.len() as f64)
            })
            .collect();
        let avg_len = docs.iter().map(|d| d.2).sum::<f64>() / docs.len() as f64;
        Self { docs, df, avg_len }
    }

    /// Every document scored and sorted by score, then ascending id.
    pub fn rank(&self, query: &[String], k1: f64, b: f64) -> Vec<(String, f64)> {
        let n = self.docs.len() as f64;
        let mut scored: Vec<(String, f64)> = self
            .docs
            .iter()
            .map(|(id, tf, len)| {
                let mut s = 0.0;
                for q in query {
                    let Some(&tf) = tf.get(q) else { continue };
                    let df = self.df[q];
                    let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln();
                    s += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * len / self.avg_len));
                }
                (id.clone(), s)
            })
            .collect();
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
        scored
    }
}

/// Brute-force cosine ranking; zero vectors get similarity -1.
pub fn brute_knn(store: &[(String, Vec<f32>)], q: &[f32]) -> Vec<String> {
    let norm = |v: &[f32]| v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let qn = norm(q);
    let mut sims: Vec<(String, f64)> = store
        .iter()
        .map(|(id, v)| {
            let vn = norm(v);
            let s = if vn == 0.0 {
                -1.0
            } else {
                v.iter()
                    .zip(q)
                    .map(|(a, b)| *a as f64 * *b as f64)
                    .sum::<f64>()
                    / (vn * qn)
            };
            (id.clone(), s)
        })
        .collect();
    sims.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    sims.into_iter().map(|(id, _)| id).collect()
}

pub fn list_of(query_id: &str, scored: &[(&str, f64)]) -> RankedList {
    RankedList {
        query_id: query_id.into(),
        entries: scored
            .iter()
            .map(|(d, s)| RankedEntry {
                doc_id: d.to_string(),
                score: *s,
                stage: Stage::Bm25,
            })
            .collect(),
    }
}

/// Largest relative error between the analytic gradient of
/// `rel(pos) - rel(neg)` and central finite differences.
pub fn gradient_error(
    model: &Reranker,
    pos: &Features,
    neg: &Features,
    sp_pos: f64,
    sp_neg: f64,
) -> f64 {
    let objective = |m: &Reranker| m.rel(Some(pos), sp_pos) - m.rel(Some(neg), sp_neg);
    let mut grad = vec![0.0; model.num_params()];
    model.rel_with_grad(Some(pos), sp_pos, 1.0, &mut grad);
    model.rel_with_grad(Some(neg), sp_neg, -1.0, &mut grad);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (i, g) in grad.iter().enumerate() {
        let mut plus = model.clone();
        plus.params[i] += h;
        let mut minus = model.clone();
        minus.params[i] -= h;
        let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
        let err = (fd - g).abs() / fd.abs().max(g.abs()).max(1e-6);
        worst = worst.max(err);
    }
    worst
}

/// A small synthetic EU-to-UK task on disk. Each query has one or two
/// relevant pool documents that share its topic words; years drift so that
/// the date filter has something to do.
pub struct ToyTask {
    pub dir: PathBuf,
}

pub const TOY_QUERIES: usize = 40;
pub const TOY_POOL: usize = 160;

impl ToyTask {
    pub fn write(dir: &Path) -> Self {
        let mut rng = rng(7);
        let common = vocab(80);
        let topic = |q: usize| (0..4).map(move |j| format!("topic{q}x{j}"));
        let mut queries = String::new();
        let mut pool_docs: Vec<(String, String, u32)> = Vec::new();
        let mut qrels = String::new();
        let mut words: Vec<String> = common.clone();
        for q in 0..TOY_QUERIES {
            words.extend(topic(q));
            let year = 1995 + q as u32 / 2;
            let mut body: Vec<String> = (0..25)
                .map(|_| draw_term(&mut rng, &common).to_string())
                .collect();
            body.extend(topic(q));
            queries.push_str(&format!(
                "{{\"doc_id\":\"eu{q:03}\",\"title\":\"Directive {year}/{q} on topic {q}\",\"body\":\"{}\",\"year\":{year}}}\n",
                body.join(" ")
            ));
            let n_rel = 1 + q % 2;
            for r in 0..n_rel {
                let id = format!("uk{q:03}r{r}");
                let mut body: Vec<String> = (0..30)
                    .map(|_| draw_term(&mut rng, &common).to_string())
                    .collect();
                let t: Vec<String> = topic(q).collect();
                for _ in 0..3 {
                    body.push(t.choose(&mut rng).unwrap().clone());
                }
                pool_docs.push((id.clone(), body.join(" "), year + rng.random_range(0..4)));
                qrels.push_str(&format!("eu{q:03}\t{id}\n"));
            }
        }
        while pool_docs.len() < TOY_POOL {
            let i = pool_docs.len();
            let mut body: Vec<String> = (0..30)
                .map(|_| draw_term(&mut rng, &common).to_string())
                .collect();
            // distractors borrow a topic word from some query
            let q = rng.random_range(0..TOY_QUERIES);
            body.push(format!("topic{q}x{}", rng.random_range(0..4)));
            pool_docs.push((
                format!("ukx{i:04}"),
                body.join(" "),
                rng.random_range(1990..2020),
            ));
        }
        let mut pool = String::new();
        for (id, body, year) in &pool_docs {
            pool.push_str(&format!(
                "{{\"doc_id\":\"{id}\",\"title\":\"Act {id}\",\"body\":\"{body}\",\"year\":{year}}}\n"
            ));
        }
        let ids = |r: std::ops::Range<usize>| {
            r.map(|q| format!("\"eu{q:03}\""))
                .collect::<Vec<_>>()
                .join(",")
        };
        let splits = format!(
            "{{\"train\":[{}],\"dev\":[{}],\"test\":[{}]}}",
            ids(0..24),
            ids(24..32),
            ids(32..TOY_QUERIES)
        );
        let mut vectors = String::new();
        for w in &words {
            let v: Vec<String> = (0..8)
                .map(|_| format!("{:.5}", rng.random_range(-1.0f32..1.0)))
                .collect();
            let _ = writeln!(vectors, "{w} {}", v.join(" "));
        }
        fs::create_dir_all(dir).unwrap();
        fs::write(dir.join("queries.jsonl"), queries).unwrap();
        fs::write(dir.join("pool.jsonl"), pool).unwrap();
        fs::write(dir.join("qrels.tsv"), qrels).unwrap();
        fs::write(dir.join("splits.json"), splits).unwrap();
        fs::write(dir.join("vectors.txt"), vectors).unwrap();
        fs::write(dir.join("stopwords.txt"), "w0\nw1\nw2\n").unwrap();
        fs::write(
            dir.join("hyper.txt"),
            "lr = 0.01\nbatch = 16\nmax_epochs = 4\npatience = 2\nbins = 10\nhidden = 3\nnegatives = 2\n",
        )
        .unwrap();
        Self {
            dir: dir.to_path_buf(),
        }
    }

    /// Writes `name` with the shared data keys plus `extra` lines.
    pub fn config(&self, name: &str, extra: &str) -> PathBuf {
        let text = format!(
            "task = eu2uk\n\
             data.queries = queries.jsonl\n\
             data.pool = pool.jsonl\n\
             data.qrels = qrels.tsv\n\
             data.splits = splits.json\n\
             text.stopwords = stopwords.txt\n\
             output = out\n\
             {extra}"
        );
        let p = self.dir.join(name);
        fs::write(&p, text).unwrap();
        p
    }
}

/// Every file under `dir` whose relative path matches `pred`, with contents.
pub fn collect_files(dir: &Path, pred: &dyn Fn(&str) -> bool) -> HashMap<String, Vec<u8>> {
    let mut out = HashMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p
                    .strip_prefix(dir)
                    .unwrap()
                    .to_string_lossy()
                    .replace('\\', "/");
                if pred(&rel) {
                    out.insert(rel, fs::read(&p).unwrap());
                }
            }
        }
    }
    out
}
