//! End-to-end experiments from a single config: ingest, index, tune,
//! pre-fetch, optionally train and re-rank, optionally date-filter, and
//! evaluate. Every stage writes its artifacts under the output directory.
//!
//! Each CSV starts with a `# manifest <hash>` comment line. The hash covers
//! the config and the content of every input file, so two runs with the same
//! hash are expected to produce the same CSVs.

pub mod config;

pub use config::{
    parse_grid, Bm25Spec, ExperimentConfig, FilterSpec, FusionSpec, PrefetchMode, RerankSpec, Task,
};

use std::collections::{BTreeMap, HashMap};
use std::fmt::Display;
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{ingest_collection, load_qrels, Collection, Qrels, Split, SplitManifest};
use crate::dense::{
    CentroidRetriever, DenseError, DocVectorRetriever, DocVectorStore, WordVectors,
    ZeroVectorPolicy,
};
use crate::eval::{aggregate_runs, evaluate, recall_curve};
use crate::fusion::{fuse_raw, normalize_scores, tune_alpha};
use crate::lexical::{tune_bm25, PostingsIndex};
use crate::neural::checkpoint::save_checkpoint;
use crate::neural::features::FeatureSpec;
use crate::neural::{
    rerank, sample_triples, train, ContextualEmbedder, FeatureBuilder, ModelKind, TokenEmbedder,
    TrainData, WordEmbedder,
};
use crate::ranking::{write_run, RankedList};
use crate::temporal::{
    apply_filter, choose_window, prefilter, write_histogram_csv, year_difference_histogram,
    DateWindow, FilterMode,
};
use crate::text::{StopWords, TextPipeline};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Cutoff of the dev recall used to choose a date window.
const WINDOW_K: usize = 20;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("config error: {0}")]
    Config(String),
    #[error("stage `{stage}` failed: {message}")]
    Stage {
        stage: &'static str,
        message: String,
    },
}

fn at<T, E: Display>(stage: &'static str, r: Result<T, E>) -> Result<T, RunError> {
    r.map_err(|e| RunError::Stage {
        stage,
        message: e.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
    pub cached: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub hash: String,
    pub config: BTreeMap<String, String>,
    /// SHA-256 of each input file, by role.
    pub resources: BTreeMap<String, String>,
    pub timings: Vec<StageTiming>,
    /// Values chosen during the run (tuned parameters, sample counts).
    pub chosen: BTreeMap<String, String>,
    /// Output files relative to the output directory.
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self, String> {
        let f = File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_reader(BufReader::new(f)).map_err(|e| format!("{}: {e}", path.display()))
    }

    /// Checks that the hash matches the recorded config and resources and
    /// that every listed output exists, with CSVs carrying the hash.
    pub fn validate(&self, dir: &Path) -> Result<(), String> {
        if manifest_hash(&self.version, &self.config, &self.resources) != self.hash {
            return Err("manifest hash does not match its config and resources".into());
        }
        for name in &self.outputs {
            let p = dir.join(name);
            if !p.is_file() {
                return Err(format!("missing output {name}"));
            }
            if name.ends_with(".csv") {
                let text = fs::read_to_string(&p).map_err(|e| format!("{name}: {e}"))?;
                let mut lines = text.lines();
                if lines.next() != Some(&format!("# manifest {}", self.hash)) {
                    return Err(format!("{name} lacks the manifest comment"));
                }
                if lines
                    .next()
                    .is_none_or(|h| h.is_empty() || h.starts_with('#'))
                {
                    return Err(format!("{name} lacks a header row"));
                }
            }
        }
        Ok(())
    }
}

/// SHA-256 of a file's content, hex encoded.
pub fn hash_file(path: &Path) -> io::Result<String> {
    let mut h = Sha256::new();
    io::copy(&mut BufReader::new(File::open(path)?), &mut h)?;
    Ok(hex::encode(h.finalize()))
}

fn manifest_hash(
    version: &str,
    config: &BTreeMap<String, String>,
    resources: &BTreeMap<String, String>,
) -> String {
    let mut h = Sha256::new();
    h.update(format!("version={version}\n"));
    for (k, v) in config {
        h.update(format!("config.{k}={v}\n"));
    }
    for (k, v) in resources {
        h.update(format!("resource.{k}={v}\n"));
    }
    hex::encode(h.finalize())
}

/// Writes the recall-vs-depth curve as `k,recall` rows for `1..=k_max`.
pub fn emit_rk_curve<W: Write>(
    mut w: W,
    lists: &[RankedList],
    qrels: &Qrels,
    k_max: usize,
) -> io::Result<()> {
    writeln!(w, "k,recall")?;
    for (k, r) in recall_curve(lists, qrels, k_max) {
        writeln!(w, "{k},{r:.6}")?;
    }
    Ok(())
}

struct Outputs {
    dir: PathBuf,
    hash: String,
    files: Vec<String>,
}

impl Outputs {
    fn path(&mut self, name: &str) -> io::Result<PathBuf> {
        let p = self.dir.join(name);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)?;
        }
        self.files.push(name.to_string());
        Ok(p)
    }

    fn csv<F>(&mut self, name: &str, body: F) -> io::Result<()>
    where
        F: FnOnce(&mut dyn Write) -> io::Result<()>,
    {
        let mut w = BufWriter::new(File::create(self.path(name)?)?);
        writeln!(w, "# manifest {}", self.hash)?;
        body(&mut w)?;
        w.flush()
    }

    fn run(&mut self, name: &str, lists: &[RankedList]) -> io::Result<()> {
        let mut w = BufWriter::new(File::create(self.path(name)?)?);
        writeln!(w, "# manifest {}", self.hash)?;
        write_run(&mut w, lists)?;
        w.flush()
    }
}

struct Timer {
    timings: Vec<StageTiming>,
}

impl Timer {
    fn record(&mut self, stage: &str, start: Instant, cached: bool) {
        let seconds = start.elapsed().as_secs_f64();
        info!(
            "stage {stage} done in {seconds:.2}s{}",
            if cached { " (cached)" } else { "" }
        );
        self.timings.push(StageTiming {
            stage: stage.to_string(),
            seconds,
            cached,
        });
    }
}

const SPLITS: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

/// Lists per split, in split-manifest order.
type SplitLists = BTreeMap<&'static str, Vec<RankedList>>;

fn by_split<F>(splits: &SplitManifest, f: F) -> Result<SplitLists, RunError>
where
    F: Fn(&str) -> Result<RankedList, RunError> + Sync,
{
    let mut out = BTreeMap::new();
    for s in SPLITS {
        let lists = splits
            .ids(s)
            .par_iter()
            .map(|q| f(q))
            .collect::<Result<Vec<_>, _>>()?;
        out.insert(s.name(), lists);
    }
    Ok(out)
}

fn map_lists<F: Fn(&RankedList) -> RankedList>(lists: &SplitLists, f: F) -> SplitLists {
    lists
        .iter()
        .map(|(k, v)| (*k, v.iter().map(&f).collect()))
        .collect()
}

fn tokens_of(collection: &Collection, pipeline: &TextPipeline) -> HashMap<String, Vec<String>> {
    let docs: Vec<_> = collection.iter().collect();
    docs.par_iter()
        .map(|d| (d.doc_id.clone(), pipeline.process(&d.full_text()).tokens))
        .collect()
}

/// Runs the configured experiment and returns its manifest, which is also
/// written to `manifest.json` in the output directory. On failure the
/// artifacts written so far are left in place.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunManifest, RunError> {
    at("setup", fs::create_dir_all(&cfg.output))?;
    let mut timer = Timer {
        timings: Vec::new(),
    };
    let mut chosen: BTreeMap<String, String> = BTreeMap::new();

    let t = Instant::now();
    let resources: BTreeMap<String, String> = cfg
        .resources()
        .into_iter()
        .map(|(role, p)| {
            hash_file(p)
                .map(|h| (role.to_string(), h))
                .map_err(|e| format!("{}: {e}", p.display()))
        })
        .collect::<Result<_, _>>()
        .map_err(|message| RunError::Stage {
            stage: "hash",
            message,
        })?;
    let hash = manifest_hash(VERSION, &cfg.raw, &resources);
    let mut out = Outputs {
        dir: cfg.output.clone(),
        hash: hash.clone(),
        files: Vec::new(),
    };
    timer.record("hash", t, false);

    // ingest
    let t = Instant::now();
    let (queries, _) = at(
        "ingest",
        ingest_collection(&cfg.queries, cfg.task.query_tag()),
    )?;
    let (pool, _) = at("ingest", ingest_collection(&cfg.pool, cfg.task.pool_tag()))?;
    let qrels = at("ingest", load_qrels(&cfg.qrels, &queries, &pool))?;
    let splits = at("ingest", SplitManifest::load(&cfg.splits))?;
    at("ingest", splits.validate(Some(&queries)))?;
    for s in SPLITS {
        if let Some(q) = splits.ids(s).iter().find(|q| !queries.contains(q)) {
            return Err(RunError::Stage {
                stage: "ingest",
                message: format!("{} query {q} is not in the query collection", s.name()),
            });
        }
    }
    let split_qrels: BTreeMap<&str, Qrels> = SPLITS
        .iter()
        .map(|s| (s.name(), qrels.restrict(splits.ids(*s))))
        .collect();
    at(
        "ingest",
        out.csv("dataset_stats.csv", |w| {
            writeln!(w, "set,documents,mean_relevant")?;
            writeln!(w, "pool,{},", pool.len())?;
            for s in SPLITS {
                let ids = splits.ids(s);
                writeln!(
                    w,
                    "{},{},{:.4}",
                    s.name(),
                    ids.len(),
                    qrels.mean_relevant(ids)
                )?;
            }
            Ok(())
        }),
    )?;
    timer.record("ingest", t, false);

    // index
    let t = Instant::now();
    let stopwords = match &cfg.stopwords {
        Some(p) => at("index", StopWords::load(p))?,
        None => StopWords::default(),
    };
    let cache_key = {
        let mut h = Sha256::new();
        h.update(format!(
            "{VERSION}\n{}\n{}\n{}\n",
            resources["pool"],
            resources.get("stopwords").map_or("default", String::as_str),
            cfg.idf_filter
        ));
        hex::encode(h.finalize())
    };
    let cache_path = cfg
        .output
        .join("cache")
        .join(format!("index-{}.bin", &cache_key[..16]));
    let (index, cached) = match PostingsIndex::load(&cache_path) {
        Ok(index) => (index, true),
        Err(_) => {
            let texts: Vec<String> = pool.iter().map(|d| d.full_text()).collect();
            let pipeline = at(
                "index",
                TextPipeline::fit(
                    texts.par_iter().map(String::as_str),
                    stopwords,
                    cfg.idf_filter,
                ),
            )?;
            let index = at(
                "index",
                PostingsIndex::build_from_collection(&pool, pipeline),
            )?;
            at("index", fs::create_dir_all(cfg.output.join("cache")))?;
            at("index", index.save(&cache_path))?;
            (index, false)
        }
    };
    let pipeline = index.pipeline().cloned().ok_or_else(|| RunError::Stage {
        stage: "index",
        message: "cached index carries no text pipeline".into(),
    })?;
    let query_tokens = tokens_of(&queries, &pipeline);
    timer.record("index", t, cached);

    // tune-bm25
    let needs_bm25 = matches!(cfg.prefetch, PrefetchMode::Bm25 | PrefetchMode::Ensemble);
    let mut params = cfg.bm25.params;
    if needs_bm25 && cfg.bm25.tune {
        let t = Instant::now();
        let dev: Vec<(String, Vec<String>)> = splits
            .dev
            .iter()
            .map(|q| (q.clone(), query_tokens[q].clone()))
            .collect();
        let tuning = tune_bm25(
            &index,
            &dev,
            &split_qrels["dev"],
            &cfg.bm25.k1_grid,
            &cfg.bm25.b_grid,
            cfg.k,
        );
        at(
            "tune-bm25",
            out.csv("bm25_grid.csv", |w| tuning.write_csv(w)),
        )?;
        params = tuning.best;
        timer.record("tune-bm25", t, false);
    }
    if needs_bm25 {
        chosen.insert("bm25.k1".into(), params.k1.to_string());
        chosen.insert("bm25.b".into(), params.b.to_string());
    }

    // prefetch
    let t = Instant::now();
    let depth = cfg.fetch_depth();
    let bm25_lists = if needs_bm25 {
        Some(by_split(&splits, |q| {
            Ok(index.bm25_search(q, &query_tokens[q], params, depth))
        })?)
    } else {
        None
    };
    let dense_mode = match cfg.prefetch {
        PrefetchMode::Ensemble => Some(cfg.fusion.component),
        PrefetchMode::Bm25 => None,
        m => Some(m),
    };
    let mut pool_tokens: Option<HashMap<String, Vec<String>>> = None;
    let mut word_vectors: Option<WordVectors> = None;
    let dense_lists = match dense_mode {
        None => None,
        Some(PrefetchMode::W2vCent) => {
            let wv = at(
                "prefetch",
                WordVectors::load(cfg.word_vectors.as_deref().expect("validated")),
            )?;
            let toks = pool_tokens.insert(tokens_of(&pool, &pipeline));
            let retriever = at(
                "prefetch",
                CentroidRetriever::build(
                    pool.iter()
                        .map(|d| (d.doc_id.as_str(), toks[&d.doc_id].as_slice())),
                    wv.clone(),
                    pipeline.idf.clone(),
                    ZeroVectorPolicy::SkipDocument,
                ),
            )?;
            chosen.insert(
                "dense.skipped_pool_documents".into(),
                retriever.skipped.len().to_string(),
            );
            word_vectors = Some(wv);
            Some(by_split(&splits, |q| {
                match retriever.search(q, &query_tokens[q], depth) {
                    Err(DenseError::EmptyCentroid) => {
                        warn!("query {q} has no centroid; its dense list is empty");
                        Ok(RankedList::new(q))
                    }
                    r => at("prefetch", r),
                }
            })?)
        }
        Some(PrefetchMode::DocVectors) => {
            let qs = at(
                "prefetch",
                DocVectorStore::load(cfg.query_vectors.as_deref().expect("validated")),
            )?;
            let ps = at(
                "prefetch",
                DocVectorStore::load(cfg.pool_vectors.as_deref().expect("validated")),
            )?;
            at("prefetch", ps.validate_against(&pool))?;
            let retriever = DocVectorRetriever {
                queries: qs,
                pool: ps,
            };
            Some(by_split(&splits, |q| {
                at("prefetch", retriever.search(q, depth))
            })?)
        }
        Some(_) => unreachable!("validated dense mode"),
    };
    let deep: SplitLists = match (cfg.prefetch, bm25_lists, dense_lists) {
        (PrefetchMode::Ensemble, Some(a), Some(b)) => {
            let alpha = match cfg.fusion.alpha {
                Some(a) => a,
                None => {
                    let pairs: Vec<(RankedList, RankedList)> = a["dev"]
                        .iter()
                        .cloned()
                        .zip(b["dev"].iter().cloned())
                        .collect();
                    let tuning = at(
                        "fuse",
                        tune_alpha(&pairs, &split_qrels["dev"], &cfg.fusion.grid, cfg.k),
                    )?;
                    at("fuse", out.csv("alpha_grid.csv", |w| tuning.write_csv(w)))?;
                    tuning.alpha
                }
            };
            chosen.insert("fusion.alpha".into(), alpha.to_string());
            let mut fused = BTreeMap::new();
            for (split, la) in &a {
                let lists = la
                    .iter()
                    .zip(&b[split])
                    .map(|(x, y)| fuse_raw(x, y, alpha, depth))
                    .collect::<Result<Vec<_>, _>>();
                fused.insert(*split, at("fuse", lists)?);
            }
            fused
        }
        (_, Some(a), None) => a,
        (_, None, Some(b)) => b,
        _ => unreachable!("at least one pre-fetcher runs"),
    };
    for s in SPLITS {
        let lists: Vec<RankedList> = deep[s.name()]
            .iter()
            .map(|l| l.clone().truncated(cfg.k))
            .collect();
        at(
            "prefetch",
            out.run(&format!("runs/prefetch_{}.run", s.name()), &lists),
        )?;
    }
    for split in ["dev", "test"] {
        let lists: Vec<RankedList> = deep[split]
            .iter()
            .map(|l| l.clone().truncated(cfg.k))
            .collect();
        for &k in &cfg.eval_k {
            let report = evaluate(&lists, &split_qrels[split], k);
            at(
                "evaluate",
                out.csv(&format!("eval/prefetch_{split}_at{k}.csv"), |w| {
                    report.write_csv(w)
                }),
            )?;
        }
    }
    at(
        "evaluate",
        out.csv("rk_curve.csv", |w| {
            emit_rk_curve(w, &deep["test"], &split_qrels["test"], cfg.curve_k_max)
        }),
    )?;
    let query_year = |q: &str| queries.year_of(q).unwrap_or(0);
    let doc_year = |d: &str| pool.year_of(d).unwrap_or(0);
    let hist = year_difference_histogram(&split_qrels["dev"], query_year, doc_year);
    at(
        "date-filter",
        out.csv("year_diff.csv", |w| write_histogram_csv(w, &hist)),
    )?;
    timer.record("prefetch", t, false);

    // date-filter window
    let window = match &cfg.filter {
        None => None,
        Some(f) => {
            let years = match f.years {
                Some(y) => Some(y),
                None => {
                    let choice = choose_window(
                        &deep["dev"],
                        &split_qrels["dev"],
                        query_year,
                        doc_year,
                        &f.grid,
                        FilterMode::Pre,
                        cfg.k,
                        WINDOW_K,
                    );
                    at(
                        "date-filter",
                        out.csv("date_window.csv", |w| {
                            writeln!(w, "years,recall_at_{WINDOW_K}")?;
                            for (y, r) in &choice.grid {
                                let y = y.map_or("none".to_string(), |y| y.to_string());
                                writeln!(w, "{y},{r:.6}")?;
                            }
                            Ok(())
                        }),
                    )?;
                    choice.window
                }
            };
            chosen.insert(
                "filter.years".into(),
                years.map_or("none".into(), |y| y.to_string()),
            );
            Some(DateWindow {
                max_distance_years: years,
                mode: f.mode,
            })
        }
    };
    let candidates: SplitLists = match window {
        Some(w) if w.mode == FilterMode::Pre => map_lists(&deep, |l| {
            prefilter(query_year(&l.query_id), l, doc_year, &w, cfg.k)
        }),
        _ => map_lists(&deep, |l| l.clone().truncated(cfg.k)),
    };
    let post = |l: &RankedList| match window {
        Some(w) if w.mode == FilterMode::Post => {
            apply_filter(query_year(&l.query_id), l, doc_year, &w)
        }
        _ => l.clone(),
    };

    // train + rerank
    let mut finals: Vec<(String, Vec<RankedList>)> = Vec::new();
    if let Some(spec) = &cfg.rerank {
        let t = Instant::now();
        let pool_tokens = match pool_tokens {
            Some(p) => p,
            None => tokens_of(&pool, &pipeline),
        };
        let embedder: Box<dyn TokenEmbedder> = match &spec.contextual_vectors {
            Some(p) => {
                let f = at("train", File::open(p))?;
                Box::new(at("train", ContextualEmbedder::read(BufReader::new(f)))?)
            }
            None => {
                let wv = match word_vectors {
                    Some(wv) => wv,
                    None => at(
                        "train",
                        WordVectors::load(cfg.word_vectors.as_deref().expect("validated")),
                    )?,
                };
                Box::new(WordEmbedder::new(&wv))
            }
        };
        let hp = &spec.hyperparams;
        let arch = hp.architecture(spec.model);
        let feature_spec = FeatureSpec::for_arch(&arch, hp.max_query_len, hp.max_doc_len);
        let mut features = FeatureBuilder::new(
            feature_spec,
            embedder.as_ref(),
            &pipeline.idf,
            &query_tokens,
            &pool_tokens,
        );
        if spec.model == ModelKind::Drmm {
            features = features.cached();
        }
        let normalized = map_lists(&candidates, normalize_scores);
        let mut root = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut triple_rng = ChaCha8Rng::seed_from_u64(root.next_u64());
        let (triples, stats) = sample_triples(
            &normalized["train"],
            &split_qrels["train"],
            hp.negatives,
            &mut triple_rng,
        );
        chosen.insert("train.triples".into(), stats.triples.to_string());
        chosen.insert(
            "train.skipped_no_positive".into(),
            stats.skipped_no_positive.to_string(),
        );
        chosen.insert(
            "train.skipped_no_negative".into(),
            stats.skipped_no_negative.to_string(),
        );
        let data = TrainData {
            train_lists: &normalized["train"],
            triples: &triples,
            dev_lists: &normalized["dev"],
            dev_qrels: &split_qrels["dev"],
            features: &features,
        };
        for &seed in &cfg.seeds {
            let hp_seed = crate::neural::Hyperparams { seed, ..hp.clone() };
            let outcome = at("train", train(spec.model, &data, &hp_seed))?;
            let label = format!("{}_seed{seed}", spec.model);
            at(
                "train",
                out.csv(&format!("train/{label}.csv"), |w| {
                    outcome.write_log_csv(w, hp.stop_k)
                }),
            )?;
            let ckpt = at("train", out.path(&format!("checkpoints/{label}.ckpt")))?;
            at("train", save_checkpoint(&ckpt, &outcome.model, &hp_seed))?;
            let w = outcome.model.weights();
            chosen.insert(
                format!("{label}.best_epoch"),
                outcome.best_epoch.to_string(),
            );
            chosen.insert(format!("{label}.w_r"), format!("{:.6}", w.w_r));
            chosen.insert(format!("{label}.w_p"), format!("{:.6}", w.w_p));
            let reranked: Vec<RankedList> = normalized["test"]
                .par_iter()
                .map(|l| post(&rerank(&outcome.model, l, &features, cfg.k)))
                .collect();
            finals.push((label, reranked));
        }
        timer.record("train", t, false);
    } else if window.is_some() {
        finals.push((
            "filtered".into(),
            candidates["test"].iter().map(post).collect(),
        ));
    }

    // evaluate
    let t = Instant::now();
    for (label, lists) in &finals {
        at(
            "evaluate",
            out.run(&format!("runs/{label}_test.run"), lists),
        )?;
        for &k in &cfg.eval_k {
            let report = evaluate(lists, &split_qrels["test"], k);
            at(
                "evaluate",
                out.csv(&format!("eval/{label}_test_at{k}.csv"), |w| {
                    report.write_csv(w)
                }),
            )?;
        }
    }
    if let Some(spec) = &cfg.rerank {
        for &k in &cfg.eval_k {
            let reports: Vec<_> = finals
                .iter()
                .map(|(_, l)| evaluate(l, &split_qrels["test"], k))
                .collect();
            let summary = at("evaluate", aggregate_runs(&reports))?;
            at(
                "evaluate",
                out.csv(
                    &format!("eval/{}_summary_test_at{k}.csv", spec.model),
                    |w| summary.write_csv(w),
                ),
            )?;
        }
    }
    timer.record("evaluate", t, false);

    let mut outputs = out.files;
    outputs.sort();
    outputs.dedup();
    let manifest = RunManifest {
        version: VERSION.to_string(),
        hash,
        config: cfg.raw.clone(),
        resources,
        timings: timer.timings,
        chosen,
        outputs,
    };
    let f = at("manifest", File::create(cfg.output.join("manifest.json")))?;
    at(
        "manifest",
        serde_json::to_writer_pretty(BufWriter::new(f), &manifest),
    )?;
    Ok(manifest)
}
