//! `regir` command-line front end.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use rayon::prelude::*;

use regir::corpus::{
    convert_archive, corpus_stats, ingest_collection, read_qrels, save_collection, Collection,
    CollectionTag, Qrels, Split, SplitManifest,
};
use regir::dense::{
    CentroidRetriever, DocVectorRetriever, DocVectorStore, WordVectors, ZeroVectorPolicy,
};
use regir::eval::{evaluate, format_mean_sd, mean_sd, EvalReport};
use regir::fusion::{fuse_raw, normalize_scores, tune_alpha};
use regir::lexical::{default_b_grid, default_k1_grid, tune_bm25, Bm25Params, PostingsIndex};
use regir::neural::checkpoint::{load_checkpoint, save_checkpoint};
use regir::neural::features::FeatureSpec;
use regir::neural::{
    rerank, sample_triples_seeded, train, ContextualEmbedder, FeatureBuilder, Hyperparams,
    ModelKind, TokenEmbedder, TrainData, WordEmbedder,
};
use regir::ranking::{read_run, write_run, RankedList};
use regir::runner::{parse_grid, run_experiment, ExperimentConfig, Task};
use regir::temporal::{apply_filter, prefilter, DateWindow, FilterMode};
use regir::text::{StopWords, TextPipeline};

#[derive(Parser)]
#[command(
    name = "regir",
    version,
    about = "Document-to-document retrieval for regulatory texts"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a collection (or convert an archive dump) and write canonical JSONL.
    Ingest(IngestArgs),
    /// Build a BM25 index over a pool collection.
    Index(IndexArgs),
    /// Grid-search BM25 (k1, b) for recall at k.
    TuneBm25(TuneArgs),
    /// Compute tf-idf weighted centroid vectors for a collection.
    Vectors(VectorsArgs),
    /// Retrieve candidate lists.
    Prefetch(PrefetchArgs),
    /// Fuse two runs by min-max normalization and a convex combination.
    Fuse(FuseArgs),
    /// Train a neural re-ranker.
    Train(TrainArgs),
    /// Re-rank a run with a trained checkpoint.
    Rerank(RerankArgs),
    /// Drop candidates whose year is too far from the query's.
    DateFilter(DateFilterArgs),
    /// Score a run against relevance judgments.
    Evaluate(EvaluateArgs),
    /// Aggregate evaluation CSVs from repeated runs into mean (± sd).
    Report(ReportArgs),
    /// Run a full experiment from a config file.
    Run(RunArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Eu2uk,
    Uk2eu,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Eu2uk => Task::Eu2Uk,
            TaskArg::Uk2eu => Task::Uk2Eu,
        }
    }
}

#[derive(Args)]
struct TaskOpt {
    /// Which collection plays the query side.
    #[arg(long, value_enum, default_value = "eu2uk")]
    task: TaskArg,
}

impl TaskOpt {
    fn queries(&self, path: &Path) -> Result<Collection> {
        load(path, Task::from(self.task).query_tag())
    }

    fn pool(&self, path: &Path) -> Result<Collection> {
        load(path, Task::from(self.task).pool_tag())
    }
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_parser = parse_tag, default_value = "eu")]
    tag: CollectionTag,
    /// Treat the input as an archive dump with loosely named fields.
    #[arg(long)]
    archive: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct IndexArgs {
    #[arg(long)]
    collection: PathBuf,
    #[arg(long, value_parser = parse_tag, default_value = "uk")]
    tag: CollectionTag,
    /// Stop-word list replacing the built-in one.
    #[arg(long)]
    stopwords: Option<PathBuf>,
    /// Keep tokens below the stop-word idf threshold.
    #[arg(long)]
    no_idf_filter: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct QuerySelect {
    #[arg(long)]
    queries: PathBuf,
    /// Split manifest; with `--split`, restricts the queries used.
    #[arg(long)]
    splits: Option<PathBuf>,
    #[arg(long, value_parser = parse_split)]
    split: Option<Split>,
}

#[derive(Args)]
struct TuneArgs {
    #[command(flatten)]
    task: TaskOpt,
    #[arg(long)]
    index: PathBuf,
    #[command(flatten)]
    select: QuerySelect,
    #[arg(long)]
    qrels: PathBuf,
    #[arg(long, default_value_t = 100)]
    k: usize,
    /// `start:end:step` or comma-separated values.
    #[arg(long)]
    k1_grid: Option<String>,
    #[arg(long)]
    b_grid: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct VectorsArgs {
    #[command(flatten)]
    task: TaskOpt,
    #[arg(long)]
    collection: PathBuf,
    /// Whether the collection is the query side.
    #[arg(long)]
    is_queries: bool,
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    word_vectors: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Bm25,
    W2vCent,
    DocVectors,
    Ensemble,
}

#[derive(Args)]
struct PrefetchArgs {
    #[command(flatten)]
    task: TaskOpt,
    #[arg(long, value_enum, default_value = "bm25")]
    mode: ModeArg,
    #[arg(long, default_value_t = 100)]
    k: usize,
    #[arg(long)]
    index: PathBuf,
    #[command(flatten)]
    select: QuerySelect,
    /// Pool collection; needed for w2v-cent.
    #[arg(long)]
    pool: Option<PathBuf>,
    #[arg(long, default_value_t = 1.2)]
    k1: f64,
    #[arg(long, default_value_t = 0.75)]
    b: f64,
    #[arg(long)]
    word_vectors: Option<PathBuf>,
    #[arg(long)]
    query_vectors: Option<PathBuf>,
    #[arg(long)]
    pool_vectors: Option<PathBuf>,
    /// Weight of BM25 in the ensemble.
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FuseArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long, conflicts_with = "tune_alpha")]
    alpha: Option<f64>,
    #[arg(long, requires = "qrels")]
    tune_alpha: bool,
    #[arg(long)]
    qrels: Option<PathBuf>,
    #[arg(long, default_value = "0:1:0.05")]
    grid: String,
    #[arg(long, default_value_t = 100)]
    k: usize,
    /// Where to write the alpha grid when tuning.
    #[arg(long)]
    grid_out: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ModelInputs {
    #[command(flatten)]
    task: TaskOpt,
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    pool: PathBuf,
    #[arg(long)]
    word_vectors: Option<PathBuf>,
    /// Per-token vectors keyed by document id and token position.
    #[arg(long, conflicts_with = "word_vectors")]
    contextual_vectors: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Drmm,
    Pacrr,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_enum)]
    model: ModelArg,
    #[command(flatten)]
    inputs: ModelInputs,
    #[arg(long)]
    train_run: PathBuf,
    #[arg(long)]
    dev_run: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
    #[arg(long)]
    hyperparams: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Re-ranking depth; pre-fetched lists are cut to it.
    #[arg(long, default_value_t = 100)]
    k: usize,
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RerankArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    inputs: ModelInputs,
    #[arg(long)]
    run: PathBuf,
    #[arg(long, default_value_t = 100)]
    k: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum FilterModeArg {
    Pre,
    Post,
}

#[derive(Args)]
struct DateFilterArgs {
    #[command(flatten)]
    task: TaskOpt,
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    pool: PathBuf,
    /// Maximum year distance.
    #[arg(long = "date-filter")]
    years: u32,
    #[arg(long, value_enum, default_value = "post")]
    filter_mode: FilterModeArg,
    /// Survivors kept per query in pre mode.
    #[arg(long, default_value_t = 100)]
    k: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "100")]
    k: Vec<usize>,
    /// Directory for per-query CSVs, one per cutoff.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Evaluation CSVs written by `evaluate`, one per run.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
}

fn parse_tag(s: &str) -> Result<CollectionTag, String> {
    s.parse()
}

fn parse_split(s: &str) -> Result<Split, String> {
    match s {
        "train" => Ok(Split::Train),
        "dev" => Ok(Split::Dev),
        "test" => Ok(Split::Test),
        other => Err(format!("unknown split `{other}`")),
    }
}

fn load(path: &Path, tag: CollectionTag) -> Result<Collection> {
    let (c, summary) =
        ingest_collection(path, tag).with_context(|| format!("reading {}", path.display()))?;
    info!("{}: {} documents", path.display(), summary.documents);
    Ok(c)
}

fn load_index(path: &Path) -> Result<PostingsIndex> {
    PostingsIndex::load(path).with_context(|| format!("loading index {}", path.display()))
}

fn pipeline_of(index: &PostingsIndex) -> Result<&TextPipeline> {
    index
        .pipeline()
        .context("index was built without a text pipeline")
}

fn load_run(path: &Path) -> Result<Vec<RankedList>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_run(BufReader::new(f)).with_context(|| format!("reading run {}", path.display()))
}

fn save_run(path: &Path, lists: &[RankedList]) -> Result<()> {
    let mut w =
        BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    write_run(&mut w, lists)?;
    w.flush()?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn tokens_of(collection: &Collection, pipeline: &TextPipeline) -> HashMap<String, Vec<String>> {
    let docs: Vec<_> = collection.iter().collect();
    docs.par_iter()
        .map(|d| (d.doc_id.clone(), pipeline.process(&d.full_text()).tokens))
        .collect()
}

/// `(query_id, denoised tokens)` for the selected queries, in a stable order.
fn select_queries(
    sel: &QuerySelect,
    task: &TaskOpt,
    pipeline: &TextPipeline,
) -> Result<Vec<(String, Vec<String>)>> {
    let queries = task.queries(&sel.queries)?;
    let ids: Vec<String> = match (&sel.splits, sel.split) {
        (Some(p), Some(s)) => SplitManifest::load(p)?.ids(s).to_vec(),
        (None, None) => {
            let mut ids: Vec<String> = queries.iter().map(|d| d.doc_id.clone()).collect();
            ids.sort();
            ids
        }
        _ => bail!("--splits and --split go together"),
    };
    ids.into_par_iter()
        .map(|id| {
            let d = queries
                .get(&id)
                .with_context(|| format!("query {id} not in the collection"))?;
            Ok((id, pipeline.process(&d.full_text()).tokens))
        })
        .collect()
}

fn cmd_ingest(a: IngestArgs) -> Result<()> {
    let input = if a.archive {
        let raw = fs::read_to_string(&a.input)
            .with_context(|| format!("reading {}", a.input.display()))?;
        let mut buf = Vec::new();
        let n = convert_archive(&raw, &mut buf).map_err(anyhow::Error::msg)?;
        info!("converted {n} archive records");
        let tmp = a.out.with_extension("converted.jsonl");
        fs::write(&tmp, buf)?;
        tmp
    } else {
        a.input.clone()
    };
    let (collection, summary) = ingest_collection(&input, a.tag)?;
    save_collection(&a.out, &collection)?;
    if input != a.input {
        fs::remove_file(&input)?;
    }
    let stats = corpus_stats(&collection);
    println!(
        "{} documents ({} empty bodies, {} unknown years, {} years from titles)",
        summary.documents, summary.empty_bodies, summary.unknown_years, summary.years_from_title
    );
    println!(
        "tokens per document: mean {:.1}, median {:.1}",
        stats.mean_tokens, stats.median_tokens
    );
    Ok(())
}

fn cmd_index(a: IndexArgs) -> Result<()> {
    let pool = load(&a.collection, a.tag)?;
    let stopwords = match &a.stopwords {
        Some(p) => StopWords::load(p)?,
        None => StopWords::default(),
    };
    let texts: Vec<String> = pool.iter().map(|d| d.full_text()).collect();
    let pipeline = TextPipeline::fit(
        texts.par_iter().map(String::as_str),
        stopwords,
        !a.no_idf_filter,
    )?;
    let index = PostingsIndex::build_from_collection(&pool, pipeline)?;
    index.save(&a.out)?;
    println!(
        "indexed {} documents, {} terms, mean length {:.1}",
        index.doc_count(),
        index.vocabulary_size(),
        index.avg_len()
    );
    Ok(())
}

fn cmd_tune(a: TuneArgs) -> Result<()> {
    let index = load_index(&a.index)?;
    let queries = select_queries(&a.select, &a.task, pipeline_of(&index)?)?;
    let qrels = read_qrels(&a.qrels)?;
    let k1 = a
        .k1_grid
        .as_deref()
        .map_or(Ok(default_k1_grid()), parse_grid)
        .map_err(anyhow::Error::msg)?;
    let b = a
        .b_grid
        .as_deref()
        .map_or(Ok(default_b_grid()), parse_grid)
        .map_err(anyhow::Error::msg)?;
    let tuning = tune_bm25(&index, &queries, &qrels, &k1, &b, a.k);
    let mut w = create(&a.out)?;
    tuning.write_csv(&mut w)?;
    w.flush()?;
    println!(
        "best k1 = {}, b = {}: R@{} = {:.4}",
        tuning.best.k1, tuning.best.b, a.k, tuning.best_recall
    );
    Ok(())
}

fn cmd_vectors(a: VectorsArgs) -> Result<()> {
    let index = load_index(&a.index)?;
    let pipeline = pipeline_of(&index)?;
    let collection = if a.is_queries {
        a.task.queries(&a.collection)?
    } else {
        a.task.pool(&a.collection)?
    };
    let tokens = tokens_of(&collection, pipeline);
    let wv = WordVectors::load(&a.word_vectors)?;
    let retriever = CentroidRetriever::build(
        collection
            .iter()
            .map(|d| (d.doc_id.as_str(), tokens[&d.doc_id].as_slice())),
        wv,
        pipeline.idf.clone(),
        ZeroVectorPolicy::SkipDocument,
    )?;
    let mut w = create(&a.out)?;
    retriever.pool().write(&mut w)?;
    w.flush()?;
    println!(
        "wrote {} vectors ({} documents skipped)",
        retriever.pool().len(),
        retriever.skipped.len()
    );
    Ok(())
}

fn cmd_prefetch(a: PrefetchArgs) -> Result<()> {
    let index = load_index(&a.index)?;
    let pipeline = pipeline_of(&index)?;
    let queries = select_queries(&a.select, &a.task, pipeline)?;
    let params = Bm25Params::new(a.k1, a.b)?;
    let depth = if a.mode == ModeArg::Ensemble {
        2 * a.k
    } else {
        a.k
    };
    let bm25 = || -> Vec<RankedList> {
        queries
            .par_iter()
            .map(|(q, t)| index.bm25_search(q, t, params, depth))
            .collect()
    };
    let dense = |mode: ModeArg| -> Result<Vec<RankedList>> {
        if mode == ModeArg::DocVectors || a.word_vectors.is_none() {
            let (Some(qv), Some(pv)) = (&a.query_vectors, &a.pool_vectors) else {
                bail!("dense retrieval needs --word-vectors or --query-vectors and --pool-vectors");
            };
            let retriever = DocVectorRetriever {
                queries: DocVectorStore::load(qv)?,
                pool: DocVectorStore::load(pv)?,
            };
            return queries
                .par_iter()
                .map(|(q, _)| retriever.search(q, depth).map_err(Into::into))
                .collect();
        }
        let pool_path = a.pool.as_ref().context("w2v-cent needs --pool")?;
        let pool = a.task.pool(pool_path)?;
        let tokens = tokens_of(&pool, pipeline);
        let retriever = CentroidRetriever::build(
            pool.iter()
                .map(|d| (d.doc_id.as_str(), tokens[&d.doc_id].as_slice())),
            WordVectors::load(a.word_vectors.as_deref().expect("checked"))?,
            pipeline.idf.clone(),
            ZeroVectorPolicy::SkipDocument,
        )?;
        queries
            .par_iter()
            .map(|(q, t)| match retriever.search(q, t, depth) {
                Err(regir::dense::DenseError::EmptyCentroid) => Ok(RankedList::new(q.as_str())),
                r => r.map_err(Into::into),
            })
            .collect()
    };
    let lists = match a.mode {
        ModeArg::Bm25 => bm25(),
        ModeArg::W2vCent | ModeArg::DocVectors => dense(a.mode)?,
        ModeArg::Ensemble => {
            let b = dense(if a.word_vectors.is_some() {
                ModeArg::W2vCent
            } else {
                ModeArg::DocVectors
            })?;
            bm25()
                .iter()
                .zip(&b)
                .map(|(x, y)| fuse_raw(x, y, a.alpha, a.k))
                .collect::<Result<_, _>>()?
        }
    };
    save_run(&a.out, &lists)?;
    println!("wrote {} lists to {}", lists.len(), a.out.display());
    Ok(())
}

fn cmd_fuse(a: FuseArgs) -> Result<()> {
    let la = load_run(&a.a)?;
    let lb: HashMap<String, RankedList> = load_run(&a.b)?
        .into_iter()
        .map(|l| (l.query_id.clone(), l))
        .collect();
    let pairs: Vec<(RankedList, RankedList)> = la
        .into_iter()
        .map(|l| {
            let other = lb
                .get(&l.query_id)
                .cloned()
                .unwrap_or_else(|| RankedList::new(l.query_id.as_str()));
            (l, other)
        })
        .collect();
    let alpha = if a.tune_alpha {
        let qrels = read_qrels(a.qrels.as_deref().expect("required by clap"))?;
        let grid = parse_grid(&a.grid).map_err(anyhow::Error::msg)?;
        let t = tune_alpha(&pairs, &qrels, &grid, a.k)?;
        if let Some(p) = &a.grid_out {
            let mut w = create(p)?;
            t.write_csv(&mut w)?;
            w.flush()?;
        }
        println!("best alpha = {}: R@{} = {:.4}", t.alpha, a.k, t.recall);
        t.alpha
    } else {
        a.alpha.context("give --alpha or --tune-alpha")?
    };
    let fused = pairs
        .iter()
        .map(|(x, y)| fuse_raw(x, y, alpha, a.k))
        .collect::<Result<Vec<_>, _>>()?;
    save_run(&a.out, &fused)
}

struct ModelContext {
    index: PostingsIndex,
    query_tokens: HashMap<String, Vec<String>>,
    pool_tokens: HashMap<String, Vec<String>>,
    embedder: Box<dyn TokenEmbedder>,
}

impl ModelContext {
    fn load(i: &ModelInputs) -> Result<Self> {
        let index = load_index(&i.index)?;
        let pipeline = pipeline_of(&index)?;
        let query_tokens = tokens_of(&i.task.queries(&i.queries)?, pipeline);
        let pool_tokens = tokens_of(&i.task.pool(&i.pool)?, pipeline);
        let embedder: Box<dyn TokenEmbedder> = match (&i.contextual_vectors, &i.word_vectors) {
            (Some(p), _) => Box::new(ContextualEmbedder::read(BufReader::new(File::open(p)?))?),
            (None, Some(p)) => Box::new(WordEmbedder::new(&WordVectors::load(p)?)),
            (None, None) => bail!("give --word-vectors or --contextual-vectors"),
        };
        Ok(Self {
            index,
            query_tokens,
            pool_tokens,
            embedder,
        })
    }

    fn features(&self, hp: &Hyperparams, kind: ModelKind) -> Result<FeatureBuilder<'_>> {
        let spec = FeatureSpec::for_arch(&hp.architecture(kind), hp.max_query_len, hp.max_doc_len);
        let b = FeatureBuilder::new(
            spec,
            self.embedder.as_ref(),
            &pipeline_of(&self.index)?.idf,
            &self.query_tokens,
            &self.pool_tokens,
        );
        Ok(if kind == ModelKind::Drmm {
            b.cached()
        } else {
            b
        })
    }
}

fn cut_and_normalize(lists: Vec<RankedList>, k: usize) -> Vec<RankedList> {
    lists
        .into_iter()
        .map(|l| normalize_scores(&l.truncated(k)))
        .collect()
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let kind = match a.model {
        ModelArg::Drmm => ModelKind::Drmm,
        ModelArg::Pacrr => ModelKind::Pacrr,
    };
    let mut hp = match &a.hyperparams {
        Some(p) => Hyperparams::load(p)?,
        None => Hyperparams::default(),
    };
    if let Some(s) = a.seed {
        hp.seed = s;
    }
    let ctx = ModelContext::load(&a.inputs)?;
    let features = ctx.features(&hp, kind)?;
    let qrels = read_qrels(&a.qrels)?;
    let train_lists = cut_and_normalize(load_run(&a.train_run)?, a.k);
    let dev_lists = cut_and_normalize(load_run(&a.dev_run)?, a.k);
    let (triples, stats) = sample_triples_seeded(&train_lists, &qrels, hp.negatives, hp.seed);
    println!(
        "{} triples from {} queries ({} without positives, {} without negatives)",
        stats.triples, stats.queries, stats.skipped_no_positive, stats.skipped_no_negative
    );
    let data = TrainData {
        train_lists: &train_lists,
        triples: &triples,
        dev_lists: &dev_lists,
        dev_qrels: &qrels,
        features: &features,
    };
    let outcome = train(kind, &data, &hp)?;
    save_checkpoint(&a.out, &outcome.model, &hp)?;
    if let Some(p) = &a.log {
        let mut w = create(p)?;
        outcome.write_log_csv(&mut w, hp.stop_k)?;
        w.flush()?;
    }
    let w = outcome.model.weights();
    println!(
        "best epoch {}: dev R@{} = {:.4}, w_r = {:.4}, w_p = {:.4}",
        outcome.best_epoch, hp.stop_k, outcome.best_dev_recall, w.w_r, w.w_p
    );
    Ok(())
}

fn cmd_rerank(a: RerankArgs) -> Result<()> {
    let (model, hp) = load_checkpoint(&a.checkpoint)?;
    let ctx = ModelContext::load(&a.inputs)?;
    let features = ctx.features(&hp, model.kind())?;
    let lists = cut_and_normalize(load_run(&a.run)?, a.k);
    let out: Vec<RankedList> = lists
        .par_iter()
        .map(|l| rerank(&model, l, &features, a.k))
        .collect();
    save_run(&a.out, &out)
}

fn cmd_date_filter(a: DateFilterArgs) -> Result<()> {
    let queries = a.task.queries(&a.queries)?;
    let pool = a.task.pool(&a.pool)?;
    let mode = match a.filter_mode {
        FilterModeArg::Pre => FilterMode::Pre,
        FilterModeArg::Post => FilterMode::Post,
    };
    let window = DateWindow::new(a.years, mode);
    let doc_year = |d: &str| pool.year_of(d).unwrap_or(0);
    let out: Vec<RankedList> = load_run(&a.run)?
        .iter()
        .map(|l| {
            let qy = queries.year_of(&l.query_id).unwrap_or(0);
            match mode {
                FilterMode::Pre => prefilter(qy, l, doc_year, &window, a.k),
                FilterMode::Post => apply_filter(qy, l, doc_year, &window),
            }
        })
        .collect();
    save_run(&a.out, &out)
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let lists = load_run(&a.run)?;
    let qrels: Qrels = read_qrels(&a.qrels)?;
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir)?;
    }
    for &k in &a.k {
        let report = evaluate(&lists, &qrels, k);
        println!(
            "R@{k} {:.4}  nDCG@{k} {:.4}  R-Prec {:.4}  ({} queries)",
            report.mean_recall,
            report.mean_ndcg,
            report.mean_r_precision,
            report.per_query.len()
        );
        if let Some(dir) = &a.out {
            let mut w = create(&dir.join(format!("eval_at{k}.csv")))?;
            report.write_csv(&mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}

fn cmd_report(a: ReportArgs) -> Result<()> {
    let reports = a
        .inputs
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            EvalReport::read_csv(&text).map_err(|e| anyhow::anyhow!("{}: {e}", p.display()))
        })
        .collect::<Result<Vec<_>>>()?;
    let k = reports[0].k;
    if reports.iter().any(|r| r.k != k) {
        bail!("reports use different cutoffs");
    }
    let column = |f: fn(&EvalReport) -> f64| mean_sd(&reports.iter().map(f).collect::<Vec<_>>());
    println!("runs: {}", reports.len());
    for (name, (m, sd)) in [
        (format!("R@{k}"), column(|r| r.mean_recall)),
        (format!("nDCG@{k}"), column(|r| r.mean_ndcg)),
        ("R-Precision".to_string(), column(|r| r.mean_r_precision)),
    ] {
        println!("{name:<12} {}", format_mean_sd(m, sd));
    }
    Ok(())
}

fn cmd_run(a: RunArgs) -> Result<()> {
    let cfg = ExperimentConfig::load(&a.config)?;
    let manifest = run_experiment(&cfg)?;
    println!(
        "wrote {} outputs to {}",
        manifest.outputs.len(),
        cfg.output.display()
    );
    for (k, v) in &manifest.chosen {
        println!("  {k} = {v}");
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Ok(n) = std::env::var("REGIR_THREADS") {
        let n: usize = n
            .parse()
            .context("REGIR_THREADS must be a positive integer")?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    match Cli::parse().command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Index(a) => cmd_index(a),
        Command::TuneBm25(a) => cmd_tune(a),
        Command::Vectors(a) => cmd_vectors(a),
        Command::Prefetch(a) => cmd_prefetch(a),
        Command::Fuse(a) => cmd_fuse(a),
        Command::Train(a) => cmd_train(a),
        Command::Rerank(a) => cmd_rerank(a),
        Command::DateFilter(a) => cmd_date_filter(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Report(a) => cmd_report(a),
        Command::Run(a) => cmd_run(a),
    }
}
