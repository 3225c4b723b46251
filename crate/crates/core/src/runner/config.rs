//! Flat `key = value` experiment configuration.
//!
//! Keys carry a section prefix (`prefetch.mode = ensemble`). Relative paths
//! resolve against the config file's directory.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::corpus::CollectionTag;
use crate::fusion::default_alpha_grid;
use crate::lexical::{default_b_grid, default_k1_grid, linear_grid, Bm25Params};
use crate::neural::{Hyperparams, ModelKind};
use crate::temporal::FilterMode;

use super::RunError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Eu2Uk,
    Uk2Eu,
}

impl Task {
    pub fn query_tag(&self) -> CollectionTag {
        match self {
            Task::Eu2Uk => CollectionTag::Eu,
            Task::Uk2Eu => CollectionTag::Uk,
        }
    }

    pub fn pool_tag(&self) -> CollectionTag {
        match self {
            Task::Eu2Uk => CollectionTag::Uk,
            Task::Uk2Eu => CollectionTag::Eu,
        }
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "eu2uk" => Ok(Task::Eu2Uk),
            "uk2eu" => Ok(Task::Uk2Eu),
            other => Err(format!("unknown task `{other}` (expected eu2uk or uk2eu)")),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Eu2Uk => "eu2uk",
            Task::Uk2Eu => "uk2eu",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrefetchMode {
    Bm25,
    W2vCent,
    DocVectors,
    Ensemble,
}

impl FromStr for PrefetchMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bm25" => Ok(PrefetchMode::Bm25),
            "w2v-cent" => Ok(PrefetchMode::W2vCent),
            "doc-vectors" => Ok(PrefetchMode::DocVectors),
            "ensemble" => Ok(PrefetchMode::Ensemble),
            other => Err(format!(
                "unknown prefetch mode `{other}` (expected bm25, w2v-cent, doc-vectors or ensemble)"
            )),
        }
    }
}

impl fmt::Display for PrefetchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PrefetchMode::Bm25 => "bm25",
            PrefetchMode::W2vCent => "w2v-cent",
            PrefetchMode::DocVectors => "doc-vectors",
            PrefetchMode::Ensemble => "ensemble",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bm25Spec {
    pub params: Bm25Params,
    pub tune: bool,
    pub k1_grid: Vec<f64>,
    pub b_grid: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionSpec {
    /// Dense partner of BM25 in the ensemble.
    pub component: PrefetchMode,
    /// Fixed weight of BM25; `None` tunes it on dev.
    pub alpha: Option<f64>,
    pub grid: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RerankSpec {
    pub model: ModelKind,
    pub hyperparams: Hyperparams,
    pub hyperparams_path: Option<PathBuf>,
    pub contextual_vectors: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterSpec {
    /// Fixed window; `None` chooses one on dev from `grid`.
    pub years: Option<u32>,
    pub grid: Vec<Option<u32>>,
    pub mode: FilterMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub task: Task,
    pub queries: PathBuf,
    pub pool: PathBuf,
    pub qrels: PathBuf,
    pub splits: PathBuf,
    pub stopwords: Option<PathBuf>,
    pub idf_filter: bool,
    pub prefetch: PrefetchMode,
    pub k: usize,
    pub bm25: Bm25Spec,
    pub word_vectors: Option<PathBuf>,
    pub query_vectors: Option<PathBuf>,
    pub pool_vectors: Option<PathBuf>,
    pub fusion: FusionSpec,
    pub rerank: Option<RerankSpec>,
    pub filter: Option<FilterSpec>,
    pub eval_k: Vec<usize>,
    pub curve_k_max: usize,
    pub seed: u64,
    pub seeds: Vec<u64>,
    pub output: PathBuf,
    /// The parsed key-value pairs, as written.
    pub raw: BTreeMap<String, String>,
}

const KEYS: &[&str] = &[
    "task",
    "data.queries",
    "data.pool",
    "data.qrels",
    "data.splits",
    "text.stopwords",
    "text.idf_filter",
    "prefetch.mode",
    "prefetch.k",
    "bm25.k1",
    "bm25.b",
    "bm25.tune",
    "bm25.k1_grid",
    "bm25.b_grid",
    "dense.word_vectors",
    "dense.query_vectors",
    "dense.pool_vectors",
    "fusion.component",
    "fusion.alpha",
    "fusion.grid",
    "rerank.model",
    "rerank.hyperparams",
    "rerank.contextual_vectors",
    "filter.years",
    "filter.grid",
    "filter.mode",
    "eval.k",
    "eval.curve_k_max",
    "seed",
    "seeds",
    "output",
];

/// `start:end:step` or a comma-separated list.
pub fn parse_grid(s: &str) -> Result<Vec<f64>, String> {
    let parts: Vec<&str> = s.split(':').map(str::trim).collect();
    let num = |v: &str| {
        v.parse::<f64>()
            .map_err(|_| format!("bad number `{v}` in grid `{s}`"))
    };
    let grid = match parts.as_slice() {
        [a, b, c] => {
            let step = num(c)?;
            if step <= 0.0 {
                return Err(format!("grid step must be positive in `{s}`"));
            }
            linear_grid(num(a)?, num(b)?, step)
        }
        [_] => s
            .split(',')
            .map(|v| num(v.trim()))
            .collect::<Result<_, _>>()?,
        _ => return Err(format!("bad grid `{s}`")),
    };
    if grid.is_empty() {
        return Err(format!("empty grid `{s}`"));
    }
    Ok(grid)
}

fn parse_list<T: FromStr>(key: &str, s: &str) -> Result<Vec<T>, String> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| format!("bad value `{}` in `{key}`", v.trim()))
        })
        .collect()
}

fn parse_bool(key: &str, s: &str) -> Result<bool, String> {
    match s {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("`{key}` expects true or false, got `{s}`")),
    }
}

fn parse_window(s: &str) -> Result<Option<u32>, String> {
    match s {
        "none" | "inf" => Ok(None),
        v => v.parse().map(Some).map_err(|_| format!("bad window `{v}`")),
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, RunError> {
        let mut raw = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| RunError::Config(format!("line {}: expected key = value", i + 1)))?;
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if !KEYS.contains(&k.as_str()) {
                return Err(RunError::Config(format!(
                    "line {}: unknown key `{k}`",
                    i + 1
                )));
            }
            if raw.insert(k.clone(), v).is_some() {
                return Err(RunError::Config(format!(
                    "line {}: duplicate key `{k}`",
                    i + 1
                )));
            }
        }
        Self::from_map(raw, base_dir).map_err(RunError::Config)
    }

    fn from_map(raw: BTreeMap<String, String>, base: &Path) -> Result<Self, String> {
        let get = |k: &str| raw.get(k).map(String::as_str);
        let required = |k: &str| get(k).ok_or_else(|| format!("missing required key `{k}`"));
        let path = |k: &str| get(k).map(|p| base.join(p));
        let num = |k: &str, default: usize| -> Result<usize, String> {
            get(k).map_or(Ok(default), |v| {
                v.parse()
                    .map_err(|_| format!("`{k}` expects an integer, got `{v}`"))
            })
        };
        let float = |k: &str, default: f64| -> Result<f64, String> {
            get(k).map_or(Ok(default), |v| {
                v.parse()
                    .map_err(|_| format!("`{k}` expects a number, got `{v}`"))
            })
        };

        let task: Task = required("task")?.parse()?;
        let prefetch: PrefetchMode = get("prefetch.mode").unwrap_or("bm25").parse()?;
        let k = num("prefetch.k", 100)?;
        let bm25 = Bm25Spec {
            params: Bm25Params::new(float("bm25.k1", 1.2)?, float("bm25.b", 0.75)?)
                .map_err(|e| e.to_string())?,
            tune: get("bm25.tune").map_or(Ok(true), |v| parse_bool("bm25.tune", v))?,
            k1_grid: get("bm25.k1_grid").map_or(Ok(default_k1_grid()), parse_grid)?,
            b_grid: get("bm25.b_grid").map_or(Ok(default_b_grid()), parse_grid)?,
        };
        let fusion = FusionSpec {
            component: get("fusion.component").unwrap_or("w2v-cent").parse()?,
            alpha: match get("fusion.alpha") {
                None | Some("tune") => None,
                Some(v) => Some(v.parse().map_err(|_| format!("bad fusion.alpha `{v}`"))?),
            },
            grid: get("fusion.grid").map_or(Ok(default_alpha_grid()), parse_grid)?,
        };
        let rerank = match get("rerank.model") {
            None | Some("none") => None,
            Some(m) => {
                let hyperparams_path = path("rerank.hyperparams");
                let hyperparams = match &hyperparams_path {
                    Some(p) => Hyperparams::load(p).map_err(|e| format!("{}: {e}", p.display()))?,
                    None => Hyperparams::default(),
                };
                Some(RerankSpec {
                    model: m.parse()?,
                    hyperparams,
                    hyperparams_path,
                    contextual_vectors: path("rerank.contextual_vectors"),
                })
            }
        };
        let filter = match get("filter.years") {
            None | Some("none") => None,
            Some(y) => Some(FilterSpec {
                years: if y == "auto" {
                    None
                } else {
                    Some(y.parse().map_err(|_| format!("bad filter.years `{y}`"))?)
                },
                grid: match get("filter.grid") {
                    Some(g) => g
                        .split(',')
                        .map(|v| parse_window(v.trim()))
                        .collect::<Result<_, _>>()?,
                    None => (0..=10).map(Some).chain([None]).collect(),
                },
                mode: get("filter.mode").unwrap_or("post").parse()?,
            }),
        };
        let seed =
            get("seed").map_or(Ok(42), |v| v.parse().map_err(|_| format!("bad seed `{v}`")))?;
        let seeds = match get("seeds") {
            Some(s) => parse_list("seeds", s)?,
            None => vec![seed],
        };
        let cfg = Self {
            task,
            queries: base.join(required("data.queries")?),
            pool: base.join(required("data.pool")?),
            qrels: base.join(required("data.qrels")?),
            splits: base.join(required("data.splits")?),
            stopwords: path("text.stopwords"),
            idf_filter: get("text.idf_filter")
                .map_or(Ok(true), |v| parse_bool("text.idf_filter", v))?,
            prefetch,
            k,
            bm25,
            word_vectors: path("dense.word_vectors"),
            query_vectors: path("dense.query_vectors"),
            pool_vectors: path("dense.pool_vectors"),
            fusion,
            rerank,
            filter,
            eval_k: get("eval.k").map_or(Ok(vec![k]), |v| parse_list("eval.k", v))?,
            curve_k_max: num("eval.curve_k_max", k)?,
            seed,
            seeds,
            output: base.join(required("output")?),
            raw,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), String> {
        if self.k == 0
            || self.curve_k_max == 0
            || self.eval_k.is_empty()
            || self.eval_k.contains(&0)
        {
            return Err("k values must be at least 1".into());
        }
        if self.rerank.is_some() && self.seeds.is_empty() {
            return Err("`seeds` must be non-empty when a reranker is trained".into());
        }
        let dense = match self.prefetch {
            PrefetchMode::Ensemble => self.fusion.component,
            m => m,
        };
        if self.prefetch == PrefetchMode::Ensemble
            && !matches!(dense, PrefetchMode::W2vCent | PrefetchMode::DocVectors)
        {
            return Err("`fusion.component` must be w2v-cent or doc-vectors".into());
        }
        match dense {
            PrefetchMode::W2vCent if self.word_vectors.is_none() => {
                return Err("w2v-cent needs `dense.word_vectors`".into())
            }
            PrefetchMode::DocVectors
                if self.query_vectors.is_none() || self.pool_vectors.is_none() =>
            {
                return Err(
                    "doc-vectors needs `dense.query_vectors` and `dense.pool_vectors`".into(),
                )
            }
            _ => {}
        }
        if let Some(r) = &self.rerank {
            if r.contextual_vectors.is_none() && self.word_vectors.is_none() {
                return Err(
                    "reranking needs `dense.word_vectors` or `rerank.contextual_vectors`".into(),
                );
            }
        }
        if let Some(a) = self.fusion.alpha {
            if !(0.0..=1.0).contains(&a) {
                return Err(format!("fusion.alpha {a} outside [0, 1]"));
            }
        }
        for p in self.resources().values() {
            if !p.exists() {
                return Err(format!("resource {} does not exist", p.display()));
            }
        }
        Ok(())
    }

    /// Every input file the run reads, by role.
    pub fn resources(&self) -> BTreeMap<&'static str, &Path> {
        let mut r: BTreeMap<&'static str, &Path> = BTreeMap::from([
            ("queries", self.queries.as_path()),
            ("pool", self.pool.as_path()),
            ("qrels", self.qrels.as_path()),
            ("splits", self.splits.as_path()),
        ]);
        let optional = [
            ("stopwords", &self.stopwords),
            ("word_vectors", &self.word_vectors),
            ("query_vectors", &self.query_vectors),
            ("pool_vectors", &self.pool_vectors),
        ];
        for (name, p) in optional {
            if let Some(p) = p {
                r.insert(name, p);
            }
        }
        if let Some(rr) = &self.rerank {
            if let Some(p) = &rr.hyperparams_path {
                r.insert("hyperparams", p);
            }
            if let Some(p) = &rr.contextual_vectors {
                r.insert("contextual_vectors", p);
            }
        }
        r
    }

    /// Total pre-fetch depth: twice the cutoff (for fusion and date-filter
    /// refill) and at least the recall-curve horizon.
    pub fn fetch_depth(&self) -> usize {
        (2 * self.k).max(self.curve_k_max)
    }
}
