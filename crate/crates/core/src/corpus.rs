//! Document collections, relevance judgments and query splits.
//!
//! Collections are stored as JSON lines with the keys `doc_id`, `title`,
//! `body` and an optional integer `year`. Qrels are two-column TSV files
//! (`query_id<TAB>relevant_doc_id`) and split manifests are JSON objects with
//! `train`, `dev`, `test` and `pool` id lists.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::Datelike;
use log::warn;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("line {line}: missing required field `{field}`")]
    MissingField { line: usize, field: &'static str },
    #[error("line {line}: duplicate doc_id `{doc_id}`")]
    DuplicateId { line: usize, doc_id: String },
    #[error("line {line}: year {year} outside (1800, {max}]")]
    InvalidYear { line: usize, year: i64, max: i32 },
    #[error("empty file {0}")]
    Empty(String),
    #[error("{} unknown doc id(s) in qrels: {}", .0.len(), .0.join(", "))]
    UnknownIds(Vec<String>),
    #[error("queries without relevant documents: {}", .0.join(", "))]
    EmptyRelevantSet(Vec<String>),
    #[error("invalid split manifest: {0}")]
    InvalidSplits(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CollectionTag {
    Eu,
    Uk,
}

impl fmt::Display for CollectionTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CollectionTag::Eu => "EU",
            CollectionTag::Uk => "UK",
        })
    }
}

impl FromStr for CollectionTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "eu" => Ok(CollectionTag::Eu),
            "uk" => Ok(CollectionTag::Uk),
            other => Err(format!(
                "unknown collection tag `{other}` (expected EU or UK)"
            )),
        }
    }
}

/// One legal act. `year == 0` means the publication year is unknown.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub doc_id: String,
    pub title: String,
    pub body: String,
    pub year: u32,
    pub tag: CollectionTag,
}

impl Document {
    /// Title and body joined, which is what every text model consumes.
    pub fn full_text(&self) -> String {
        let mut s = String::with_capacity(self.title.len() + self.body.len() + 1);
        s.push_str(&self.title);
        s.push('\n');
        s.push_str(&self.body);
        s
    }
}

/// An immutable, id-indexed set of documents.
#[derive(Debug, Clone)]
pub struct Collection {
    tag: CollectionTag,
    docs: Vec<Document>,
    by_id: HashMap<String, usize>,
}

impl Collection {
    /// Builds a collection, rejecting duplicate ids.
    pub fn from_documents(tag: CollectionTag, docs: Vec<Document>) -> Result<Self, CorpusError> {
        let mut by_id = HashMap::with_capacity(docs.len());
        for (i, d) in docs.iter().enumerate() {
            if by_id.insert(d.doc_id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateId {
                    line: i + 1,
                    doc_id: d.doc_id.clone(),
                });
            }
        }
        Ok(Self { tag, docs, by_id })
    }

    pub fn tag(&self) -> CollectionTag {
        self.tag
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn get(&self, doc_id: &str) -> Option<&Document> {
        self.by_id.get(doc_id).map(|&i| &self.docs[i])
    }

    pub fn contains(&self, doc_id: &str) -> bool {
        self.by_id.contains_key(doc_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Document> {
        self.docs.iter()
    }

    pub fn year_of(&self, doc_id: &str) -> Option<u32> {
        self.get(doc_id).map(|d| d.year)
    }

    /// Restricts the collection to the given ids, keeping file order.
    pub fn subset(&self, ids: &[String]) -> Result<Self, CorpusError> {
        let keep: HashSet<&str> = ids.iter().map(String::as_str).collect();
        let missing: Vec<String> = keep
            .iter()
            .filter(|id| !self.contains(id))
            .map(|s| s.to_string())
            .collect();
        if !missing.is_empty() {
            let mut missing = missing;
            missing.sort();
            return Err(CorpusError::UnknownIds(missing));
        }
        let docs = self
            .docs
            .iter()
            .filter(|d| keep.contains(d.doc_id.as_str()))
            .cloned()
            .collect();
        Self::from_documents(self.tag, docs)
    }
}

/// Counts reported after ingestion.
#[derive(Debug, Clone, PartialEq)]
pub struct IngestSummary {
    pub documents: usize,
    pub empty_bodies: usize,
    pub unknown_years: usize,
    pub years_from_title: usize,
}

#[derive(Deserialize)]
struct RawRecord {
    doc_id: Option<Value>,
    title: Option<Value>,
    body: Option<Value>,
    year: Option<Value>,
}

fn current_year() -> i32 {
    chrono::Utc::now().year()
}

/// First 4-digit token of the form 19xx or 20xx, if any.
pub fn year_from_title(title: &str) -> Option<u32> {
    title
        .split(|c: char| !c.is_ascii_digit())
        .filter(|tok| tok.len() == 4)
        .find(|tok| tok.starts_with("19") || tok.starts_with("20"))
        .and_then(|tok| tok.parse().ok())
}

fn string_field(v: Option<Value>, line: usize, field: &'static str) -> Result<String, CorpusError> {
    match v {
        None | Some(Value::Null) => Err(CorpusError::MissingField { line, field }),
        Some(Value::String(s)) => Ok(s),
        Some(other) => Err(CorpusError::Malformed {
            line,
            msg: format!("`{field}` must be a string, found {other}"),
        }),
    }
}

/// Parses one canonical JSONL record.
fn parse_record(
    text: &str,
    line: usize,
    tag: CollectionTag,
    summary: &mut IngestSummary,
) -> Result<Document, CorpusError> {
    let raw: RawRecord = serde_json::from_str(text).map_err(|e| CorpusError::Malformed {
        line,
        msg: e.to_string(),
    })?;
    let doc_id = string_field(raw.doc_id, line, "doc_id")?;
    let title = string_field(raw.title, line, "title")?;
    let body = string_field(raw.body, line, "body")?;
    if doc_id.is_empty() {
        return Err(CorpusError::MissingField {
            line,
            field: "doc_id",
        });
    }
    if title.trim().is_empty() {
        return Err(CorpusError::MissingField {
            line,
            field: "title",
        });
    }
    let max = current_year();
    let year = match raw.year {
        None | Some(Value::Null) => match year_from_title(&title) {
            Some(y) if (y as i32) <= max => {
                summary.years_from_title += 1;
                y
            }
            _ => {
                summary.unknown_years += 1;
                0
            }
        },
        Some(Value::Number(n)) => {
            let y = n.as_i64().ok_or_else(|| CorpusError::Malformed {
                line,
                msg: format!("`year` must be an integer, found {n}"),
            })?;
            if y <= 1800 || y > max as i64 {
                return Err(CorpusError::InvalidYear { line, year: y, max });
            }
            y as u32
        }
        Some(other) => {
            return Err(CorpusError::Malformed {
                line,
                msg: format!("`year` must be an integer, found {other}"),
            })
        }
    };
    if body.trim().is_empty() {
        summary.empty_bodies += 1;
        warn!("document {doc_id} has an empty body");
    }
    Ok(Document {
        doc_id,
        title,
        body,
        year,
        tag,
    })
}

/// Reads a canonical collection from any buffered reader.
pub fn read_collection<R: BufRead>(
    input: R,
    tag: CollectionTag,
    name: &str,
) -> Result<(Collection, IngestSummary), CorpusError> {
    let mut summary = IngestSummary {
        documents: 0,
        empty_bodies: 0,
        unknown_years: 0,
        years_from_title: 0,
    };
    let mut docs = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for (idx, line) in input.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: name.to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let doc = parse_record(&line, lineno, tag, &mut summary)?;
        if !seen.insert(doc.doc_id.clone()) {
            return Err(CorpusError::DuplicateId {
                line: lineno,
                doc_id: doc.doc_id,
            });
        }
        docs.push(doc);
    }
    if docs.is_empty() {
        return Err(CorpusError::Empty(name.to_string()));
    }
    summary.documents = docs.len();
    Ok((Collection::from_documents(tag, docs)?, summary))
}

/// Ingests a canonical JSONL collection file.
pub fn ingest_collection(
    path: &Path,
    tag: CollectionTag,
) -> Result<(Collection, IngestSummary), CorpusError> {
    let file = File::open(path).map_err(io_err(path))?;
    read_collection(BufReader::new(file), tag, &path.display().to_string())
}

#[derive(Serialize)]
struct CanonicalRecord<'a> {
    doc_id: &'a str,
    title: &'a str,
    body: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    year: Option<u32>,
}

/// Serializes documents as canonical JSON lines. Unknown years are omitted.
pub fn write_collection<'a, W, I>(mut out: W, docs: I) -> std::io::Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a Document>,
{
    for d in docs {
        let rec = CanonicalRecord {
            doc_id: &d.doc_id,
            title: &d.title,
            body: &d.body,
            year: (d.year > 0).then_some(d.year),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_collection(path: &Path, collection: &Collection) -> Result<(), CorpusError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    write_collection(&mut w, collection.iter()).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

const ID_KEYS: &[&str] = &["doc_id", "celex_id", "celex", "uk_id", "id", "document_id"];
const TITLE_KEYS: &[&str] = &["title", "header", "name"];
const BODY_KEYS: &[&str] = &["body", "main_body", "text", "content"];
const RECITAL_KEYS: &[&str] = &["recitals", "preamble"];
const YEAR_KEYS: &[&str] = &[
    "year",
    "publication_year",
    "date",
    "publication_date",
    "enacted",
];

fn first_key<'a>(obj: &'a serde_json::Map<String, Value>, keys: &[&str]) -> Option<&'a Value> {
    keys.iter()
        .find_map(|k| obj.get(*k).filter(|v| !v.is_null()))
}

fn flatten_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Array(items) => items
            .iter()
            .map(flatten_text)
            .filter(|s| !s.is_empty())
            .collect::<Vec<_>>()
            .join("\n"),
        Value::Null => String::new(),
        other => other.to_string(),
    }
}

/// Maps one archive record with loosely named fields onto the canonical
/// schema. Recitals are prepended to the main body; list-valued fields are
/// joined by newlines; a year may come from an integer or the leading digits
/// of a date string.
pub fn convert_archive_record(rec: &Value) -> Result<Value, String> {
    let obj = rec.as_object().ok_or("record is not a JSON object")?;
    let id = match first_key(obj, ID_KEYS) {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Number(n)) => n.to_string(),
        _ => return Err("no id field".into()),
    };
    let title = first_key(obj, TITLE_KEYS)
        .map(flatten_text)
        .ok_or_else(|| format!("record {id}: no title field"))?;
    let recitals = first_key(obj, RECITAL_KEYS)
        .map(flatten_text)
        .unwrap_or_default();
    let main = first_key(obj, BODY_KEYS)
        .map(flatten_text)
        .unwrap_or_default();
    let body = match (recitals.is_empty(), main.is_empty()) {
        (true, _) => main,
        (false, true) => recitals,
        (false, false) => format!("{recitals}\n{main}"),
    };
    let year = first_key(obj, YEAR_KEYS).and_then(|v| match v {
        Value::Number(n) => n.as_u64(),
        Value::String(s) => s.get(..4).and_then(|p| p.parse().ok()),
        _ => None,
    });
    let mut out = serde_json::Map::new();
    out.insert("doc_id".into(), Value::String(id));
    out.insert("title".into(), Value::String(title));
    out.insert("body".into(), Value::String(body));
    if let Some(y) = year {
        out.insert("year".into(), Value::from(y));
    }
    Ok(Value::Object(out))
}

/// Converts an archive file (JSON array, single object, or JSON lines) into
/// canonical JSONL. Returns the number of records written.
pub fn convert_archive<W: Write>(input: &str, mut out: W) -> Result<usize, String> {
    let trimmed = input.trim_start();
    let records: Vec<Value> = if trimmed.starts_with('[') {
        serde_json::from_str(trimmed).map_err(|e| e.to_string())?
    } else {
        let mut recs = Vec::new();
        for (i, line) in input.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            recs.push(serde_json::from_str(line).map_err(|e| format!("line {}: {e}", i + 1))?);
        }
        recs
    };
    let mut n = 0;
    for rec in &records {
        let canon = convert_archive_record(rec)?;
        serde_json::to_writer(&mut out, &canon).map_err(|e| e.to_string())?;
        out.write_all(b"\n").map_err(|e| e.to_string())?;
        n += 1;
    }
    Ok(n)
}

/// Relevance judgments: query id to the set of relevant pool ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    entries: BTreeMap<String, BTreeSet<String>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, query_id: impl Into<String>, doc_id: impl Into<String>) {
        self.entries
            .entry(query_id.into())
            .or_default()
            .insert(doc_id.into());
    }

    pub fn relevant(&self, query_id: &str) -> Option<&BTreeSet<String>> {
        self.entries.get(query_id)
    }

    pub fn is_relevant(&self, query_id: &str, doc_id: &str) -> bool {
        self.entries
            .get(query_id)
            .is_some_and(|s| s.contains(doc_id))
    }

    pub fn queries(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &BTreeSet<String>)> {
        self.entries.iter().map(|(q, s)| (q.as_str(), s))
    }

    /// Judgments restricted to the given query ids.
    pub fn restrict(&self, query_ids: &[String]) -> Qrels {
        let entries = query_ids
            .iter()
            .filter_map(|q| self.entries.get(q).map(|s| (q.clone(), s.clone())))
            .collect();
        Qrels { entries }
    }

    /// Mean number of relevant documents over the given queries.
    pub fn mean_relevant(&self, query_ids: &[String]) -> f64 {
        if query_ids.is_empty() {
            return 0.0;
        }
        let total: usize = query_ids
            .iter()
            .map(|q| self.entries.get(q).map_or(0, BTreeSet::len))
            .sum();
        total as f64 / query_ids.len() as f64
    }

    /// Parses the TSV format without checking ids against any collection.
    pub fn parse<R: BufRead>(input: R) -> Result<Self, CorpusError> {
        let mut q = Qrels::new();
        for (idx, line) in input.lines().enumerate() {
            let line = line.map_err(|source| CorpusError::Io {
                path: "<qrels>".into(),
                source,
            })?;
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let mut cols = t.split('\t');
            match (cols.next(), cols.next(), cols.next()) {
                (Some(qid), Some(did), None) if !qid.is_empty() && !did.trim().is_empty() => {
                    q.insert(qid.trim(), did.trim())
                }
                _ => {
                    return Err(CorpusError::Malformed {
                        line: idx + 1,
                        msg: "expected `query_id<TAB>doc_id`".into(),
                    })
                }
            }
        }
        if q.is_empty() {
            return Err(CorpusError::Empty("<qrels>".into()));
        }
        Ok(q)
    }

    /// Checks every query id against `queries` and every relevant id
    /// against `pool`; all unknown ids are collected before failing.
    pub fn validate(&self, queries: &Collection, pool: &Collection) -> Result<(), CorpusError> {
        let mut unknown = BTreeSet::new();
        for (qid, rel) in &self.entries {
            if !queries.contains(qid) {
                unknown.insert(qid.clone());
            }
            for d in rel {
                if !pool.contains(d) {
                    unknown.insert(d.clone());
                }
            }
        }
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(CorpusError::UnknownIds(unknown.into_iter().collect()))
        }
    }

    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (q, rel) in &self.entries {
            for d in rel {
                writeln!(out, "{q}\t{d}")?;
            }
        }
        Ok(())
    }
}

/// Loads and validates a qrels TSV file.
pub fn load_qrels(
    path: &Path,
    queries: &Collection,
    pool: &Collection,
) -> Result<Qrels, CorpusError> {
    let qrels = read_qrels(path)?;
    qrels.validate(queries, pool)?;
    Ok(qrels)
}

/// Loads a qrels TSV file without id validation.
pub fn read_qrels(path: &Path) -> Result<Qrels, CorpusError> {
    let file = File::open(path).map_err(io_err(path))?;
    Qrels::parse(BufReader::new(file)).map_err(|e| match e {
        CorpusError::Empty(_) => CorpusError::Empty(path.display().to_string()),
        other => other,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub train: Vec<String>,
    pub dev: Vec<String>,
    pub test: Vec<String>,
    #[serde(default)]
    pub pool: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl SplitManifest {
    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let file = File::open(path).map_err(io_err(path))?;
        serde_json::from_reader(BufReader::new(file))
            .map_err(|e| CorpusError::InvalidSplits(e.to_string()))
    }

    pub fn ids(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }

    /// Enforces pairwise disjointness of the query splits and, given the
    /// query collection, checks chronological order. Order violations are
    /// returned as warnings rather than errors.
    pub fn validate(&self, queries: Option<&Collection>) -> Result<Vec<String>, CorpusError> {
        let mut owner: HashMap<&str, &str> = HashMap::new();
        for split in [Split::Train, Split::Dev, Split::Test] {
            for id in self.ids(split) {
                if let Some(prev) = owner.insert(id, split.name()) {
                    return Err(CorpusError::InvalidSplits(format!(
                        "query {id} appears in both {prev} and {}",
                        split.name()
                    )));
                }
            }
        }
        let mut warnings = Vec::new();
        if let Some(coll) = queries {
            let years = |ids: &[String]| -> Vec<u32> {
                ids.iter()
                    .filter_map(|id| coll.year_of(id))
                    .filter(|&y| y > 0)
                    .collect()
            };
            let train = years(&self.train);
            let dev = years(&self.dev);
            let test = years(&self.test);
            let max_train = train.iter().max();
            let min_dev = dev.iter().min();
            let max_dev = dev.iter().max();
            let min_test = test.iter().min();
            if let (Some(a), Some(b)) = (max_train, min_dev) {
                if a > b {
                    warnings.push(format!("train year {a} is later than dev year {b}"));
                }
            }
            if let (Some(a), Some(b)) = (max_dev, min_test) {
                if a > b {
                    warnings.push(format!("dev year {a} is later than test year {b}"));
                }
            }
        }
        for w in &warnings {
            warn!("split manifest: {w}");
        }
        Ok(warnings)
    }
}

/// Summary statistics computed on whitespace tokens of title plus body.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusStats {
    pub documents: usize,
    pub mean_tokens: f64,
    pub median_tokens: f64,
    pub year_histogram: BTreeMap<u32, usize>,
}

pub fn corpus_stats(collection: &Collection) -> CorpusStats {
    let mut lens: Vec<usize> = collection
        .iter()
        .map(|d| d.title.split_whitespace().count() + d.body.split_whitespace().count())
        .collect();
    let mut year_histogram = BTreeMap::new();
    for d in collection.iter() {
        *year_histogram.entry(d.year).or_insert(0) += 1;
    }
    lens.sort_unstable();
    let n = lens.len();
    let mean_tokens = if n == 0 {
        0.0
    } else {
        lens.iter().sum::<usize>() as f64 / n as f64
    };
    let median_tokens = match n {
        0 => 0.0,
        _ if n % 2 == 1 => lens[n / 2] as f64,
        _ => (lens[n / 2 - 1] + lens[n / 2]) as f64 / 2.0,
    };
    CorpusStats {
        documents: n,
        mean_tokens,
        median_tokens,
        year_histogram,
    }
}
