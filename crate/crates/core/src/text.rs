//! Tokenization and two-stage denoising.
//!
//! The first stage drops punctuation, digits and (in [`denoise`]) stop-words.
//! The second drops every term whose idf is below the mean idf of the
//! stop-words that occur in the collection, which removes corpus-wide
//! boilerplate such as "regulation" or "member".

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

const DEFAULT_STOPWORDS: &str = include_str!("../data/stopwords.txt");

#[derive(Debug, Error)]
pub enum TextError {
    #[error("cannot build an idf table from an empty collection")]
    EmptyCollection,
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Lowercase word tokens. Never contains empty or whitespace-bearing tokens.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenizedText {
    pub tokens: Vec<String>,
}

impl TokenizedText {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Lowercases, strips diacritics and splits on every non-alphanumeric
/// character (so hyphens and slashes are boundaries). All-digit tokens are
/// dropped.
pub fn tokenize(text: &str) -> TokenizedText {
    let folded: String = text
        .nfd()
        .filter(|c| !is_combining_mark(*c))
        .flat_map(char::to_lowercase)
        .collect();
    let tokens = folded
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty() && !t.chars().all(|c| c.is_numeric()))
        .map(str::to_owned)
        .collect();
    TokenizedText { tokens }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StopWords {
    words: HashSet<String>,
}

impl Default for StopWords {
    fn default() -> Self {
        Self::parse(DEFAULT_STOPWORDS)
    }
}

impl StopWords {
    /// One word per line; blank lines ignored. Words are normalized the same
    /// way as tokens.
    pub fn parse(text: &str) -> Self {
        let words = text.lines().flat_map(|l| tokenize(l).tokens).collect();
        Self { words }
    }

    pub fn load(path: &Path) -> Result<Self, TextError> {
        let text = fs::read_to_string(path).map_err(|source| TextError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(Self::parse(&text))
    }

    pub fn contains(&self, w: &str) -> bool {
        self.words.contains(w)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Sorted words, for stable serialization.
    pub fn sorted(&self) -> Vec<&str> {
        let mut v: Vec<&str> = self.words.iter().map(String::as_str).collect();
        v.sort_unstable();
        v
    }
}

/// `ln((N - df + 0.5) / (df + 0.5) + 1)`, non-negative for `df <= N`.
pub fn smoothed_idf(doc_count: usize, df: usize) -> f64 {
    let n = doc_count as f64;
    let df = df as f64;
    ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
}

/// Document frequencies and the derived idf values of one collection.
#[derive(Debug, Clone, PartialEq)]
pub struct IdfTable {
    df: HashMap<String, usize>,
    doc_count: usize,
    stopword_avg_idf: f64,
}

impl IdfTable {
    /// Builds the table from already tokenized documents.
    pub fn build<S: AsRef<str> + Sync>(
        docs: &[Vec<S>],
        stopwords: &StopWords,
    ) -> Result<Self, TextError> {
        if docs.is_empty() {
            return Err(TextError::EmptyCollection);
        }
        let df = docs
            .par_iter()
            .fold(HashMap::new, |mut acc: HashMap<String, usize>, toks| {
                let distinct: HashSet<&str> = toks.iter().map(AsRef::as_ref).collect();
                for t in distinct {
                    *acc.entry(t.to_owned()).or_insert(0) += 1;
                }
                acc
            })
            .reduce(HashMap::new, |mut a, b| {
                for (t, c) in b {
                    *a.entry(t).or_insert(0) += c;
                }
                a
            });
        Ok(Self::from_df(df, docs.len(), stopwords))
    }

    pub fn from_df(df: HashMap<String, usize>, doc_count: usize, stopwords: &StopWords) -> Self {
        let mut table = Self {
            df,
            doc_count,
            stopword_avg_idf: 0.0,
        };
        let mut present: Vec<f64> = stopwords
            .sorted()
            .into_iter()
            .filter(|w| table.df.contains_key(*w))
            .map(|w| table.idf(w))
            .collect();
        if !present.is_empty() {
            present.sort_by(f64::total_cmp);
            table.stopword_avg_idf = present.iter().sum::<f64>() / present.len() as f64;
        }
        table
    }

    /// Restores a table whose threshold was computed elsewhere.
    pub fn from_parts(df: HashMap<String, usize>, doc_count: usize, stopword_avg_idf: f64) -> Self {
        Self {
            df,
            doc_count,
            stopword_avg_idf,
        }
    }

    pub fn doc_count(&self) -> usize {
        self.doc_count
    }

    pub fn df(&self, term: &str) -> usize {
        self.df.get(term).copied().unwrap_or(0)
    }

    /// Smoothed idf; terms absent from the collection count as `df = 0`.
    pub fn idf(&self, term: &str) -> f64 {
        smoothed_idf(self.doc_count, self.df(term))
    }

    pub fn stopword_avg_idf(&self) -> f64 {
        self.stopword_avg_idf
    }

    pub fn vocabulary_size(&self) -> usize {
        self.df.len()
    }

    /// `(term, df)` pairs sorted by term.
    pub fn sorted_df(&self) -> Vec<(&str, usize)> {
        let mut v: Vec<(&str, usize)> = self.df.iter().map(|(t, &c)| (t.as_str(), c)).collect();
        v.sort_unstable();
        v
    }
}

/// Removes stop-words, then every token whose idf is below the stop-word
/// average. Survivors keep their order and multiplicity.
pub fn denoise(tokens: &TokenizedText, idf: &IdfTable, stopwords: &StopWords) -> TokenizedText {
    let threshold = idf.stopword_avg_idf();
    TokenizedText {
        tokens: tokens
            .tokens
            .iter()
            .filter(|t| !stopwords.contains(t) && idf.idf(t) >= threshold)
            .cloned()
            .collect(),
    }
}

/// The full lexical pipeline: tokenize, drop stop-words, and optionally
/// apply the idf-threshold filter.
#[derive(Debug, Clone, PartialEq)]
pub struct TextPipeline {
    pub stopwords: StopWords,
    pub idf: IdfTable,
    pub idf_filter: bool,
}

impl TextPipeline {
    /// Fits the idf table on the (pool) documents' full text.
    pub fn fit<'a, I>(texts: I, stopwords: StopWords, idf_filter: bool) -> Result<Self, TextError>
    where
        I: IntoParallelIterator<Item = &'a str>,
    {
        let docs: Vec<Vec<String>> = texts.into_par_iter().map(|t| tokenize(t).tokens).collect();
        let idf = IdfTable::build(&docs, &stopwords)?;
        Ok(Self {
            stopwords,
            idf,
            idf_filter,
        })
    }

    pub fn process(&self, text: &str) -> TokenizedText {
        let toks = tokenize(text);
        if self.idf_filter {
            denoise(&toks, &self.idf, &self.stopwords)
        } else {
            TokenizedText {
                tokens: toks
                    .tokens
                    .into_iter()
                    .filter(|t| !self.stopwords.contains(t))
                    .collect(),
            }
        }
    }
}
