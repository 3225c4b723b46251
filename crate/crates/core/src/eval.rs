//! Binary-relevance ranking metrics: R@k, nDCG@k and R-Precision, plus
//! aggregation over repeated runs.
//!
//! Metrics return `None` when the relevant set is empty; such queries are
//! excluded from macro averages and counted separately.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use thiserror::Error;

use crate::corpus::Qrels;
use crate::ranking::RankedList;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no reports to aggregate")]
    NoReports,
    #[error("runs cover different query sets")]
    MismatchedQueries,
}

fn hits(list: &RankedList, relevant: &BTreeSet<String>, k: usize) -> usize {
    list.doc_ids()
        .take(k)
        .filter(|d| relevant.contains(*d))
        .count()
}

/// `|top-k ∩ relevant| / |relevant|`.
pub fn recall_at_k(list: &RankedList, relevant: &BTreeSet<String>, k: usize) -> Option<f64> {
    if relevant.is_empty() {
        return None;
    }
    Some(hits(list, relevant, k) as f64 / relevant.len() as f64)
}

/// Binary-gain nDCG with a `log2(rank + 1)` discount.
pub fn ndcg_at_k(list: &RankedList, relevant: &BTreeSet<String>, k: usize) -> Option<f64> {
    if relevant.is_empty() {
        return None;
    }
    let dcg: f64 = list
        .doc_ids()
        .take(k)
        .enumerate()
        .filter(|(_, d)| relevant.contains(*d))
        .fold(0.0, |acc, (i, _)| acc + 1.0 / ((i + 2) as f64).log2());
    let ideal: f64 = (0..relevant.len().min(k))
        .map(|i| 1.0 / ((i + 2) as f64).log2())
        .sum();
    Some(if ideal > 0.0 { dcg / ideal } else { 0.0 })
}

/// Precision at rank `R = |relevant|`.
pub fn r_precision(list: &RankedList, relevant: &BTreeSet<String>) -> Option<f64> {
    let r = relevant.len();
    if r == 0 {
        return None;
    }
    Some(hits(list, relevant, r) as f64 / r as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryMetrics {
    pub query_id: String,
    pub recall: f64,
    pub ndcg: f64,
    pub r_precision: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub k: usize,
    pub per_query: Vec<QueryMetrics>,
    pub mean_recall: f64,
    pub mean_ndcg: f64,
    pub mean_r_precision: f64,
    /// Queries skipped because they have no relevant documents.
    pub excluded: Vec<String>,
}

/// Evaluates every list whose query has judgments. Queries in `qrels`
/// without a list count as empty rankings.
pub fn evaluate(lists: &[RankedList], qrels: &Qrels, k: usize) -> EvalReport {
    let empty = RankedList::new("");
    let by_query: BTreeMap<&str, &RankedList> =
        lists.iter().map(|l| (l.query_id.as_str(), l)).collect();
    let mut per_query = Vec::new();
    let mut excluded = Vec::new();
    let mut ids: BTreeSet<&str> = by_query.keys().copied().collect();
    ids.extend(qrels.queries());
    for qid in ids {
        let list = by_query.get(qid).copied().unwrap_or(&empty);
        let Some(rel) = qrels.relevant(qid).filter(|r| !r.is_empty()) else {
            excluded.push(qid.to_string());
            continue;
        };
        per_query.push(QueryMetrics {
            query_id: qid.to_string(),
            recall: recall_at_k(list, rel, k).unwrap_or(0.0),
            ndcg: ndcg_at_k(list, rel, k).unwrap_or(0.0),
            r_precision: r_precision(list, rel).unwrap_or(0.0),
        });
    }
    let mean = |f: fn(&QueryMetrics) -> f64| {
        if per_query.is_empty() {
            0.0
        } else {
            per_query.iter().map(f).sum::<f64>() / per_query.len() as f64
        }
    };
    EvalReport {
        k,
        mean_recall: mean(|m| m.recall),
        mean_ndcg: mean(|m| m.ndcg),
        mean_r_precision: mean(|m| m.r_precision),
        per_query,
        excluded,
    }
}

impl EvalReport {
    /// CSV `query_id,r_at_K,ndcg_at_K,rp` with a trailing `mean` row.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "query_id,r_at_{k},ndcg_at_{k},rp", k = self.k)?;
        for m in &self.per_query {
            writeln!(
                w,
                "{},{:.6},{:.6},{:.6}",
                m.query_id, m.recall, m.ndcg, m.r_precision
            )?;
        }
        writeln!(
            w,
            "mean,{:.6},{:.6},{:.6}",
            self.mean_recall, self.mean_ndcg, self.mean_r_precision
        )
    }

    /// Reads back the per-query rows of [`EvalReport::write_csv`].
    pub fn read_csv(text: &str) -> Result<Self, String> {
        let mut lines = text
            .lines()
            .filter(|l| !l.starts_with('#') && !l.trim().is_empty());
        let header = lines.next().ok_or("empty report")?;
        let k = header
            .split(',')
            .nth(1)
            .and_then(|c| c.strip_prefix("r_at_"))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| format!("unrecognized header `{header}`"))?;
        let mut per_query = Vec::new();
        for line in lines {
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 4 {
                return Err(format!("bad row `{line}`"));
            }
            if cols[0] == "mean" {
                continue;
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| format!("`{s}`: {e}"));
            per_query.push(QueryMetrics {
                query_id: cols[0].to_string(),
                recall: num(cols[1])?,
                ndcg: num(cols[2])?,
                r_precision: num(cols[3])?,
            });
        }
        let n = per_query.len().max(1) as f64;
        Ok(Self {
            k,
            mean_recall: per_query.iter().map(|m| m.recall).sum::<f64>() / n,
            mean_ndcg: per_query.iter().map(|m| m.ndcg).sum::<f64>() / n,
            mean_r_precision: per_query.iter().map(|m| m.r_precision).sum::<f64>() / n,
            per_query,
            excluded: Vec::new(),
        })
    }
}

/// Mean and population standard deviation.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricSummary {
    pub metric: String,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub runs: usize,
    pub metrics: Vec<MetricSummary>,
}

/// Aggregates seed-repeated reports into mean and population sd per metric.
pub fn aggregate_runs(reports: &[EvalReport]) -> Result<RunSummary, EvalError> {
    let first = reports.first().ok_or(EvalError::NoReports)?;
    let ids = |r: &EvalReport| -> Vec<String> {
        r.per_query.iter().map(|m| m.query_id.clone()).collect()
    };
    let reference = ids(first);
    if reports.iter().any(|r| ids(r) != reference) {
        return Err(EvalError::MismatchedQueries);
    }
    let k = first.k;
    let collect = |f: fn(&EvalReport) -> f64| -> Vec<f64> { reports.iter().map(f).collect() };
    let mut metrics = Vec::new();
    for (name, vals) in [
        (format!("r_at_{k}"), collect(|r| r.mean_recall)),
        (format!("ndcg_at_{k}"), collect(|r| r.mean_ndcg)),
        ("rp".to_string(), collect(|r| r.mean_r_precision)),
    ] {
        let (mean, sd) = mean_sd(&vals);
        metrics.push(MetricSummary {
            metric: name,
            mean,
            sd,
        });
    }
    Ok(RunSummary {
        runs: reports.len(),
        metrics,
    })
}

impl RunSummary {
    /// CSV `metric,mean,sd`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "metric,mean,sd")?;
        for m in &self.metrics {
            writeln!(w, "{},{:.6},{:.6}", m.metric, m.mean, m.sd)?;
        }
        Ok(())
    }
}

/// Table-style percentage with spread, e.g. `43.3 (± 0.2)`.
pub fn format_mean_sd(mean: f64, sd: f64) -> String {
    format!("{:.1} (± {:.1})", mean * 100.0, sd * 100.0)
}

/// Macro R@k for every `k` in `1..=k_max`.
pub fn recall_curve(lists: &[RankedList], qrels: &Qrels, k_max: usize) -> Vec<(usize, f64)> {
    let judged: Vec<(&RankedList, &BTreeSet<String>)> = lists
        .iter()
        .filter_map(|l| {
            qrels
                .relevant(&l.query_id)
                .filter(|r| !r.is_empty())
                .map(|r| (l, r))
        })
        .collect();
    (1..=k_max)
        .map(|k| {
            let total: f64 = judged
                .iter()
                .filter_map(|(l, r)| recall_at_k(l, r, k))
                .sum();
            let n = judged.len().max(1) as f64;
            (k, total / n)
        })
        .collect()
}
