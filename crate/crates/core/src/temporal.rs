//! Publication-year distance filtering of candidate lists.
//!
//! Year 0 means "unknown" and is never filtered, on either side.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use crate::corpus::Qrels;
use crate::eval::recall_at_k;
use crate::ranking::RankedList;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterMode {
    /// Filter the pre-fetched list before re-ranking, refilling from depth.
    Pre,
    /// Filter the final (re-ranked) list.
    Post,
}

impl FromStr for FilterMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pre" => Ok(FilterMode::Pre),
            "post" => Ok(FilterMode::Post),
            other => Err(format!(
                "unknown filter mode `{other}` (expected pre or post)"
            )),
        }
    }
}

impl fmt::Display for FilterMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FilterMode::Pre => "pre",
            FilterMode::Post => "post",
        })
    }
}

/// Maximum allowed `|year(doc) - year(query)|`; `None` disables filtering.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DateWindow {
    pub max_distance_years: Option<u32>,
    pub mode: FilterMode,
}

impl DateWindow {
    pub fn new(years: u32, mode: FilterMode) -> Self {
        Self {
            max_distance_years: Some(years),
            mode,
        }
    }

    pub fn unbounded(mode: FilterMode) -> Self {
        Self {
            max_distance_years: None,
            mode,
        }
    }

    pub fn admits(&self, query_year: u32, doc_year: u32) -> bool {
        match self.max_distance_years {
            None => true,
            Some(_) if query_year == 0 || doc_year == 0 => true,
            Some(y) => query_year.abs_diff(doc_year) <= y,
        }
    }
}

/// Keeps entries inside the window, preserving their order.
pub fn apply_filter<F>(
    query_year: u32,
    list: &RankedList,
    year_of: F,
    window: &DateWindow,
) -> RankedList
where
    F: Fn(&str) -> u32,
{
    RankedList {
        query_id: list.query_id.clone(),
        entries: list
            .entries
            .iter()
            .filter(|e| window.admits(query_year, year_of(&e.doc_id)))
            .cloned()
            .collect(),
    }
}

/// Pre-filtering with refill: filters a deep list (typically depth `2k`)
/// and keeps the first `k` survivors.
pub fn prefilter<F>(
    query_year: u32,
    deep_list: &RankedList,
    year_of: F,
    window: &DateWindow,
    k: usize,
) -> RankedList
where
    F: Fn(&str) -> u32,
{
    apply_filter(query_year, deep_list, year_of, window).truncated(k)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowChoice {
    pub window: Option<u32>,
    pub recall: f64,
    pub grid: Vec<(Option<u32>, f64)>,
}

/// Picks the window with the best macro R@`k_eval` over the given lists.
/// In pre mode each list is treated as a deep pool and cut to `k_fetch`
/// survivors before scoring. Ties go to the larger window (unbounded is
/// the largest).
#[allow(clippy::too_many_arguments)]
pub fn choose_window<Q, D>(
    lists: &[RankedList],
    qrels: &Qrels,
    query_year: Q,
    doc_year: D,
    grid: &[Option<u32>],
    mode: FilterMode,
    k_fetch: usize,
    k_eval: usize,
) -> WindowChoice
where
    Q: Fn(&str) -> u32,
    D: Fn(&str) -> u32 + Copy,
{
    let mut results = Vec::with_capacity(grid.len());
    for &years in grid {
        let window = DateWindow {
            max_distance_years: years,
            mode,
        };
        let mut total = 0.0;
        let mut n = 0usize;
        for list in lists {
            let Some(rel) = qrels.relevant(&list.query_id) else {
                continue;
            };
            let qy = query_year(&list.query_id);
            let filtered = match mode {
                FilterMode::Pre => prefilter(qy, list, doc_year, &window, k_fetch),
                FilterMode::Post => apply_filter(qy, list, doc_year, &window),
            };
            if let Some(r) = recall_at_k(&filtered, rel, k_eval) {
                total += r;
                n += 1;
            }
        }
        results.push((years, if n == 0 { 0.0 } else { total / n as f64 }));
    }
    let larger = |a: Option<u32>, b: Option<u32>| match (a, b) {
        (None, Some(_)) => true,
        (Some(x), Some(y)) => x > y,
        _ => false,
    };
    let best = results
        .iter()
        .copied()
        .reduce(|best, c| {
            if c.1 > best.1 || (c.1 == best.1 && larger(c.0, best.0)) {
                c
            } else {
                best
            }
        })
        .unwrap_or((None, 0.0));
    WindowChoice {
        window: best.0,
        recall: best.1,
        grid: results,
    }
}

/// Histogram of `year(relevant) - year(query)` over judged pairs with both
/// years known.
pub fn year_difference_histogram<Q, D>(
    qrels: &Qrels,
    query_year: Q,
    doc_year: D,
) -> BTreeMap<i64, usize>
where
    Q: Fn(&str) -> u32,
    D: Fn(&str) -> u32,
{
    let mut hist = BTreeMap::new();
    for (q, rel) in qrels.iter() {
        let qy = query_year(q);
        if qy == 0 {
            continue;
        }
        for d in rel {
            let dy = doc_year(d);
            if dy > 0 {
                *hist.entry(dy as i64 - qy as i64).or_insert(0) += 1;
            }
        }
    }
    hist
}

pub fn write_histogram_csv<W: Write>(mut w: W, hist: &BTreeMap<i64, usize>) -> std::io::Result<()> {
    writeln!(w, "year_diff,count")?;
    for (d, c) in hist {
        writeln!(w, "{d},{c}")?;
    }
    Ok(())
}
