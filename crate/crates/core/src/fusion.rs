//! Score-level fusion of two pre-fetchers: per-query min-max normalization
//! followed by a convex combination `alpha * a + (1 - alpha) * b`.

use std::collections::HashMap;
use std::io::Write;

use rayon::prelude::*;
use thiserror::Error;

use crate::corpus::Qrels;
use crate::eval::recall_at_k;
use crate::lexical::linear_grid;
use crate::ranking::{RankedList, Stage};

#[derive(Debug, Error, PartialEq)]
pub enum FusionError {
    #[error("cannot fuse lists for different queries `{0}` and `{1}`")]
    QueryMismatch(String, String),
    #[error("alpha {0} outside [0, 1]")]
    InvalidAlpha(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionConfig {
    pub alpha: f64,
    pub component_a: Stage,
    pub component_b: Stage,
}

impl FusionConfig {
    pub fn new(alpha: f64, component_a: Stage, component_b: Stage) -> Result<Self, FusionError> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(FusionError::InvalidAlpha(alpha));
        }
        Ok(Self {
            alpha,
            component_a,
            component_b,
        })
    }
}

/// Min-max rescales a list's own scores to `[0, 1]`. A constant list maps
/// to all ones. Order is unchanged.
pub fn normalize_scores(list: &RankedList) -> RankedList {
    let mut out = list.clone();
    let (min, max) = list
        .entries
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), e| {
            (lo.min(e.score), hi.max(e.score))
        });
    let span = max - min;
    for e in &mut out.entries {
        e.score = if span > 0.0 {
            (e.score - min) / span
        } else {
            1.0
        };
    }
    out
}

/// Fuses two normalized lists over the union of their documents; a document
/// missing from one list scores 0 there.
pub fn fuse(
    a: &RankedList,
    b: &RankedList,
    alpha: f64,
    k: usize,
) -> Result<RankedList, FusionError> {
    if a.query_id != b.query_id {
        return Err(FusionError::QueryMismatch(
            a.query_id.clone(),
            b.query_id.clone(),
        ));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(FusionError::InvalidAlpha(alpha));
    }
    let mut scores: HashMap<&str, (f64, f64)> = HashMap::new();
    for e in &a.entries {
        scores.entry(&e.doc_id).or_default().0 = e.score;
    }
    for e in &b.entries {
        scores.entry(&e.doc_id).or_default().1 = e.score;
    }
    Ok(RankedList::from_scores(
        a.query_id.clone(),
        scores
            .into_iter()
            .map(|(d, (sa, sb))| (d.to_string(), alpha * sa + (1.0 - alpha) * sb)),
        Stage::Ensemble,
        k,
    ))
}

/// Normalizes both raw lists and fuses them.
pub fn fuse_raw(
    a: &RankedList,
    b: &RankedList,
    alpha: f64,
    k: usize,
) -> Result<RankedList, FusionError> {
    fuse(&normalize_scores(a), &normalize_scores(b), alpha, k)
}

pub fn default_alpha_grid() -> Vec<f64> {
    linear_grid(0.0, 1.0, 0.05)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlphaTuning {
    pub alpha: f64,
    pub recall: f64,
    pub grid: Vec<(f64, f64)>,
}

impl AlphaTuning {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "alpha,recall_at_k")?;
        for (a, r) in &self.grid {
            writeln!(w, "{a:.4},{r:.6}")?;
        }
        Ok(())
    }
}

/// Picks the alpha with the best macro R@k on `(list_a, list_b)` pairs;
/// ties go to the smaller alpha.
pub fn tune_alpha(
    pairs: &[(RankedList, RankedList)],
    qrels: &Qrels,
    grid: &[f64],
    k: usize,
) -> Result<AlphaTuning, FusionError> {
    let normalized: Vec<(RankedList, RankedList)> = pairs
        .iter()
        .map(|(a, b)| (normalize_scores(a), normalize_scores(b)))
        .collect();
    let mut results = Vec::with_capacity(grid.len());
    for &alpha in grid {
        let recalls: Vec<f64> = normalized
            .par_iter()
            .map(|(a, b)| -> Result<Option<f64>, FusionError> {
                let Some(rel) = qrels.relevant(&a.query_id) else {
                    return Ok(None);
                };
                Ok(recall_at_k(&fuse(a, b, alpha, k)?, rel, k))
            })
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .flatten()
            .collect();
        let mean = if recalls.is_empty() {
            0.0
        } else {
            recalls.iter().sum::<f64>() / recalls.len() as f64
        };
        results.push((alpha, mean));
    }
    let best = results
        .iter()
        .copied()
        .reduce(|best, c| {
            if c.1 > best.1 || (c.1 == best.1 && c.0 < best.0) {
                c
            } else {
                best
            }
        })
        .unwrap_or((0.5, 0.0));
    Ok(AlphaTuning {
        alpha: best.0,
        recall: best.1,
        grid: results,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn list(q: &str, items: &[(&str, f64)]) -> RankedList {
        RankedList::from_scores(
            q,
            items.iter().map(|(d, s)| (d.to_string(), *s)),
            Stage::Bm25,
            items.len(),
        )
    }

    fn scores(l: &RankedList) -> Vec<f64> {
        l.entries.iter().map(|e| e.score).collect()
    }

    #[test]
    fn normalize_hand_case() {
        let n = normalize_scores(&list("q", &[("a", 2.0), ("b", 4.0), ("c", 6.0)]));
        assert_eq!(scores(&n), [1.0, 0.5, 0.0]);
        assert_eq!(n.doc_ids().collect::<Vec<_>>(), ["c", "b", "a"]);
    }

    #[test]
    fn normalize_single_entry() {
        assert_eq!(scores(&normalize_scores(&list("q", &[("a", -3.0)]))), [1.0]);
    }

    #[test]
    fn normalize_full_range_fixed() {
        let n = normalize_scores(&list("q", &[("a", 0.0), ("b", 0.3), ("c", 1.0)]));
        assert_eq!(scores(&n)[0], 1.0);
        assert_eq!(scores(&n)[2], 0.0);
    }

    #[test]
    fn fuse_hand_case() {
        let a = list("q", &[("d1", 1.0), ("d2", 0.0)]);
        let b = list("q", &[("d2", 1.0), ("d1", 0.0)]);
        let f = fuse(&a, &b, 0.6, 10).unwrap();
        assert_eq!(f.entries[0].doc_id, "d1");
        assert!((f.entries[0].score - 0.6).abs() < 1e-12);
        assert!((f.entries[1].score - 0.4).abs() < 1e-12);
    }

    #[test]
    fn fuse_extreme_alphas() {
        let a = list("q", &[("x", 1.0), ("y", 0.5), ("z", 0.0)]);
        let b = list("q", &[("w", 1.0), ("z", 0.2)]);
        let f1 = fuse(&a, &b, 1.0, 10).unwrap();
        assert_eq!(f1.doc_ids().take(3).collect::<Vec<_>>(), ["x", "y", "w"]);
        assert_eq!(f1.score_of("y"), Some(0.5));
        let f0 = fuse(&a, &b, 0.0, 10).unwrap();
        assert_eq!(f0.doc_ids().take(2).collect::<Vec<_>>(), ["w", "z"]);
    }

    #[test]
    fn fuse_rejects_mismatch() {
        let a = list("q1", &[("x", 1.0)]);
        let b = list("q2", &[("x", 1.0)]);
        assert!(matches!(
            fuse(&a, &b, 0.5, 1),
            Err(FusionError::QueryMismatch(..))
        ));
        assert!(matches!(
            fuse(&a, &a, 1.5, 1),
            Err(FusionError::InvalidAlpha(_))
        ));
    }

    #[test]
    fn tune_picks_dominant_component() {
        let mut qrels = Qrels::new();
        qrels.insert("q", "rel");
        let a = list("q", &[("rel", 3.0), ("x", 1.0)]);
        let b = list("q", &[("x", 3.0), ("y", 2.0), ("rel", 1.0)]);
        let t = tune_alpha(&[(a, b)], &qrels, &[0.0, 1.0], 1).unwrap();
        assert_eq!(t.alpha, 1.0);
        assert_eq!(t.recall, 1.0);
    }

    #[test]
    fn tune_ties_prefer_small_alpha() {
        let mut qrels = Qrels::new();
        qrels.insert("q", "rel");
        let a = list("q", &[("rel", 1.0)]);
        let t = tune_alpha(&[(a.clone(), a)], &qrels, &[0.2, 0.7], 1).unwrap();
        assert_eq!(t.alpha, 0.2);
    }

    #[test]
    fn default_grid_has_21_points() {
        let g = default_alpha_grid();
        assert_eq!(g.len(), 21);
        assert!((g[20] - 1.0).abs() < 1e-12);
    }
}
