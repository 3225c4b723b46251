//! Histogram-based relevance matching.
//!
//! Each query term is summarized by a log-count histogram of its cosine
//! similarities to every document term. A shared feed-forward network maps
//! each histogram to a scalar, and a softmax gate over the terms' idf values
//! (scaled by a learned weight) forms the weighted sum.

use rand::Rng;

use super::glorot;
use crate::dense::{norm, WordVectors};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DrmmConfig {
    /// Regular bins over `[-1, 1)`; one extra bin holds exact matches.
    pub bins: usize,
    pub hidden: usize,
}

impl Default for DrmmConfig {
    fn default() -> Self {
        Self {
            bins: 30,
            hidden: 5,
        }
    }
}

/// One histogram and one idf value per distinct in-vocabulary query term.
#[derive(Debug, Clone, PartialEq)]
pub struct DrmmFeatures {
    pub histograms: Vec<Vec<f64>>,
    pub idf: Vec<f64>,
}

/// Log-count histogram: `bins` equal-width bins over `[-1, 1)` followed by
/// the exact-match bin for similarity 1.
pub fn histogram_from_similarities<I: IntoIterator<Item = f64>>(sims: I, bins: usize) -> Vec<f64> {
    let mut counts = vec![0usize; bins + 1];
    for s in sims {
        let b = if s >= 1.0 {
            bins
        } else {
            let pos = ((s + 1.0) / 2.0 * bins as f64).floor();
            (pos.max(0.0) as usize).min(bins - 1)
        };
        counts[b] += 1;
    }
    counts.into_iter().map(|c| (c as f64).ln_1p()).collect()
}

/// Histogram of one query term against a document, using raw word vectors.
/// Returns `None` when the query term has no vector; document tokens without
/// vectors are skipped.
pub fn build_histogram<S: AsRef<str>>(
    query_term: &str,
    doc_tokens: &[S],
    vectors: &WordVectors,
    bins: usize,
) -> Option<Vec<f64>> {
    let qv = vectors.get(query_term)?;
    let qn = norm(qv);
    let sims = doc_tokens.iter().filter_map(|t| {
        let t = t.as_ref();
        if t == query_term {
            return Some(1.0);
        }
        let dv = vectors.get(t)?;
        let dn = norm(dv);
        if qn == 0.0 || dn == 0.0 {
            return Some(0.0);
        }
        let dot: f64 = qv.iter().zip(dv).map(|(a, b)| *a as f64 * *b as f64).sum();
        Some((dot / (qn * dn)).clamp(-1.0, 1.0 - f64::EPSILON))
    });
    Some(histogram_from_similarities(sims, bins))
}

// Parameter layout: [gate_w, W1 (hidden x width), b1 (hidden), w2 (hidden), b2].
impl DrmmConfig {
    pub fn width(&self) -> usize {
        self.bins + 1
    }

    pub fn num_params(&self) -> usize {
        1 + self.hidden * self.width() + 2 * self.hidden + 1
    }

    pub fn init<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let (h, m) = (self.hidden, self.width());
        let mut p = Vec::with_capacity(self.num_params());
        p.push(1.0);
        p.extend((0..h * m).map(|_| glorot(rng, m, h)));
        p.extend(std::iter::repeat_n(0.0, h));
        p.extend((0..h).map(|_| glorot(rng, h, 1)));
        p.push(0.0);
        p
    }

    fn split<'a>(&self, p: &'a [f64]) -> (f64, &'a [f64], &'a [f64], &'a [f64], f64) {
        let (h, m) = (self.hidden, self.width());
        let w1 = &p[1..1 + h * m];
        let b1 = &p[1 + h * m..1 + h * m + h];
        let w2 = &p[1 + h * m + h..1 + h * m + 2 * h];
        (p[0], w1, b1, w2, p[1 + h * m + 2 * h])
    }

    fn term_output(&self, p: &[f64], hist: &[f64], act: &mut [f64]) -> f64 {
        let (_, w1, b1, w2, b2) = self.split(p);
        let m = self.width();
        let mut out = b2;
        for (j, a) in act.iter_mut().enumerate() {
            let row = &w1[j * m..(j + 1) * m];
            let z = b1[j] + row.iter().zip(hist).map(|(w, x)| w * x).sum::<f64>();
            *a = z.tanh();
            out += w2[j] * *a;
        }
        out
    }

    pub fn forward(&self, p: &[f64], x: &DrmmFeatures) -> f64 {
        if x.idf.is_empty() {
            return 0.0;
        }
        let gate = super::softmax(&x.idf.iter().map(|v| p[0] * v).collect::<Vec<_>>());
        let mut act = vec![0.0; self.hidden];
        x.histograms
            .iter()
            .zip(&gate)
            .map(|(hist, g)| g * self.term_output(p, hist, &mut act))
            .sum()
    }

    /// Adds `upstream * ds/dp` into `grad` and returns `s`.
    pub fn backward(&self, p: &[f64], x: &DrmmFeatures, upstream: f64, grad: &mut [f64]) -> f64 {
        let n = x.idf.len();
        if n == 0 {
            return 0.0;
        }
        let (h, m) = (self.hidden, self.width());
        let (_, _, _, w2, _) = self.split(p);
        let gate = super::softmax(&x.idf.iter().map(|v| p[0] * v).collect::<Vec<_>>());
        let mut acts = vec![0.0; n * h];
        let outs: Vec<f64> = x
            .histograms
            .iter()
            .enumerate()
            .map(|(i, hist)| self.term_output(p, hist, &mut acts[i * h..(i + 1) * h]))
            .collect();
        let s: f64 = gate.iter().zip(&outs).map(|(g, o)| g * o).sum();

        let (o_w1, o_b1, o_w2, o_b2) = (1, 1 + h * m, 1 + h * m + h, 1 + h * m + 2 * h);
        for i in 0..n {
            let d_logit = upstream * gate[i] * (outs[i] - s);
            grad[0] += d_logit * x.idf[i];
            let d_out = upstream * gate[i];
            grad[o_b2] += d_out;
            let act = &acts[i * h..(i + 1) * h];
            for j in 0..h {
                grad[o_w2 + j] += d_out * act[j];
                let dz = d_out * w2[j] * (1.0 - act[j] * act[j]);
                grad[o_b1 + j] += dz;
                for (g, xv) in grad[o_w1 + j * m..o_w1 + (j + 1) * m]
                    .iter_mut()
                    .zip(&x.histograms[i])
                {
                    *g += dz * xv;
                }
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;

    #[test]
    fn histogram_hand_case() {
        let vectors = WordVectors::new(
            2,
            HashMap::from([
                ("tax".to_string(), vec![1.0, 0.0]),
                ("levy".to_string(), vec![1.0, 0.0]),
                ("fish".to_string(), vec![0.0, 1.0]),
                ("anti".to_string(), vec![-1.0, 0.0]),
            ]),
        );
        let doc = ["tax", "levy", "fish", "anti", "unknown", "tax"];
        let h = build_histogram("tax", &doc, &vectors, 4).unwrap();
        // [-1,-.5): anti; [0,.5): fish; [.5,1): levy; exact: tax x2
        let expect = [1.0f64, 0.0, 1.0, 1.0, 2.0].map(f64::ln_1p);
        assert_eq!(h, expect);
        assert!(build_histogram("unknown", &doc, &vectors, 4).is_none());
    }

    #[test]
    fn forward_matches_manual() {
        let cfg = DrmmConfig { bins: 2, hidden: 1 };
        // gate_w, W1 (1x3), b1, w2, b2
        let p = [0.0, 1.0, 0.0, 0.0, 0.0, 2.0, 0.5];
        let x = DrmmFeatures {
            histograms: vec![vec![0.3, 0.0, 0.0], vec![0.7, 0.0, 0.0]],
            idf: vec![1.0, 3.0],
        };
        let expect = 0.5 * (2.0 * 0.3f64.tanh() + 0.5) + 0.5 * (2.0 * 0.7f64.tanh() + 0.5);
        assert!((cfg.forward(&p, &x) - expect).abs() < 1e-12);
    }

    #[test]
    fn backward_returns_forward_value() {
        let cfg = DrmmConfig { bins: 4, hidden: 3 };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = cfg.init(&mut rng);
        assert_eq!(p.len(), cfg.num_params());
        let x = DrmmFeatures {
            histograms: vec![vec![0.1, 0.2, 0.0, 1.0, 0.5], vec![1.0, 0.0, 0.3, 0.0, 0.0]],
            idf: vec![0.4, 2.0],
        };
        let mut g = vec![0.0; p.len()];
        assert_eq!(cfg.backward(&p, &x, 1.0, &mut g), cfg.forward(&p, &x));
    }
}
