//! Position-aware relevance matching.
//!
//! The query-document similarity matrix is convolved with square kernels of
//! several sizes, max-pooled over filters and then k-max pooled along each
//! query-term row. The per-row signals (raw k-max, one block per kernel size,
//! and the softmax-normalized idf of the term) are read in query order by a
//! single-unit LSTM whose last hidden state is the relevance score.

use rand::Rng;

use super::{glorot, SimilarityMatrix};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PacrrConfig {
    pub kernel_sizes: Vec<usize>,
    pub filters: usize,
    pub kmax: usize,
}

impl Default for PacrrConfig {
    fn default() -> Self {
        Self {
            kernel_sizes: vec![2, 3],
            filters: 16,
            kmax: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PacrrFeatures {
    pub sim: SimilarityMatrix,
    /// Softmax over the query terms' idf values, one per matrix row.
    pub idf_softmax: Vec<f64>,
}

struct ConvOut {
    values: Vec<f64>,
    filter: Vec<usize>,
}

struct Trace {
    convs: Vec<ConvOut>,
    /// `[kernel][row][r]` column picked by k-max pooling.
    picks: Vec<Vec<Vec<Option<usize>>>>,
    xs: Vec<Vec<f64>>,
    gates: Vec<[f64; 4]>,
    cs: Vec<f64>,
    hs: Vec<f64>,
}

/// Top `k` values of a row in descending order, ties to the lower column;
/// short rows are padded with zeros.
fn kmax(row: &[f64], k: usize) -> Vec<(f64, Option<usize>)> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    let mut out: Vec<(f64, Option<usize>)> =
        idx.into_iter().take(k).map(|j| (row[j], Some(j))).collect();
    out.resize(k, (0.0, None));
    out
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

// Parameter layout: for each kernel size n, `filters * n * n` weights then
// `filters` biases; then the LSTM input weights (4 x input_dim), recurrent
// weights (4) and biases (4), gate order input, forget, cell, output.
impl PacrrConfig {
    pub fn input_dim(&self) -> usize {
        (1 + self.kernel_sizes.len()) * self.kmax + 1
    }

    fn conv_offset(&self, ki: usize) -> usize {
        self.kernel_sizes[..ki]
            .iter()
            .map(|n| self.filters * n * n + self.filters)
            .sum()
    }

    fn lstm_offset(&self) -> usize {
        self.conv_offset(self.kernel_sizes.len())
    }

    pub fn num_params(&self) -> usize {
        self.lstm_offset() + 4 * self.input_dim() + 8
    }

    pub fn init<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.num_params());
        for &n in &self.kernel_sizes {
            p.extend((0..self.filters * n * n).map(|_| glorot(rng, n * n, self.filters)));
            p.extend(std::iter::repeat_n(0.0, self.filters));
        }
        let d = self.input_dim();
        p.extend((0..4 * d).map(|_| glorot(rng, d, 4)));
        p.extend((0..4).map(|_| glorot(rng, 1, 4)));
        p.extend([0.0, 1.0, 0.0, 0.0]);
        p
    }

    fn convolve(&self, p: &[f64], ki: usize, s: &SimilarityMatrix) -> ConvOut {
        let n = self.kernel_sizes[ki];
        let off = self.conv_offset(ki);
        let (rows, cols) = (s.rows, s.cols);
        let mut values = vec![0.0; rows * cols];
        let mut filter = vec![0usize; rows * cols];
        for f in 0..self.filters {
            let w = &p[off + f * n * n..off + (f + 1) * n * n];
            let b = p[off + self.filters * n * n + f];
            for i in 0..rows {
                for j in 0..cols {
                    let mut z = b;
                    for a in 0..n.min(rows - i) {
                        for c in 0..n.min(cols - j) {
                            z += w[a * n + c] * s.get(i + a, j + c);
                        }
                    }
                    let v = z.max(0.0);
                    let cell = i * cols + j;
                    if f == 0 || v > values[cell] {
                        values[cell] = v;
                        filter[cell] = f;
                    }
                }
            }
        }
        ConvOut { values, filter }
    }

    fn trace(&self, p: &[f64], x: &PacrrFeatures) -> Trace {
        let s = &x.sim;
        let k = self.kmax;
        let convs: Vec<ConvOut> = (0..self.kernel_sizes.len())
            .map(|ki| self.convolve(p, ki, s))
            .collect();
        let mut picks = vec![Vec::with_capacity(s.rows); convs.len()];
        let mut xs = Vec::with_capacity(s.rows);
        for i in 0..s.rows {
            let mut row_x = Vec::with_capacity(self.input_dim());
            row_x.extend(kmax(s.row(i), k).into_iter().map(|(v, _)| v));
            for (ki, conv) in convs.iter().enumerate() {
                let pooled = kmax(&conv.values[i * s.cols..(i + 1) * s.cols], k);
                row_x.extend(pooled.iter().map(|(v, _)| *v));
                picks[ki].push(pooled.into_iter().map(|(_, j)| j).collect());
            }
            row_x.push(x.idf_softmax[i]);
            xs.push(row_x);
        }

        let d = self.input_dim();
        let lo = self.lstm_offset();
        let (w, u, b) = (
            &p[lo..lo + 4 * d],
            &p[lo + 4 * d..lo + 4 * d + 4],
            &p[lo + 4 * d + 4..lo + 4 * d + 8],
        );
        let (mut h, mut c) = (0.0, 0.0);
        let mut gates = Vec::with_capacity(xs.len());
        let mut cs = Vec::with_capacity(xs.len());
        let mut hs = Vec::with_capacity(xs.len());
        for xt in &xs {
            let mut a = [0.0; 4];
            for q in 0..4 {
                a[q] = b[q]
                    + u[q] * h
                    + w[q * d..(q + 1) * d]
                        .iter()
                        .zip(xt)
                        .map(|(wi, xi)| wi * xi)
                        .sum::<f64>();
            }
            let g = [sigmoid(a[0]), sigmoid(a[1]), a[2].tanh(), sigmoid(a[3])];
            c = g[1] * c + g[0] * g[2];
            h = g[3] * c.tanh();
            gates.push(g);
            cs.push(c);
            hs.push(h);
        }
        Trace {
            convs,
            picks,
            xs,
            gates,
            cs,
            hs,
        }
    }

    /// LSTM input rows: raw k-max, k-max per kernel size, idf weight.
    pub fn pooled_rows(&self, p: &[f64], x: &PacrrFeatures) -> Vec<Vec<f64>> {
        self.trace(p, x).xs
    }

    pub fn forward(&self, p: &[f64], x: &PacrrFeatures) -> f64 {
        self.trace(p, x).hs.last().copied().unwrap_or(0.0)
    }

    /// Adds `upstream * ds/dp` into `grad` and returns `s`.
    pub fn backward(&self, p: &[f64], x: &PacrrFeatures, upstream: f64, grad: &mut [f64]) -> f64 {
        let tr = self.trace(p, x);
        let Some(&out) = tr.hs.last() else {
            return 0.0;
        };
        let s = &x.sim;
        let d = self.input_dim();
        let k = self.kmax;
        let lo = self.lstm_offset();
        let (ow, ou, ob) = (lo, lo + 4 * d, lo + 4 * d + 4);

        let mut dh = upstream;
        let mut dc = 0.0;
        for t in (0..tr.xs.len()).rev() {
            let [ig, fg, gg, og] = tr.gates[t];
            let c_prev = if t > 0 { tr.cs[t - 1] } else { 0.0 };
            let h_prev = if t > 0 { tr.hs[t - 1] } else { 0.0 };
            let tc = tr.cs[t].tanh();
            let d_o = dh * tc;
            dc += dh * og * (1.0 - tc * tc);
            let da = [
                dc * gg * ig * (1.0 - ig),
                dc * c_prev * fg * (1.0 - fg),
                dc * ig * (1.0 - gg * gg),
                d_o * og * (1.0 - og),
            ];
            let mut dx = vec![0.0; d];
            for q in 0..4 {
                for (j, xv) in tr.xs[t].iter().enumerate() {
                    grad[ow + q * d + j] += da[q] * xv;
                    dx[j] += da[q] * p[ow + q * d + j];
                }
                grad[ou + q] += da[q] * h_prev;
                grad[ob + q] += da[q];
            }
            dh = (0..4).map(|q| da[q] * p[ou + q]).sum();
            dc *= fg;

            for (ki, &n) in self.kernel_sizes.iter().enumerate() {
                let off = self.conv_offset(ki);
                let conv = &tr.convs[ki];
                for r in 0..k {
                    let Some(j) = tr.picks[ki][t][r] else {
                        continue;
                    };
                    let cell = t * s.cols + j;
                    if conv.values[cell] <= 0.0 {
                        continue;
                    }
                    let g = dx[(1 + ki) * k + r];
                    let f = conv.filter[cell];
                    grad[off + self.filters * n * n + f] += g;
                    for a in 0..n.min(s.rows - t) {
                        for c in 0..n.min(s.cols - j) {
                            grad[off + f * n * n + a * n + c] += g * s.get(t + a, j + c);
                        }
                    }
                }
            }
        }
        out
    }
}
