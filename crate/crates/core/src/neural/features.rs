//! Turning (query, document) pairs into model inputs.

use std::collections::{HashMap, HashSet};
use std::sync::{Arc, RwLock};

use super::{
    histogram_from_similarities, softmax, term_similarity, Architecture, DrmmFeatures, Features,
    PacrrFeatures, SimilarityMatrix, TokenEmbedder,
};
use crate::text::IdfTable;

/// Source of per-pair features. `None` means the pair cannot be scored by
/// the network (no usable query or document terms).
pub trait PairFeatures: Sync {
    fn features(&self, query_id: &str, doc_id: &str) -> Option<Arc<Features>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureSpec {
    Drmm {
        bins: usize,
    },
    Pacrr {
        max_query_len: usize,
        max_doc_len: usize,
    },
}

impl FeatureSpec {
    pub fn for_arch(arch: &Architecture, max_query_len: usize, max_doc_len: usize) -> Self {
        match arch {
            Architecture::Drmm(c) => FeatureSpec::Drmm { bins: c.bins },
            Architecture::Pacrr(_) => FeatureSpec::Pacrr {
                max_query_len,
                max_doc_len,
            },
        }
    }
}

type Cache = RwLock<HashMap<(String, String), Option<Arc<Features>>>>;

/// Builds features from denoised token sequences and term embeddings.
pub struct FeatureBuilder<'a> {
    spec: FeatureSpec,
    embedder: &'a dyn TokenEmbedder,
    idf: &'a IdfTable,
    queries: &'a HashMap<String, Vec<String>>,
    docs: &'a HashMap<String, Vec<String>>,
    cache: Option<Cache>,
}

impl<'a> FeatureBuilder<'a> {
    pub fn new(
        spec: FeatureSpec,
        embedder: &'a dyn TokenEmbedder,
        idf: &'a IdfTable,
        queries: &'a HashMap<String, Vec<String>>,
        docs: &'a HashMap<String, Vec<String>>,
    ) -> Self {
        Self {
            spec,
            embedder,
            idf,
            queries,
            docs,
            cache: None,
        }
    }

    /// Memoizes features per pair. Worth it for histogram features, which
    /// are small; similarity matrices can be large.
    pub fn cached(mut self) -> Self {
        self.cache = Some(RwLock::new(HashMap::new()));
        self
    }

    pub fn compute(&self, query_id: &str, doc_id: &str) -> Option<Features> {
        let q_tokens = self.queries.get(query_id)?;
        let d_tokens = self.docs.get(doc_id)?;
        let q_vecs = self.embedder.embed(query_id, q_tokens);
        let d_vecs = self.embedder.embed(doc_id, d_tokens);
        let doc: Vec<(&str, &[f32])> = d_tokens
            .iter()
            .zip(d_vecs)
            .filter_map(|(t, v)| v.map(|v| (t.as_str(), v)))
            .collect();
        match self.spec {
            FeatureSpec::Drmm { bins } => {
                let mut seen = HashSet::new();
                let mut histograms = Vec::new();
                let mut idf = Vec::new();
                for (t, v) in q_tokens.iter().zip(q_vecs) {
                    let Some(v) = v else { continue };
                    if !seen.insert(t.as_str()) {
                        continue;
                    }
                    let sims = doc.iter().map(|(dt, dv)| term_similarity(t, v, dt, dv));
                    histograms.push(histogram_from_similarities(sims, bins));
                    idf.push(self.idf.idf(t));
                }
                if idf.is_empty() {
                    return None;
                }
                Some(Features::Drmm(DrmmFeatures { histograms, idf }))
            }
            FeatureSpec::Pacrr {
                max_query_len,
                max_doc_len,
            } => {
                let query: Vec<(&str, &[f32])> = q_tokens
                    .iter()
                    .zip(q_vecs)
                    .filter_map(|(t, v)| v.map(|v| (t.as_str(), v)))
                    .take(max_query_len)
                    .collect();
                let doc = &doc[..doc.len().min(max_doc_len)];
                if query.is_empty() || doc.is_empty() {
                    return None;
                }
                let (qt, qv): (Vec<&str>, Vec<&[f32]>) = query.iter().copied().unzip();
                let (dt, dv): (Vec<&str>, Vec<&[f32]>) = doc.iter().copied().unzip();
                let idf: Vec<f64> = qt.iter().map(|t| self.idf.idf(t)).collect();
                Some(Features::Pacrr(PacrrFeatures {
                    sim: SimilarityMatrix::build(&qt, &qv, &dt, &dv),
                    idf_softmax: softmax(&idf),
                }))
            }
        }
    }
}

impl PairFeatures for FeatureBuilder<'_> {
    fn features(&self, query_id: &str, doc_id: &str) -> Option<Arc<Features>> {
        let Some(cache) = &self.cache else {
            return self.compute(query_id, doc_id).map(Arc::new);
        };
        let key = (query_id.to_string(), doc_id.to_string());
        if let Some(hit) = cache.read().expect("feature cache poisoned").get(&key) {
            return hit.clone();
        }
        let f = self.compute(query_id, doc_id).map(Arc::new);
        cache
            .write()
            .expect("feature cache poisoned")
            .insert(key, f.clone());
        f
    }
}

impl PairFeatures for HashMap<(String, String), Arc<Features>> {
    fn features(&self, query_id: &str, doc_id: &str) -> Option<Arc<Features>> {
        self.get(&(query_id.to_string(), doc_id.to_string()))
            .cloned()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::WordVectors;
    use crate::neural::WordEmbedder;
    use crate::text::StopWords;

    type Tokens = HashMap<String, Vec<String>>;

    fn setup() -> (WordEmbedder, IdfTable, Tokens, Tokens) {
        let wv = WordVectors::new(
            2,
            HashMap::from([
                ("tax".to_string(), vec![1.0, 0.0]),
                ("levy".to_string(), vec![0.8, 0.6]),
                ("fish".to_string(), vec![0.0, 2.0]),
            ]),
        );
        let toks = |s: &str| s.split(' ').map(str::to_string).collect::<Vec<_>>();
        let docs = HashMap::from([
            ("d1".to_string(), toks("tax levy oov fish")),
            ("d2".to_string(), toks("oov")),
        ]);
        let queries = HashMap::from([("q".to_string(), toks("tax oov tax fish"))]);
        let idf =
            IdfTable::build(&[toks("tax levy"), toks("fish")], &StopWords::parse("")).unwrap();
        (WordEmbedder::new(&wv), idf, queries, docs)
    }

    #[test]
    fn drmm_features_dedup_and_skip_oov() {
        let (e, idf, q, d) = setup();
        let b = FeatureBuilder::new(FeatureSpec::Drmm { bins: 2 }, &e, &idf, &q, &d);
        let Some(Features::Drmm(f)) = b.compute("q", "d1") else {
            panic!("expected drmm features")
        };
        assert_eq!(f.histograms.len(), 2);
        // tax vs [tax, levy, fish]: exact, 0.8 -> [0,1), 0 -> [0,1)
        assert_eq!(f.histograms[0], [0.0, 2f64.ln_1p(), 1f64.ln_1p()]);
        assert_eq!(f.idf, [idf.idf("tax"), idf.idf("fish")]);
        let Some(Features::Drmm(f)) = b.compute("q", "d2") else {
            panic!("expected drmm features")
        };
        assert!(f.histograms.iter().all(|h| h.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn pacrr_features_truncate() {
        let (e, idf, q, d) = setup();
        let spec = FeatureSpec::Pacrr {
            max_query_len: 2,
            max_doc_len: 2,
        };
        let b = FeatureBuilder::new(spec, &e, &idf, &q, &d).cached();
        let f = b.features("q", "d1").unwrap();
        let Features::Pacrr(f) = f.as_ref() else {
            panic!("expected pacrr features")
        };
        assert_eq!((f.sim.rows, f.sim.cols), (2, 2));
        assert_eq!(f.sim.get(1, 0), 1.0);
        assert!((f.sim.get(0, 1) - 0.8).abs() < 1e-6);
        assert!((f.idf_softmax.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(b.features("q", "d2").is_none());
        assert!(b.features("missing", "d1").is_none());
    }
}
