//! Flat retrieval baselines: BM25, exact dense search and reciprocal rank
//! fusion, each followed by one answer call over the top documents.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::Embedding;
use crate::llm::{CompletionRequest, LlmProvider, ANSWER_PROMPT_HEAD, DECLINATION};
use crate::provider::ProviderError;
use crate::text::tokenize;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("query has no tokens")]
    EmptyQuery,
    #[error("vector dimension {got} does not match index dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid BM25 parameters k1={k1}, b={b}")]
    InvalidParams { k1: f64, b: f64 },
    #[error("{ids} ids but {vectors} vectors")]
    Misaligned { ids: usize, vectors: usize },
    #[error("index file: {0}")]
    Serde(#[from] serde_json::Error),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

/// Documents in rank order with their scores.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub entries: Vec<(String, f64)>,
    pub k: usize,
}

impl RankedList {
    pub fn ids(&self) -> Vec<&str> {
        self.entries.iter().map(|(id, _)| id.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Sorts by score descending, then id ascending, and keeps the first `k`.
fn top_k(mut scored: Vec<(String, f64)>, k: usize) -> RankedList {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored.truncate(k);
    RankedList { entries: scored, k }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.5, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<(), BaselineError> {
        if self.k1 > 0.0 && (0.0..=1.0).contains(&self.b) {
            Ok(())
        } else {
            Err(BaselineError::InvalidParams { k1: self.k1, b: self.b })
        }
    }
}

/// Inverted index over whole documents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bm25Index {
    pub doc_ids: Vec<String>,
    pub doc_lengths: Vec<u32>,
    /// token → (document position, term frequency), positions ascending
    pub postings: BTreeMap<String, Vec<(u32, u32)>>,
    pub avg_doc_length: f64,
}

impl Bm25Index {
    /// Indexes `(id, text)` pairs with the shared tokenizer.
    pub fn build<'a>(docs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        let mut doc_ids = Vec::new();
        let mut doc_lengths = Vec::new();
        let mut postings: BTreeMap<String, Vec<(u32, u32)>> = BTreeMap::new();
        for (pos, (id, text)) in docs.into_iter().enumerate() {
            let tokens = tokenize(text);
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in &tokens {
                *tf.entry(t.clone()).or_default() += 1;
            }
            for (t, n) in tf {
                postings.entry(t).or_default().push((pos as u32, n));
            }
            doc_ids.push(id.to_string());
            doc_lengths.push(tokens.len() as u32);
        }
        let total: u64 = doc_lengths.iter().map(|&l| l as u64).sum();
        let avg_doc_length = if doc_ids.is_empty() {
            0.0
        } else {
            total as f64 / doc_ids.len() as f64
        };
        Self {
            doc_ids,
            doc_lengths,
            postings,
            avg_doc_length,
        }
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    /// `ln(1 + (N - df + 0.5) / (df + 0.5))`, always positive.
    pub fn idf(&self, token: &str) -> f64 {
        let n = self.len() as f64;
        let df = self.postings.get(token).map_or(0, |p| p.len()) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// Okapi BM25 over query tokens (repeats count again). Only documents
    /// sharing at least one token with the query are returned.
    pub fn search(&self, query: &str, k: usize, params: &Bm25Params) -> Result<RankedList, BaselineError> {
        params.validate()?;
        let q = tokenize(query);
        if q.is_empty() {
            return Err(BaselineError::EmptyQuery);
        }
        let mut scores: BTreeMap<u32, f64> = BTreeMap::new();
        let avgdl = if self.avg_doc_length > 0.0 {
            self.avg_doc_length
        } else {
            1.0
        };
        for t in &q {
            let Some(post) = self.postings.get(t) else { continue };
            let idf = self.idf(t);
            for &(pos, tf) in post {
                let tf = tf as f64;
                let dl = self.doc_lengths[pos as usize] as f64;
                let norm = params.k1 * (1.0 - params.b + params.b * dl / avgdl);
                *scores.entry(pos).or_default() += idf * tf * (params.k1 + 1.0) / (tf + norm);
            }
        }
        let scored = scores
            .into_iter()
            .filter(|&(_, s)| s > 0.0)
            .map(|(pos, s)| (self.doc_ids[pos as usize].clone(), s))
            .collect();
        Ok(top_k(scored, k))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("index serializes")
    }

    pub fn from_json(json: &str) -> Result<Self, BaselineError> {
        Ok(serde_json::from_str(json)?)
    }
}

/// Brute-force cosine index over unit vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseIndex {
    pub doc_ids: Vec<String>,
    pub vectors: Vec<Embedding>,
}

impl DenseIndex {
    pub fn new(doc_ids: Vec<String>, vectors: Vec<Embedding>) -> Result<Self, BaselineError> {
        if doc_ids.len() != vectors.len() {
            return Err(BaselineError::Misaligned {
                ids: doc_ids.len(),
                vectors: vectors.len(),
            });
        }
        if let Some(first) = vectors.first() {
            if let Some(bad) = vectors.iter().find(|v| v.dim() != first.dim()) {
                return Err(BaselineError::DimensionMismatch {
                    expected: first.dim(),
                    got: bad.dim(),
                });
            }
        }
        Ok(Self { doc_ids, vectors })
    }

    pub fn dim(&self) -> Option<usize> {
        self.vectors.first().map(Embedding::dim)
    }

    pub fn search(&self, query: &Embedding, k: usize) -> Result<RankedList, BaselineError> {
        dense_search(&self.doc_ids, &self.vectors, query, k)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("index serializes")
    }

    pub fn from_json(json: &str) -> Result<Self, BaselineError> {
        Ok(serde_json::from_str(json)?)
    }
}

/// Exact top-`k` by dot product; `k` larger than the corpus returns everything.
pub fn dense_search(
    ids: &[String],
    vectors: &[Embedding],
    query: &Embedding,
    k: usize,
) -> Result<RankedList, BaselineError> {
    let scored = ids
        .iter()
        .zip(vectors)
        .map(|(id, v)| {
            if v.dim() != query.dim() {
                Err(BaselineError::DimensionMismatch {
                    expected: v.dim(),
                    got: query.dim(),
                })
            } else {
                Ok((id.clone(), v.dot(query)))
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(top_k(scored, k))
}

pub const RRF_K: f64 = 60.0;
pub const RRF_WEIGHT: f64 = 0.5;

/// Reciprocal rank fusion with equal weights: `Σ 0.5 / (k_rrf + rank)`, ranks from 1.
pub fn rrf_fuse(a: &RankedList, b: &RankedList, k_rrf: f64, depth: usize) -> RankedList {
    let mut scores: BTreeMap<&str, f64> = BTreeMap::new();
    for list in [a, b] {
        for (rank, (id, _)) in list.entries.iter().enumerate() {
            *scores.entry(id.as_str()).or_default() += RRF_WEIGHT / (k_rrf + (rank + 1) as f64);
        }
    }
    top_k(scores.into_iter().map(|(id, s)| (id.to_string(), s)).collect(), depth)
}

/// A document handed to the answer call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextDoc {
    pub title: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SingleShotAnswer {
    pub text: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

pub fn render_answer_prompt(query: &str, docs: &[ContextDoc]) -> String {
    let mut out = format!("{ANSWER_PROMPT_HEAD} If they do not contain the answer, say so.\n\nQuestion: {query}\n");
    for (i, d) in docs.iter().enumerate() {
        out.push_str(&format!(
            "\n--- Document {} ---\nTitle: {}\n{}\n",
            i + 1,
            d.title,
            d.text.trim_end()
        ));
    }
    out.push_str("\nAnswer:");
    out
}

/// One completion over the documents in rank order. No documents means no call.
pub fn single_shot_answer(
    query: &str,
    docs: &[ContextDoc],
    llm: &dyn LlmProvider,
    max_tokens: u32,
) -> Result<SingleShotAnswer, BaselineError> {
    if docs.is_empty() {
        return Ok(SingleShotAnswer {
            text: DECLINATION.to_string(),
            input_tokens: 0,
            output_tokens: 0,
        });
    }
    let out = llm.complete(&CompletionRequest {
        prompt: render_answer_prompt(query, docs),
        max_tokens,
    })?;
    Ok(SingleShotAnswer {
        text: out.text.trim().to_string(),
        input_tokens: out.input_tokens,
        output_tokens: out.output_tokens,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::normalize_l2;
    use crate::llm::{CountingLlm, StubLlm};
    use proptest::prelude::*;

    fn fixture() -> Bm25Index {
        Bm25Index::build([
            ("a", "liability shift for card payments"),
            ("b", "card payments and refunds"),
            ("c", "restaurant menu dishes"),
        ])
    }

    #[test]
    fn bm25_hand_computed() {
        // N=3, avgdl=4; "liability" and "shift" each occur once, only in doc a (dl=5)
        let idx = fixture();
        let r = idx.search("liability shift", 5, &Bm25Params::default()).unwrap();
        assert_eq!(r.ids(), vec!["a"]);
        assert!((r.entries[0].1 - 1.7632885447401823).abs() < 1e-12);
    }

    #[test]
    fn bm25_edge_cases() {
        let idx = fixture();
        assert!(idx.search("zebra", 5, &Bm25Params::default()).unwrap().is_empty());
        assert!(matches!(
            idx.search(" ,, ", 5, &Bm25Params::default()),
            Err(BaselineError::EmptyQuery)
        ));
        let twins = Bm25Index::build([("z", "same words"), ("y", "same words")]);
        assert_eq!(
            twins.search("same", 5, &Bm25Params::default()).unwrap().ids(),
            vec!["y", "z"]
        );
        assert!(idx.search("card", 5, &Bm25Params { k1: 0.0, b: 0.5 }).is_err());
    }

    #[test]
    fn bm25_json_round_trip() {
        let idx = fixture();
        assert_eq!(Bm25Index::from_json(&idx.to_json()).unwrap(), idx);
    }

    fn unit(v: &[f64]) -> Embedding {
        normalize_l2(v).unwrap()
    }

    #[test]
    fn dense_self_match_and_clamp() {
        let ids: Vec<String> = vec!["p".into(), "q".into()];
        let vs = vec![unit(&[1.0, 0.0]), unit(&[0.6, 0.8])];
        let idx = DenseIndex::new(ids, vs.clone()).unwrap();
        let r = idx.search(&vs[1], 10).unwrap();
        assert_eq!(r.ids(), vec!["q", "p"]);
        assert!((r.entries[0].1 - 1.0).abs() < 1e-12);
        assert!(matches!(
            idx.search(&unit(&[1.0, 0.0, 0.0]), 1),
            Err(BaselineError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn rrf_formula() {
        let a = RankedList {
            entries: vec![("x".into(), 9.0), ("y".into(), 1.0), ("w".into(), 0.5)],
            k: 3,
        };
        let b = RankedList {
            entries: vec![("x".into(), 0.3)],
            k: 3,
        };
        let f = rrf_fuse(&a, &b, RRF_K, 10);
        assert_eq!(f.entries[0], ("x".to_string(), 1.0 / 61.0));
        assert_eq!(f.entries[2], ("w".to_string(), 0.5 / 63.0));
        assert!(rrf_fuse(&RankedList::default(), &RankedList::default(), RRF_K, 5).is_empty());
    }

    #[test]
    fn answer_prompt_keeps_rank_order() {
        let docs: Vec<ContextDoc> = (1..=5)
            .map(|i| ContextDoc {
                title: format!("T{i}"),
                text: format!("Doc {i} says {}.", "x".repeat(3000)),
            })
            .collect();
        let p = render_answer_prompt("q", &docs);
        let pos: Vec<usize> = (1..=5)
            .map(|i| p.find(&format!("--- Document {i} ---")).unwrap())
            .collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
        let a = single_shot_answer("q", &docs[..1], &StubLlm, 100).unwrap();
        assert!(a.text.starts_with("Doc 1 says"));
    }

    #[test]
    fn no_docs_no_call() {
        let llm = CountingLlm::new(StubLlm);
        let a = single_shot_answer("q", &[], &llm, 100).unwrap();
        assert_eq!(a.text, DECLINATION);
        assert_eq!(llm.calls(), 0);
    }

    proptest! {
        #[test]
        fn dense_matches_full_sort(seed in proptest::collection::vec(-1.0f64..1.0, 8..160)) {
            let dim = 4;
            let n = seed.len() / dim;
            let vecs: Vec<Embedding> = (0..n)
                .filter_map(|i| normalize_l2(&seed[i * dim..(i + 1) * dim]).ok())
                .collect();
            let ids: Vec<String> = (0..vecs.len()).map(|i| format!("d{i:03}")).collect();
            prop_assume!(vecs.len() > 1);
            let q = vecs[0].clone();
            let r = dense_search(&ids, &vecs, &q, 5).unwrap();
            let mut all: Vec<(String, f64)> = ids.iter().cloned().zip(vecs.iter().map(|v| v.dot(&q))).collect();
            all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            all.truncate(5);
            prop_assert_eq!(r.entries, all);
        }

        #[test]
        fn rrf_symmetric_and_rank_only(n in 0usize..12, m in 0usize..12, scale in 0.1f64..100.0) {
            let a = RankedList { entries: (0..n).map(|i| (format!("a{i}"), (n - i) as f64)).collect(), k: n };
            let b = RankedList { entries: (0..m).map(|i| (format!("a{}", i * 2), (m - i) as f64)).collect(), k: m };
            prop_assert_eq!(rrf_fuse(&a, &b, RRF_K, 20), rrf_fuse(&b, &a, RRF_K, 20));
            let scaled = RankedList { entries: a.entries.iter().map(|(id, s)| (id.clone(), s * scale)).collect(), k: n };
            prop_assert_eq!(rrf_fuse(&a, &b, RRF_K, 20), rrf_fuse(&scaled, &b, RRF_K, 20));
        }

        #[test]
        fn bm25_zero_for_non_matching(q in "[a-e]{1,3}( [a-e]{1,3}){0,3}") {
            let idx = Bm25Index::build([("1", "aa bb"), ("2", "cc dd ee"), ("3", "zz yy")]);
            let r = idx.search(&q, 10, &Bm25Params::default()).unwrap();
            let qt = tokenize(&q);
            for (id, s) in r.entries {
                let text = match id.as_str() { "1" => "aa bb", "2" => "cc dd ee", _ => "zz yy" };
                prop_assert!(s > 0.0);
                prop_assert!(tokenize(text).iter().any(|t| qt.contains(t)));
            }
        }
    }
}
