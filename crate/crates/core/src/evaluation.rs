//! Answer metrics, context standardization, cost accounting and report output.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{CompletionRequest, LlmProvider};
use crate::provider::ProviderError;
use crate::text::{char_len, tokenize, truncate_chars};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("gold answer has no tokens")]
    EmptyGold,
    #[error("gold answer has fewer than {n} tokens")]
    GoldTooShort { n: usize },
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Clipped overlap: Σ min(count in a, count in b).
fn clipped_matches(a: &HashMap<&[String], usize>, b: &HashMap<&[String], usize>) -> usize {
    a.iter().map(|(g, &c)| c.min(b.get(g).copied().unwrap_or(0))).sum()
}

/// `(overlap, pred_len, gold_len)` over token multisets.
pub fn f1_counts(pred: &str, gold: &str) -> (usize, usize, usize) {
    let p = tokenize(pred);
    let g = tokenize(gold);
    let overlap = clipped_matches(&ngram_counts(&p, 1), &ngram_counts(&g, 1));
    (overlap, p.len(), g.len())
}

/// Harmonic mean of token precision and recall, `2·overlap / (|pred| + |gold|)`.
pub fn token_f1(pred: &str, gold: &str) -> Result<f64, EvalError> {
    let (o, lp, lg) = f1_counts(pred, gold);
    if lg == 0 {
        return Err(EvalError::EmptyGold);
    }
    if o == 0 {
        return Ok(0.0);
    }
    Ok(2.0 * o as f64 / (lp + lg) as f64)
}

pub const BLEU_EPSILON: f64 = 1e-9;

/// Sentence BLEU with uniform weights over 1..=`max_n` grams.
///
/// A zero match count is replaced by [`BLEU_EPSILON`] so the geometric mean
/// stays defined. Brevity penalty `exp(1 - r/c)` applies when the prediction
/// is shorter than the gold answer.
pub fn bleu(pred: &str, gold: &str, max_n: usize) -> Result<f64, EvalError> {
    let p = tokenize(pred);
    let g = tokenize(gold);
    if g.is_empty() {
        return Err(EvalError::EmptyGold);
    }
    if p.is_empty() || max_n == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let matches = clipped_matches(&ngram_counts(&p, n), &ngram_counts(&g, n));
        let total = (p.len() + 1).saturating_sub(n).max(1);
        let m = if matches == 0 { BLEU_EPSILON } else { matches as f64 };
        log_sum += (m / total as f64).ln();
    }
    let (c, r) = (p.len() as f64, g.len() as f64);
    let bp = if c < r { (1.0 - r / c).exp() } else { 1.0 };
    Ok((bp * (log_sum / max_n as f64).exp()).clamp(0.0, 1.0))
}

/// `(matches, gold n-gram count)`.
pub fn rouge_counts(pred: &str, gold: &str, n: usize) -> Result<(usize, usize), EvalError> {
    let p = tokenize(pred);
    let g = tokenize(gold);
    if n == 0 || g.len() < n {
        return Err(EvalError::GoldTooShort { n });
    }
    let gc = ngram_counts(&g, n);
    let m = clipped_matches(&gc, &ngram_counts(&p, n));
    Ok((m, g.len() + 1 - n))
}

/// N-gram recall against the gold answer.
pub fn rouge_n(pred: &str, gold: &str, n: usize) -> Result<f64, EvalError> {
    let (m, total) = rouge_counts(pred, gold, n)?;
    Ok(m as f64 / total as f64)
}

pub const CONTEXT_DOCS: usize = 5;
pub const CONTEXT_CHARS: usize = 8_000;
pub const CONTEXT_SEPARATOR: &str = "\n\n----------\n\n";

/// Last five documents, joined by a dashed line, cut to 8,000 characters.
pub fn standardize_context<S: AsRef<str>>(docs: &[S]) -> String {
    let start = docs.len().saturating_sub(CONTEXT_DOCS);
    let joined = docs[start..]
        .iter()
        .map(|d| d.as_ref())
        .collect::<Vec<_>>()
        .join(CONTEXT_SEPARATOR);
    truncate_chars(&joined, CONTEXT_CHARS).to_string()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostLedger {
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub cache_read_tokens: u64,
    pub cache_write_tokens: u64,
    pub turns: u32,
}

/// Prices in dollars per million tokens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceTable {
    pub input_per_mtok: f64,
    pub output_per_mtok: f64,
    pub cache_read_mult: f64,
    pub cache_write_mult: f64,
}

impl Default for PriceTable {
    fn default() -> Self {
        Self {
            input_per_mtok: 3.0,
            output_per_mtok: 15.0,
            cache_read_mult: 0.1,
            cache_write_mult: 1.25,
        }
    }
}

/// Dollars for one ledger. Cache reads and writes bill at multiples of the input rate.
pub fn compute_cost(l: &CostLedger, p: &PriceTable) -> f64 {
    let micro = l.input_tokens as f64 * p.input_per_mtok
        + (l.cache_read_tokens as f64 * p.input_per_mtok) * p.cache_read_mult
        + (l.cache_write_tokens as f64 * p.input_per_mtok) * p.cache_write_mult
        + l.output_tokens as f64 * p.output_per_mtok;
    micro / 1e6
}

/// Judge prompt templates. Placeholders: `{question}`, `{answer}`, `{gold}`, `{context}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgePrompts {
    pub factuality: String,
    pub context_recall: String,
}

impl Default for JudgePrompts {
    fn default() -> Self {
        Self {
            factuality: "Rate from 1 to 5 how factually consistent the answer is with the reference answer. \
Ignore style; judge only the claims.\n\nQuestion: {question}\n\nReference answer: {gold}\n\nAnswer: {answer}\n\n\
Reply with a single integer from 1 to 5."
                .to_string(),
            context_recall: "Rate from 1 to 5 how many of the essential claims in the reference answer can be \
attributed to the context.\n\nQuestion: {question}\n\nReference answer: {gold}\n\nContext:\n{context}\n\n\
Reply with a single integer from 1 to 5."
                .to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct JudgeScores {
    pub factuality: Option<f64>,
    pub context_recall: Option<f64>,
}

/// First standalone digit 1–5 in the reply, mapped to `(s - 1) / 4`.
pub fn parse_judgment(reply: &str) -> Option<f64> {
    let b = reply.as_bytes();
    (0..b.len()).find_map(|i| {
        let d = b[i];
        let alone =
            (i == 0 || !b[i - 1].is_ascii_alphanumeric()) && (i + 1 == b.len() || !b[i + 1].is_ascii_alphanumeric());
        (alone && (b'1'..=b'5').contains(&d)).then(|| (d - b'1') as f64 / 4.0)
    })
}

fn fill(template: &str, question: &str, answer: &str, gold: &str, context: &str) -> String {
    template
        .replace("{question}", question)
        .replace("{answer}", answer)
        .replace("{gold}", gold)
        .replace("{context}", context)
}

/// Asks twice at most; an unparseable second reply leaves the score missing.
fn judge_once(prompt: &str, judge: &dyn LlmProvider) -> Result<Option<f64>, EvalError> {
    for _ in 0..2 {
        let out = judge.complete(&CompletionRequest {
            prompt: prompt.to_string(),
            max_tokens: 8,
        })?;
        if let Some(s) = parse_judgment(&out.text) {
            return Ok(Some(s));
        }
        log::warn!("unparseable judgment {:?}", out.text);
    }
    Ok(None)
}

pub fn judge_scores(
    question: &str,
    answer: &str,
    gold: &str,
    context: &str,
    judge: &dyn LlmProvider,
    prompts: &JudgePrompts,
) -> Result<JudgeScores, EvalError> {
    Ok(JudgeScores {
        factuality: judge_once(&fill(&prompts.factuality, question, answer, gold, context), judge)?,
        context_recall: judge_once(&fill(&prompts.context_recall, question, answer, gold, context), judge)?,
    })
}

/// One evaluated query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query_id: String,
    pub query: String,
    pub method: String,
    pub gold_doc_id: Option<String>,
    pub hit: bool,
    pub answer: String,
    /// Space-separated, in retrieval order.
    pub retrieved_doc_ids: String,
    pub token_f1: f64,
    pub bleu: f64,
    pub rouge1: f64,
    pub rouge2: f64,
    pub factuality: Option<f64>,
    pub context_recall: Option<f64>,
    pub turns: u32,
    pub views_before_document: Option<u32>,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub cache_read_tokens: u64,
    pub cache_write_tokens: u64,
    pub cost_usd: f64,
}

/// Scores `answer` against `gold`. Gold answers too short for a metric score 0 on it.
pub fn lexical_scores(answer: &str, gold: &str) -> (f64, f64, f64, f64) {
    (
        token_f1(answer, gold).unwrap_or(0.0),
        bleu(answer, gold, 4).unwrap_or(0.0),
        rouge_n(answer, gold, 1).unwrap_or(0.0),
        rouge_n(answer, gold, 2).unwrap_or(0.0),
    )
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub queries: usize,
    pub hit_rate: f64,
    pub token_f1: f64,
    pub bleu: f64,
    pub rouge1: f64,
    pub rouge2: f64,
    pub factuality: Option<f64>,
    pub context_recall: Option<f64>,
    pub turns: f64,
    pub input_tokens: f64,
    pub output_tokens: f64,
    pub cost_per_query: f64,
    pub total_cost: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub records: Vec<QueryRecord>,
    pub aggregates: Aggregates,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

fn mean_present(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = xs.flatten().collect();
    (!v.is_empty()).then(|| mean(v.into_iter()))
}

impl EvalReport {
    pub fn new(method: &str, records: Vec<QueryRecord>) -> Self {
        let r = &records;
        let aggregates = Aggregates {
            queries: r.len(),
            hit_rate: mean(r.iter().map(|x| if x.hit { 1.0 } else { 0.0 })),
            token_f1: mean(r.iter().map(|x| x.token_f1)),
            bleu: mean(r.iter().map(|x| x.bleu)),
            rouge1: mean(r.iter().map(|x| x.rouge1)),
            rouge2: mean(r.iter().map(|x| x.rouge2)),
            factuality: mean_present(r.iter().map(|x| x.factuality)),
            context_recall: mean_present(r.iter().map(|x| x.context_recall)),
            turns: mean(r.iter().map(|x| x.turns as f64)),
            input_tokens: mean(
                r.iter()
                    .map(|x| (x.input_tokens + x.cache_read_tokens + x.cache_write_tokens) as f64),
            ),
            output_tokens: mean(r.iter().map(|x| x.output_tokens as f64)),
            cost_per_query: mean(r.iter().map(|x| x.cost_usd)),
            total_cost: r.iter().map(|x| x.cost_usd).sum(),
        };
        Self {
            method: method.to_string(),
            records,
            aggregates,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_csv(&self) -> Result<String, EvalError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        if self.records.is_empty() {
            w.write_record([
                "query_id",
                "query",
                "method",
                "gold_doc_id",
                "hit",
                "answer",
                "retrieved_doc_ids",
                "token_f1",
                "bleu",
                "rouge1",
                "rouge2",
                "factuality",
                "context_recall",
                "turns",
                "views_before_document",
                "input_tokens",
                "output_tokens",
                "cache_read_tokens",
                "cache_write_tokens",
                "cost_usd",
            ])?;
        }
        for r in &self.records {
            w.serialize(r)?;
        }
        let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Fixed-width summary line set for terminals.
    pub fn summary_table(&self) -> String {
        let a = &self.aggregates;
        let opt = |x: Option<f64>| x.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"));
        format!(
            "{:<10} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6} {:>10} {:>9}\n\
             {:<10} {:>6.3} {:>6.3} {:>6.3} {:>6.3} {:>6} {:>6} {:>6.3} {:>6.2} {:>10.0} {:>9.4}\n",
            "method",
            "F1",
            "BLEU",
            "R-1",
            "R-2",
            "Fact",
            "CtxR",
            "Hit",
            "Turns",
            "Input tok",
            "$/query",
            self.method,
            a.token_f1,
            a.bleu,
            a.rouge1,
            a.rouge2,
            opt(a.factuality),
            opt(a.context_recall),
            a.hit_rate,
            a.turns,
            a.input_tokens,
            a.cost_per_query,
        )
    }
}

/// Characters of context the judge receives for `docs`.
pub fn context_len<S: AsRef<str>>(docs: &[S]) -> usize {
    char_len(&standardize_context(docs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::FixedLlm;
    use proptest::prelude::*;

    #[test]
    fn f1_examples() {
        assert_eq!(token_f1("The cat", "the  cat").unwrap(), 1.0);
        assert!((token_f1("a b c", "a b d").unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(token_f1("", "a").unwrap(), 0.0);
        assert!(matches!(token_f1("a", " .. "), Err(EvalError::EmptyGold)));
    }

    #[test]
    fn bleu_reference_values() {
        let ten = "one two three four five six seven eight nine ten";
        assert!((bleu(ten, ten, 4).unwrap() - 1.0).abs() < 1e-12);
        assert!(bleu("x y z", "a b c d", 4).unwrap() < 1e-6);
        // values from an independent implementation of the same smoothing
        assert!((bleu("the cat", "the cat sat down", 4).unwrap() - 1.16333693845168e-05).abs() < 1e-12);
        assert!((bleu("a b c d e", "a b c x e f", 4).unwrap() - 0.0023394743548827705).abs() < 1e-12);
    }

    #[test]
    fn rouge_examples() {
        assert!((rouge_n("a b", "a b c", 1).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(rouge_n("a b", "a b c", 2).unwrap(), 0.5);
        assert_eq!(rouge_n("x y", "a b c", 1).unwrap(), 0.0);
        assert!(matches!(rouge_n("a", "a", 2), Err(EvalError::GoldTooShort { n: 2 })));
    }

    #[test]
    fn context_standardization() {
        let docs: Vec<String> = (1..=7).map(|i| format!("doc{i}")).collect();
        let c = standardize_context(&docs);
        assert!(!c.contains("doc2") && c.contains("doc3") && c.contains("doc7"));
        let big: Vec<String> = (0..3).map(|i| i.to_string().repeat(4000)).collect();
        assert_eq!(standardize_context(&big).chars().count(), 8000);
        assert_eq!(standardize_context(&["a", "b"]), format!("a{CONTEXT_SEPARATOR}b"));
        assert_eq!(standardize_context::<&str>(&[]), "");
    }

    #[test]
    fn cost_examples() {
        let p = PriceTable::default();
        assert_eq!(compute_cost(&CostLedger::default(), &p), 0.0);
        let l = CostLedger {
            input_tokens: 1000,
            cache_read_tokens: 10_000,
            cache_write_tokens: 2000,
            output_tokens: 500,
            turns: 3,
        };
        assert_eq!(compute_cost(&l, &p), 0.021);
    }

    #[test]
    fn judge_normalization() {
        let p = JudgePrompts::default();
        let s = judge_scores("q", "a", "g", "c", &FixedLlm::new("5"), &p).unwrap();
        assert_eq!(s.factuality, Some(1.0));
        assert_eq!(
            judge_scores("q", "a", "g", "c", &FixedLlm::new("Score: 1"), &p)
                .unwrap()
                .context_recall,
            Some(0.0)
        );
        assert_eq!(parse_judgment("3"), Some(0.5));
        assert_eq!(parse_judgment("about 42 or 7"), None);
        assert_eq!(
            judge_scores("q", "a", "g", "c", &FixedLlm::new("n/a"), &p)
                .unwrap()
                .factuality,
            None
        );
    }

    #[test]
    fn report_outputs() {
        let rec = |hit: bool, f1: f64| QueryRecord {
            query_id: "q1".into(),
            query: "what, \"exactly\"?".into(),
            method: "bm25".into(),
            gold_doc_id: Some("0123456789abcdef".into()),
            hit,
            answer: "x".into(),
            retrieved_doc_ids: "0123456789abcdef".into(),
            token_f1: f1,
            bleu: 0.0,
            rouge1: 0.0,
            rouge2: 0.0,
            factuality: None,
            context_recall: None,
            turns: 1,
            views_before_document: None,
            input_tokens: 10,
            output_tokens: 2,
            cache_read_tokens: 0,
            cache_write_tokens: 0,
            cost_usd: 0.5,
        };
        let r = EvalReport::new("bm25", vec![rec(true, 1.0), rec(false, 0.0)]);
        assert_eq!(r.aggregates.hit_rate, 0.5);
        assert_eq!(r.aggregates.token_f1, 0.5);
        assert_eq!(r.aggregates.total_cost, 1.0);
        let csv = r.to_csv().unwrap();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with("query_id,query,method"));
        let empty = EvalReport::new("bm25", vec![]);
        assert_eq!(empty.to_csv().unwrap().lines().count(), 1);
        assert!(empty.summary_table().contains("$/query"));
    }

    proptest! {
        #[test]
        fn metrics_bounded_and_symmetric(a in "[a-d ]{1,30}", b in "[a-d ]{1,30}") {
            prop_assume!(!tokenize(&a).is_empty() && !tokenize(&b).is_empty());
            let f = token_f1(&a, &b).unwrap();
            prop_assert!((0.0..=1.0).contains(&f));
            prop_assert_eq!(f, token_f1(&b, &a).unwrap());
            prop_assert_eq!(f, token_f1(&format!("  {a} "), &format!("\n{b}\t")).unwrap());
            let bl = bleu(&a, &b, 4).unwrap();
            prop_assert!((0.0..=1.0).contains(&bl));
            prop_assert_eq!(rouge_n(&b, &b, 1).unwrap(), 1.0);
            prop_assert!((0.0..=1.0).contains(&rouge_n(&a, &b, 1).unwrap()));
        }

        #[test]
        fn cost_is_linear(i in 0u64..100_000, o in 0u64..100_000, r in 0u64..100_000, w in 0u64..100_000) {
            let p = PriceTable::default();
            let l = CostLedger { input_tokens: i, output_tokens: o, cache_read_tokens: r, cache_write_tokens: w, turns: 0 };
            let parts = [
                CostLedger { input_tokens: i, ..Default::default() },
                CostLedger { output_tokens: o, ..Default::default() },
                CostLedger { cache_read_tokens: r, ..Default::default() },
                CostLedger { cache_write_tokens: w, ..Default::default() },
            ];
            let sum: f64 = parts.iter().map(|x| compute_cost(x, &p)).sum();
            prop_assert!((compute_cost(&l, &p) - sum).abs() < 1e-12);
        }

        #[test]
        fn context_never_exceeds_window(docs in proptest::collection::vec(".{0,3000}", 0..9)) {
            prop_assert!(context_len(&docs) <= CONTEXT_CHARS);
        }
    }
}
