//! Single-turn LLM completion providers.
//!
//! [`StubLlm`] recognizes the prompts this crate renders (summaries, labels,
//! answers) and replies deterministically from token statistics of the
//! prompt, so the whole pipeline runs offline.

use std::collections::{BTreeMap, HashSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::provider::{JsonClient, ProviderError};
use crate::text::{estimate_tokens, sentences, tokenize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub max_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct Completion {
    pub text: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

pub trait LlmProvider: Send + Sync {
    fn model_id(&self) -> &str;
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, ProviderError>;
}

impl<P: LlmProvider + ?Sized> LlmProvider for &P {
    fn model_id(&self) -> &str {
        (**self).model_id()
    }
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, ProviderError> {
        (**self).complete(request)
    }
}

/// Remote completion API: `{model, prompt, max_tokens}` → `{text, input_tokens, output_tokens}`.
#[derive(Debug, Clone)]
pub struct HttpLlm {
    model: String,
    client: JsonClient,
}

#[derive(Serialize)]
struct HttpRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    max_tokens: u32,
}

impl HttpLlm {
    pub fn new(endpoint: &str, model: &str, api_key: Option<String>) -> Result<Self, ProviderError> {
        Ok(Self {
            model: model.to_string(),
            client: JsonClient::new(endpoint, api_key)?,
        })
    }
}

impl LlmProvider for HttpLlm {
    fn model_id(&self) -> &str {
        &self.model
    }

    fn complete(&self, request: &CompletionRequest) -> Result<Completion, ProviderError> {
        self.client.post(&HttpRequest {
            model: &self.model,
            prompt: &request.prompt,
            max_tokens: request.max_tokens,
        })
    }
}

/// Always answers with the same text.
#[derive(Debug, Clone)]
pub struct FixedLlm {
    pub text: String,
}

impl FixedLlm {
    pub fn new(text: impl Into<String>) -> Self {
        Self { text: text.into() }
    }
}

impl LlmProvider for FixedLlm {
    fn model_id(&self) -> &str {
        "fixed"
    }

    fn complete(&self, request: &CompletionRequest) -> Result<Completion, ProviderError> {
        Ok(Completion {
            text: self.text.clone(),
            input_tokens: estimate_tokens(&request.prompt),
            output_tokens: estimate_tokens(&self.text),
        })
    }
}

/// Counts calls and tokens passing through another provider.
pub struct CountingLlm<P> {
    inner: P,
    calls: AtomicU64,
    input_tokens: AtomicU64,
    output_tokens: AtomicU64,
}

impl<P: LlmProvider> CountingLlm<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            calls: AtomicU64::new(0),
            input_tokens: AtomicU64::new(0),
            output_tokens: AtomicU64::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn tokens(&self) -> (u64, u64) {
        (
            self.input_tokens.load(Ordering::Relaxed),
            self.output_tokens.load(Ordering::Relaxed),
        )
    }
}

impl<P: LlmProvider> LlmProvider for CountingLlm<P> {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<Completion, ProviderError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let out = self.inner.complete(request)?;
        self.input_tokens.fetch_add(out.input_tokens, Ordering::Relaxed);
        self.output_tokens.fetch_add(out.output_tokens, Ordering::Relaxed);
        Ok(out)
    }
}

/// Prompt prefixes the stub dispatches on. Kept in sync with the renderers.
pub(crate) const LEAF_PROMPT_HEAD: &str = "You are summarizing a cluster of related documents";
pub(crate) const INTERNAL_PROMPT_HEAD: &str = "You are summarizing a level-";
pub(crate) const LABEL_PROMPT_HEAD: &str = "Generate a short (2-5 word) filesystem-safe label";
pub(crate) const ANSWER_PROMPT_HEAD: &str = "Answer the question using only the documents below.";

/// Reply used whenever no evidence is available.
pub const DECLINATION: &str = "I could not find a document in the knowledge base that answers this question.";

fn stopwords() -> &'static HashSet<&'static str> {
    static WORDS: OnceLock<HashSet<&'static str>> = OnceLock::new();
    WORDS.get_or_init(|| {
        [
            "a", "an", "and", "are", "as", "at", "be", "by", "can", "for", "from", "how", "i", "in", "is", "it", "its",
            "of", "on", "or", "that", "the", "this", "to", "with", "you", "your", "was", "were", "will", "what",
            "when", "which", "who", "do", "does", // words of the stub's own summary format
            "summary", "items",
        ]
        .into_iter()
        .collect()
    })
}

/// The `k` most frequent content tokens of `text`, ties broken alphabetically.
pub fn top_tokens(text: &str, k: usize) -> Vec<String> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for t in tokenize(text) {
        if stopwords().contains(t.as_str()) || t.chars().all(|c| c.is_ascii_digit()) {
            continue;
        }
        *counts.entry(t).or_default() += 1;
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.into_iter().take(k).map(|(t, _)| t).collect()
}

/// Deterministic offline model.
///
/// Summaries are `summary of {n} items: {top-5 tokens}`, labels are the first
/// three summary tokens, answers are the first sentence of the first document.
/// Agent prompts get a greedy lexical navigation move.
#[derive(Debug, Clone, Default)]
pub struct StubLlm;

impl StubLlm {
    fn respond(prompt: &str) -> String {
        if prompt.contains(crate::navigator::PROTOCOL_HEADING) {
            crate::navigator::stub_agent_reply(prompt)
        } else if prompt.starts_with(LEAF_PROMPT_HEAD) {
            let n = number_after(prompt, "Documents (").unwrap_or(0);
            let body = section(prompt, "showing up to", "\nSummary:");
            let body: String = body
                .lines()
                .filter(|l| !l.starts_with("--- Document "))
                .collect::<Vec<_>>()
                .join("\n");
            format!("summary of {n} items: {}", top_tokens(&body, 5).join(" "))
        } else if prompt.starts_with(INTERNAL_PROMPT_HEAD) {
            let n = number_after(prompt, "grouping of ").unwrap_or(0);
            let body = section(prompt, "Sub-group summaries:", "\nOverview:");
            let body: String = body
                .lines()
                .map(|l| match l.find(": ") {
                    Some(i) if l.starts_with("- Sub-group ") => &l[i + 2..],
                    _ => l,
                })
                .collect::<Vec<_>>()
                .join("\n");
            format!("summary of {n} items: {}", top_tokens(&body, 5).join(" "))
        } else if prompt.starts_with(LABEL_PROMPT_HEAD) {
            let summary = prompt.split("Summary: ").nth(1).unwrap_or("");
            let words = match summary.split_once("items: ") {
                Some((_, rest)) if summary.starts_with("summary of ") => {
                    tokenize(rest).into_iter().take(3).collect::<Vec<_>>()
                }
                _ => top_tokens(summary, 3),
            };
            words.join(" ")
        } else if prompt.starts_with(ANSWER_PROMPT_HEAD) {
            let body = section(prompt, "--- Document 1 ---", "\n--- Document 2 ---");
            let body = body.split("\nAnswer:").next().unwrap_or("");
            // skip the "Title:" line
            let text: String = body
                .lines()
                .filter(|l| !l.starts_with("Title: ") && !l.starts_with("# "))
                .collect::<Vec<_>>()
                .join(" ");
            sentences(&text)
                .into_iter()
                .next()
                .unwrap_or_else(|| DECLINATION.to_string())
        } else {
            top_tokens(prompt, 5).join(" ")
        }
    }
}

fn number_after(text: &str, marker: &str) -> Option<usize> {
    let rest = &text[text.find(marker)? + marker.len()..];
    let digits: String = rest.chars().take_while(|c| c.is_ascii_digit()).collect();
    digits.parse().ok()
}

/// Text between the line containing `start` and the last occurrence of `end`.
fn section<'a>(text: &'a str, start: &str, end: &str) -> &'a str {
    let from = match text.find(start) {
        Some(i) => text[i..].find('\n').map(|j| i + j + 1).unwrap_or(text.len()),
        None => return "",
    };
    let to = text.rfind(end).filter(|&e| e >= from).unwrap_or(text.len());
    &text[from..to]
}

impl LlmProvider for StubLlm {
    fn model_id(&self) -> &str {
        "stub"
    }

    fn complete(&self, request: &CompletionRequest) -> Result<Completion, ProviderError> {
        let text = Self::respond(&request.prompt);
        Ok(Completion {
            input_tokens: estimate_tokens(&request.prompt),
            output_tokens: estimate_tokens(&text),
            text,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ask(prompt: &str) -> String {
        StubLlm
            .complete(&CompletionRequest {
                prompt: prompt.into(),
                max_tokens: 100,
            })
            .unwrap()
            .text
    }

    #[test]
    fn top_tokens_rank_by_count_then_name() {
        assert_eq!(
            top_tokens("bb bb aa aa cc the the the 42 42", 3),
            vec!["aa", "bb", "cc"]
        );
    }

    #[test]
    fn label_from_stub_summary() {
        let out = ask(&format!(
            "{LABEL_PROMPT_HEAD} for this cluster.\n\nSummary: summary of 4 items: kiwi mango pear plum fig"
        ));
        assert_eq!(out, "kiwi mango pear");
    }

    #[test]
    fn unknown_prompt_gets_keywords() {
        assert_eq!(ask("alpha alpha beta"), "alpha beta");
    }

    #[test]
    fn counting_wrapper() {
        let c = CountingLlm::new(FixedLlm::new("12345678"));
        c.complete(&CompletionRequest {
            prompt: "abcd".into(),
            max_tokens: 1,
        })
        .unwrap();
        assert_eq!(c.calls(), 1);
        assert_eq!(c.tokens(), (1, 2));
    }
}
