//! Cluster summaries and directory labels.
//!
//! Prompt text is fixed; given the same inputs and config every rendered
//! prompt is byte-identical.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Document;
use crate::llm::{CompletionRequest, LlmProvider, LABEL_PROMPT_HEAD, LEAF_PROMPT_HEAD};
use crate::provider::ProviderError;
use crate::text::truncate_chars;

/// Label used when a model reply sanitizes to nothing.
pub const FALLBACK_LABEL: &str = "group";

#[derive(Debug, Error)]
pub enum SummarizeError {
    #[error("nothing to summarize")]
    EmptyInput,
    #[error("internal summaries start at level 2, got {0}")]
    InvalidLevel(u32),
    #[error("label is empty after sanitizing")]
    EmptyLabel,
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummarizationConfig {
    pub leaf_max_docs: usize,
    pub leaf_doc_trunc: usize,
    pub internal_max_children: usize,
    pub internal_child_trunc: usize,
    pub label_summary_trunc: usize,
    pub label_max_len: usize,
    pub concurrency: usize,
    pub max_tokens: u32,
}

impl Default for SummarizationConfig {
    fn default() -> Self {
        Self {
            leaf_max_docs: 15,
            leaf_doc_trunc: 600,
            internal_max_children: 20,
            internal_child_trunc: 300,
            label_summary_trunc: 500,
            label_max_len: 50,
            concurrency: 20,
            max_tokens: 300,
        }
    }
}

/// Prompt for a level-1 cluster; `total` is the full cluster size.
pub fn render_leaf_prompt(docs: &[&str], total: usize, cfg: &SummarizationConfig) -> String {
    let mut p = String::new();
    p.push_str(LEAF_PROMPT_HEAD);
    p.push_str(
        " from a knowledge base. Write a 2-3 sentence summary that captures:\n\
         1. The common TOPIC area these documents cover\n\
         2. The types of QUESTIONS these documents answer\n\
         3. Key TERMS or features mentioned across documents\n\
         \n\
         Be specific and concrete. Name actual features, products, or processes.\n\
         \n",
    );
    p.push_str(&format!(
        "Documents ({total} total, showing up to {}):\n\n",
        cfg.leaf_max_docs
    ));
    for (i, text) in docs.iter().take(cfg.leaf_max_docs).enumerate() {
        p.push_str(&format!(
            "--- Document {} ---\n{}\n\n",
            i + 1,
            truncate_chars(text, cfg.leaf_doc_trunc)
        ));
    }
    p.push_str("Summary:");
    p
}

/// Prompt for a level-`level` node over its children's summaries.
pub fn render_internal_prompt(children: &[&str], level: u32, cfg: &SummarizationConfig) -> String {
    let mut p = format!(
        "You are summarizing a level-{level} grouping of {} sub-groups from a knowledge base. \
         Each sub-group already has a summary below.\n\
         \n\
         Write a 2-3 sentence overview that captures:\n\
         1. The broad DOMAIN these sub-groups cover\n\
         2. The range of TOPICS within this domain\n\
         3. What types of user QUESTIONS this group can answer\n\
         \n\
         Be specific -- name the main product areas, features, or workflows.\n\
         \n\
         Sub-group summaries:\n\n",
        children.len()
    );
    for (i, s) in children.iter().take(cfg.internal_max_children).enumerate() {
        p.push_str(&format!(
            "- Sub-group {}: {}\n",
            i + 1,
            truncate_chars(s, cfg.internal_child_trunc)
        ));
    }
    p.push_str("\nOverview:");
    p
}

pub fn render_label_prompt(summary: &str, cfg: &SummarizationConfig) -> String {
    format!(
        "{LABEL_PROMPT_HEAD} for this cluster. Use lowercase, hyphens instead of spaces. \
         No quotes.\n\nSummary: {}",
        truncate_chars(summary, cfg.label_summary_trunc)
    )
}

fn complete(provider: &dyn LlmProvider, prompt: String, cfg: &SummarizationConfig) -> Result<String, ProviderError> {
    let out = provider.complete(&CompletionRequest {
        prompt,
        max_tokens: cfg.max_tokens,
    })?;
    Ok(out.text.trim().to_string())
}

/// Summarizes a leaf cluster. `docs` should already be in representative order.
pub fn summarize_leaf_cluster(
    docs: &[&Document],
    cfg: &SummarizationConfig,
    provider: &dyn LlmProvider,
) -> Result<String, SummarizeError> {
    if docs.is_empty() {
        return Err(SummarizeError::EmptyInput);
    }
    let texts: Vec<&str> = docs.iter().map(|d| d.text.as_str()).collect();
    Ok(complete(provider, render_leaf_prompt(&texts, docs.len(), cfg), cfg)?)
}

pub fn summarize_internal(
    child_summaries: &[&str],
    level: u32,
    cfg: &SummarizationConfig,
    provider: &dyn LlmProvider,
) -> Result<String, SummarizeError> {
    if child_summaries.is_empty() {
        return Err(SummarizeError::EmptyInput);
    }
    if level < 2 {
        return Err(SummarizeError::InvalidLevel(level));
    }
    Ok(complete(
        provider,
        render_internal_prompt(child_summaries, level, cfg),
        cfg,
    )?)
}

/// Lowercase, collapse non-`[a-z0-9]` runs into one hyphen, strip edge hyphens, cap the length.
pub fn sanitize_label(raw: &str, max_len: usize) -> Result<String, SummarizeError> {
    let mut out = String::with_capacity(raw.len());
    let mut pending_hyphen = false;
    for c in raw.chars().flat_map(char::to_lowercase) {
        if c.is_ascii_lowercase() || c.is_ascii_digit() {
            if pending_hyphen && !out.is_empty() {
                out.push('-');
            }
            pending_hyphen = false;
            out.push(c);
        } else {
            pending_hyphen = true;
        }
    }
    // ASCII only past this point, so byte truncation is char truncation.
    out.truncate(max_len);
    let trimmed = out.trim_end_matches('-');
    if trimmed.is_empty() {
        return Err(SummarizeError::EmptyLabel);
    }
    Ok(trimmed.to_string())
}

/// Asks the model for a label and sanitizes it, falling back to [`FALLBACK_LABEL`].
pub fn make_label(
    summary: &str,
    provider: &dyn LlmProvider,
    cfg: &SummarizationConfig,
) -> Result<String, SummarizeError> {
    let reply = complete(provider, render_label_prompt(summary, cfg), cfg)?;
    match sanitize_label(&reply, cfg.label_max_len) {
        Ok(label) => Ok(label),
        Err(SummarizeError::EmptyLabel) => Ok(FALLBACK_LABEL.to_string()),
        Err(e) => Err(e),
    }
}

/// Maps `f` over `items` with at most `concurrency` calls in flight; output keeps input order.
pub fn map_bounded<T, R, E, F>(items: &[T], concurrency: usize, f: F) -> Result<Vec<R>, E>
where
    T: Sync,
    R: Send,
    E: Send + From<ProviderError>,
    F: Fn(&T) -> Result<R, E> + Sync + Send,
{
    if concurrency <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(concurrency)
        .build()
        .map_err(|e| E::from(ProviderError::Other(e.to_string())))?;
    pool.install(|| items.par_iter().map(&f).collect())
}
