//! Serve-time navigation over a materialized forest.
//!
//! Two tools are exposed to the agent: [`tool_view`] reads a navigation file
//! (or lists a directory) inside the forest, [`DocumentStore::get`] returns a
//! stored document. [`run_agent`] drives an [`AgentModel`] turn by turn and
//! meters tokens; [`scripted_navigate`] is a deterministic lexical navigator.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::is_doc_id;
use crate::llm::{CompletionRequest, LlmProvider, DECLINATION};
use crate::materialize::{
    parse_navigation_file, Contents, MaterializeError, SkillForest, StoredDocument, INDEX_FILE, SKILL_FILE,
};
use crate::provider::ProviderError;
use crate::text::{estimate_tokens, sentences, tokenize};

#[derive(Debug, Error)]
pub enum NavError {
    #[error("path escapes the skills directory: {0:?}")]
    PathEscape(String),
    #[error("no such file or directory: {0}")]
    NotFound(String),
    #[error("unknown doc_id {id:?}: {note}")]
    UnknownDocId { id: String, note: &'static str },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Forest(#[from] MaterializeError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("invalid agent config: {0}")]
    InvalidConfig(String),
}

/// Serving instructions given to the agent.
pub const SYSTEM_PROMPT: &str = "\
# Corpus-Grounded Support Agent (Hierarchical Navigation)

You are a knowledge agent that answers questions by navigating a hierarchical skill directory. You explore a structured file tree where documents are organized into topic clusters.

## Hard Rules

- Every factual claim must trace to a document you retrieved via get_document.
- SKILL.md files are NAVIGATION AIDS -- they tell you where to look, not what to say.
- Never fabricate steps, URLs, prices, or specifics not found in documents.
- Never guess. If you cannot find relevant content after thorough exploration, say so.

## Navigation Strategy

Your skills directory has this structure:

  skill-XX-topic/
    SKILL.md        <- top-level summary + index of contents
    group-YY-subtopic/
      INDEX.md      <- summary + index of sub-contents
      group-ZZ/
        INDEX.md    <- summary + document ID listings

Skill names and descriptions are already available to you. Follow this workflow:

1. Read the SKILL.md of the 1-2 most relevant skills for your query.
2. Drill into the most relevant sub-group: Read its INDEX.md.
3. At the leaf level, INDEX.md lists document IDs with brief titles. Pick the most relevant document IDs.
4. Call get_document with each relevant doc_id to retrieve the full text.
5. Read at least one full document before answering.

## Tools

- Code execution: Use `ls` and `cat` to navigate the skills hierarchy.
- get_document(doc_id): Retrieve the full text of a document by its ID. The doc_id values are listed in leaf-level INDEX.md files.

## Answer Format

- First sentence = direct answer. No preamble.
- Factual questions: 1-3 sentences (~80 words max).
- Procedural questions: numbered steps only (~150 words max).
- Plain text. No bold, headers, or dividers.
- One approach only. Do not present alternatives.
- Never add \"contact support\" or closing remarks.
";

/// Marks prompts rendered by [`CompletionAgentModel`].
pub(crate) const PROTOCOL_HEADING: &str = "## Tool Protocol";
const PROTOCOL: &str = "\
## Tool Protocol

Reply with either tool calls, one per line, or a final answer:

view <path>             print a file or list a directory, relative to the skills root
get_document <doc_id>   return the full text of a document
ANSWER: <text>          finish with the answer
";
const SKILLS_HEADING: &str = "## Available Skills";
const QUESTION_HEADING: &str = "## Question";
const TRANSCRIPT_HEADING: &str = "## Transcript";
const LAST_TURN_NOTE: &str = "This is your last turn. Answer now from the documents retrieved so far.";
const CALL_MARK: &str = "[call] ";
const RESULT_MARK: &str = "[result]";
const END_MARK: &str = "[end]";
const TITLE_PREFIX: &str = "Title: ";

/// Resolves `path` inside the forest and returns the file text, or a listing for directories.
///
/// Paths are relative to the forest root and must start inside a skill
/// directory. `..` components are refused outright, and symlinks may not
/// point outside the skill they sit in.
pub fn tool_view(root: &Path, path: &str) -> Result<String, NavError> {
    let escape = || NavError::PathEscape(path.to_string());
    if path.contains('\0') {
        return Err(escape());
    }
    let unified = path.replace('\\', "/");
    let trimmed = unified.trim();
    if trimmed.starts_with('/') || trimmed.starts_with('~') || trimmed.contains(':') {
        return Err(escape());
    }
    let mut rel = PathBuf::new();
    for c in Path::new(trimmed).components() {
        match c {
            Component::Normal(s) => rel.push(s),
            Component::CurDir => {}
            Component::ParentDir | Component::RootDir | Component::Prefix(_) => return Err(escape()),
        }
    }
    let canon_root = root.canonicalize().map_err(|source| NavError::Io {
        path: root.to_path_buf(),
        source,
    })?;
    if rel.as_os_str().is_empty() {
        return list_dir(&canon_root, &canon_root, true);
    }
    let first = rel
        .components()
        .next()
        .and_then(|c| c.as_os_str().to_str())
        .unwrap_or("");
    if !first.starts_with("skill-") {
        return Err(escape());
    }
    let full = root.join(&rel);
    if fs::symlink_metadata(&full).is_err() {
        return Err(NavError::NotFound(path.to_string()));
    }
    let canon = full.canonicalize().map_err(|_| escape())?;
    let skill_root = canon_root.join(first);
    if !canon.starts_with(&skill_root) {
        return Err(escape());
    }
    if canon.is_dir() {
        return list_dir(&canon, &canon_root, false);
    }
    fs::read_to_string(&canon).map_err(|source| NavError::Io { path: canon, source })
}

fn list_dir(dir: &Path, root: &Path, skills_only: bool) -> Result<String, NavError> {
    let io = |source| NavError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut names = Vec::new();
    for e in fs::read_dir(dir).map_err(io)? {
        let e = e.map_err(io)?;
        let name = e.file_name().to_string_lossy().into_owned();
        let is_dir = e.path().is_dir();
        if skills_only && !(is_dir && name.starts_with("skill-")) {
            continue;
        }
        // hide links leading outside the root
        if let Ok(c) = e.path().canonicalize() {
            if !c.starts_with(root) {
                continue;
            }
        }
        names.push(if is_dir { format!("{name}/") } else { name });
    }
    names.sort();
    Ok(names.join("\n") + "\n")
}

/// Read-only view of `documents.json`.
#[derive(Debug, Clone, Default)]
pub struct DocumentStore {
    docs: BTreeMap<String, StoredDocument>,
}

impl DocumentStore {
    pub fn new(docs: BTreeMap<String, StoredDocument>) -> Self {
        Self { docs }
    }

    pub fn open(forest: &SkillForest) -> Result<Self, NavError> {
        Ok(Self::new(forest.load_documents()?))
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.docs.contains_key(id)
    }

    pub fn get(&self, id: &str) -> Result<&StoredDocument, NavError> {
        if !is_doc_id(id) {
            return Err(NavError::UnknownDocId {
                id: id.to_string(),
                note: "doc ids are 16 lowercase hex characters",
            });
        }
        self.docs.get(id).ok_or_else(|| NavError::UnknownDocId {
            id: id.to_string(),
            note: "not in the document store",
        })
    }
}

/// Tool output as the agent sees it.
pub fn tool_get_document(store: &DocumentStore, doc_id: &str) -> Result<String, NavError> {
    let d = store.get(doc_id.trim())?;
    Ok(format!("{TITLE_PREFIX}{}\n\n{}", d.title, d.text))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolKind {
    View,
    GetDocument,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCall {
    pub tool: ToolKind,
    pub argument: String,
    pub result_chars: usize,
    pub turn_index: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub input: u64,
    pub output: u64,
    pub cache_read: u64,
    pub cache_write: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NavigationTrace {
    pub query: String,
    pub steps: Vec<ToolCall>,
    pub retrieved_doc_ids: Vec<String>,
    pub answer: String,
    pub turns: u32,
    pub tokens: TokenUsage,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRecord {
    pub tool: ToolKind,
    pub arg: String,
}

/// JSON shape of a trace as persisted and consumed by evaluation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub query: String,
    pub answer: String,
    pub steps: Vec<StepRecord>,
    pub retrieved_doc_ids: Vec<String>,
    pub turns: u32,
    pub tokens: TokenUsage,
}

impl NavigationTrace {
    pub fn record(&self) -> TraceRecord {
        TraceRecord {
            query: self.query.clone(),
            answer: self.answer.clone(),
            steps: self
                .steps
                .iter()
                .map(|s| StepRecord {
                    tool: s.tool,
                    arg: s.argument.clone(),
                })
                .collect(),
            retrieved_doc_ids: self.retrieved_doc_ids.clone(),
            turns: self.turns,
            tokens: self.tokens.clone(),
        }
    }

    /// View calls issued before the first document lookup.
    pub fn views_before_first_document(&self) -> usize {
        self.steps.iter().take_while(|s| s.tool == ToolKind::View).count()
    }
}

#[derive(Debug, Clone)]
pub struct AgentConfig {
    pub max_turns: u32,
    pub system_prompt: String,
    /// Bill repeated stable context as cache reads.
    pub cache_accounting: bool,
    pub max_tokens: u32,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            max_turns: 20,
            system_prompt: SYSTEM_PROMPT.to_string(),
            cache_accounting: true,
            max_tokens: 1024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ToolRequest {
    View(String),
    GetDocument(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AgentAction {
    ToolCalls(Vec<ToolRequest>),
    Answer(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelTurn {
    pub action: AgentAction,
    pub output_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BlockRole {
    System,
    Preload,
    Question,
    Call,
    Result,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub role: BlockRole,
    pub text: String,
    /// Blocks with a key are stable context eligible for prompt caching.
    pub cache_key: Option<String>,
}

/// Everything sent to the model so far.
#[derive(Debug, Clone, Default)]
pub struct Transcript {
    pub blocks: Vec<Block>,
    pub final_turn: bool,
}

impl Transcript {
    pub fn question(&self) -> &str {
        self.blocks
            .iter()
            .find(|b| b.role == BlockRole::Question)
            .map(|b| b.text.as_str())
            .unwrap_or("")
    }

    /// Text of every successful get_document result, in order.
    pub fn documents(&self) -> Vec<&str> {
        self.blocks
            .iter()
            .filter(|b| b.role == BlockRole::Result && b.text.starts_with(TITLE_PREFIX))
            .map(|b| b.text.as_str())
            .collect()
    }

    /// Single prompt text for completion-style providers.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut in_transcript = false;
        for b in &self.blocks {
            match b.role {
                BlockRole::System => out.push_str(&b.text),
                BlockRole::Preload => {
                    out.push('\n');
                    out.push_str(&b.text);
                }
                BlockRole::Question => {
                    out.push_str(&format!("\n{QUESTION_HEADING}\n\n{}\n", b.text));
                }
                BlockRole::Call => {
                    if !in_transcript {
                        out.push_str(&format!("\n{TRANSCRIPT_HEADING}\n\n"));
                        in_transcript = true;
                    }
                    out.push_str(CALL_MARK);
                    out.push_str(&b.text);
                    out.push('\n');
                }
                BlockRole::Result => {
                    out.push_str(RESULT_MARK);
                    out.push('\n');
                    out.push_str(b.text.trim_end());
                    out.push('\n');
                    out.push_str(END_MARK);
                    out.push('\n');
                }
            }
        }
        if self.final_turn {
            out.push('\n');
            out.push_str(LAST_TURN_NOTE);
            out.push('\n');
        }
        out.push_str("\nNext action:\n");
        out
    }
}

pub trait AgentModel: Send + Sync {
    fn next_turn(&self, transcript: &Transcript) -> Result<ModelTurn, NavError>;
}

/// Splits each request's input tokens into fresh, cache-write and cache-read.
#[derive(Debug, Default)]
pub struct TokenMeter {
    enabled: bool,
    seen: HashSet<String>,
    pub usage: TokenUsage,
}

impl TokenMeter {
    pub fn new(cache_accounting: bool) -> Self {
        Self {
            enabled: cache_accounting,
            ..Self::default()
        }
    }

    pub fn bill_request(&mut self, transcript: &Transcript) {
        for b in &transcript.blocks {
            let t = estimate_tokens(&b.text);
            match (&b.cache_key, self.enabled) {
                (Some(key), true) => {
                    if self.seen.insert(key.clone()) {
                        self.usage.cache_write += t;
                    } else {
                        self.usage.cache_read += t;
                    }
                }
                _ => self.usage.input += t,
            }
        }
    }

    pub fn bill_output(&mut self, tokens: u64) {
        self.usage.output += tokens;
    }
}

/// Skill names and descriptions shown before any file is opened.
pub fn preload_block(skills: &[(String, String)]) -> String {
    let mut out = format!("{SKILLS_HEADING}\n\n");
    for (name, desc) in skills {
        out.push_str(&format!("- {name}: {desc}\n"));
    }
    out
}

fn first_sentence_of_document(result: &str) -> String {
    let body = result.split_once("\n\n").map(|(_, b)| b).unwrap_or(result);
    let text: Vec<&str> = body.lines().filter(|l| !l.trim_start().starts_with('#')).collect();
    sentences(&text.join("\n"))
        .into_iter()
        .next()
        .unwrap_or_else(|| DECLINATION.to_string())
}

/// Answer built from accumulated evidence when the turn budget runs out.
fn fallback_answer(transcript: &Transcript) -> String {
    match transcript.documents().last() {
        Some(doc) => first_sentence_of_document(doc),
        None => DECLINATION.to_string(),
    }
}

/// Runs the agent loop until the model answers or `max_turns` requests have been made.
///
/// Tool calls requested on the last permitted turn are not executed; the
/// answer is then taken from the documents retrieved so far, or is a
/// declination when there are none.
pub fn run_agent(
    query: &str,
    forest: &SkillForest,
    store: &DocumentStore,
    model: &dyn AgentModel,
    cfg: &AgentConfig,
) -> Result<NavigationTrace, NavError> {
    if cfg.max_turns == 0 {
        return Err(NavError::InvalidConfig("max_turns must be at least 1".into()));
    }
    let skills = forest.skill_descriptions()?;
    let mut transcript = Transcript {
        blocks: vec![
            Block {
                role: BlockRole::System,
                text: format!("{}\n{PROTOCOL}", cfg.system_prompt),
                cache_key: Some("system".into()),
            },
            Block {
                role: BlockRole::Preload,
                text: preload_block(&skills),
                cache_key: Some("preload".into()),
            },
            Block {
                role: BlockRole::Question,
                text: query.to_string(),
                cache_key: None,
            },
        ],
        final_turn: false,
    };
    let mut meter = TokenMeter::new(cfg.cache_accounting);
    let mut steps = Vec::new();
    let mut retrieved: Vec<String> = Vec::new();
    let mut answer = None;
    let mut turns = 0;
    while turns < cfg.max_turns {
        turns += 1;
        transcript.final_turn = turns == cfg.max_turns;
        meter.bill_request(&transcript);
        let reply = model.next_turn(&transcript)?;
        meter.bill_output(reply.output_tokens);
        let calls = match reply.action {
            AgentAction::Answer(a) => {
                answer = Some(a);
                break;
            }
            AgentAction::ToolCalls(calls) if calls.is_empty() => {
                answer = Some(fallback_answer(&transcript));
                break;
            }
            AgentAction::ToolCalls(calls) => calls,
        };
        if transcript.final_turn {
            break;
        }
        for call in calls {
            let (tool, arg, result, cache_key) = match call {
                ToolRequest::View(p) => {
                    let r = tool_view(&forest.root_dir, &p);
                    let key = r.is_ok().then(|| format!("view:{p}"));
                    (ToolKind::View, p, r, key)
                }
                ToolRequest::GetDocument(id) => {
                    let id = id.trim().to_string();
                    let r = tool_get_document(store, &id);
                    if r.is_ok() && !retrieved.contains(&id) {
                        retrieved.push(id.clone());
                    }
                    (ToolKind::GetDocument, id, r, None)
                }
            };
            let text = result.unwrap_or_else(|e| format!("error: {e}"));
            steps.push(ToolCall {
                tool,
                argument: arg.clone(),
                result_chars: text.chars().count(),
                turn_index: turns,
            });
            let verb = match tool {
                ToolKind::View => "view",
                ToolKind::GetDocument => "get_document",
            };
            transcript.blocks.push(Block {
                role: BlockRole::Call,
                text: format!("{verb} {arg}"),
                cache_key: None,
            });
            transcript.blocks.push(Block {
                role: BlockRole::Result,
                text,
                cache_key,
            });
        }
    }
    let answer = answer.unwrap_or_else(|| fallback_answer(&transcript));
    Ok(NavigationTrace {
        query: query.to_string(),
        steps,
        retrieved_doc_ids: retrieved,
        answer,
        turns,
        tokens: meter.usage,
    })
}

/// Replays a fixed list of tool calls, one per turn, then answers from the last document.
#[derive(Debug, Clone)]
pub struct ScriptedModel {
    plan: Vec<ToolRequest>,
}

impl ScriptedModel {
    pub fn new(plan: Vec<ToolRequest>) -> Self {
        Self { plan }
    }

    /// Plan that follows the path [`scripted_navigate`] takes.
    pub fn from_trace(trace: &NavigationTrace) -> Self {
        Self::new(
            trace
                .steps
                .iter()
                .map(|s| match s.tool {
                    ToolKind::View => ToolRequest::View(s.argument.clone()),
                    ToolKind::GetDocument => ToolRequest::GetDocument(s.argument.clone()),
                })
                .collect(),
        )
    }
}

impl AgentModel for ScriptedModel {
    fn next_turn(&self, transcript: &Transcript) -> Result<ModelTurn, NavError> {
        let done = transcript.blocks.iter().filter(|b| b.role == BlockRole::Call).count();
        let action = match self.plan.get(done) {
            Some(call) if !transcript.final_turn => AgentAction::ToolCalls(vec![call.clone()]),
            _ => AgentAction::Answer(fallback_answer(transcript)),
        };
        let output_tokens = match &action {
            AgentAction::Answer(a) => estimate_tokens(a),
            AgentAction::ToolCalls(c) => 8 * c.len() as u64,
        };
        Ok(ModelTurn { action, output_tokens })
    }
}

/// Drives any completion provider with the line-oriented tool protocol.
pub struct CompletionAgentModel<P> {
    provider: P,
    max_tokens: u32,
}

impl<P: LlmProvider> CompletionAgentModel<P> {
    pub fn new(provider: P, max_tokens: u32) -> Self {
        Self { provider, max_tokens }
    }
}

/// Reads tool calls or an answer out of a model reply.
pub fn parse_agent_reply(text: &str) -> AgentAction {
    let mut calls = Vec::new();
    let lines: Vec<&str> = text.lines().collect();
    for (i, line) in lines.iter().enumerate() {
        let l = line.trim().trim_matches('`').trim();
        if let Some(rest) = l.strip_prefix("ANSWER:") {
            let mut answer = vec![rest.trim()];
            answer.extend(lines[i + 1..].iter().map(|s| s.trim_end()));
            return AgentAction::Answer(answer.join("\n").trim().to_string());
        }
        let (verb, arg) = l.split_once(char::is_whitespace).unwrap_or((l, ""));
        let arg = arg
            .trim()
            .trim_matches(|c| c == '"' || c == '\'' || c == '(' || c == ')');
        match verb.trim_end_matches('(') {
            "view" | "cat" | "ls" => calls.push(ToolRequest::View(arg.to_string())),
            "get_document" => calls.push(ToolRequest::GetDocument(arg.to_string())),
            _ => {}
        }
    }
    if calls.is_empty() {
        AgentAction::Answer(text.trim().to_string())
    } else {
        AgentAction::ToolCalls(calls)
    }
}

impl<P: LlmProvider> AgentModel for CompletionAgentModel<P> {
    fn next_turn(&self, transcript: &Transcript) -> Result<ModelTurn, NavError> {
        let out = self.provider.complete(&CompletionRequest {
            prompt: transcript.render(),
            max_tokens: self.max_tokens,
        })?;
        Ok(ModelTurn {
            action: parse_agent_reply(&out.text),
            output_tokens: out.output_tokens,
        })
    }
}

fn query_tokens(query: &str) -> BTreeSet<String> {
    tokenize(query).into_iter().collect()
}

/// Number of distinct query tokens that occur in `text`.
pub fn overlap(query: &BTreeSet<String>, text: &str) -> usize {
    let t: BTreeSet<String> = tokenize(text).into_iter().collect();
    query.intersection(&t).count()
}

/// Best-scoring candidate, ties to the smallest key. Returns `None` for an empty list.
fn best<'a>(query: &BTreeSet<String>, items: impl Iterator<Item = (&'a str, String)>) -> Option<(&'a str, usize)> {
    let mut best: Option<(&str, usize)> = None;
    for (key, text) in items {
        let s = overlap(query, &text);
        best = match best {
            Some((k, bs)) if bs > s || (bs == s && k <= key) => Some((k, bs)),
            _ => Some((key, s)),
        };
    }
    best
}

/// Next move of the offline agent policy, given the rendered prompt.
///
/// Mirrors [`scripted_navigate`] greedily without backtracking: pick the
/// skill, subgroup or title with the largest query overlap, then answer with
/// the first sentence of the retrieved document.
pub(crate) fn stub_agent_reply(prompt: &str) -> String {
    let question = prompt
        .split_once(&format!("\n{QUESTION_HEADING}\n\n"))
        .map(|(_, r)| r.split("\n\n").next().unwrap_or(""))
        .unwrap_or("");
    let q = query_tokens(question);

    // (call, result) pairs from the transcript
    let mut history: Vec<(String, String)> = Vec::new();
    if let Some((_, t)) = prompt.split_once(&format!("\n{TRANSCRIPT_HEADING}\n\n")) {
        let mut lines = t.lines();
        while let Some(l) = lines.next() {
            if let Some(call) = l.strip_prefix(CALL_MARK) {
                if lines.next() == Some(RESULT_MARK) {
                    let body: Vec<&str> = lines.by_ref().take_while(|x| *x != END_MARK).collect();
                    history.push((call.to_string(), body.join("\n")));
                }
            }
        }
    }
    if let Some((_, doc)) = history
        .iter()
        .rev()
        .find(|(c, r)| c.starts_with("get_document ") && r.starts_with(TITLE_PREFIX))
    {
        return format!("ANSWER: {}", first_sentence_of_document(doc));
    }
    if prompt.contains(LAST_TURN_NOTE) {
        return format!("ANSWER: {DECLINATION}");
    }
    let Some((call, result)) = history.last() else {
        let skills: Vec<(&str, String)> = prompt
            .split_once(&format!("{SKILLS_HEADING}\n\n"))
            .map(|(_, r)| r)
            .unwrap_or("")
            .lines()
            .take_while(|l| l.starts_with("- "))
            .filter_map(|l| l[2..].split_once(": "))
            .map(|(name, desc)| (name, format!("{name} {desc}")))
            .collect();
        return match best(&q, skills.into_iter()) {
            Some((name, _)) => format!("view {name}/{SKILL_FILE}"),
            None => format!("ANSWER: {DECLINATION}"),
        };
    };
    let Some(path) = call.strip_prefix("view ") else {
        return format!("ANSWER: {DECLINATION}");
    };
    let Ok(file) = parse_navigation_file(result) else {
        return format!("ANSWER: {DECLINATION}");
    };
    let dir = path.rsplit_once('/').map(|(d, _)| d).unwrap_or("");
    match &file.contents {
        Contents::Subgroups(entries) => {
            match best(
                &q,
                entries
                    .iter()
                    .map(|e| (e.dir.as_str(), format!("{} {}", e.dir, e.summary))),
            ) {
                Some((d, _)) => format!("view {dir}/{d}/{INDEX_FILE}"),
                None => format!("ANSWER: {DECLINATION}"),
            }
        }
        other => {
            let docs = match other {
                Contents::Documents(d) => d.clone(),
                Contents::Sections(s) => s.iter().flat_map(|c| c.documents.clone()).collect(),
                Contents::Subgroups(_) => unreachable!(),
            };
            match best(&q, docs.iter().map(|d| (d.doc_id.as_str(), d.title.clone()))) {
                Some((id, s)) if s > 0 => format!("get_document {id}"),
                _ => format!("ANSWER: {DECLINATION}"),
            }
        }
    }
}

/// A directory entry the scripted navigator can descend into.
struct Candidate {
    /// Forest-relative path of the file to view.
    path: String,
    key: String,
    score: usize,
}

fn ranked(mut c: Vec<Candidate>) -> Vec<Candidate> {
    c.sort_by(|a, b| b.score.cmp(&a.score).then_with(|| a.key.cmp(&b.key)));
    c
}

struct Scripted<'a> {
    root: &'a Path,
    store: &'a DocumentStore,
    query: BTreeSet<String>,
    max_steps: usize,
    steps: Vec<ToolCall>,
    visited: HashSet<String>,
    found: Option<(String, String)>,
}

impl Scripted<'_> {
    fn budget_left(&self) -> bool {
        self.steps.len() < self.max_steps && self.found.is_none()
    }

    fn record(&mut self, tool: ToolKind, arg: &str, chars: usize) {
        self.steps.push(ToolCall {
            tool,
            argument: arg.to_string(),
            result_chars: chars,
            turn_index: self.steps.len() as u32 + 1,
        });
    }

    /// Depth-first, best child first. Returns once a document is retrieved or the budget is spent.
    fn visit(&mut self, path: &str) {
        if !self.budget_left() || !self.visited.insert(path.to_string()) {
            return;
        }
        let text = match tool_view(self.root, path) {
            Ok(t) => t,
            Err(_) => return,
        };
        self.record(ToolKind::View, path, text.chars().count());
        let Ok(file) = parse_navigation_file(&text) else { return };
        let dir = path.rsplit_once('/').map(|(d, _)| d).unwrap_or("");
        match file.contents {
            Contents::Subgroups(entries) => {
                let kids = entries
                    .into_iter()
                    .map(|e| Candidate {
                        path: format!("{dir}/{}/{INDEX_FILE}", e.dir),
                        score: overlap(&self.query, &format!("{} {}", e.dir, e.summary)),
                        key: e.dir,
                    })
                    .collect();
                for c in ranked(kids) {
                    if !self.budget_left() {
                        return;
                    }
                    self.visit(&c.path);
                }
            }
            other => {
                let docs = match other {
                    Contents::Documents(d) => d,
                    Contents::Sections(s) => s.into_iter().flat_map(|c| c.documents).collect(),
                    Contents::Subgroups(_) => unreachable!(),
                };
                let pick = best(&self.query, docs.iter().map(|d| (d.doc_id.as_str(), d.title.clone())));
                if let Some((id, score)) = pick {
                    if score == 0 || !self.budget_left() {
                        return;
                    }
                    if let Ok(text) = tool_get_document(self.store, id) {
                        self.record(ToolKind::GetDocument, id, text.chars().count());
                        self.found = Some((id.to_string(), text));
                    }
                }
            }
        }
    }
}

/// Deterministic lexical navigator.
///
/// Skills and subgroups are tried best overlap first (ties by directory
/// name), depth first, backtracking from leaves whose best title shares no
/// query token. Stops at the first retrieved document or after `max_steps`
/// tool calls.
pub fn scripted_navigate(
    query: &str,
    forest: &SkillForest,
    store: &DocumentStore,
    max_steps: usize,
) -> NavigationTrace {
    let q = query_tokens(query);
    let skills: Vec<(String, String)> = forest.skill_descriptions().unwrap_or_default();
    let top = skills
        .into_iter()
        .map(|(name, desc)| Candidate {
            path: format!("{name}/{SKILL_FILE}"),
            score: overlap(&q, &format!("{name} {desc}")),
            key: name,
        })
        .collect();
    let mut s = Scripted {
        root: &forest.root_dir,
        store,
        query: q,
        max_steps,
        steps: Vec::new(),
        visited: HashSet::new(),
        found: None,
    };
    for c in ranked(top) {
        if !s.budget_left() {
            break;
        }
        s.visit(&c.path);
    }
    let (retrieved, answer) = match &s.found {
        Some((id, text)) => (vec![id.clone()], first_sentence_of_document(text)),
        None => (Vec::new(), DECLINATION.to_string()),
    };
    NavigationTrace {
        query: query.to_string(),
        turns: s.steps.len() as u32 + 1,
        steps: s.steps,
        retrieved_doc_ids: retrieved,
        answer,
        tokens: TokenUsage::default(),
    }
}
