//! End-to-end stages: compile a corpus into a forest plus indexes, and
//! evaluate a retrieval method against gold queries.
//!
//! Everything `evaluate` needs is read back from the compile output
//! directory, so the two stages run independently.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::baselines::{
    rrf_fuse, single_shot_answer, BaselineError, Bm25Index, Bm25Params, ContextDoc, DenseIndex, RankedList, RRF_K,
};
use crate::corpus::{load_corpus, CorpusError, DEFAULT_MAX_CHARS};
use crate::embedding::{embed_corpus, embed_query, EmbedMode, EmbeddingError, EmbeddingProvider};
use crate::evaluation::{
    compute_cost, judge_scores, lexical_scores, standardize_context, CostLedger, EvalError, EvalReport, JudgePrompts,
    PriceTable, QueryRecord,
};
use crate::hierarchy::{build_hierarchy, label_hierarchy, ClusterParams, HierarchyError, LevelStats};
use crate::llm::{CountingLlm, LlmProvider};
use crate::materialize::{
    check_limits, navigation_files, write_forest, ApiLimits, LimitViolation, MaterializeError, SkillForest, SkillInfo,
    DOCUMENTS_FILE,
};
use crate::navigator::{
    run_agent, scripted_navigate, AgentConfig, CompletionAgentModel, DocumentStore, NavError, NavigationTrace,
};
use crate::summarization::{map_bounded, SummarizationConfig};
use crate::synthetic::GoldPair;

pub const HIERARCHY_FILE: &str = "hierarchy.json";
pub const BM25_FILE: &str = "bm25_index.json";
pub const DENSE_FILE: &str = "dense_index.json";
pub const REPORT_FILE: &str = "compile_report.json";
pub const CONFIG_FILE: &str = "compile_config.json";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("corpus ingest: {0}")]
    Corpus(#[from] CorpusError),
    #[error("embedding: {0}")]
    Embedding(#[from] EmbeddingError),
    #[error("hierarchy: {0}")]
    Hierarchy(#[from] HierarchyError),
    #[error("materialize: {0}")]
    Materialize(#[from] MaterializeError),
    #[error("navigator: {0}")]
    Navigator(#[from] NavError),
    #[error("baselines: {0}")]
    Baseline(#[from] BaselineError),
    #[error("evaluation: {0}")]
    Eval(#[from] EvalError),
    #[error("provider: {0}")]
    Provider(#[from] crate::provider::ProviderError),
    #[error("no compiled forest in {0}")]
    MissingForest(PathBuf),
    #[error("no gold queries: {0}")]
    MissingGold(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid {path}: {reason}")]
    Artifact { path: PathBuf, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write(path: &Path, text: &str) -> Result<(), PipelineError> {
    fs::write(path, text).map_err(io_err(path))
}

fn read(path: &Path) -> Result<String, PipelineError> {
    fs::read_to_string(path).map_err(io_err(path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompileOptions {
    pub params: ClusterParams,
    pub compact: bool,
    pub max_chars: usize,
    pub summarization: SummarizationConfig,
    pub limits: ApiLimits,
}

impl Default for CompileOptions {
    fn default() -> Self {
        Self {
            params: ClusterParams::default(),
            compact: false,
            max_chars: DEFAULT_MAX_CHARS,
            summarization: SummarizationConfig::default(),
            limits: ApiLimits::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompileReport {
    pub documents: usize,
    pub skipped_records: usize,
    pub levels: u32,
    pub level_stats: Vec<LevelStats>,
    pub roots: usize,
    pub llm_calls: u64,
    pub llm_input_tokens: u64,
    pub llm_output_tokens: u64,
    pub wall_seconds: f64,
    pub compact: bool,
    pub navigation_files: usize,
    pub skills: Vec<SkillInfo>,
    pub limit_violations: Vec<LimitViolation>,
    pub forest_digest: String,
}

/// SHA-256 over every navigation file (path and bytes) plus the document store.
pub fn forest_digest(out_dir: &Path) -> Result<String, PipelineError> {
    let mut h = Sha256::new();
    for f in navigation_files(out_dir)? {
        let rel = f.strip_prefix(out_dir).unwrap_or(&f);
        h.update(rel.to_string_lossy().as_bytes());
        h.update([0]);
        h.update(fs::read(&f).map_err(io_err(&f))?);
        h.update([0]);
    }
    let store = out_dir.join(DOCUMENTS_FILE);
    h.update(fs::read(&store).map_err(io_err(&store))?);
    Ok(hex::encode(h.finalize()))
}

/// Runs ingest → embed → cluster and summarize → label → materialize → limit check.
pub fn compile(
    corpus_dir: &Path,
    out_dir: &Path,
    opts: &CompileOptions,
    llm: &dyn LlmProvider,
    embedder: &dyn EmbeddingProvider,
) -> Result<(SkillForest, CompileReport), PipelineError> {
    let started = Instant::now();
    opts.params.validate()?;
    let loaded = load_corpus(corpus_dir, opts.max_chars)?;
    for w in &loaded.warnings {
        log::warn!("skipped record {w}");
    }
    let manifest = loaded.manifest;
    log::info!("loaded {} documents", manifest.n());

    let texts: Vec<String> = manifest.documents.iter().map(|d| d.text.clone()).collect();
    let vectors = embed_corpus(&texts, embedder, EmbedMode::Document, opts.summarization.concurrency)?;

    let counting = CountingLlm::new(llm);
    let mut hier = build_hierarchy(
        &manifest,
        &vectors,
        &opts.params,
        &opts.summarization,
        &counting,
        embedder,
    )?;
    label_hierarchy(&mut hier, &counting, &opts.summarization)?;

    let forest = write_forest(&hier, &manifest, out_dir, opts.compact)?;
    let violations = check_limits(&forest, &opts.limits);
    for v in &violations {
        log::warn!("limit exceeded: {v}");
    }

    write(
        &out_dir.join(CONFIG_FILE),
        &serde_json::to_string_pretty(opts).expect("options serialize"),
    )?;
    write(&out_dir.join(HIERARCHY_FILE), &hier.to_json(true))?;
    let bm25 = Bm25Index::build(manifest.documents.iter().map(|d| (d.id.as_str(), d.text.as_str())));
    write(&out_dir.join(BM25_FILE), &bm25.to_json())?;
    let ids = manifest.documents.iter().map(|d| d.id.clone()).collect();
    let dense = DenseIndex::new(ids, vectors)?;
    write(&out_dir.join(DENSE_FILE), &dense.to_json())?;

    let (input, output) = counting.tokens();
    let report = CompileReport {
        documents: manifest.n(),
        skipped_records: loaded.warnings.len(),
        levels: hier.levels,
        level_stats: hier.level_stats.clone(),
        roots: hier.roots.len(),
        llm_calls: counting.calls(),
        llm_input_tokens: input,
        llm_output_tokens: output,
        wall_seconds: started.elapsed().as_secs_f64(),
        compact: opts.compact,
        navigation_files: forest.file_count(),
        skills: forest.skills.clone(),
        limit_violations: violations,
        forest_digest: forest_digest(out_dir)?,
    };
    write(
        &out_dir.join(REPORT_FILE),
        &serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    Ok((forest, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Navigate,
    Scripted,
    Bm25,
    Dense,
    Hybrid,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Navigate => "navigate",
            Method::Scripted => "scripted",
            Method::Bm25 => "bm25",
            Method::Dense => "dense",
            Method::Hybrid => "hybrid",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "navigate" => Method::Navigate,
            "scripted" => Method::Scripted,
            "bm25" => Method::Bm25,
            "dense" => Method::Dense,
            "hybrid" => Method::Hybrid,
            other => return Err(format!("unknown method {other:?}")),
        })
    }
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub method: Method,
    pub max_turns: u32,
    pub top_k: usize,
    /// Candidates taken from each list before fusion.
    pub fusion_depth: usize,
    pub prices: PriceTable,
    pub cache_accounting: bool,
    pub workers: usize,
    pub answer_max_tokens: u32,
    pub judge_prompts: JudgePrompts,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            method: Method::Scripted,
            max_turns: 20,
            top_k: 5,
            fusion_depth: 50,
            prices: PriceTable::default(),
            cache_accounting: true,
            workers: 8,
            answer_max_tokens: 512,
            judge_prompts: JudgePrompts::default(),
        }
    }
}

/// Read-only artifacts of one compile.
pub struct Compiled {
    pub forest: SkillForest,
    pub store: DocumentStore,
    pub bm25: Option<Bm25Index>,
    pub dense: Option<DenseIndex>,
}

impl Compiled {
    pub fn open(out_dir: &Path) -> Result<Self, PipelineError> {
        if !out_dir.join(DOCUMENTS_FILE).is_file() {
            return Err(PipelineError::MissingForest(out_dir.to_path_buf()));
        }
        let forest = SkillForest::open(out_dir)?;
        let store = DocumentStore::open(&forest)?;
        let artifact = |name: &str| -> Result<Option<String>, PipelineError> {
            let p = out_dir.join(name);
            if p.is_file() {
                read(&p).map(Some)
            } else {
                Ok(None)
            }
        };
        let bm25 = artifact(BM25_FILE)?.map(|j| Bm25Index::from_json(&j)).transpose()?;
        let dense = artifact(DENSE_FILE)?.map(|j| DenseIndex::from_json(&j)).transpose()?;
        Ok(Self {
            forest,
            store,
            bm25,
            dense,
        })
    }

    fn context_docs(&self, ids: &[String]) -> Vec<ContextDoc> {
        ids.iter()
            .filter_map(|id| self.store.get(id).ok())
            .map(|d| ContextDoc {
                title: d.title.clone(),
                text: d.text.clone(),
            })
            .collect()
    }

    fn missing(&self, name: &str) -> PipelineError {
        PipelineError::MissingForest(self.forest.root_dir.join(name))
    }

    fn retrieve(
        &self,
        query: &str,
        opts: &EvalOptions,
        embedder: &dyn EmbeddingProvider,
    ) -> Result<RankedList, PipelineError> {
        let bm25 = |k: usize| -> Result<RankedList, PipelineError> {
            let index = self.bm25.as_ref().ok_or_else(|| self.missing(BM25_FILE))?;
            match index.search(query, k, &Bm25Params::default()) {
                Err(BaselineError::EmptyQuery) => Ok(RankedList { entries: vec![], k }),
                other => Ok(other?),
            }
        };
        let dense = |k: usize| -> Result<RankedList, PipelineError> {
            let index = self.dense.as_ref().ok_or_else(|| self.missing(DENSE_FILE))?;
            let q = embed_query(query, embedder)?;
            Ok(index.search(&q, k)?)
        };
        match opts.method {
            Method::Bm25 => bm25(opts.top_k),
            Method::Dense => dense(opts.top_k),
            _ => {
                let depth = opts.fusion_depth.max(opts.top_k);
                Ok(rrf_fuse(&bm25(depth)?, &dense(depth)?, RRF_K, opts.top_k))
            }
        }
    }
}

pub fn load_gold(path: &Path) -> Result<Vec<GoldPair>, PipelineError> {
    if !path.is_file() {
        return Err(PipelineError::MissingGold(format!("{} does not exist", path.display())));
    }
    let text = read(path)?;
    let mut gold = crate::synthetic::gold_from_jsonl(&text).map_err(|e| PipelineError::Artifact {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    for (i, g) in gold.iter_mut().enumerate() {
        if g.query_id.is_empty() {
            g.query_id = format!("q{i:05}");
        }
    }
    Ok(gold)
}

struct Outcome {
    answer: String,
    retrieved: Vec<String>,
    ledger: CostLedger,
    views_before_document: Option<u32>,
}

fn from_trace(trace: NavigationTrace) -> Outcome {
    Outcome {
        views_before_document: Some(trace.views_before_first_document() as u32),
        ledger: CostLedger {
            input_tokens: trace.tokens.input,
            output_tokens: trace.tokens.output,
            cache_read_tokens: trace.tokens.cache_read,
            cache_write_tokens: trace.tokens.cache_write,
            turns: trace.turns,
        },
        answer: trace.answer,
        retrieved: trace.retrieved_doc_ids,
    }
}

fn run_query(
    gold: &GoldPair,
    compiled: &Compiled,
    opts: &EvalOptions,
    llm: &dyn LlmProvider,
    embedder: &dyn EmbeddingProvider,
    judge: Option<&dyn LlmProvider>,
) -> Result<QueryRecord, PipelineError> {
    let outcome = match opts.method {
        Method::Navigate => {
            let cfg = AgentConfig {
                max_turns: opts.max_turns,
                cache_accounting: opts.cache_accounting,
                max_tokens: opts.answer_max_tokens,
                ..AgentConfig::default()
            };
            let model = CompletionAgentModel::new(llm, opts.answer_max_tokens);
            from_trace(run_agent(&gold.query, &compiled.forest, &compiled.store, &model, &cfg)?)
        }
        Method::Scripted => {
            let trace = scripted_navigate(&gold.query, &compiled.forest, &compiled.store, opts.max_turns as usize);
            let docs = compiled.context_docs(&trace.retrieved_doc_ids);
            let a = single_shot_answer(&gold.query, &docs, llm, opts.answer_max_tokens)?;
            let mut o = from_trace(trace);
            o.answer = a.text;
            o.ledger.input_tokens += a.input_tokens;
            o.ledger.output_tokens += a.output_tokens;
            o
        }
        _ => {
            let ranked = compiled.retrieve(&gold.query, opts, embedder)?;
            let ids: Vec<String> = ranked.ids().into_iter().map(str::to_string).collect();
            let a = single_shot_answer(&gold.query, &compiled.context_docs(&ids), llm, opts.answer_max_tokens)?;
            Outcome {
                answer: a.text,
                retrieved: ids,
                ledger: CostLedger {
                    input_tokens: a.input_tokens,
                    output_tokens: a.output_tokens,
                    turns: 1,
                    ..CostLedger::default()
                },
                views_before_document: None,
            }
        }
    };
    let (token_f1, bleu, rouge1, rouge2) = lexical_scores(&outcome.answer, &gold.gold_answer);
    let (factuality, context_recall) = match judge {
        Some(j) => {
            let texts: Vec<String> = compiled
                .context_docs(&outcome.retrieved)
                .into_iter()
                .map(|d| d.text)
                .collect();
            let s = judge_scores(
                &gold.query,
                &outcome.answer,
                &gold.gold_answer,
                &standardize_context(&texts),
                j,
                &opts.judge_prompts,
            )?;
            (s.factuality, s.context_recall)
        }
        None => (None, None),
    };
    let l = outcome.ledger;
    Ok(QueryRecord {
        query_id: gold.query_id.clone(),
        query: gold.query.clone(),
        method: opts.method.name().to_string(),
        gold_doc_id: (!gold.gold_doc_id.is_empty()).then(|| gold.gold_doc_id.clone()),
        hit: outcome.retrieved.contains(&gold.gold_doc_id),
        answer: outcome.answer,
        retrieved_doc_ids: outcome.retrieved.join(" "),
        token_f1,
        bleu,
        rouge1,
        rouge2,
        factuality,
        context_recall,
        turns: l.turns,
        views_before_document: outcome.views_before_document,
        input_tokens: l.input_tokens,
        output_tokens: l.output_tokens,
        cache_read_tokens: l.cache_read_tokens,
        cache_write_tokens: l.cache_write_tokens,
        cost_usd: compute_cost(&l, &opts.prices),
    })
}

/// Runs every gold query through `opts.method`. Records keep the gold order.
pub fn evaluate(
    compiled: &Compiled,
    gold: &[GoldPair],
    opts: &EvalOptions,
    llm: &dyn LlmProvider,
    embedder: &dyn EmbeddingProvider,
    judge: Option<&dyn LlmProvider>,
) -> Result<EvalReport, PipelineError> {
    let records = map_bounded(gold, opts.workers, |g| {
        run_query(g, compiled, opts, llm, embedder, judge)
    })?;
    Ok(EvalReport::new(opts.method.name(), records))
}

/// Writes `report.json` and `report.csv` into `dir`.
pub fn write_report(report: &EvalReport, dir: &Path) -> Result<(), PipelineError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write(&dir.join("report.json"), &report.to_json())?;
    write(&dir.join("report.csv"), &report.to_csv()?)
}
