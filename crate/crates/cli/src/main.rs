use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use skillforest::embedding::{EmbeddingProvider, HashEmbedder, HttpEmbedder, HttpEmbedderConfig};
use skillforest::hierarchy::ClusterParams;
use skillforest::llm::{HttpLlm, LlmProvider, StubLlm};
use skillforest::materialize::{check_limits, ApiLimits, SkillForest};
use skillforest::navigator::{run_agent, scripted_navigate, tool_view, AgentConfig, CompletionAgentModel};
use skillforest::pipeline::{self, CompileOptions, Compiled, EvalOptions, Method};
use skillforest::synthetic::{generate_corpus, TaxonomySpec};

const EMBED_KEY_VAR: &str = "SKILLFOREST_EMBED_API_KEY";
const LLM_KEY_VAR: &str = "SKILLFOREST_LLM_API_KEY";
const EMBEDDER_FILE: &str = "embedder.json";

#[derive(Parser)]
#[command(
    name = "skillforest",
    version,
    about = "Compile a document corpus into navigable skill directories"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a forest and retrieval indexes from a corpus directory.
    Compile(CompileArgs),
    /// Score a retrieval method against gold queries.
    Eval(EvalArgs),
    /// Answer queries read from stdin, one JSON trace per line.
    Serve(ServeArgs),
    /// Show the compiled forest, or view one path inside it.
    Inspect(InspectArgs),
    /// Check a forest against skill upload limits.
    LimitsCheck(LimitsArgs),
    /// Write a synthetic corpus with gold queries.
    Generate(GenerateArgs),
}

#[derive(Args)]
struct LlmArgs {
    /// Completion endpoint; the offline stub is used when absent.
    #[arg(long)]
    llm_endpoint: Option<String>,
    #[arg(long, default_value = "default")]
    llm_model: String,
}

impl LlmArgs {
    fn provider(&self) -> Result<Box<dyn LlmProvider>> {
        Ok(match &self.llm_endpoint {
            Some(url) => Box::new(HttpLlm::new(url, &self.llm_model, std::env::var(LLM_KEY_VAR).ok())?),
            None => Box::new(StubLlm),
        })
    }
}

#[derive(Args)]
struct CompileArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Branching ratio.
    #[arg(long, default_value_t = 10)]
    p: usize,
    /// Maximum number of top-level skills.
    #[arg(long, default_value_t = 7)]
    k: usize,
    #[arg(long, default_value_t = 3)]
    min_size: usize,
    /// Fold the lowest INDEX.md files into their parents.
    #[arg(long)]
    compact: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Embedding endpoint; feature hashing is used when absent.
    #[arg(long)]
    embed_endpoint: Option<String>,
    #[arg(long, default_value = "default")]
    embed_model: String,
    #[arg(long, default_value_t = 256)]
    dim: usize,
    #[arg(long, default_value_t = 8)]
    workers: usize,
    #[command(flatten)]
    llm: LlmArgs,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory written by `compile`.
    #[arg(long)]
    out: PathBuf,
    /// Gold queries as JSONL.
    #[arg(long)]
    queries: PathBuf,
    #[arg(long, default_value = "scripted")]
    method: Method,
    /// 5 is the cheapest setting that stays close to the default.
    #[arg(long, default_value_t = 20)]
    max_turns: u32,
    #[arg(long, default_value_t = 5)]
    top_k: usize,
    #[arg(long, default_value_t = 8)]
    workers: usize,
    /// Score factuality and context recall with the configured LLM.
    #[arg(long)]
    judge: bool,
    /// JSON file with `factuality` and `context_recall` prompt templates.
    #[arg(long)]
    judge_prompts: Option<PathBuf>,
    /// Where report.json and report.csv go; defaults to `<out>/eval-<method>`.
    #[arg(long)]
    report_dir: Option<PathBuf>,
    #[arg(long)]
    no_cache: bool,
    #[command(flatten)]
    llm: LlmArgs,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    out: PathBuf,
    /// `navigate` (LLM agent) or `scripted` (lexical descent, no answer model).
    #[arg(long, default_value = "navigate")]
    method: Method,
    #[arg(long, default_value_t = 20)]
    max_turns: u32,
    #[command(flatten)]
    llm: LlmArgs,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    out: PathBuf,
    /// Path relative to the forest root to print, as the agent would see it.
    #[arg(long)]
    path: Option<String>,
}

#[derive(Args)]
struct LimitsArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = ApiLimits::default().max_skills)]
    max_skills: usize,
    #[arg(long, default_value_t = ApiLimits::default().max_files_per_skill)]
    max_files: usize,
    #[arg(long, default_value_t = ApiLimits::default().max_bytes_per_skill)]
    max_bytes: u64,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    out: PathBuf,
    /// JSON taxonomy spec; overrides the balanced-tree flags.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Children per level of a balanced taxonomy, e.g. `3,4`.
    #[arg(long, value_delimiter = ',', default_value = "3,4")]
    fanouts: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    docs_per_leaf: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Share one vocabulary across all topics.
    #[arg(long)]
    collapsed: bool,
}

/// Which embedder built the dense index, so later commands embed queries the same way.
#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum EmbedderChoice {
    Hash { dim: usize },
    Http(HttpEmbedderConfig),
}

impl EmbedderChoice {
    fn provider(&self) -> Result<Box<dyn EmbeddingProvider>> {
        Ok(match self {
            EmbedderChoice::Hash { dim } => Box::new(HashEmbedder::new(*dim)),
            EmbedderChoice::Http(cfg) => Box::new(HttpEmbedder::new(cfg.clone(), std::env::var(EMBED_KEY_VAR).ok())?),
        })
    }

    fn load(out: &Path) -> Result<Self> {
        let path = out.join(EMBEDDER_FILE);
        if !path.is_file() {
            return Ok(EmbedderChoice::Hash { dim: 256 });
        }
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

fn compile(a: CompileArgs) -> Result<()> {
    if !a.corpus.is_dir() {
        bail!("corpus directory {} does not exist", a.corpus.display());
    }
    let choice = match &a.embed_endpoint {
        Some(url) => EmbedderChoice::Http(HttpEmbedderConfig {
            endpoint: url.clone(),
            model: a.embed_model.clone(),
            dim: a.dim,
            batch_size: 32,
            document_template: "{text}".into(),
            query_template: "{text}".into(),
        }),
        None => EmbedderChoice::Hash { dim: a.dim },
    };
    let embedder = choice.provider()?;
    let llm = a.llm.provider()?;
    let mut opts = CompileOptions {
        params: ClusterParams {
            branching: a.p,
            max_roots: a.k,
            min_size: a.min_size,
            seed: a.seed,
            ..ClusterParams::default()
        },
        compact: a.compact,
        ..CompileOptions::default()
    };
    opts.summarization.concurrency = a.workers.max(1);
    let (_, report) = pipeline::compile(&a.corpus, &a.out, &opts, llm.as_ref(), embedder.as_ref())?;
    std::fs::write(a.out.join(EMBEDDER_FILE), serde_json::to_string_pretty(&choice)?)?;

    println!("documents      {}", report.documents);
    println!("levels         {}", report.levels);
    for s in &report.level_stats {
        println!(
            "  level {}: {} items -> k={} -> {} clusters ({} after merge)",
            s.level, s.input_items, s.requested_k, s.pre_merge, s.post_merge
        );
    }
    println!("skills         {}", report.roots);
    println!("files          {}", report.navigation_files);
    println!("llm calls      {}", report.llm_calls);
    println!("wall time      {:.2}s", report.wall_seconds);
    println!("digest         {}", report.forest_digest);
    for v in &report.limit_violations {
        println!("limit exceeded {v}");
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let gold = pipeline::load_gold(&a.queries)?;
    let compiled = Compiled::open(&a.out)?;
    let embedder = EmbedderChoice::load(&a.out)?.provider()?;
    let llm = a.llm.provider()?;
    let mut opts = EvalOptions {
        method: a.method,
        max_turns: a.max_turns,
        top_k: a.top_k,
        workers: a.workers.max(1),
        cache_accounting: !a.no_cache,
        ..EvalOptions::default()
    };
    if let Some(p) = &a.judge_prompts {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        opts.judge_prompts = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
    }
    let judge = a.judge.then_some(llm.as_ref());
    let report = pipeline::evaluate(&compiled, &gold, &opts, llm.as_ref(), embedder.as_ref(), judge)?;
    let dir = a
        .report_dir
        .unwrap_or_else(|| a.out.join(format!("eval-{}", a.method.name())));
    pipeline::write_report(&report, &dir)?;
    print!("{}", report.summary_table());
    println!("reports in {}", dir.display());
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    let compiled = Compiled::open(&a.out)?;
    let llm = a.llm.provider()?;
    let cfg = AgentConfig {
        max_turns: a.max_turns,
        ..AgentConfig::default()
    };
    let model = CompletionAgentModel::new(llm.as_ref(), cfg.max_tokens);
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for line in std::io::stdin().lock().lines() {
        let query = line?;
        if query.trim().is_empty() {
            continue;
        }
        let trace = match a.method {
            Method::Navigate => run_agent(&query, &compiled.forest, &compiled.store, &model, &cfg)?,
            Method::Scripted => scripted_navigate(&query, &compiled.forest, &compiled.store, a.max_turns as usize),
            other => bail!("serve supports navigate and scripted, not {}", other.name()),
        };
        writeln!(out, "{}", serde_json::to_string(&trace.record())?)?;
        out.flush()?;
    }
    Ok(())
}

fn inspect(a: InspectArgs) -> Result<()> {
    if let Some(path) = &a.path {
        println!("{}", tool_view(&a.out, path)?);
        return Ok(());
    }
    let forest = SkillForest::open(&a.out)?;
    println!(
        "forest {} ({})",
        a.out.display(),
        if forest.compact { "compact" } else { "full" }
    );
    for ((name, description), info) in forest.skill_descriptions()?.into_iter().zip(&forest.skills) {
        println!("{name}  [{} files, {} bytes]", info.file_count, info.bytes);
        println!("    {description}");
    }
    println!(
        "{} documents, {} navigation files",
        forest.load_documents()?.len(),
        forest.file_count()
    );
    Ok(())
}

/// Returns whether the forest fits the limits.
fn limits_check(a: LimitsArgs) -> Result<bool> {
    let forest = SkillForest::open(&a.out)?;
    let limits = ApiLimits {
        max_skills: a.max_skills,
        max_files_per_skill: a.max_files,
        max_bytes_per_skill: a.max_bytes,
    };
    let violations = check_limits(&forest, &limits);
    println!("{}", serde_json::to_string_pretty(&violations)?);
    Ok(violations.is_empty())
}

fn generate(a: GenerateArgs) -> Result<()> {
    let spec = match &a.spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            TaxonomySpec::from_json(&text)?
        }
        None => {
            let spec = TaxonomySpec::balanced(&a.fanouts, a.docs_per_leaf, a.seed).with_collapsed(a.collapsed);
            spec.validate()?;
            spec
        }
    };
    let corpus = generate_corpus(&spec, &a.out)?;
    println!(
        "{} documents and {} gold queries in {}",
        corpus.docs.len(),
        corpus.gold.len(),
        a.out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Compile(a) => compile(a).map(|()| true),
        Command::Eval(a) => eval(a).map(|()| true),
        Command::Serve(a) => serve(a).map(|()| true),
        Command::Inspect(a) => inspect(a).map(|()| true),
        Command::LimitsCheck(a) => limits_check(a),
        Command::Generate(a) => generate(a).map(|()| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
