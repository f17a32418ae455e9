//! Corpora with a planted topic taxonomy and one gold query per document.
//!
//! Every topic owns signature words and a pool of filler words made of
//! pseudo-syllables. Documents are sentences built from the signatures and
//! pools along their topic path, so clustering can recover the taxonomy.
//! With `collapsed` set, all topics draw from one shared pool instead.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::assign_id;

#[derive(Debug, Error)]
pub enum SyntheticError {
    #[error("invalid taxonomy spec: {0}")]
    InvalidSpec(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("spec file: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicSpec {
    pub label: String,
    /// Documents generated for this topic when it is a leaf.
    #[serde(default)]
    pub docs: usize,
    #[serde(default)]
    pub children: Vec<TopicSpec>,
}

impl TopicSpec {
    fn leaf_count(&self) -> usize {
        if self.children.is_empty() {
            1
        } else {
            self.children.iter().map(TopicSpec::leaf_count).sum()
        }
    }

    fn doc_count(&self) -> usize {
        if self.children.is_empty() {
            self.docs
        } else {
            self.children.iter().map(TopicSpec::doc_count).sum()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaxonomySpec {
    pub topics: Vec<TopicSpec>,
    #[serde(default = "default_vocab")]
    pub vocab_per_topic: usize,
    /// Inclusive character range of each document body.
    #[serde(default = "default_length")]
    pub doc_length: (usize, usize),
    #[serde(default)]
    pub seed: u64,
    /// Share one vocabulary across every topic.
    #[serde(default)]
    pub collapsed: bool,
}

fn default_vocab() -> usize {
    40
}

fn default_length() -> (usize, usize) {
    (500, 3000)
}

impl TaxonomySpec {
    /// Uniform tree: `fanouts[0]` roots, each with `fanouts[1]` children, and so on.
    pub fn balanced(fanouts: &[usize], docs_per_leaf: usize, seed: u64) -> Self {
        fn build(prefix: &str, fanouts: &[usize], docs: usize) -> Vec<TopicSpec> {
            let Some((&n, rest)) = fanouts.split_first() else {
                return Vec::new();
            };
            (0..n)
                .map(|i| {
                    let label = if prefix.is_empty() {
                        format!("t{i}")
                    } else {
                        format!("{prefix}.{i}")
                    };
                    TopicSpec {
                        children: build(&label, rest, docs),
                        docs: if rest.is_empty() { docs } else { 0 },
                        label,
                    }
                })
                .collect()
        }
        Self {
            topics: build("", fanouts, docs_per_leaf),
            vocab_per_topic: default_vocab(),
            doc_length: default_length(),
            seed,
            collapsed: false,
        }
    }

    pub fn with_collapsed(mut self, collapsed: bool) -> Self {
        self.collapsed = collapsed;
        self
    }

    pub fn from_json(json: &str) -> Result<Self, SyntheticError> {
        let spec: Self = serde_json::from_str(json)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn doc_count(&self) -> usize {
        self.topics.iter().map(TopicSpec::doc_count).sum()
    }

    pub fn leaf_count(&self) -> usize {
        self.topics.iter().map(TopicSpec::leaf_count).sum()
    }

    pub fn validate(&self) -> Result<(), SyntheticError> {
        let bad = |m: &str| Err(SyntheticError::InvalidSpec(m.to_string()));
        if self.topics.is_empty() {
            return bad("no topics");
        }
        if self.vocab_per_topic < 4 {
            return bad("vocab_per_topic must be at least 4");
        }
        let (lo, hi) = self.doc_length;
        if lo == 0 || lo > hi {
            return bad("doc_length must be a non-empty range of positive lengths");
        }
        if self.doc_count() == 0 {
            return bad("spec generates no documents");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticDoc {
    pub id: String,
    pub file_name: String,
    pub title: String,
    /// Full file contents.
    pub text: String,
    /// Topic labels from root to leaf.
    pub topic_path: Vec<String>,
}

/// One line of `gold.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldPair {
    #[serde(default)]
    pub query_id: String,
    pub query: String,
    pub gold_doc_id: String,
    #[serde(default)]
    pub gold_answer: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticCorpus {
    pub docs: Vec<SyntheticDoc>,
    pub gold: Vec<GoldPair>,
}

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

/// Pronounceable lowercase words, never repeated within one corpus.
struct WordMint {
    rng: ChaCha8Rng,
    used: HashSet<String>,
}

impl WordMint {
    fn word(&mut self, syllables: usize) -> String {
        loop {
            let mut w = String::new();
            for _ in 0..syllables {
                w.push(CONSONANTS[self.rng.gen_range(0..CONSONANTS.len())] as char);
                w.push(VOWELS[self.rng.gen_range(0..VOWELS.len())] as char);
            }
            w.push(CONSONANTS[self.rng.gen_range(0..CONSONANTS.len())] as char);
            if self.used.insert(w.clone()) {
                return w;
            }
        }
    }

    fn words(&mut self, n: usize, syllables: usize) -> Vec<String> {
        (0..n).map(|_| self.word(syllables)).collect()
    }
}

struct Node {
    label: String,
    signature: Vec<String>,
    pool: Vec<String>,
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().collect::<String>() + c.as_str(),
        None => String::new(),
    }
}

struct Generator<'a> {
    spec: &'a TaxonomySpec,
    mint: WordMint,
    rng: ChaCha8Rng,
    shared_pool: Vec<String>,
    docs: Vec<SyntheticDoc>,
    gold: Vec<GoldPair>,
}

impl Generator<'_> {
    fn walk(&mut self, topic: &TopicSpec, path: &mut Vec<Node>) {
        let depth = path.len();
        let is_leaf = topic.children.is_empty();
        // roots and leaves get two signature words, topics in between one
        let n_sig = if depth == 0 || is_leaf { 2 } else { 1 };
        let signature = self.mint.words(n_sig, 2);
        let pool = if self.spec.collapsed {
            Vec::new()
        } else {
            self.mint.words(self.spec.vocab_per_topic, 2)
        };
        path.push(Node {
            label: topic.label.clone(),
            signature,
            pool,
        });
        if is_leaf {
            for _ in 0..topic.docs {
                self.document(path);
            }
        } else {
            for child in &topic.children {
                self.walk(child, path);
            }
        }
        path.pop();
    }

    fn pick_filler(&mut self, path: &[Node]) -> String {
        if self.spec.collapsed {
            return self
                .shared_pool
                .choose(&mut self.rng)
                .expect("pool is non-empty")
                .clone();
        }
        let leaf = path.last().expect("path is non-empty");
        let node = if path.len() == 1 || self.rng.gen_bool(0.6) {
            leaf
        } else {
            &path[self.rng.gen_range(0..path.len() - 1)]
        };
        node.pool.choose(&mut self.rng).expect("pool is non-empty").clone()
    }

    fn sentence(&mut self, path: &[Node], i: usize, anchor: Option<&str>) -> String {
        let mut words: Vec<String> = Vec::new();
        if !self.spec.collapsed {
            let leaf = path.last().expect("path is non-empty");
            words.push(leaf.signature[i % leaf.signature.len()].clone());
            let ancestors: Vec<&String> = path[..path.len() - 1].iter().flat_map(|n| &n.signature).collect();
            if !ancestors.is_empty() {
                words.push(ancestors[i % ancestors.len()].clone());
            }
        }
        let fill = self.rng.gen_range(4..=8);
        for _ in 0..fill {
            words.push(self.pick_filler(path));
        }
        words.shuffle(&mut self.rng);
        if let Some(a) = anchor {
            words.insert(0, a.to_string());
        }
        capitalize(&words.join(" ")) + "."
    }

    fn document(&mut self, path: &[Node]) {
        let unique = self.mint.word(3);
        let leaf = path.last().expect("path is non-empty");
        let title_words = if self.spec.collapsed {
            (0..2).map(|_| self.pick_filler(path)).collect::<Vec<_>>()
        } else {
            leaf.signature.clone()
        };
        let title = capitalize(&format!("{} {unique}", title_words.join(" ")));
        let (lo, hi) = self.spec.doc_length;
        let target = self.rng.gen_range(lo..=hi);
        let mut sentences = vec![self.sentence(path, 0, Some(&unique))];
        let mut len = sentences[0].len();
        let mut i = 1;
        while len < target {
            let s = self.sentence(path, i, None);
            len += s.len() + 1;
            sentences.push(s);
            i += 1;
        }
        let body = sentences.join(" ");
        let text = format!("# {title}\n\n{body}\n");
        let id = assign_id(&text).expect("generated text is non-empty");

        let mut topic_words: Vec<String> = title_words.clone();
        for n in path[..path.len() - 1].iter().rev() {
            if self.spec.collapsed {
                topic_words.push(self.pick_filler(path));
            } else {
                topic_words.extend(n.signature.iter().cloned());
            }
        }
        let query = format!("How does {unique} work for {}?", topic_words.join(" "));
        let n = self.docs.len();
        self.gold.push(GoldPair {
            query_id: format!("q{n:05}"),
            query,
            gold_doc_id: id.clone(),
            gold_answer: sentences[0].clone(),
        });
        self.docs.push(SyntheticDoc {
            id,
            file_name: format!("doc-{n:05}.md"),
            title,
            text,
            topic_path: path.iter().map(|n| n.label.clone()).collect(),
        });
    }
}

/// Builds the corpus in memory. Same spec and seed, same bytes.
pub fn generate(spec: &TaxonomySpec) -> Result<SyntheticCorpus, SyntheticError> {
    spec.validate()?;
    let mut mint = WordMint {
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
        used: HashSet::new(),
    };
    // keep clear of stopwords and other short English words
    for w in ["the", "and", "for", "how", "does", "work"] {
        mint.used.insert(w.to_string());
    }
    let shared_pool = if spec.collapsed {
        mint.words(spec.vocab_per_topic * spec.leaf_count().max(1), 2)
    } else {
        Vec::new()
    };
    let mut g = Generator {
        spec,
        mint,
        rng: ChaCha8Rng::seed_from_u64(spec.seed ^ 0x005e_ed0f_d0c5),
        shared_pool,
        docs: Vec::new(),
        gold: Vec::new(),
    };
    for t in &spec.topics {
        g.walk(t, &mut Vec::new());
    }
    Ok(SyntheticCorpus {
        docs: g.docs,
        gold: g.gold,
    })
}

pub fn gold_to_jsonl(gold: &[GoldPair]) -> String {
    gold.iter()
        .map(|g| serde_json::to_string(g).expect("gold serializes") + "\n")
        .collect()
}

pub fn gold_from_jsonl(text: &str) -> Result<Vec<GoldPair>, SyntheticError> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(SyntheticError::from))
        .collect()
}

/// Writes `corpus/*.md`, `gold.jsonl` and `spec.json` under `out_dir`.
pub fn generate_corpus(spec: &TaxonomySpec, out_dir: &Path) -> Result<SyntheticCorpus, SyntheticError> {
    let corpus = generate(spec)?;
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| SyntheticError::Io { path, source }
    };
    let dir = out_dir.join("corpus");
    fs::create_dir_all(&dir).map_err(io(&dir))?;
    for d in &corpus.docs {
        let p = dir.join(&d.file_name);
        fs::write(&p, &d.text).map_err(io(&p))?;
    }
    let gold = out_dir.join("gold.jsonl");
    fs::write(&gold, gold_to_jsonl(&corpus.gold)).map_err(io(&gold))?;
    let spec_path = out_dir.join("spec.json");
    fs::write(&spec_path, serde_json::to_string_pretty(spec)?).map_err(io(&spec_path))?;
    Ok(corpus)
}
