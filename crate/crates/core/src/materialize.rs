//! Skill-forest materialization.
//!
//! Layout under the output directory:
//!
//! ```text
//! skill-00-{label}/SKILL.md
//! skill-00-{label}/group-03-{label}/INDEX.md
//! skill-00-{label}/group-03-{label}/group-01/INDEX.md
//! documents.json
//! manifest.json
//! ```
//!
//! Navigation files are plain markdown with a fixed frontmatter block. The
//! renderer emits one line per paragraph so that [`parse_navigation_file`]
//! followed by [`render_navigation_file`] reproduces the bytes exactly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::CorpusManifest;
use crate::hierarchy::{Hierarchy, HierarchyNode};
use crate::text::{collapse_whitespace, sentences, truncate_chars};

pub const SKILL_FILE: &str = "SKILL.md";
pub const INDEX_FILE: &str = "INDEX.md";
pub const DOCUMENTS_FILE: &str = "documents.json";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Longest one-line subgroup summary, in characters.
pub const ONE_LINE_MAX: usize = 150;

const SUBGROUPS_HEADING: &str = "### Sub-groups (directories)";
const SUBGROUPS_HINT: &str = "Read the INDEX.md in each sub-group to understand what it covers.";
const DOCS_HINT: &str = "Use get_document tool with the doc_id to read full content.";

#[derive(Debug, Error)]
pub enum MaterializeError {
    #[error("node {0} has no summary")]
    MissingSummary(String),
    #[error("node {0} has no label")]
    MissingLabel(String),
    #[error("node {0} is referenced but missing from the hierarchy")]
    UnknownNode(String),
    #[error("document {0} is listed in the hierarchy but not in the manifest")]
    UnknownDocument(String),
    #[error("malformed frontmatter: {0}")]
    MalformedFrontmatter(String),
    #[error("unknown section: {0}")]
    UnknownSection(String),
    #[error("output directory {path} is not writable: {source}")]
    OutDirNotWritable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid {path}: {reason}")]
    InvalidStore { path: PathBuf, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> MaterializeError + '_ {
    move |source| MaterializeError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FileKind {
    Skill,
    Index,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frontmatter {
    pub name: String,
    pub description: String,
    pub level: u32,
    pub num_documents: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubgroupEntry {
    pub dir: String,
    pub doc_count: usize,
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DocEntry {
    pub doc_id: String,
    pub title: String,
}

/// A leaf group inlined into its parent file in compact mode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompactSection {
    pub name: String,
    pub doc_count: usize,
    pub summary: String,
    pub documents: Vec<DocEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Contents {
    Subgroups(Vec<SubgroupEntry>),
    Documents(Vec<DocEntry>),
    Sections(Vec<CompactSection>),
}

impl Contents {
    /// Documents this listing accounts for.
    pub fn doc_total(&self) -> usize {
        match self {
            Contents::Subgroups(s) => s.iter().map(|e| e.doc_count).sum(),
            Contents::Documents(d) => d.len(),
            Contents::Sections(s) => s.iter().map(|c| c.documents.len()).sum(),
        }
    }

    /// Doc ids listed directly in this file.
    pub fn doc_ids(&self) -> Vec<&str> {
        match self {
            Contents::Subgroups(_) => Vec::new(),
            Contents::Documents(d) => d.iter().map(|e| e.doc_id.as_str()).collect(),
            Contents::Sections(s) => s
                .iter()
                .flat_map(|c| c.documents.iter().map(|e| e.doc_id.as_str()))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NavigationFile {
    pub kind: FileKind,
    pub frontmatter: Frontmatter,
    pub overview: String,
    pub contents: Contents,
}

/// One paragraph of plain text: whitespace collapsed, leading markdown markers dropped.
fn paragraph(text: &str) -> String {
    collapse_whitespace(text)
        .trim_start_matches(|c: char| matches!(c, '#' | '-' | '*' | '>' | '`') || c.is_whitespace())
        .to_string()
}

/// Frontmatter description: first two sentences of the summary.
pub fn description_of(summary: &str) -> String {
    let p = paragraph(summary);
    let first: Vec<String> = sentences(&p).into_iter().take(2).collect();
    first.join(" ")
}

/// Subgroup bullet text: first sentence, capped at [`ONE_LINE_MAX`] characters.
pub fn one_line_of(summary: &str) -> String {
    let p = paragraph(summary);
    let first = sentences(&p).into_iter().next().unwrap_or_default();
    truncate_chars(&first, ONE_LINE_MAX).trim_end().to_string()
}

pub fn render_navigation_file(file: &NavigationFile) -> String {
    let fm = &file.frontmatter;
    let mut out = String::new();
    out.push_str("---\n");
    let _ = writeln!(out, "name: {}", fm.name);
    let _ = writeln!(out, "description: >\n  {}", fm.description);
    let _ = writeln!(out, "level: {}", fm.level);
    let _ = writeln!(out, "num_documents: {}", fm.num_documents);
    out.push_str("---\n\n## Overview\n\n");
    out.push_str(&file.overview);
    out.push_str("\n\n## Contents\n\n");
    match &file.contents {
        Contents::Subgroups(entries) => {
            let _ = write!(out, "{SUBGROUPS_HEADING}\n\n{SUBGROUPS_HINT}\n\n");
            for e in entries {
                let _ = writeln!(out, "- **{}/** ({} docs): {}", e.dir, e.doc_count, e.summary);
            }
        }
        Contents::Documents(docs) => {
            let _ = write!(out, "### Documents ({} items)\n\n{DOCS_HINT}\n\n", docs.len());
            push_doc_lines(&mut out, docs);
        }
        Contents::Sections(sections) => {
            let _ = writeln!(out, "{DOCS_HINT}");
            for s in sections {
                let _ = write!(out, "\n### {} ({} docs)\n\n{}\n\n", s.name, s.doc_count, s.summary);
                push_doc_lines(&mut out, &s.documents);
            }
        }
    }
    out
}

fn push_doc_lines(out: &mut String, docs: &[DocEntry]) {
    for d in docs {
        let _ = writeln!(out, "- `{}`: {}", d.doc_id, d.title);
    }
}

fn is_skill_name(name: &str) -> bool {
    let b = name.as_bytes();
    name.starts_with("skill-") && b.len() > 9 && b[6].is_ascii_digit() && b[7].is_ascii_digit() && b[8] == b'-'
}

fn malformed(msg: impl Into<String>) -> MaterializeError {
    MaterializeError::MalformedFrontmatter(msg.into())
}

fn parse_frontmatter(lines: &[&str]) -> Result<Frontmatter, MaterializeError> {
    let mut fields: BTreeMap<&str, String> = BTreeMap::new();
    let mut i = 0;
    while i < lines.len() {
        let line = lines[i];
        i += 1;
        if line.trim().is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once(':')
            .ok_or_else(|| malformed(format!("expected `key: value`, got {line:?}")))?;
        let key = key.trim();
        let mut value = value.trim().to_string();
        if matches!(value.as_str(), ">" | "|" | ">-" | "|-") {
            let mut parts = Vec::new();
            while i < lines.len() && (lines[i].starts_with(' ') || lines[i].starts_with('\t')) {
                parts.push(lines[i].trim());
                i += 1;
            }
            value = parts.join(" ");
        }
        fields.insert(key, value);
    }
    let take = |k: &str| {
        fields
            .get(k)
            .cloned()
            .ok_or_else(|| malformed(format!("missing `{k}`")))
    };
    let num = |k: &str| -> Result<usize, MaterializeError> {
        take(k)?
            .parse()
            .map_err(|_| malformed(format!("`{k}` is not a non-negative integer")))
    };
    Ok(Frontmatter {
        name: take("name")?,
        description: take("description")?,
        level: num("level")? as u32,
        num_documents: num("num_documents")?,
    })
}

/// Folds indented continuation lines into the line above them.
fn logical_lines(lines: &[&str]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for &l in lines {
        let continues = l.starts_with("  ") && out.last().is_some_and(|p| !p.is_empty() && !p.starts_with('#'));
        if continues {
            let last = out.last_mut().expect("checked above");
            last.push(' ');
            last.push_str(l.trim());
        } else {
            out.push(l.trim_end().to_string());
        }
    }
    out
}

fn parse_doc_line(line: &str) -> Option<DocEntry> {
    let rest = line.strip_prefix("- `")?;
    let (id, title) = rest.split_once('`')?;
    let title = title.strip_prefix(':')?;
    Some(DocEntry {
        doc_id: id.to_string(),
        title: title.strip_prefix(' ').unwrap_or(title).to_string(),
    })
}

fn parse_subgroup_line(line: &str) -> Option<SubgroupEntry> {
    let rest = line.strip_prefix("- **")?;
    let (dir, rest) = rest.split_once("/**")?;
    let rest = rest.trim_start().strip_prefix('(')?;
    let (n, rest) = rest.split_once(" docs)")?;
    let summary = rest.strip_prefix(':').unwrap_or(rest);
    Some(SubgroupEntry {
        dir: dir.to_string(),
        doc_count: n.trim().parse().ok()?,
        summary: summary.strip_prefix(' ').unwrap_or(summary).to_string(),
    })
}

/// `"{name} ({n} docs)"` → `(name, n)`.
fn parse_section_heading(h: &str) -> Option<(String, usize)> {
    let inner = h.strip_suffix(" docs)")?;
    let (name, n) = inner.rsplit_once(" (")?;
    Some((name.to_string(), n.parse().ok()?))
}

enum Block {
    None,
    Subgroups(Vec<SubgroupEntry>),
    Documents(Vec<DocEntry>),
    Sections(Vec<CompactSection>),
}

/// Parses a SKILL.md / INDEX.md back into its structure.
///
/// Accepts the renderer's output as well as hand-wrapped files whose long
/// lines continue on lines indented by two spaces.
pub fn parse_navigation_file(text: &str) -> Result<NavigationFile, MaterializeError> {
    let lines: Vec<&str> = text.lines().collect();
    if lines.first().map(|l| l.trim_end()) != Some("---") {
        return Err(malformed("file does not start with ---"));
    }
    let close = lines[1..]
        .iter()
        .position(|l| l.trim_end() == "---")
        .map(|p| p + 1)
        .ok_or_else(|| malformed("missing closing ---"))?;
    let frontmatter = parse_frontmatter(&lines[1..close])?;
    let kind = if is_skill_name(&frontmatter.name) {
        FileKind::Skill
    } else {
        FileKind::Index
    };

    let body = logical_lines(&lines[close + 1..]);
    let mut overview: Vec<&str> = Vec::new();
    let mut in_overview = false;
    let mut in_contents = false;
    let mut block = Block::None;
    for line in &body {
        let line = line.as_str();
        if let Some(h) = line.strip_prefix("## ") {
            match h.trim() {
                "Overview" if !in_overview && !in_contents => in_overview = true,
                "Contents" if !in_contents => {
                    in_overview = false;
                    in_contents = true;
                }
                other => return Err(MaterializeError::UnknownSection(other.to_string())),
            }
            continue;
        }
        if let Some(h) = line.strip_prefix("### ") {
            if !in_contents {
                return Err(MaterializeError::UnknownSection(h.to_string()));
            }
            let h = h.trim();
            if h == "Sub-groups (directories)" && matches!(block, Block::None) {
                block = Block::Subgroups(Vec::new());
            } else if h.starts_with("Documents (") && h.ends_with(" items)") && matches!(block, Block::None) {
                block = Block::Documents(Vec::new());
            } else if let Some((name, doc_count)) = parse_section_heading(h) {
                let section = CompactSection {
                    name,
                    doc_count,
                    summary: String::new(),
                    documents: Vec::new(),
                };
                match &mut block {
                    Block::None => block = Block::Sections(vec![section]),
                    Block::Sections(s) => s.push(section),
                    _ => return Err(MaterializeError::UnknownSection(h.to_string())),
                }
            } else {
                return Err(MaterializeError::UnknownSection(h.to_string()));
            }
            continue;
        }
        if in_overview {
            if !line.trim().is_empty() {
                overview.push(line.trim());
            }
            continue;
        }
        if !in_contents || line.trim().is_empty() {
            continue;
        }
        match &mut block {
            Block::Subgroups(v) => {
                if let Some(e) = parse_subgroup_line(line) {
                    v.push(e);
                }
            }
            Block::Documents(v) => {
                if let Some(e) = parse_doc_line(line) {
                    v.push(e);
                }
            }
            Block::Sections(v) => {
                let cur = v.last_mut().expect("sections start non-empty");
                if let Some(e) = parse_doc_line(line) {
                    cur.documents.push(e);
                } else if cur.documents.is_empty() {
                    if !cur.summary.is_empty() {
                        cur.summary.push(' ');
                    }
                    cur.summary.push_str(line.trim());
                }
            }
            Block::None => {}
        }
    }
    if !in_contents {
        return Err(MaterializeError::UnknownSection("missing ## Contents".into()));
    }
    let contents = match block {
        Block::Subgroups(v) => Contents::Subgroups(v),
        Block::Documents(v) => Contents::Documents(v),
        Block::Sections(v) => Contents::Sections(v),
        Block::None => Contents::Documents(Vec::new()),
    };
    Ok(NavigationFile {
        kind,
        frontmatter,
        overview: overview.join(" "),
        contents,
    })
}

fn require_summary(node: &HierarchyNode) -> Result<(), MaterializeError> {
    if node.summary.trim().is_empty() {
        return Err(MaterializeError::MissingSummary(node.node_id.clone()));
    }
    Ok(())
}

fn require_label(node: &HierarchyNode) -> Result<&str, MaterializeError> {
    node.label
        .as_deref()
        .filter(|l| !l.is_empty())
        .ok_or_else(|| MaterializeError::MissingLabel(node.node_id.clone()))
}

fn navigation_file(
    kind: FileKind,
    name: String,
    node: &HierarchyNode,
    contents: Contents,
) -> Result<NavigationFile, MaterializeError> {
    require_summary(node)?;
    Ok(NavigationFile {
        kind,
        frontmatter: Frontmatter {
            name,
            description: description_of(&node.summary),
            level: node.level,
            num_documents: contents.doc_total(),
        },
        overview: paragraph(&node.summary),
        contents,
    })
}

/// Root-level file of skill `skill_dir`.
pub fn render_skill_md(root: &HierarchyNode, skill_dir: &str, contents: Contents) -> Result<String, MaterializeError> {
    require_summary(root)?;
    require_label(root)?;
    let file = navigation_file(FileKind::Skill, skill_dir.to_string(), root, contents)?;
    Ok(render_navigation_file(&file))
}

/// Nested file. Labeled nodes are named after their label, leaf groups after their node id.
pub fn render_index_md(node: &HierarchyNode, contents: Contents) -> Result<String, MaterializeError> {
    let name = node.label.clone().unwrap_or_else(|| node.node_id.clone());
    let file = navigation_file(FileKind::Index, name, node, contents)?;
    Ok(render_navigation_file(&file))
}

pub fn skill_dir_name(index: usize, label: &str) -> String {
    format!("skill-{index:02}-{label}")
}

pub fn group_dir_name(index: usize, label: Option<&str>) -> String {
    match label {
        Some(l) => format!("group-{index:02}-{l}"),
        None => format!("group-{index:02}"),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredDocument {
    pub title: String,
    pub text: String,
    pub source_path: String,
}

/// Size of one skill directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkillInfo {
    pub name: String,
    pub file_count: usize,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkillForest {
    pub root_dir: PathBuf,
    pub skills: Vec<SkillInfo>,
    pub documents_store_path: PathBuf,
    pub compact: bool,
}

impl SkillForest {
    pub fn file_count(&self) -> usize {
        self.skills.iter().map(|s| s.file_count).sum()
    }

    /// Re-reads a forest written earlier.
    pub fn open(root_dir: &Path) -> Result<Self, MaterializeError> {
        let mut skills = Vec::new();
        let mut compact = false;
        let entries = fs::read_dir(root_dir).map_err(io_err(root_dir))?;
        let mut names: Vec<String> = Vec::new();
        for e in entries {
            let e = e.map_err(io_err(root_dir))?;
            let name = e.file_name().to_string_lossy().into_owned();
            if is_skill_name(&name) && e.path().is_dir() {
                names.push(name);
            }
        }
        names.sort();
        for name in names {
            let dir = root_dir.join(&name);
            let files = navigation_files(&dir)?;
            let mut bytes = 0;
            for f in &files {
                let text = fs::read_to_string(f).map_err(io_err(f))?;
                bytes += text.len() as u64;
                if !compact && matches!(parse_navigation_file(&text)?.contents, Contents::Sections(_)) {
                    compact = true;
                }
            }
            skills.push(SkillInfo {
                name,
                file_count: files.len(),
                bytes,
            });
        }
        Ok(Self {
            root_dir: root_dir.to_path_buf(),
            skills,
            documents_store_path: root_dir.join(DOCUMENTS_FILE),
            compact,
        })
    }

    /// Skill name plus frontmatter description, in directory order.
    pub fn skill_descriptions(&self) -> Result<Vec<(String, String)>, MaterializeError> {
        self.skills
            .iter()
            .map(|s| {
                let path = self.root_dir.join(&s.name).join(SKILL_FILE);
                let text = fs::read_to_string(&path).map_err(io_err(&path))?;
                let f = parse_navigation_file(&text)?;
                Ok((s.name.clone(), f.frontmatter.description))
            })
            .collect()
    }

    pub fn load_documents(&self) -> Result<BTreeMap<String, StoredDocument>, MaterializeError> {
        let path = &self.documents_store_path;
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| MaterializeError::InvalidStore {
            path: path.clone(),
            reason: e.to_string(),
        })
    }
}

/// All SKILL.md / INDEX.md files below `dir`, sorted by path.
pub fn navigation_files(dir: &Path) -> Result<Vec<PathBuf>, MaterializeError> {
    let mut out = Vec::new();
    for e in walkdir::WalkDir::new(dir).sort_by_file_name() {
        let e = e.map_err(|err| MaterializeError::Io {
            path: dir.to_path_buf(),
            source: err.into(),
        })?;
        if e.file_type().is_file() {
            let n = e.file_name();
            if n == SKILL_FILE || n == INDEX_FILE {
                out.push(e.into_path());
            }
        }
    }
    Ok(out)
}

/// Child directory names paired with their nodes.
type Subdirs<'a> = Vec<(String, &'a HierarchyNode)>;

struct Writer<'a> {
    hier: &'a Hierarchy,
    titles: BTreeMap<&'a str, &'a str>,
    compact: bool,
}

impl<'a> Writer<'a> {
    fn node(&self, id: &str) -> Result<&'a HierarchyNode, MaterializeError> {
        self.hier
            .node(id)
            .ok_or_else(|| MaterializeError::UnknownNode(id.to_string()))
    }

    fn doc_entries(&self, node: &HierarchyNode) -> Result<Vec<DocEntry>, MaterializeError> {
        node.member_doc_ids
            .iter()
            .map(|id| {
                let title = self
                    .titles
                    .get(id.as_str())
                    .ok_or_else(|| MaterializeError::UnknownDocument(id.clone()))?;
                Ok(DocEntry {
                    doc_id: id.clone(),
                    title: collapse_whitespace(title),
                })
            })
            .collect()
    }

    fn children(&self, node: &HierarchyNode) -> Result<Vec<&'a HierarchyNode>, MaterializeError> {
        node.child_node_ids.iter().map(|c| self.node(c)).collect()
    }

    fn inline_children(&self, node: &HierarchyNode) -> bool {
        self.compact && node.level == 2
    }

    /// Contents of `node`'s file; subdirectory names come back alongside the children.
    fn contents(&self, node: &'a HierarchyNode) -> Result<(Contents, Subdirs<'a>), MaterializeError> {
        if node.is_leaf() {
            return Ok((Contents::Documents(self.doc_entries(node)?), Vec::new()));
        }
        let kids = self.children(node)?;
        if self.inline_children(node) {
            let mut sections = Vec::with_capacity(kids.len());
            for (i, k) in kids.iter().enumerate() {
                require_summary(k)?;
                let documents = self.doc_entries(k)?;
                sections.push(CompactSection {
                    name: group_dir_name(i, k.label.as_deref()),
                    doc_count: documents.len(),
                    summary: paragraph(&k.summary),
                    documents,
                });
            }
            return Ok((Contents::Sections(sections), Vec::new()));
        }
        let mut entries = Vec::with_capacity(kids.len());
        let mut dirs = Vec::with_capacity(kids.len());
        for (i, k) in kids.into_iter().enumerate() {
            require_summary(k)?;
            let label = if k.is_leaf() { None } else { Some(require_label(k)?) };
            let dir = group_dir_name(i, label);
            entries.push(SubgroupEntry {
                dir: dir.clone(),
                doc_count: k.num_documents,
                summary: one_line_of(&k.summary),
            });
            dirs.push((dir, k));
        }
        Ok((Contents::Subgroups(entries), dirs))
    }

    fn write_subtree(
        &self,
        node: &'a HierarchyNode,
        dir: &Path,
        skill_name: Option<&str>,
    ) -> Result<(), MaterializeError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let (contents, kids) = self.contents(node)?;
        let (file, text) = match skill_name {
            Some(name) => (SKILL_FILE, render_skill_md(node, name, contents)?),
            None => (INDEX_FILE, render_index_md(node, contents)?),
        };
        let path = dir.join(file);
        fs::write(&path, text).map_err(io_err(&path))?;
        for (name, kid) in kids {
            self.write_subtree(kid, &dir.join(name), None)?;
        }
        Ok(())
    }
}

/// Removes artifacts of an earlier forest so stale skills cannot linger.
fn clear_previous(out_dir: &Path) -> Result<(), MaterializeError> {
    for e in fs::read_dir(out_dir).map_err(io_err(out_dir))? {
        let e = e.map_err(io_err(out_dir))?;
        let name = e.file_name().to_string_lossy().into_owned();
        let path = e.path();
        if is_skill_name(&name) && path.is_dir() {
            fs::remove_dir_all(&path).map_err(io_err(&path))?;
        }
    }
    Ok(())
}

/// Writes the forest, `documents.json` and `manifest.json` under `out_dir`.
///
/// In compact mode leaf groups get no directory; their document lists become
/// sections of the parent file.
pub fn write_forest(
    hier: &Hierarchy,
    manifest: &CorpusManifest,
    out_dir: &Path,
    compact: bool,
) -> Result<SkillForest, MaterializeError> {
    fs::create_dir_all(out_dir).map_err(|source| MaterializeError::OutDirNotWritable {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let probe = out_dir.join(".write-probe");
    fs::write(&probe, b"").map_err(|source| MaterializeError::OutDirNotWritable {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let _ = fs::remove_file(&probe);
    clear_previous(out_dir)?;

    let writer = Writer {
        hier,
        titles: manifest
            .documents
            .iter()
            .map(|d| (d.id.as_str(), d.title.as_str()))
            .collect(),
        compact,
    };
    for (i, root) in hier.roots.iter().enumerate() {
        let root = writer.node(root)?;
        let name = skill_dir_name(i, require_label(root)?);
        writer.write_subtree(root, &out_dir.join(&name), Some(&name))?;
    }

    let store: BTreeMap<&str, StoredDocument> = manifest
        .documents
        .iter()
        .map(|d| {
            (
                d.id.as_str(),
                StoredDocument {
                    title: d.title.clone(),
                    text: d.text.clone(),
                    source_path: d.source_path.clone(),
                },
            )
        })
        .collect();
    let store_path = out_dir.join(DOCUMENTS_FILE);
    let json = serde_json::to_string_pretty(&store).expect("store serializes");
    fs::write(&store_path, json).map_err(io_err(&store_path))?;
    let manifest_path = out_dir.join(MANIFEST_FILE);
    fs::write(&manifest_path, manifest.to_json()).map_err(io_err(&manifest_path))?;

    let mut forest = SkillForest::open(out_dir)?;
    forest.compact = compact;
    Ok(forest)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiLimits {
    pub max_skills: usize,
    pub max_files_per_skill: usize,
    pub max_bytes_per_skill: u64,
}

impl Default for ApiLimits {
    fn default() -> Self {
        Self {
            max_skills: 8,
            max_files_per_skill: 200,
            max_bytes_per_skill: 30 * 1024 * 1024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LimitViolation {
    TooManySkills { count: usize, max: usize },
    TooManyFiles { skill: String, count: usize, max: usize },
    TooManyBytes { skill: String, bytes: u64, max: u64 },
}

impl std::fmt::Display for LimitViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LimitViolation::TooManySkills { count, max } => write!(f, "{count} skills (limit {max})"),
            LimitViolation::TooManyFiles { skill, count, max } => {
                write!(f, "{skill}: {count} files (limit {max})")
            }
            LimitViolation::TooManyBytes { skill, bytes, max } => {
                write!(f, "{skill}: {bytes} bytes (limit {max})")
            }
        }
    }
}

/// Empty when the forest fits the limits.
pub fn check_limits(forest: &SkillForest, limits: &ApiLimits) -> Vec<LimitViolation> {
    let mut out = Vec::new();
    if forest.skills.len() > limits.max_skills {
        out.push(LimitViolation::TooManySkills {
            count: forest.skills.len(),
            max: limits.max_skills,
        });
    }
    for s in &forest.skills {
        if s.file_count > limits.max_files_per_skill {
            out.push(LimitViolation::TooManyFiles {
                skill: s.name.clone(),
                count: s.file_count,
                max: limits.max_files_per_skill,
            });
        }
        if s.bytes > limits.max_bytes_per_skill {
            out.push(LimitViolation::TooManyBytes {
                skill: s.name.clone(),
                bytes: s.bytes,
                max: limits.max_bytes_per_skill,
            });
        }
    }
    out
}
