//! Corpus ingestion: load `.md`, `.txt`, `.json` and `.jsonl` files into
//! content-addressed [`Document`]s.
//!
//! Document ids are the first 16 hex characters of the SHA-256 of the raw
//! (untruncated) text. Identical texts collapse into one document, keeping the
//! first occurrence in `(source_path, record index)` order.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;
use walkdir::WalkDir;

use crate::text::{char_len, truncate_chars};

/// Length of a document id in hex characters.
pub const DOC_ID_LEN: usize = 16;

/// Default truncation limit applied to every document before storage.
pub const DEFAULT_MAX_CHARS: usize = 2_000;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("document text is empty")]
    EmptyDocument,
    #[error("no documents found under {0}")]
    NoDocumentsFound(String),
    #[error("max_chars must be at least 1")]
    InvalidMaxChars,
    #[error("id collision: {id} is shared by two different texts")]
    IdCollision { id: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// A record that could not be turned into a document. Reported, never fatal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MalformedRecord {
    pub source_path: String,
    /// 1-based line for `.jsonl`, 0-based array index for `.json`.
    pub location: Option<usize>,
    pub reason: String,
}

impl std::fmt::Display for MalformedRecord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.location {
            Some(loc) => write!(f, "{}:{}: {}", self.source_path, loc, self.reason),
            None => write!(f, "{}: {}", self.source_path, self.reason),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub title: String,
    pub text: String,
    pub source_path: String,
    pub char_count: usize,
}

/// Manifest entry as persisted in `manifest.json` (no body text).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub title: String,
    pub source_path: String,
    pub char_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusManifest {
    pub documents: Vec<Document>,
    pub max_chars: usize,
}

#[derive(Serialize, Deserialize)]
struct ManifestFile {
    n: usize,
    max_chars: usize,
    documents: Vec<ManifestEntry>,
}

impl CorpusManifest {
    pub fn n(&self) -> usize {
        self.documents.len()
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.id == id)
    }

    pub fn entries(&self) -> Vec<ManifestEntry> {
        self.documents
            .iter()
            .map(|d| ManifestEntry {
                id: d.id.clone(),
                title: d.title.clone(),
                source_path: d.source_path.clone(),
                char_count: d.char_count,
            })
            .collect()
    }

    /// `{"n", "max_chars", "documents": [{id, title, source_path, char_count}]}`.
    pub fn to_json(&self) -> String {
        let file = ManifestFile {
            n: self.n(),
            max_chars: self.max_chars,
            documents: self.entries(),
        };
        serde_json::to_string_pretty(&file).expect("manifest serializes")
    }

    /// Reads a persisted manifest back as `(max_chars, entries)`.
    pub fn entries_from_json(json: &str) -> serde_json::Result<(usize, Vec<ManifestEntry>)> {
        let file: ManifestFile = serde_json::from_str(json)?;
        Ok((file.max_chars, file.documents))
    }
}

/// Result of [`load_corpus`]: the manifest plus any records skipped on the way.
#[derive(Debug, Clone)]
pub struct LoadedCorpus {
    pub manifest: CorpusManifest,
    pub warnings: Vec<MalformedRecord>,
}

/// Full lowercase hex SHA-256 of the raw UTF-8 bytes.
pub fn content_hash(raw_text: &str) -> String {
    hex::encode(Sha256::digest(raw_text.as_bytes()))
}

/// Content-hash document id: the first 16 hex chars of SHA-256(raw bytes).
pub fn assign_id(raw_text: &str) -> Result<String, CorpusError> {
    if raw_text.trim().is_empty() {
        return Err(CorpusError::EmptyDocument);
    }
    let mut full = content_hash(raw_text);
    full.truncate(DOC_ID_LEN);
    Ok(full)
}

/// True for exactly 16 lowercase hex characters.
pub fn is_doc_id(s: &str) -> bool {
    s.len() == DOC_ID_LEN && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'))
}

/// Title rule: first Markdown H1/H2 line, then a JSON `title` field, then the file stem.
fn extract_title(text: &str, record_title: Option<&str>, stem: &str) -> String {
    for line in text.lines() {
        let line = line.trim_start();
        let heading = line.strip_prefix("# ").or_else(|| line.strip_prefix("## "));
        if let Some(h) = heading {
            let h = h.trim();
            if !h.is_empty() {
                return h.to_string();
            }
        }
    }
    if let Some(t) = record_title.map(str::trim).filter(|t| !t.is_empty()) {
        return t.to_string();
    }
    stem.to_string()
}

struct RawRecord {
    index: usize,
    title: Option<String>,
    text: String,
}

fn record_from_value(value: &Value) -> Result<(Option<String>, String), String> {
    let obj = value.as_object().ok_or("record is not a JSON object")?;
    let text = obj
        .get("text")
        .or_else(|| obj.get("content"))
        .ok_or("record has no \"text\" or \"content\" field")?
        .as_str()
        .ok_or("\"text\"/\"content\" is not a string")?;
    let title = obj.get("title").and_then(Value::as_str).map(str::to_string);
    Ok((title, text.to_string()))
}

fn read_records(path: &Path, rel: &str, warnings: &mut Vec<MalformedRecord>) -> Result<Vec<RawRecord>, CorpusError> {
    let raw = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: rel.to_string(),
        source,
    })?;
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    let mut out = Vec::new();
    let mut warn = |location: Option<usize>, reason: String| {
        log::warn!("skipping malformed record {rel}:{location:?}: {reason}");
        warnings.push(MalformedRecord {
            source_path: rel.to_string(),
            location,
            reason,
        });
    };
    match ext.as_str() {
        "md" | "txt" => out.push(RawRecord {
            index: 0,
            title: None,
            text: raw,
        }),
        "json" => match serde_json::from_str::<Value>(&raw) {
            Ok(Value::Array(items)) => {
                for (i, item) in items.iter().enumerate() {
                    match record_from_value(item) {
                        Ok((title, text)) => out.push(RawRecord { index: i, title, text }),
                        Err(reason) => warn(Some(i), reason),
                    }
                }
            }
            Ok(value) => match record_from_value(&value) {
                Ok((title, text)) => out.push(RawRecord { index: 0, title, text }),
                Err(reason) => warn(None, reason),
            },
            Err(e) => warn(None, format!("invalid JSON: {e}")),
        },
        "jsonl" => {
            for (i, line) in raw.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let parsed = serde_json::from_str::<Value>(line)
                    .map_err(|e| format!("invalid JSON: {e}"))
                    .and_then(|v| record_from_value(&v));
                match parsed {
                    Ok((title, text)) => out.push(RawRecord { index: i, title, text }),
                    Err(reason) => warn(Some(i + 1), reason),
                }
            }
        }
        _ => {}
    }
    Ok(out)
}

fn is_supported(path: &Path) -> bool {
    matches!(
        path.extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref(),
        Some("md" | "txt" | "json" | "jsonl")
    )
}

/// Recursively loads every supported file under `dir`.
///
/// Files are visited in sorted relative-path order, records within a file in
/// file order, so the result does not depend on directory enumeration order.
pub fn load_corpus(dir: &Path, max_chars: usize) -> Result<LoadedCorpus, CorpusError> {
    if max_chars == 0 {
        return Err(CorpusError::InvalidMaxChars);
    }
    if !dir.is_dir() {
        return Err(CorpusError::NoDocumentsFound(dir.display().to_string()));
    }
    let mut files: Vec<(String, std::path::PathBuf)> = Vec::new();
    for entry in WalkDir::new(dir).follow_links(false) {
        let entry = entry.map_err(|e| CorpusError::Io {
            path: dir.display().to_string(),
            source: e.into(),
        })?;
        if !entry.file_type().is_file() || !is_supported(entry.path()) {
            continue;
        }
        let rel = entry
            .path()
            .strip_prefix(dir)
            .unwrap_or(entry.path())
            .components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect::<Vec<_>>()
            .join("/");
        files.push((rel, entry.path().to_path_buf()));
    }
    files.sort();

    let mut warnings = Vec::new();
    let mut documents = Vec::new();
    let mut seen: HashMap<String, String> = HashMap::new();
    for (rel, path) in &files {
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        for record in read_records(path, rel, &mut warnings)? {
            let id = match assign_id(&record.text) {
                Ok(id) => id,
                Err(_) => {
                    let location = (!rel.ends_with(".md") && !rel.ends_with(".txt")).then_some(record.index);
                    warnings.push(MalformedRecord {
                        source_path: rel.clone(),
                        location,
                        reason: "empty document text".into(),
                    });
                    continue;
                }
            };
            let full = content_hash(&record.text);
            if let Some(prev) = seen.get(&id) {
                if *prev != full {
                    return Err(CorpusError::IdCollision { id });
                }
                log::debug!("dropping duplicate text in {rel} (id {id})");
                continue;
            }
            seen.insert(id.clone(), full);
            let title = extract_title(&record.text, record.title.as_deref(), &stem);
            let text = truncate_chars(&record.text, max_chars).to_string();
            documents.push(Document {
                id,
                title,
                char_count: char_len(&text),
                text,
                source_path: rel.clone(),
            });
        }
    }
    if documents.is_empty() {
        return Err(CorpusError::NoDocumentsFound(dir.display().to_string()));
    }
    Ok(LoadedCorpus {
        manifest: CorpusManifest { documents, max_chars },
        warnings,
    })
}
