//! Corpus manifests: questions, their databases and candidate lists.
//!
//! A corpus is a directory holding `manifest.json`:
//!
//! ```json
//! {"entries": [{"id": "0", "db_id": "concert_singer", "db_file": "db/concert_singer.sqlite",
//!   "question": "...", "gold_sql": "...",
//!   "candidates": [{"sql": "...", "probability": 0.8, "rank": 0}]}]}
//! ```
//!
//! `candidates` may instead be a path to a JSON file holding that array.
//! Relative paths are resolved against the manifest directory.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::suite::Candidate;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("{path}: {reason}")]
    Read { path: String, reason: String },
    #[error("entry {index} ({id}): {reason}")]
    Entry { index: usize, id: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub id: String,
    pub db_id: String,
    pub db_file: PathBuf,
    pub question: String,
    pub gold_sql: Option<String>,
    /// Sorted by source rank.
    pub candidates: Vec<Candidate>,
}

#[derive(Deserialize)]
struct RawManifest {
    entries: Vec<RawEntry>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEntry {
    id: Option<String>,
    db_id: String,
    db_file: PathBuf,
    question: String,
    gold_sql: Option<String>,
    candidates: Value,
}

/// Resolves `path` to the manifest file: a directory means its `manifest.json`.
pub fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

/// Parses a candidate list: an array of `{sql, probability?, rank?}` records or
/// bare SQL strings. Missing ranks default to the record position.
pub fn parse_candidates(value: &Value) -> Result<Vec<Candidate>, String> {
    let items = value.as_array().ok_or("candidates must be an array")?;
    if items.is_empty() {
        return Err("candidate list is empty".into());
    }
    let mut out = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        let candidate = match item {
            Value::String(sql) => Candidate::new(sql.clone(), None, i),
            Value::Object(map) => {
                let sql = map
                    .get("sql")
                    .and_then(Value::as_str)
                    .ok_or_else(|| format!("candidate record {i} has no sql"))?;
                let probability = match map.get("probability") {
                    None | Some(Value::Null) => None,
                    Some(v) => {
                        let p = v
                            .as_f64()
                            .ok_or_else(|| format!("candidate record {i}: probability is not a number"))?;
                        if !(0.0..=1.0).contains(&p) {
                            return Err(format!("candidate record {i}: probability {p} outside [0, 1]"));
                        }
                        Some(p)
                    }
                };
                let rank = match map.get("rank") {
                    None | Some(Value::Null) => i,
                    Some(v) => v
                        .as_u64()
                        .ok_or_else(|| format!("candidate record {i}: rank is not a non-negative integer"))?
                        as usize,
                };
                if let Some(extra) = map.keys().find(|k| !["sql", "probability", "rank"].contains(&k.as_str())) {
                    return Err(format!("candidate record {i}: unknown field {extra:?}"));
                }
                Candidate::new(sql, probability, rank)
            }
            _ => return Err(format!("candidate record {i} is neither a string nor an object")),
        };
        out.push(candidate);
    }
    let mut ranks = HashSet::new();
    if let Some(dup) = out.iter().find(|c| !ranks.insert(c.source_rank)) {
        return Err(format!("duplicate candidate rank {}", dup.source_rank));
    }
    out.sort_by_key(|c| c.source_rank);
    Ok(out)
}

/// Reads a candidates file (`[{sql, probability?, rank?}]`).
pub fn load_candidates(path: impl AsRef<Path>) -> Result<Vec<Candidate>, ManifestError> {
    let path = path.as_ref();
    let err = |reason: String| ManifestError::Read {
        path: path.display().to_string(),
        reason,
    };
    let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
    parse_candidates(&value).map_err(err)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<CorpusEntry>, ManifestError> {
    let manifest = manifest_path(path.as_ref());
    let read_err = |reason: String| ManifestError::Read {
        path: manifest.display().to_string(),
        reason,
    };
    let text = std::fs::read_to_string(&manifest).map_err(|e| read_err(e.to_string()))?;
    let raw: RawManifest = serde_json::from_str(&text).map_err(|e| read_err(e.to_string()))?;
    let base = manifest.parent().unwrap_or_else(|| Path::new("."));
    let mut ids = HashSet::new();
    raw.entries
        .into_iter()
        .enumerate()
        .map(|(index, e)| {
            let id = e.id.unwrap_or_else(|| index.to_string());
            let fail = |reason: String| ManifestError::Entry {
                index,
                id: id.clone(),
                reason,
            };
            if !ids.insert(id.clone()) {
                return Err(fail("duplicate entry id".into()));
            }
            let db_file = base.join(&e.db_file);
            if !db_file.is_file() {
                return Err(fail(format!("database file {} not found", db_file.display())));
            }
            let candidates = match &e.candidates {
                Value::String(file) => {
                    let file = base.join(file);
                    let text = std::fs::read_to_string(&file)
                        .map_err(|x| fail(format!("{}: {x}", file.display())))?;
                    let value: Value = serde_json::from_str(&text)
                        .map_err(|x| fail(format!("{}: {x}", file.display())))?;
                    parse_candidates(&value).map_err(|x| fail(format!("{}: {x}", file.display())))?
                }
                other => parse_candidates(other).map_err(fail)?,
            };
            Ok(CorpusEntry {
                id,
                db_id: e.db_id,
                db_file,
                question: e.question,
                gold_sql: e.gold_sql,
                candidates,
            })
        })
        .collect()
}

#[derive(Serialize)]
struct ManifestOut<'a> {
    entries: Vec<EntryOut<'a>>,
}

#[derive(Serialize)]
struct EntryOut<'a> {
    id: &'a str,
    db_id: &'a str,
    db_file: String,
    question: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    gold_sql: Option<&'a str>,
    candidates: Vec<CandidateOut<'a>>,
}

#[derive(Serialize)]
struct CandidateOut<'a> {
    sql: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    probability: Option<f64>,
    rank: usize,
}

/// Serializes entries in manifest form. `db_file` paths under `base` are written
/// relative to it.
pub fn manifest_json(entries: &[CorpusEntry], base: &Path) -> String {
    let out = ManifestOut {
        entries: entries
            .iter()
            .map(|e| EntryOut {
                id: &e.id,
                db_id: &e.db_id,
                db_file: e
                    .db_file
                    .strip_prefix(base)
                    .unwrap_or(&e.db_file)
                    .display()
                    .to_string(),
                question: &e.question,
                gold_sql: e.gold_sql.as_deref(),
                candidates: e
                    .candidates
                    .iter()
                    .map(|c| CandidateOut {
                        sql: &c.sql,
                        probability: c.probability,
                        rank: c.source_rank,
                    })
                    .collect(),
            })
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&out).expect("serializable");
    s.push('\n');
    s
}
