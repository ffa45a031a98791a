//! Conversion of a Spider-style split plus an external candidates dump into a
//! corpus.

use std::path::Path;

use serde::Deserialize;
use serde_json::Value;

use super::corpus::{parse_candidates, CorpusEntry, ManifestError};

#[derive(Deserialize)]
struct SpiderItem {
    db_id: String,
    question: String,
    #[serde(alias = "SQL")]
    query: Option<String>,
}

/// Builds corpus entries from `split_json` (an array of `{db_id, question, query}`)
/// and `candidates_file`, whose i-th candidate list belongs to the i-th question.
/// The candidates file is either one JSON array of lists or one list per line.
/// Databases are expected at `database_dir/<db_id>/<db_id>.sqlite`.
pub fn import_spider(
    split_json: &Path,
    database_dir: &Path,
    candidates_file: &Path,
    limit: Option<usize>,
) -> Result<Vec<CorpusEntry>, ManifestError> {
    let read = |p: &Path| {
        std::fs::read_to_string(p).map_err(|e| ManifestError::Read {
            path: p.display().to_string(),
            reason: e.to_string(),
        })
    };
    let bad = |p: &Path, reason: String| ManifestError::Read {
        path: p.display().to_string(),
        reason,
    };
    let items: Vec<SpiderItem> =
        serde_json::from_str(&read(split_json)?).map_err(|e| bad(split_json, e.to_string()))?;
    let text = read(candidates_file)?;
    let lists: Vec<Value> = match serde_json::from_str::<Value>(&text) {
        Ok(Value::Array(all)) if all.iter().all(Value::is_array) => all,
        _ => text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| bad(candidates_file, e.to_string())))
            .collect::<Result<_, _>>()?,
    };
    if lists.len() < items.len() {
        log::warn!(
            "{} questions but only {} candidate lists; the rest are skipped",
            items.len(),
            lists.len()
        );
    }
    let take = limit.unwrap_or(usize::MAX);
    items
        .into_iter()
        .zip(lists)
        .take(take)
        .enumerate()
        .map(|(index, (item, list))| {
            let fail = |reason: String| ManifestError::Entry {
                index,
                id: index.to_string(),
                reason,
            };
            let db_file = database_dir.join(&item.db_id).join(format!("{}.sqlite", item.db_id));
            if !db_file.is_file() {
                return Err(fail(format!("database file {} not found", db_file.display())));
            }
            Ok(CorpusEntry {
                id: index.to_string(),
                db_id: item.db_id,
                db_file,
                question: item.question,
                gold_sql: item.query,
                candidates: parse_candidates(&list).map_err(fail)?,
            })
        })
        .collect()
}
