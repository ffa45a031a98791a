//! End-to-end evaluation of re-ranking on a corpus.

pub mod config;
pub mod corpus;
pub mod report;
pub mod spider;

use std::collections::HashMap;
use std::sync::Arc;

use sha2::{Digest, Sha256};

use crate::dbgen::{mix64, DatabaseInstance};
use crate::exec::{self, results_equal_relaxed, ExecutionOutcome, ExecutionResult};
use crate::oracle::{ChatClient, LlmOracle, Oracle, ReferenceOracle, ReplyCache, SimulatedOracle};
use crate::par;
use crate::store;
use crate::suite::{classify_candidates, select_best, Candidate, RerankOutcome, SuiteConfig};

use config::{OracleConfig, OracleKind, TypeOverrides};
use corpus::CorpusEntry;
use report::{EntryReport, EntryStatus, EvalReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Gate {
    /// Re-rank only lists holding both a correct and an incorrect candidate.
    #[default]
    Mixed,
    None,
}

impl std::str::FromStr for Gate {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "mixed" => Ok(Gate::Mixed),
            "none" => Ok(Gate::None),
            other => Err(format!("unknown gate {other:?}")),
        }
    }
}

/// Which oracle answers for a corpus entry.
#[derive(Clone)]
pub enum OracleChoice {
    /// Executes the entry's gold query.
    Reference,
    /// Gold query answered correctly with probability `p`; the entry's other
    /// candidates serve as wrong answers.
    Simulated { p: f64, seed: u64 },
    /// One oracle shared by all entries.
    Shared(Arc<dyn Oracle>),
}

impl OracleChoice {
    pub fn from_config(config: &OracleConfig, seed: u64) -> Result<Self, String> {
        Ok(match config.kind {
            OracleKind::Reference => OracleChoice::Reference,
            OracleKind::Simulated => OracleChoice::Simulated { p: config.p, seed },
            OracleKind::Remote => {
                let cache = match &config.cache {
                    Some(path) => Some(ReplyCache::open(path).map_err(|e| e.to_string())?),
                    None => None,
                };
                let client = ChatClient::new(config.chat.clone())?;
                let tag = format!("remote:{}", config.chat.model);
                OracleChoice::Shared(Arc::new(LlmOracle::new(Box::new(client), cache, tag)))
            }
            OracleKind::Replay => {
                let path = config.cache.as_ref().ok_or("the replay oracle needs a cache file")?;
                let cache = ReplyCache::open(path).map_err(|e| e.to_string())?;
                OracleChoice::Shared(Arc::new(LlmOracle::replay(cache)))
            }
        })
    }

    pub fn needs_gold(&self) -> bool {
        !matches!(self, OracleChoice::Shared(_))
    }

    pub fn for_entry(&self, gold: Option<&str>, candidates: &[Candidate], timeout: std::time::Duration) -> Result<Arc<dyn Oracle>, String> {
        let gold = || gold.ok_or_else(|| "this oracle needs a gold query".to_string());
        Ok(match self {
            OracleChoice::Reference => Arc::new(ReferenceOracle::new(gold()?, timeout)),
            OracleChoice::Simulated { p, seed } => {
                let decoys = candidates.iter().map(|c| c.sql.clone()).collect();
                Arc::new(SimulatedOracle::new(gold()?, decoys, *p, *seed, timeout))
            }
            OracleChoice::Shared(o) => o.clone(),
        })
    }
}

/// Number stable for a given entry id, mixed into the base seed.
pub fn entry_seed(base: u64, id: &str) -> u64 {
    let digest = Sha256::digest(id.as_bytes());
    let mut word = [0u8; 8];
    word.copy_from_slice(&digest[..8]);
    mix64(base ^ u64::from_le_bytes(word))
}

/// Loads an entry's database and applies any type overrides for its `db_id`.
pub fn load_entry_db(entry: &CorpusEntry, overrides: &HashMap<String, TypeOverrides>) -> Result<DatabaseInstance, String> {
    let db = store::load_instance(&entry.db_file).map_err(|e| e.to_string())?;
    match overrides.get(&entry.db_id) {
        Some(o) => {
            let schema = db.schema().with_type_overrides(o).map_err(|e| e.to_string())?;
            DatabaseInstance::new(schema, db.tables().to_vec()).map_err(|e| e.to_string())
        }
        None => Ok(db),
    }
}

fn correct_flags(outcomes: &[ExecutionOutcome], gold: &ExecutionResult) -> Vec<bool> {
    outcomes
        .iter()
        .map(|o| matches!(o, ExecutionOutcome::Ok(r) if results_equal_relaxed(r, gold)))
        .collect()
}

fn gold_class_distinguished(outcome: &RerankOutcome, correct: &[bool]) -> Option<bool> {
    if outcome.skipped_all_same {
        return None;
    }
    let reps = &outcome.classification.as_ref()?.representatives;
    let g = reps.iter().position(|&r| correct[r])?;
    Some((0..reps.len()).filter(|&j| j != g).all(|j| {
        outcome.suite.signatures.iter().any(|s| s.separates(g, j))
    }))
}

/// Evaluates one entry against its database.
pub fn evaluate_entry(
    entry: &CorpusEntry,
    db: &DatabaseInstance,
    config: &SuiteConfig,
    oracle: &OracleChoice,
    gate: Gate,
) -> EntryReport {
    let fail = |reason: String| EntryReport::failed(&entry.id, &entry.db_id, entry.candidates.len(), reason);
    let Some(gold_sql) = entry.gold_sql.as_deref() else {
        return fail("entry has no gold query".into());
    };
    let timeout = config.timeout();
    let gold = match exec::execute(db, gold_sql, timeout) {
        ExecutionOutcome::Ok(r) => r,
        ExecutionOutcome::SqlError(e) => return fail(format!("gold query failed: {e}")),
        ExecutionOutcome::Timeout => return fail("gold query timed out".into()),
    };
    let candidates = &entry.candidates;
    if candidates.is_empty() {
        return fail("no candidates".into());
    }
    let sqls: Vec<&str> = candidates.iter().map(|c| c.sql.as_str()).collect();
    let outcomes = exec::execute_all(db, &sqls, timeout, config.parallelism);
    let correct = correct_flags(&outcomes, &gold);
    let classification = classify_candidates(db, candidates, timeout, config.parallelism);
    let vote_pick = classification
        .classes
        .iter()
        .zip(&classification.keys)
        .filter(|(_, k)| !k.is_failure())
        .max_by(|(a, _), (b, _)| a.len().cmp(&b.len()).then(b[0].cmp(&a[0])))
        .map(|(members, _)| members[0])
        .unwrap_or(0);

    let mut report = EntryReport {
        status: EntryStatus::Reranked,
        classes: classification.classes.len(),
        pre_correct: correct[0],
        post_correct: correct[0],
        vote_correct: correct[vote_pick],
        top_before: candidates[0].source_rank,
        top_after: candidates[0].source_rank,
        ..fail(String::new())
    };
    if gate == Gate::Mixed {
        if correct.iter().all(|&c| !c) {
            report.status = EntryStatus::GatedNoneCorrect;
            return report;
        }
        if correct.iter().all(|&c| c) {
            report.status = EntryStatus::GatedAllCorrect;
            return report;
        }
    }

    let oracle = match oracle.for_entry(Some(gold_sql), candidates, timeout) {
        Ok(o) => o,
        Err(e) => return fail(e),
    };
    let mut entry_config = config.clone();
    entry_config.gen.seed = entry_seed(config.gen.seed, &entry.id);
    let outcome = match select_best(db, &entry.question, candidates, &entry_config, oracle.as_ref()) {
        Ok(o) => o,
        Err(e) => return fail(e.to_string()),
    };
    let top = outcome.top();
    let top_index = candidates
        .iter()
        .position(|c| c.source_rank == top.source_rank)
        .expect("ranked candidates come from the input");
    report.post_correct = correct[top_index];
    report.top_after = top.source_rank;
    report.suite_size = outcome.suite.len();
    report.oracle_calls = outcome.suite.stats.oracle_calls;
    report.oracle_unavailable = outcome.oracle_unavailable_count;
    report.distinguished = outcome.suite.stats.distinguished;
    report.skipped_all_same = outcome.skipped_all_same;
    report.gold_class_distinguished = gold_class_distinguished(&outcome, &correct);
    report
}

/// Evaluates every entry. Entries run concurrently under `config.parallelism`;
/// the report keeps corpus order.
pub fn evaluate(
    entries: &[CorpusEntry],
    overrides: &HashMap<String, TypeOverrides>,
    config: &SuiteConfig,
    oracle: &OracleChoice,
    gate: Gate,
) -> EvalReport {
    let rows = par::map(config.parallelism, entries, |entry| {
        if oracle.needs_gold() && entry.gold_sql.is_none() {
            return EntryReport::failed(&entry.id, &entry.db_id, entry.candidates.len(), "entry has no gold query".into());
        }
        match load_entry_db(entry, overrides) {
            Ok(db) => evaluate_entry(entry, &db, config, oracle, gate),
            Err(e) => EntryReport::failed(&entry.id, &entry.db_id, entry.candidates.len(), e),
        }
    });
    EvalReport::new(rows)
}
