//! Evaluation reports.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "detail")]
pub enum EntryStatus {
    /// Candidates were re-ranked.
    Reranked,
    /// Gated out: no candidate is correct.
    GatedNoneCorrect,
    /// Gated out: every candidate is correct.
    GatedAllCorrect,
    /// The entry could not be evaluated.
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryReport {
    pub id: String,
    pub db_id: String,
    pub status: EntryStatus,
    pub candidates: usize,
    pub classes: usize,
    pub pre_correct: bool,
    pub post_correct: bool,
    /// Top-1 of the largest behaviour class (majority vote baseline).
    pub vote_correct: bool,
    pub top_before: usize,
    pub top_after: usize,
    pub suite_size: usize,
    pub oracle_calls: usize,
    pub oracle_unavailable: usize,
    pub distinguished: bool,
    /// Whether the suite separates the class matching the gold result from every
    /// other class; `None` when no class matches it or nothing was re-ranked.
    pub gold_class_distinguished: Option<bool>,
    pub skipped_all_same: bool,
}

impl EntryReport {
    pub fn failed(id: &str, db_id: &str, candidates: usize, reason: String) -> Self {
        EntryReport {
            id: id.to_string(),
            db_id: db_id.to_string(),
            status: EntryStatus::Failed(reason),
            candidates,
            classes: 0,
            pre_correct: false,
            post_correct: false,
            vote_correct: false,
            top_before: 0,
            top_after: 0,
            suite_size: 0,
            oracle_calls: 0,
            oracle_unavailable: 0,
            distinguished: false,
            gold_class_distinguished: None,
            skipped_all_same: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub entries: usize,
    pub reranked: usize,
    pub gated_none_correct: usize,
    pub gated_all_correct: usize,
    pub failed: usize,
    pub pre_correct: usize,
    pub post_correct: usize,
    pub vote_correct: usize,
    /// Fractions over all entries that did not fail.
    pub ex_pre: f64,
    pub ex_post: f64,
    pub ex_vote: f64,
    pub reranked_pre_correct: usize,
    pub reranked_post_correct: usize,
    pub oracle_calls: usize,
    pub gold_class_distinguished: usize,
    pub top1_when_gold_distinguished: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Aggregate {
    pub fn compute(entries: &[EntryReport]) -> Self {
        let count = |f: &dyn Fn(&EntryReport) -> bool| entries.iter().filter(|e| f(e)).count();
        let ok = |e: &EntryReport| !matches!(e.status, EntryStatus::Failed(_));
        let scored = count(&ok);
        let pre = count(&|e| ok(e) && e.pre_correct);
        let post = count(&|e| ok(e) && e.post_correct);
        let vote = count(&|e| ok(e) && e.vote_correct);
        let reranked = |e: &EntryReport| e.status == EntryStatus::Reranked;
        Aggregate {
            entries: entries.len(),
            reranked: count(&reranked),
            gated_none_correct: count(&|e| e.status == EntryStatus::GatedNoneCorrect),
            gated_all_correct: count(&|e| e.status == EntryStatus::GatedAllCorrect),
            failed: entries.len() - scored,
            pre_correct: pre,
            post_correct: post,
            vote_correct: vote,
            ex_pre: ratio(pre, scored),
            ex_post: ratio(post, scored),
            ex_vote: ratio(vote, scored),
            reranked_pre_correct: count(&|e| reranked(e) && e.pre_correct),
            reranked_post_correct: count(&|e| reranked(e) && e.post_correct),
            oracle_calls: entries.iter().map(|e| e.oracle_calls).sum(),
            gold_class_distinguished: count(&|e| e.gold_class_distinguished == Some(true)),
            top1_when_gold_distinguished: count(&|e| e.gold_class_distinguished == Some(true) && e.post_correct),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub entries: Vec<EntryReport>,
    pub aggregate: Aggregate,
}

impl EvalReport {
    pub fn new(entries: Vec<EntryReport>) -> Self {
        let aggregate = Aggregate::compute(&entries);
        EvalReport { entries, aggregate }
    }

    /// Whether the stored aggregate equals a recomputation from the rows.
    pub fn is_consistent(&self) -> bool {
        Aggregate::compute(&self.entries) == self.aggregate
    }

    /// Pretty JSON; refuses to serialize an inconsistent report.
    pub fn to_json(&self) -> Result<String, String> {
        if !self.is_consistent() {
            return Err("report aggregate does not match its entries".into());
        }
        let mut s = serde_json::to_string_pretty(self).map_err(|e| e.to_string())?;
        s.push('\n');
        Ok(s)
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<12} {:<20} {:<18} {:>5} {:>4} {:>4} {:>5} {:>6}",
            "id", "db", "status", "cands", "pre", "post", "suite", "calls"
        );
        for e in &self.entries {
            let status = match &e.status {
                EntryStatus::Reranked => "reranked",
                EntryStatus::GatedNoneCorrect => "gated:none",
                EntryStatus::GatedAllCorrect => "gated:all",
                EntryStatus::Failed(_) => "failed",
            };
            let mark = |b: bool| if b { "y" } else { "n" };
            let _ = writeln!(
                out,
                "{:<12} {:<20} {:<18} {:>5} {:>4} {:>4} {:>5} {:>6}",
                e.id,
                e.db_id,
                status,
                e.candidates,
                mark(e.pre_correct),
                mark(e.post_correct),
                e.suite_size,
                e.oracle_calls
            );
        }
        let a = &self.aggregate;
        let _ = writeln!(
            out,
            "entries {} | reranked {} | gated none/all {}/{} | failed {}",
            a.entries, a.reranked, a.gated_none_correct, a.gated_all_correct, a.failed
        );
        let _ = writeln!(
            out,
            "EX before {:.4} | EX after {:.4} | vote baseline {:.4} | oracle calls {}",
            a.ex_pre, a.ex_post, a.ex_vote, a.oracle_calls
        );
        out
    }
}
