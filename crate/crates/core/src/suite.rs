//! Candidate classification, test-suite generation and re-ranking.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dbgen::{
    self, constrain_numbers, extract_target_columns, mix64, prune_schema, DatabaseInstance, DbGenError, GenConfig,
};
use crate::exec::{self, outcome_key, results_equal, results_equal_relaxed, CanonicalKey, ExecutionOutcome, ExecutionResult};
use crate::oracle::{Oracle, OraclePrediction, OracleRequest};
use crate::par::Parallelism;
use crate::prompt::{PromptConfig, PromptError};
use crate::schema::ColumnRef;

pub const DEFAULT_MAX_TEST_CASES: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub sql: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probability: Option<f64>,
    pub source_rank: usize,
}

impl Candidate {
    pub fn new(sql: impl Into<String>, probability: Option<f64>, source_rank: usize) -> Self {
        Candidate {
            sql: sql.into(),
            probability,
            source_rank,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestCase {
    pub db: DatabaseInstance,
    pub expected: ExecutionResult,
    pub oracle_tag: String,
}

/// How the representatives split on one database: entry `i` is the index of the
/// first representative whose outcome matches representative `i`'s.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassificationSignature(pub Vec<usize>);

impl ClassificationSignature {
    pub fn from_keys(keys: &[CanonicalKey]) -> Self {
        let mut first: HashMap<&CanonicalKey, usize> = HashMap::new();
        ClassificationSignature(
            keys.iter()
                .enumerate()
                .map(|(i, k)| *first.entry(k).or_insert(i))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn separates(&self, i: usize, j: usize) -> bool {
        self.0[i] != self.0[j]
    }
}

/// Whether every pair of the `n` representatives is separated by some signature.
pub fn distinguishes(signatures: &[ClassificationSignature], n: usize) -> bool {
    (0..n).all(|i| (i + 1..n).all(|j| signatures.iter().any(|s| s.separates(i, j))))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Comparison {
    #[default]
    Relaxed,
    Exact,
}

impl Comparison {
    pub fn matches(self, a: &ExecutionResult, b: &ExecutionResult) -> bool {
        match self {
            Comparison::Relaxed => results_equal_relaxed(a, b),
            Comparison::Exact => results_equal(a, b),
        }
    }
}

impl std::str::FromStr for Comparison {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "relaxed" => Ok(Comparison::Relaxed),
            "exact" => Ok(Comparison::Exact),
            other => Err(format!("unknown comparison mode {other:?}")),
        }
    }
}

/// Ordering of candidates after scoring.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RankPolicy {
    /// Pass count, then probability, then source rank.
    #[default]
    Lexicographic,
    /// `pass_weight * pass_rate + probability_weight * probability`, then source rank.
    Weighted { pass_weight: f64, probability_weight: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    /// Upper bound on loop iterations and therefore on kept test cases.
    pub max_test_cases: usize,
    pub gen: GenConfig,
    pub prompt: PromptConfig,
    pub prune: bool,
    pub constrain_numbers: bool,
    pub comparison: Comparison,
    pub policy: RankPolicy,
    pub timeout_ms: u64,
    pub parallelism: Parallelism,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            max_test_cases: DEFAULT_MAX_TEST_CASES,
            gen: GenConfig::default(),
            prompt: PromptConfig::default(),
            prune: true,
            constrain_numbers: true,
            comparison: Comparison::Relaxed,
            policy: RankPolicy::Lexicographic,
            timeout_ms: exec::DEFAULT_TIMEOUT.as_millis() as u64,
            parallelism: Parallelism::Parallel,
        }
    }
}

impl SuiteConfig {
    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }

    pub fn validate(&self) -> Result<(), SuiteError> {
        if self.max_test_cases == 0 {
            return Err(SuiteError::InvalidConfig("max_test_cases must be at least 1".into()));
        }
        self.gen.validate()?;
        self.prompt.validate()?;
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum SuiteError {
    #[error(transparent)]
    Gen(#[from] DbGenError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("no candidates given")]
    NoCandidates,
    #[error("invalid suite config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    /// Candidate indices per class, classes in order of first member.
    pub classes: Vec<Vec<usize>>,
    /// Index of each class's representative.
    pub representatives: Vec<usize>,
    pub keys: Vec<CanonicalKey>,
}

fn probability_order(a: &Candidate, b: &Candidate) -> Ordering {
    match (a.probability, b.probability) {
        (Some(x), Some(y)) => y.total_cmp(&x),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => Ordering::Equal,
    }
}

/// Groups candidates by their outcome on `db`. Failed executions form one class
/// per failure kind. The representative of a class is its most probable member,
/// ties going to the lower source rank.
pub fn classify_candidates(db: &DatabaseInstance, candidates: &[Candidate], timeout: Duration, mode: Parallelism) -> Classification {
    let sqls: Vec<&str> = candidates.iter().map(|c| c.sql.as_str()).collect();
    let outcomes = exec::execute_all(db, &sqls, timeout, mode);
    let mut classes: Vec<Vec<usize>> = Vec::new();
    let mut keys: Vec<CanonicalKey> = Vec::new();
    for (i, outcome) in outcomes.iter().enumerate() {
        let key = outcome_key(outcome);
        match keys.iter().position(|k| *k == key) {
            Some(c) => classes[c].push(i),
            None => {
                keys.push(key);
                classes.push(vec![i]);
            }
        }
    }
    let representatives = classes
        .iter()
        .map(|members| {
            *members
                .iter()
                .min_by(|&&a, &&b| {
                    probability_order(&candidates[a], &candidates[b])
                        .then(candidates[a].source_rank.cmp(&candidates[b].source_rank))
                })
                .expect("classes are non-empty")
        })
        .collect();
    Classification {
        classes,
        representatives,
        keys,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteStats {
    pub iterations: usize,
    pub dropped_duplicate: usize,
    pub dropped_unavailable: usize,
    pub oracle_calls: usize,
    pub distinguished: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSuite {
    pub representatives: Vec<Candidate>,
    pub cases: Vec<TestCase>,
    /// Signature of each kept case, aligned with `cases`.
    pub signatures: Vec<ClassificationSignature>,
    pub stats: SuiteStats,
}

impl TestSuite {
    pub fn empty(representatives: Vec<Candidate>) -> Self {
        TestSuite {
            representatives,
            cases: Vec::new(),
            signatures: Vec::new(),
            stats: SuiteStats::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }
}

/// Seed for loop iteration `i`, independent across iterations.
pub fn iteration_seed(base: u64, i: usize) -> u64 {
    mix64(base ^ mix64(i as u64 + 1))
}

/// Aggregate/ORDER BY columns of the candidates that can be rewritten: numeric,
/// not part of a primary key, not a foreign-key endpoint.
pub fn constrainable_targets<S: AsRef<str>>(db: &DatabaseInstance, candidate_sqls: &[S]) -> BTreeSet<ColumnRef> {
    let schema = db.schema();
    extract_target_columns(schema, candidate_sqls)
        .columns
        .into_iter()
        .filter(|c| {
            schema
                .table(&c.table)
                .and_then(|t| t.column(&c.column))
                .is_some_and(|col| col.declared_type.is_numeric() && !col.is_primary_key)
                && !schema.is_foreign_key_endpoint(&c.table, &c.column)
        })
        .collect()
}

/// The instance generation starts from: `original`, pruned to what the
/// candidates use when `config.prune` is set.
pub fn generation_base<S: AsRef<str>>(original: &DatabaseInstance, candidate_sqls: &[S], config: &SuiteConfig) -> DatabaseInstance {
    if !config.prune {
        return original.clone();
    }
    let outcome = prune_schema(original, candidate_sqls);
    if outcome.no_candidate_parsed {
        log::warn!("no candidate parsed; generating from the unpruned database");
    }
    outcome.db
}

/// Builds up to `config.max_test_cases` test cases that tell the representatives
/// apart.
///
/// Each iteration generates a database, classifies the representatives on it,
/// drops it when that classification was already seen, and otherwise asks the
/// oracle for the expected result (dropping the case when none is available).
/// The loop ends early once every pair of representatives is separated by some
/// kept case. Fewer than two representatives give an empty suite.
pub fn generate_suite(
    original: &DatabaseInstance,
    representatives: &[Candidate],
    all_candidates: &[Candidate],
    question: &str,
    config: &SuiteConfig,
    oracle: &dyn Oracle,
) -> Result<TestSuite, SuiteError> {
    config.validate()?;
    let mut suite = TestSuite::empty(representatives.to_vec());
    let n = representatives.len();
    if n < 2 {
        return Ok(suite);
    }
    let sqls: Vec<&str> = all_candidates.iter().map(|c| c.sql.as_str()).collect();
    let base = generation_base(original, &sqls, config);
    let targets = if config.constrain_numbers {
        constrainable_targets(&base, &sqls)
    } else {
        BTreeSet::new()
    };
    let rep_sqls: Vec<&str> = representatives.iter().map(|c| c.sql.as_str()).collect();
    let mut seen: BTreeSet<Vec<usize>> = BTreeSet::new();

    for i in 0..config.max_test_cases {
        suite.stats.iterations += 1;
        let gen = config.gen.with_seed(iteration_seed(config.gen.seed, i));
        let mut db = dbgen::generate(&base, &gen)?;
        if !targets.is_empty() {
            db = constrain_numbers(&db, &targets, &gen)?;
        }
        let outcomes = exec::execute_all(&db, &rep_sqls, config.timeout(), config.parallelism);
        let keys: Vec<CanonicalKey> = outcomes.iter().map(outcome_key).collect();
        let signature = ClassificationSignature::from_keys(&keys);
        if seen.contains(&signature.0) {
            suite.stats.dropped_duplicate += 1;
            continue;
        }
        let request = OracleRequest::new(db, question, &config.prompt)?;
        suite.stats.oracle_calls += 1;
        let expected = match oracle.predict(&request) {
            OraclePrediction::Predicted(r) => r,
            OraclePrediction::Unavailable(reason) => {
                log::debug!("oracle unavailable: {reason}");
                suite.stats.dropped_unavailable += 1;
                continue;
            }
        };
        seen.insert(signature.0.clone());
        suite.cases.push(TestCase {
            db: request.db,
            expected,
            oracle_tag: oracle.tag(),
        });
        suite.signatures.push(signature);
        if distinguishes(&suite.signatures, n) {
            suite.stats.distinguished = true;
            break;
        }
    }
    Ok(suite)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidate {
    pub candidate: Candidate,
    pub pass_count: usize,
    /// Per test case, whether the candidate passed it.
    pub passed: Vec<bool>,
}

/// Scores every candidate on every case and orders them by `policy`. An empty
/// suite keeps the input order.
pub fn rerank(
    candidates: &[Candidate],
    suite: &TestSuite,
    comparison: Comparison,
    policy: RankPolicy,
    timeout: Duration,
    mode: Parallelism,
) -> Vec<RankedCandidate> {
    let mut ranked: Vec<RankedCandidate> = candidates
        .iter()
        .map(|c| RankedCandidate {
            candidate: c.clone(),
            pass_count: 0,
            passed: Vec::with_capacity(suite.len()),
        })
        .collect();
    if suite.is_empty() {
        return ranked;
    }
    let sqls: Vec<&str> = candidates.iter().map(|c| c.sql.as_str()).collect();
    for case in &suite.cases {
        let outcomes = exec::execute_all(&case.db, &sqls, timeout, mode);
        for (r, outcome) in ranked.iter_mut().zip(&outcomes) {
            let pass = match outcome {
                ExecutionOutcome::Ok(result) => comparison.matches(result, &case.expected),
                _ => false,
            };
            r.passed.push(pass);
            r.pass_count += pass as usize;
        }
    }
    let cases = suite.len() as f64;
    ranked.sort_by(|a, b| match policy {
        RankPolicy::Lexicographic => b
            .pass_count
            .cmp(&a.pass_count)
            .then_with(|| probability_order(&a.candidate, &b.candidate))
            .then(a.candidate.source_rank.cmp(&b.candidate.source_rank)),
        RankPolicy::Weighted {
            pass_weight,
            probability_weight,
        } => {
            let score = |r: &RankedCandidate| {
                pass_weight * r.pass_count as f64 / cases + probability_weight * r.candidate.probability.unwrap_or(0.0)
            };
            score(b)
                .total_cmp(&score(a))
                .then(a.candidate.source_rank.cmp(&b.candidate.source_rank))
        }
    });
    ranked
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankOutcome {
    pub ranked: Vec<RankedCandidate>,
    /// Classes on the original database; absent when re-ranking a stored suite.
    pub classification: Option<Classification>,
    pub suite: TestSuite,
    pub skipped_all_same: bool,
    pub oracle_unavailable_count: usize,
}

impl RerankOutcome {
    pub fn top(&self) -> &Candidate {
        &self.ranked[0].candidate
    }
}

/// Classifies the candidates on `db`, builds a suite over the class
/// representatives and re-ranks every candidate on it. A single behaviour class
/// leaves the order untouched.
pub fn select_best(
    db: &DatabaseInstance,
    question: &str,
    candidates: &[Candidate],
    config: &SuiteConfig,
    oracle: &dyn Oracle,
) -> Result<RerankOutcome, SuiteError> {
    if candidates.is_empty() {
        return Err(SuiteError::NoCandidates);
    }
    config.validate()?;
    let classification = classify_candidates(db, candidates, config.timeout(), config.parallelism);
    let representatives: Vec<Candidate> = classification
        .representatives
        .iter()
        .map(|&i| candidates[i].clone())
        .collect();
    if classification.classes.len() < 2 {
        return Ok(RerankOutcome {
            ranked: rerank(candidates, &TestSuite::empty(vec![]), config.comparison, config.policy, config.timeout(), config.parallelism),
            classification: Some(classification),
            suite: TestSuite::empty(representatives),
            skipped_all_same: true,
            oracle_unavailable_count: 0,
        });
    }
    let suite = generate_suite(db, &representatives, candidates, question, config, oracle)?;
    let ranked = rerank(candidates, &suite, config.comparison, config.policy, config.timeout(), config.parallelism);
    Ok(RerankOutcome {
        ranked,
        classification: Some(classification),
        oracle_unavailable_count: suite.stats.dropped_unavailable,
        suite,
        skipped_all_same: false,
    })
}
