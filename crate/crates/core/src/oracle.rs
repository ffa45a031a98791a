//! Sources of expected results for generated databases.
//!
//! [`ReferenceOracle`] executes a known-correct query. [`LlmOracle`] asks a
//! language model through a [`ReplySource`] and parses its reply, optionally
//! through a [`ReplyCache`]. [`SimulatedOracle`] is a reference oracle that is
//! wrong with a controlled probability.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dbgen::{mix64, Cell, DatabaseInstance};
use crate::exec::{self, outcome_key, results_equal, ExecutionOutcome, ExecutionResult};
use crate::prompt::{build_prompt, parse_answer, Prompt, PromptConfig, PromptError};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleRequest {
    pub prompt: Prompt,
    pub db: DatabaseInstance,
    pub question: String,
    pub request_id: String,
}

impl OracleRequest {
    pub fn new(db: DatabaseInstance, question: &str, config: &PromptConfig) -> Result<Self, PromptError> {
        let prompt = build_prompt(&db, question, config)?;
        let request_id = request_id(&db, question, config);
        Ok(OracleRequest {
            prompt,
            db,
            question: question.to_string(),
            request_id,
        })
    }
}

/// Hex SHA-256 of the canonical JSON form of `(db, question, config)`.
pub fn request_id(db: &DatabaseInstance, question: &str, config: &PromptConfig) -> String {
    let payload = serde_json::json!({
        "db": db,
        "question": question,
        "config": config,
    });
    let bytes = serde_json::to_vec(&payload).expect("serializable");
    hex::encode(Sha256::digest(&bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OraclePrediction {
    Predicted(ExecutionResult),
    Unavailable(String),
}

pub trait Oracle: Send + Sync {
    /// Short backend identifier recorded on every test case.
    fn tag(&self) -> String;
    fn predict(&self, request: &OracleRequest) -> OraclePrediction;
}

/// Executes a known-correct query on the request database.
pub struct ReferenceOracle {
    gold_sql: String,
    timeout: Duration,
}

impl ReferenceOracle {
    pub fn new(gold_sql: impl Into<String>, timeout: Duration) -> Self {
        ReferenceOracle {
            gold_sql: gold_sql.into(),
            timeout,
        }
    }
}

impl Oracle for ReferenceOracle {
    fn tag(&self) -> String {
        "reference".into()
    }

    fn predict(&self, request: &OracleRequest) -> OraclePrediction {
        match exec::execute(&request.db, &self.gold_sql, self.timeout) {
            ExecutionOutcome::Ok(r) => OraclePrediction::Predicted(r),
            ExecutionOutcome::SqlError(e) => OraclePrediction::Unavailable(format!("reference query failed: {e}")),
            ExecutionOutcome::Timeout => OraclePrediction::Unavailable("reference query timed out".into()),
        }
    }
}

/// Reference oracle that answers correctly with probability `p`.
///
/// Whether a request is answered correctly depends only on its request id and
/// `seed`, so raising `p` never turns a correct answer into a wrong one. A wrong
/// answer is the result of one of the `decoys` that differs from the correct
/// result on that database, or a perturbed copy of the correct result when none does.
pub struct SimulatedOracle {
    reference: ReferenceOracle,
    decoys: Vec<String>,
    p: f64,
    seed: u64,
    timeout: Duration,
}

impl SimulatedOracle {
    pub fn new(gold_sql: impl Into<String>, decoys: Vec<String>, p: f64, seed: u64, timeout: Duration) -> Self {
        SimulatedOracle {
            reference: ReferenceOracle::new(gold_sql, timeout),
            decoys,
            p: p.clamp(0.0, 1.0),
            seed,
            timeout,
        }
    }

    fn draws(&self, request_id: &str) -> (f64, u64) {
        let digest = Sha256::digest(request_id.as_bytes());
        let mut word = [0u8; 8];
        word.copy_from_slice(&digest[..8]);
        let base = mix64(u64::from_le_bytes(word) ^ mix64(self.seed));
        let u = (base >> 11) as f64 / (1u64 << 53) as f64;
        (u, mix64(base))
    }
}

fn perturb(r: &ExecutionResult) -> ExecutionResult {
    let mut out = r.clone();
    match out.rows.last_mut().and_then(|row| row.first_mut()) {
        Some(cell) => {
            *cell = match cell {
                Cell::Integer(i) => Cell::Integer(i.wrapping_add(1)),
                Cell::Real(x) => Cell::Real(*x + 1.0),
                Cell::Text(s) => Cell::Text(format!("{s}_")),
                Cell::Null => Cell::Integer(0),
            }
        }
        None => out.rows.push(vec![Cell::Integer(0); out.columns.len()]),
    }
    out
}

impl Oracle for SimulatedOracle {
    fn tag(&self) -> String {
        format!("simulated(p={})", self.p)
    }

    fn predict(&self, request: &OracleRequest) -> OraclePrediction {
        let truth = match self.reference.predict(request) {
            OraclePrediction::Predicted(r) => r,
            other => return other,
        };
        let (u, pick) = self.draws(&request.request_id);
        if u < self.p {
            return OraclePrediction::Predicted(truth);
        }
        let wrong: Vec<ExecutionResult> = self
            .decoys
            .iter()
            .filter_map(|sql| exec::execute(&request.db, sql, self.timeout).into_ok())
            .filter(|r| !results_equal(r, &truth))
            .collect();
        let mut seen = Vec::new();
        let distinct: Vec<ExecutionResult> = wrong
            .into_iter()
            .filter(|r| {
                let key = outcome_key(&ExecutionOutcome::Ok(r.clone()));
                let new = !seen.contains(&key);
                seen.push(key);
                new
            })
            .collect();
        if distinct.is_empty() {
            OraclePrediction::Predicted(perturb(&truth))
        } else {
            OraclePrediction::Predicted(distinct[(pick % distinct.len() as u64) as usize].clone())
        }
    }
}

/// Something that turns prompt text into a raw model reply.
pub trait ReplySource: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String, String>;
}

impl<F> ReplySource for F
where
    F: Fn(&str) -> Result<String, String> + Send + Sync,
{
    fn complete(&self, prompt: &str) -> Result<String, String> {
        self(prompt)
    }
}

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("cache {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cache {path} line {line}: {reason}")]
    Corrupt { path: String, line: usize, reason: String },
}

#[derive(Serialize, Deserialize)]
struct CacheRecord {
    request_id: String,
    timestamp: u64,
    raw_reply: String,
}

/// Append-only JSON-lines store of raw replies keyed by request id. The latest
/// record for a key wins. Writes are serialized through one file handle.
pub struct ReplyCache {
    path: PathBuf,
    entries: Mutex<HashMap<String, String>>,
    writer: Mutex<File>,
}

impl ReplyCache {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, CacheError> {
        let path = path.as_ref().to_path_buf();
        let io = |source| CacheError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut entries = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(&path).map_err(io)?);
            for (n, line) in reader.lines().enumerate() {
                let line = line.map_err(io)?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: CacheRecord = serde_json::from_str(&line).map_err(|e| CacheError::Corrupt {
                    path: path.display().to_string(),
                    line: n + 1,
                    reason: e.to_string(),
                })?;
                entries.insert(record.request_id, record.raw_reply);
            }
        }
        let writer = OpenOptions::new().create(true).append(true).open(&path).map_err(io)?;
        Ok(ReplyCache {
            path,
            entries: Mutex::new(entries),
            writer: Mutex::new(writer),
        })
    }

    pub fn get(&self, request_id: &str) -> Option<String> {
        self.entries.lock().expect("cache lock").get(request_id).cloned()
    }

    pub fn put(&self, request_id: &str, raw_reply: &str) -> Result<(), CacheError> {
        let record = CacheRecord {
            request_id: request_id.to_string(),
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            raw_reply: raw_reply.to_string(),
        };
        let mut line = serde_json::to_string(&record).expect("serializable");
        line.push('\n');
        let mut writer = self.writer.lock().expect("cache lock");
        writer
            .write_all(line.as_bytes())
            .and_then(|_| writer.flush())
            .map_err(|source| CacheError::Io {
                path: self.path.display().to_string(),
                source,
            })?;
        self.entries
            .lock()
            .expect("cache lock")
            .insert(record.request_id, record.raw_reply);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Model-backed oracle. With a cache, hits are answered locally; misses go to
/// the source unless `source` is `None` (pure replay), in which case they are
/// unavailable.
pub struct LlmOracle {
    source: Option<Box<dyn ReplySource>>,
    cache: Option<ReplyCache>,
    tag: String,
}

impl LlmOracle {
    pub fn new(source: Box<dyn ReplySource>, cache: Option<ReplyCache>, tag: impl Into<String>) -> Self {
        LlmOracle {
            source: Some(source),
            cache,
            tag: tag.into(),
        }
    }

    pub fn replay(cache: ReplyCache) -> Self {
        LlmOracle {
            source: None,
            cache: Some(cache),
            tag: "replay".into(),
        }
    }

    pub fn cache(&self) -> Option<&ReplyCache> {
        self.cache.as_ref()
    }

    fn parse(raw: &str) -> OraclePrediction {
        match parse_answer(raw) {
            Ok(r) => OraclePrediction::Predicted(r),
            Err(e) => OraclePrediction::Unavailable(e.to_string()),
        }
    }
}

impl Oracle for LlmOracle {
    fn tag(&self) -> String {
        self.tag.clone()
    }

    fn predict(&self, request: &OracleRequest) -> OraclePrediction {
        if let Some(raw) = self.cache.as_ref().and_then(|c| c.get(&request.request_id)) {
            return Self::parse(&raw);
        }
        let Some(source) = &self.source else {
            return OraclePrediction::Unavailable("cache miss".into());
        };
        match source.complete(&request.prompt.text) {
            Ok(raw) => {
                if let Some(cache) = &self.cache {
                    if let Err(e) = cache.put(&request.request_id, &raw) {
                        log::warn!("{e}");
                    }
                }
                Self::parse(&raw)
            }
            Err(e) => OraclePrediction::Unavailable(e),
        }
    }
}

pub const DEFAULT_API_KEY_ENV: &str = "SQLRERANK_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChatConfig {
    pub base_url: String,
    pub model: String,
    pub api_key_env: String,
    pub retries: u32,
    pub backoff_ms: u64,
    pub request_timeout_ms: u64,
    pub max_in_flight: usize,
}

impl Default for ChatConfig {
    fn default() -> Self {
        ChatConfig {
            base_url: "http://localhost:8000/v1".into(),
            model: "gpt-4".into(),
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            retries: 2,
            backoff_ms: 500,
            request_timeout_ms: 120_000,
            max_in_flight: 4,
        }
    }
}

struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn acquire(&self) -> GateGuard<'_> {
        let mut free = self.free.lock().expect("gate lock");
        while *free == 0 {
            free = self.cv.wait(free).expect("gate lock");
        }
        *free -= 1;
        GateGuard(self)
    }
}

struct GateGuard<'a>(&'a Gate);

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("gate lock") += 1;
        self.0.cv.notify_one();
    }
}

/// Minimal chat-completion client: `POST {base_url}/chat/completions` with a
/// single user message at temperature 0, reading `choices[0].message.content`.
pub struct ChatClient {
    config: ChatConfig,
    api_key: Option<String>,
    http: reqwest::blocking::Client,
    gate: Gate,
}

impl ChatClient {
    pub fn new(config: ChatConfig) -> Result<Self, String> {
        let api_key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.request_timeout_ms))
            .build()
            .map_err(|e| e.to_string())?;
        let gate = Gate {
            free: Mutex::new(config.max_in_flight.max(1)),
            cv: Condvar::new(),
        };
        Ok(ChatClient {
            config,
            api_key,
            http,
            gate,
        })
    }

    fn attempt(&self, prompt: &str) -> Result<String, String> {
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let body = serde_json::json!({
            "model": self.config.model,
            "temperature": 0,
            "messages": [{"role": "user", "content": prompt}],
        });
        let mut req = self.http.post(&url).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| format!("transport: {e}"))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(format!("transport: HTTP {status}"));
        }
        let value: serde_json::Value = resp.json().map_err(|e| format!("transport: bad body: {e}"))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(String::from)
            .ok_or_else(|| "transport: reply has no message content".into())
    }
}

impl ReplySource for ChatClient {
    fn complete(&self, prompt: &str) -> Result<String, String> {
        let _slot = self.gate.acquire();
        let mut last = String::new();
        for attempt in 0..=self.config.retries {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(self.config.backoff_ms << (attempt - 1)));
            }
            match self.attempt(prompt) {
                Ok(reply) => return Ok(reply),
                Err(e) => {
                    log::warn!("chat completion attempt {} failed: {e}", attempt + 1);
                    last = e;
                }
            }
        }
        Err(last)
    }
}
