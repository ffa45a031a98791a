//! Run configuration read from TOML.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dbgen::{GenConfig, GenMethod};
use crate::oracle::ChatConfig;
use crate::par::Parallelism;
use crate::prompt::{load_example_pool, DbFormat, PromptConfig, PromptError, DEFAULT_SHOTS};
use crate::schema::DeclaredType;
use crate::suite::{Comparison, RankPolicy, SuiteConfig, DEFAULT_MAX_TEST_CASES};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config {path}: {reason}")]
    Read { path: String, reason: String },
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("type overrides {path}: {reason}")]
    Overrides { path: String, reason: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OracleKind {
    #[default]
    Reference,
    Simulated,
    Remote,
    Replay,
}

impl std::str::FromStr for OracleKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "reference" => Ok(OracleKind::Reference),
            "simulated" => Ok(OracleKind::Simulated),
            "remote" => Ok(OracleKind::Remote),
            "replay" => Ok(OracleKind::Replay),
            other => Err(format!("unknown oracle {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    pub kind: OracleKind,
    /// Probability of a correct answer for the simulated oracle.
    pub p: f64,
    /// Cache file for remote replies; required for replay.
    pub cache: Option<PathBuf>,
    #[serde(flatten)]
    pub chat: ChatConfig,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            kind: OracleKind::Reference,
            p: 0.7,
            cache: None,
            chat: ChatConfig::default(),
        }
    }
}

/// Every key is optional; see the README for the defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mts: usize,
    pub method: GenMethod,
    pub seed: u64,
    pub constrained_range: (i64, i64),
    pub format: DbFormat,
    /// Defaults to 7, or the pool size when the pool is smaller.
    pub shots: Option<usize>,
    pub n: usize,
    pub comparison: Comparison,
    pub policy: RankPolicy,
    pub workers: usize,
    pub prune: bool,
    pub constrain_numbers: bool,
    pub timeout_ms: u64,
    pub example_pool: Option<PathBuf>,
    pub type_overrides: Option<PathBuf>,
    pub oracle: OracleConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let suite = SuiteConfig::default();
        let gen = GenConfig::default();
        RunConfig {
            mts: gen.mts,
            method: gen.method,
            seed: gen.seed,
            constrained_range: gen.constrained_range,
            format: DbFormat::Csv,
            shots: None,
            n: DEFAULT_MAX_TEST_CASES,
            comparison: suite.comparison,
            policy: suite.policy,
            workers: 0,
            prune: suite.prune,
            constrain_numbers: suite.constrain_numbers,
            timeout_ms: suite.timeout_ms,
            example_pool: None,
            type_overrides: None,
            oracle: OracleConfig::default(),
        }
    }
}

/// `(table, column) -> type` overrides for one database.
pub type TypeOverrides = HashMap<(String, String), DeclaredType>;

impl RunConfig {
    /// Reads a TOML file. Relative paths inside it are resolved against the
    /// file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let err = |reason: String| ConfigError::Read {
            path: path.display().to_string(),
            reason,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let mut config: RunConfig = toml::from_str(&text).map_err(|e| err(e.to_string()))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        for p in [
            &mut config.example_pool,
            &mut config.type_overrides,
            &mut config.oracle.cache,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }

    pub fn gen_config(&self) -> Result<GenConfig, ConfigError> {
        let gen = GenConfig {
            mts: self.mts,
            method: self.method,
            seed: self.seed,
            constrained_range: self.constrained_range,
        };
        gen.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(gen)
    }

    pub fn prompt_config(&self) -> Result<PromptConfig, ConfigError> {
        let pool = match &self.example_pool {
            Some(p) => load_example_pool(p)?,
            None => Vec::new(),
        };
        let shots = self.shots.unwrap_or(DEFAULT_SHOTS.min(pool.len()));
        Ok(PromptConfig::new(self.format, shots, pool)?)
    }

    pub fn suite_config(&self) -> Result<SuiteConfig, ConfigError> {
        let config = SuiteConfig {
            max_test_cases: self.n,
            gen: self.gen_config()?,
            prompt: self.prompt_config()?,
            prune: self.prune,
            constrain_numbers: self.constrain_numbers,
            comparison: self.comparison,
            policy: self.policy,
            timeout_ms: self.timeout_ms,
            parallelism: if self.workers == 1 {
                Parallelism::Sequential
            } else {
                Parallelism::Parallel
            },
        };
        config.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(config)
    }

    /// Loads `type_overrides`: a JSON object mapping database ids to objects of
    /// `"table.column": "type label"`.
    pub fn load_type_overrides(&self) -> Result<HashMap<String, TypeOverrides>, ConfigError> {
        let Some(path) = &self.type_overrides else {
            return Ok(HashMap::new());
        };
        let err = |reason: String| ConfigError::Overrides {
            path: path.display().to_string(),
            reason,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let raw: HashMap<String, HashMap<String, String>> =
            serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        raw.into_iter()
            .map(|(db_id, cols)| {
                let parsed = cols
                    .into_iter()
                    .map(|(key, label)| {
                        let (t, c) = key
                            .split_once('.')
                            .ok_or_else(|| err(format!("{db_id}: key {key:?} is not table.column")))?;
                        Ok(((t.to_string(), c.to_string()), DeclaredType::from_label(&label)))
                    })
                    .collect::<Result<TypeOverrides, ConfigError>>()?;
                Ok((db_id, parsed))
            })
            .collect()
    }
}
