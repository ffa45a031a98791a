//! New database instances with the same schema as a source database.
//!
//! Two generators are provided: [`fuzz_database`] draws fresh cell values by
//! column type, [`sample_database`] copies whole rows out of the source. Both
//! keep every foreign key satisfied. [`constrain_numbers`] and [`prune_schema`]
//! post-process an instance to make it easier to reason about by hand.

mod constrain;
mod fuzz;
mod instance;
mod prune;
mod sample;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::SchemaError;

pub use constrain::{constrain_numbers, extract_target_columns, TargetExtraction};
pub use fuzz::fuzz_database;
pub use instance::{Cell, CellKey, DatabaseInstance, FkViolation, TableData};
pub use prune::{prune_schema, PruneOutcome};
pub use sample::sample_database;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DbGenError {
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("{table}.{column} is a foreign-key endpoint and cannot be rewritten")]
    TargetIsForeignKey { table: String, column: String },
    #[error("unknown column {table}.{column}")]
    UnknownColumn { table: String, column: String },
    #[error("invalid generation config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GenMethod {
    Fuzzing,
    RandomSelection,
}

impl std::str::FromStr for GenMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "fuzzing" | "fuzz" => Ok(GenMethod::Fuzzing),
            "random-selection" | "random_selection" | "sampling" => Ok(GenMethod::RandomSelection),
            other => Err(format!("unknown generation method {other:?}")),
        }
    }
}

/// Parameters shared by the generators.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenConfig {
    /// Maximum table size.
    pub mts: usize,
    pub method: GenMethod,
    pub seed: u64,
    /// Inclusive range used by [`constrain_numbers`].
    pub constrained_range: (i64, i64),
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            mts: 5,
            method: GenMethod::RandomSelection,
            seed: 0,
            constrained_range: (1, 10),
        }
    }
}

impl GenConfig {
    pub fn new(mts: usize, method: GenMethod, seed: u64) -> Result<Self, DbGenError> {
        let config = GenConfig {
            mts,
            method,
            seed,
            ..Default::default()
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), DbGenError> {
        if self.mts == 0 {
            return Err(DbGenError::InvalidConfig("mts must be at least 1".into()));
        }
        if self.constrained_range.0 > self.constrained_range.1 {
            return Err(DbGenError::InvalidConfig(
                "constrained_range is empty".into(),
            ));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        GenConfig {
            seed,
            ..self.clone()
        }
    }
}

/// Runs the generator selected by `config.method`.
pub fn generate(original: &DatabaseInstance, config: &GenConfig) -> Result<DatabaseInstance, DbGenError> {
    config.validate()?;
    match config.method {
        GenMethod::Fuzzing => fuzz_database(original.schema(), config),
        GenMethod::RandomSelection => sample_database(original, config),
    }
}

/// Independent RNG streams for the different generators, all derived from one seed.
pub(crate) fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix64(seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)))
}

/// splitmix64 finalizer.
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
