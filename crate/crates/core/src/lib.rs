//! Test-case generation and execution-based re-ranking for text-to-SQL.
//!
//! A test case is a small database plus the result a correct query should
//! produce on it. Candidate queries are re-ranked by how many generated test
//! cases they pass.

pub mod dbgen;
pub mod eval;
pub mod exec;
pub mod oracle;
pub mod par;
pub mod prompt;
pub mod schema;
pub mod sql_refs;
pub mod store;
pub mod suite;
