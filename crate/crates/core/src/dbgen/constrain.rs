use std::collections::BTreeSet;

use rand::Rng;

use super::{rng_for, Cell, DatabaseInstance, DbGenError, GenConfig};
use crate::schema::{ColumnRef, SchemaGraph};
use crate::sql_refs;

const STREAM: u64 = 3;

/// Replaces every cell of the target columns with an independent uniform integer
/// from `config.constrained_range`. Other cells are left untouched.
pub fn constrain_numbers(
    db: &DatabaseInstance,
    targets: &BTreeSet<ColumnRef>,
    config: &GenConfig,
) -> Result<DatabaseInstance, DbGenError> {
    config.validate()?;
    let schema = db.schema();
    let mut resolved = Vec::with_capacity(targets.len());
    for target in targets {
        let unknown = || DbGenError::UnknownColumn {
            table: target.table.clone(),
            column: target.column.clone(),
        };
        let def = schema.table(&target.table).ok_or_else(unknown)?;
        let col = def.column_index(&target.column).ok_or_else(unknown)?;
        if schema.is_foreign_key_endpoint(&def.name, &target.column) {
            return Err(DbGenError::TargetIsForeignKey {
                table: def.name.clone(),
                column: def.columns[col].name.clone(),
            });
        }
        resolved.push((def.name.clone(), col));
    }

    let (lo, hi) = config.constrained_range;
    let mut rng = rng_for(config.seed, STREAM);
    let mut out = db.clone();
    for (table, col) in resolved {
        let data = out.table_mut(&table).expect("resolved");
        for row in data.rows.iter_mut() {
            row[col] = Cell::Integer(rng.random_range(lo..=hi));
        }
    }
    Ok(out)
}

/// Result of scanning candidate queries for aggregate and ORDER BY columns.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TargetExtraction {
    pub columns: BTreeSet<ColumnRef>,
    /// `(candidate index, parse error)` for every candidate that was skipped.
    pub skipped: Vec<(usize, String)>,
}

/// Union over candidates of the columns used inside SUM/AVG/MIN/MAX/COUNT or in
/// ORDER BY, resolved through aliases against `schema`. Unparsable candidates are
/// skipped and reported.
pub fn extract_target_columns<S: AsRef<str>>(schema: &SchemaGraph, candidate_sqls: &[S]) -> TargetExtraction {
    let mut out = TargetExtraction::default();
    for (i, sql) in candidate_sqls.iter().enumerate() {
        match sql_refs::analyze(schema, sql.as_ref()) {
            Ok(refs) => out.columns.extend(refs.targets),
            Err(e) => {
                log::warn!("skipping candidate {i} for target extraction: {e}");
                out.skipped.push((i, e));
            }
        }
    }
    out
}
