use std::collections::BTreeSet;

use super::{DatabaseInstance, TableData};
use crate::schema::{ident_eq, ColumnRef, SchemaGraph, TableDef};
use crate::sql_refs::{self, QueryRefs};

#[derive(Debug, Clone, PartialEq)]
pub struct PruneOutcome {
    pub db: DatabaseInstance,
    /// `(candidate index, parse error)` for skipped candidates.
    pub skipped: Vec<(usize, String)>,
    /// Set when no candidate parsed; `db` is then the unmodified input.
    pub no_candidate_parsed: bool,
}

/// Drops every table and column that no candidate references.
///
/// Kept: each table named by some candidate, with the columns the candidates use
/// (`*` counts as all of them) plus both columns of every foreign key between two
/// kept tables. A kept table with no used column keeps its primary key (or its
/// first column) so that row counts survive.
pub fn prune_schema<S: AsRef<str>>(db: &DatabaseInstance, candidate_sqls: &[S]) -> PruneOutcome {
    let schema = db.schema();
    let mut refs = QueryRefs::default();
    let mut skipped = Vec::new();
    let mut parsed = 0usize;
    for (i, sql) in candidate_sqls.iter().enumerate() {
        match sql_refs::analyze(schema, sql.as_ref()) {
            Ok(r) => {
                parsed += 1;
                refs.merge(r);
            }
            Err(e) => {
                log::warn!("skipping candidate {i} for pruning: {e}");
                skipped.push((i, e));
            }
        }
    }
    if parsed == 0 {
        return PruneOutcome {
            db: db.clone(),
            skipped,
            no_candidate_parsed: true,
        };
    }

    let kept_table = |name: &str| refs.tables.iter().any(|t| ident_eq(t, name));
    let foreign_keys: Vec<_> = schema
        .foreign_keys()
        .iter()
        .filter(|fk| kept_table(&fk.child_table) && kept_table(&fk.parent_table))
        .cloned()
        .collect();
    let mut needed: BTreeSet<ColumnRef> = refs.columns.clone();
    for fk in &foreign_keys {
        needed.insert(ColumnRef::new(fk.child_table.clone(), fk.child_column.clone()));
        needed.insert(ColumnRef::new(fk.parent_table.clone(), fk.parent_column.clone()));
    }

    let mut defs = Vec::new();
    let mut data = Vec::new();
    for (def, table) in schema.tables().iter().zip(db.tables()) {
        if !kept_table(&def.name) {
            continue;
        }
        let mut keep: Vec<usize> = (0..def.columns.len())
            .filter(|&i| {
                needed
                    .iter()
                    .any(|c| ident_eq(&c.table, &def.name) && ident_eq(&c.column, &def.columns[i].name))
            })
            .collect();
        if keep.is_empty() {
            keep = def.primary_key_indices();
            if keep.is_empty() && !def.columns.is_empty() {
                keep.push(0);
            }
        }
        defs.push(TableDef::new(
            def.name.clone(),
            keep.iter().map(|&i| def.columns[i].clone()).collect(),
        ));
        data.push(TableData {
            table_name: def.name.clone(),
            columns: keep.iter().map(|&i| table.columns[i].clone()).collect(),
            rows: table
                .rows
                .iter()
                .map(|r| keep.iter().map(|&i| r[i].clone()).collect())
                .collect(),
        });
    }

    let pruned_schema = SchemaGraph::new(defs, foreign_keys).expect("subset of a valid schema");
    let db = DatabaseInstance::new(pruned_schema, data).expect("projection of a valid instance");
    PruneOutcome {
        db,
        skipped,
        no_candidate_parsed: false,
    }
}
