use std::collections::{BTreeSet, HashSet};

use rand::seq::index;

use super::{rng_for, Cell, CellKey, DatabaseInstance, DbGenError, GenConfig};
use crate::schema::ident_eq;

const STREAM: u64 = 2;

/// Generates a database by copying rows of `original`.
///
/// Tables are visited children first. Each table starts with every source row
/// referenced by the rows already picked for its child tables, then is topped up
/// to `config.mts` with distinct rows drawn uniformly from the rest. Rows
/// referenced through a self-referencing key are pulled in until closed. Referenced
/// rows are never dropped, so a table can exceed `mts`. Row order follows the source.
pub fn sample_database(original: &DatabaseInstance, config: &GenConfig) -> Result<DatabaseInstance, DbGenError> {
    config.validate()?;
    let schema = original.schema();
    let order = schema.reverse_topo_order()?;
    let mut rng = rng_for(config.seed, STREAM);
    let mut picked: Vec<Option<BTreeSet<usize>>> = vec![None; schema.tables().len()];

    for name in order {
        let t = schema.table_index(&name).expect("from schema");
        let source = &original.tables()[t];
        let mut chosen: BTreeSet<usize> = BTreeSet::new();

        for fk in schema.foreign_keys_into(&name).filter(|fk| !fk.is_self_reference()) {
            let c = schema.table_index(&fk.child_table).expect("validated");
            let Some(child_rows) = &picked[c] else { continue };
            let child = &original.tables()[c];
            let ci = child.column_index(&fk.child_column).expect("validated");
            let wanted: HashSet<CellKey> = child_rows
                .iter()
                .map(|&r| &child.rows[r][ci])
                .filter(|v| !v.is_null())
                .map(Cell::key)
                .collect();
            let pi = source.column_index(&fk.parent_column).expect("validated");
            chosen.extend(
                source
                    .rows
                    .iter()
                    .enumerate()
                    .filter(|(_, row)| wanted.contains(&row[pi].key()))
                    .map(|(i, _)| i),
            );
        }

        if chosen.len() < config.mts {
            let rest: Vec<usize> = (0..source.rows.len()).filter(|i| !chosen.contains(i)).collect();
            let k = (config.mts - chosen.len()).min(rest.len());
            chosen.extend(index::sample(&mut rng, rest.len(), k).into_iter().map(|i| rest[i]));
        }

        let self_refs: Vec<(usize, usize)> = schema
            .foreign_keys_from(&name)
            .filter(|fk| fk.is_self_reference())
            .map(|fk| {
                (
                    source.column_index(&fk.child_column).expect("validated"),
                    source.column_index(&fk.parent_column).expect("validated"),
                )
            })
            .collect();
        loop {
            let before = chosen.len();
            for &(ci, pi) in &self_refs {
                let wanted: HashSet<CellKey> = chosen
                    .iter()
                    .map(|&r| &source.rows[r][ci])
                    .filter(|v| !v.is_null())
                    .map(Cell::key)
                    .collect();
                let extra: Vec<usize> = source
                    .rows
                    .iter()
                    .enumerate()
                    .filter(|(_, row)| wanted.contains(&row[pi].key()))
                    .map(|(i, _)| i)
                    .collect();
                chosen.extend(extra);
            }
            if chosen.len() == before {
                break;
            }
        }

        picked[t] = Some(chosen);
    }

    let mut out = DatabaseInstance::empty(schema.clone());
    for (t, rows) in picked.into_iter().enumerate() {
        let source = &original.tables()[t];
        let target = out
            .table_mut(&schema.tables()[t].name)
            .expect("from schema");
        debug_assert!(ident_eq(&target.table_name, &source.table_name));
        target.rows = rows
            .unwrap_or_default()
            .into_iter()
            .map(|r| source.rows[r].clone())
            .collect();
    }
    Ok(out)
}
