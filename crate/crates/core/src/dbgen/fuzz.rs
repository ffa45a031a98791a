use std::collections::HashSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{rng_for, Cell, CellKey, DatabaseInstance, DbGenError, GenConfig};
use crate::schema::{ident_eq, DeclaredType, SchemaGraph, TableDef};

const STREAM: u64 = 1;
const MAX_ATTEMPTS: usize = 64;

enum Source {
    Random(DeclaredType),
    /// Values of already generated parent columns; `None` when the parents share no value.
    Pool(Option<Vec<Cell>>),
    /// References another column of the same table.
    SelfRef(usize),
}

/// Generates a database by drawing every cell at random, `config.mts` rows per table.
///
/// Tables are filled parents first. A foreign-key child column draws uniformly from
/// the values already generated in its parent column; every other column draws by
/// declared type:
/// * Integer: uniform in `[0, 100]`, widened to `[0, 2*mts]` for primary keys when needed
/// * Real: uniform in `[0, 100]`, two decimals
/// * Text and anything else: 3 to 10 lowercase ASCII letters
///
/// Primary-key tuples are kept unique by redrawing. A table whose key domain is
/// too small (children of a parent with fewer distinct keys than `mts`) ends up
/// with fewer rows rather than duplicate keys.
pub fn fuzz_database(schema: &SchemaGraph, config: &GenConfig) -> Result<DatabaseInstance, DbGenError> {
    config.validate()?;
    let order = schema.topo_order_parents_first()?;
    let mut rng = rng_for(config.seed, STREAM);
    let mut db = DatabaseInstance::empty(schema.clone());
    for name in order {
        let def = schema.table(&name).expect("from schema");
        let rows = fuzz_table(schema, def, &db, config.mts, &mut rng);
        db.table_mut(&name).expect("from schema").rows = rows;
    }
    Ok(db)
}

fn column_sources(schema: &SchemaGraph, def: &TableDef, db: &DatabaseInstance) -> Vec<Source> {
    def.columns
        .iter()
        .map(|col| {
            let fks: Vec<_> = schema
                .foreign_keys_from(&def.name)
                .filter(|fk| ident_eq(&fk.child_column, &col.name))
                .collect();
            let (self_refs, external): (Vec<_>, Vec<_>) =
                fks.into_iter().partition(|fk| fk.is_self_reference());
            if !external.is_empty() {
                let mut pools = external.iter().map(|fk| {
                    let parent = db.table(&fk.parent_table).expect("validated");
                    let idx = parent.column_index(&fk.parent_column).expect("validated");
                    parent
                        .column_values(idx)
                        .filter(|c| !c.is_null())
                        .cloned()
                        .collect::<Vec<_>>()
                });
                let first = pools.next().unwrap_or_default();
                let others: Vec<HashSet<CellKey>> =
                    pools.map(|p| p.iter().map(Cell::key).collect()).collect();
                let pool: Vec<Cell> = first
                    .into_iter()
                    .filter(|c| others.iter().all(|o| o.contains(&c.key())))
                    .collect();
                Source::Pool(if pool.is_empty() { None } else { Some(pool) })
            } else if let Some(fk) = self_refs.first() {
                Source::SelfRef(def.column_index(&fk.parent_column).expect("validated"))
            } else {
                Source::Random(col.declared_type.clone())
            }
        })
        .collect()
}

fn fuzz_table(
    schema: &SchemaGraph,
    def: &TableDef,
    db: &DatabaseInstance,
    mts: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<Cell>> {
    let sources = column_sources(schema, def, db);
    let key_columns: Vec<usize> = def
        .primary_key_indices()
        .into_iter()
        .filter(|&i| !matches!(sources[i], Source::SelfRef(_)))
        .collect();
    let int_upper = 100.max(2 * mts as i64);

    let mut seen: HashSet<Vec<CellKey>> = HashSet::new();
    let mut rows = Vec::with_capacity(mts);
    for _ in 0..mts {
        for _ in 0..MAX_ATTEMPTS {
            let row: Vec<Cell> = sources
                .iter()
                .enumerate()
                .map(|(i, src)| match src {
                    Source::Random(ty) => {
                        let upper = if def.columns[i].is_primary_key { int_upper } else { 100 };
                        draw(ty, upper, rng)
                    }
                    Source::Pool(Some(pool)) => pool[rng.random_range(0..pool.len())].clone(),
                    Source::Pool(None) | Source::SelfRef(_) => Cell::Null,
                })
                .collect();
            if key_columns.is_empty() {
                rows.push(row);
                break;
            }
            let key: Vec<CellKey> = key_columns.iter().map(|&i| row[i].key()).collect();
            if seen.insert(key) {
                rows.push(row);
                break;
            }
        }
    }

    // self references: sample from the referenced column of the rows just made,
    // resolving chains inside the table in dependency order
    let mut pending: Vec<(usize, usize)> = sources
        .iter()
        .enumerate()
        .filter_map(|(i, s)| match s {
            Source::SelfRef(p) => Some((i, *p)),
            _ => None,
        })
        .collect();
    while !pending.is_empty() {
        let ready = pending
            .iter()
            .position(|&(_, p)| !pending.iter().any(|&(c, _)| c == p))
            .unwrap_or(0);
        let (child, parent) = pending.remove(ready);
        let values: Vec<Cell> = rows
            .iter()
            .map(|r| r[parent].clone())
            .filter(|c| !c.is_null())
            .collect();
        if values.is_empty() {
            continue;
        }
        for row in rows.iter_mut() {
            row[child] = values[rng.random_range(0..values.len())].clone();
        }
    }
    rows
}

fn draw(ty: &DeclaredType, int_upper: i64, rng: &mut ChaCha8Rng) -> Cell {
    match ty {
        DeclaredType::Integer => Cell::Integer(rng.random_range(0..=int_upper)),
        DeclaredType::Real => {
            let x: f64 = rng.random_range(0.0..=100.0);
            Cell::Real((x * 100.0).round() / 100.0)
        }
        DeclaredType::Text | DeclaredType::Other(_) => {
            let len = rng.random_range(3..=10);
            Cell::Text((0..len).map(|_| rng.random_range(b'a'..=b'z') as char).collect())
        }
    }
}
