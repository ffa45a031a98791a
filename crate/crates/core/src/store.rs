//! SQLite persistence for [`DatabaseInstance`]: DDL/literal rendering, file
//! load/store, and in-memory materialization for query execution.

use std::path::Path;

use rusqlite::types::{Value, ValueRef};
use rusqlite::{params_from_iter, Connection, OpenFlags};
use thiserror::Error;

use crate::dbgen::{Cell, DatabaseInstance, TableData};
use crate::schema::{introspect_connection, SchemaError, SchemaGraph, TableDef};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("sqlite: {0}")]
    Sqlite(#[from] rusqlite::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

const KEYWORDS: &[&str] = &[
    "abort", "action", "add", "after", "all", "alter", "and", "as", "asc", "between", "by",
    "case", "check", "collate", "column", "constraint", "create", "cross", "current", "default",
    "delete", "desc", "distinct", "drop", "else", "end", "except", "exists", "foreign", "from",
    "full", "group", "having", "in", "index", "inner", "insert", "intersect", "into", "is",
    "join", "key", "left", "like", "limit", "natural", "not", "null", "of", "offset", "on", "or",
    "order", "outer", "primary", "references", "right", "select", "set", "table", "then", "to",
    "transaction", "union", "unique", "update", "using", "values", "when", "where", "with",
];

/// Quotes an identifier only when it is not a plain word.
pub fn quote_ident(name: &str) -> String {
    let plain = name
        .chars()
        .next()
        .is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
        && !KEYWORDS.contains(&name.to_ascii_lowercase().as_str());
    if plain {
        name.to_string()
    } else {
        format!("\"{}\"", name.replace('"', "\"\""))
    }
}

/// SQL literal for a cell. Reals use the shortest round-tripping form and always
/// keep a `.` or exponent so the engine stores them as REAL.
pub fn sql_literal(cell: &Cell) -> String {
    match cell {
        Cell::Null => "NULL".into(),
        Cell::Integer(i) => i.to_string(),
        Cell::Real(r) if r.is_finite() => format!("{r:?}"),
        Cell::Real(r) if r.is_nan() => "NULL".into(),
        Cell::Real(r) => if *r > 0.0 { "9e999" } else { "-9e999" }.into(),
        Cell::Text(s) => format!("'{}'", s.replace('\'', "''")),
    }
}

/// `CREATE TABLE` statement; with `constraints` it carries the primary key and
/// foreign-key clauses of `schema`.
pub fn create_table_sql(schema: &SchemaGraph, def: &TableDef, constraints: bool) -> String {
    let mut parts: Vec<String> = def
        .columns
        .iter()
        .map(|c| {
            let label = c.declared_type.sql_label();
            if label.is_empty() {
                quote_ident(&c.name)
            } else {
                format!("{} {}", quote_ident(&c.name), label)
            }
        })
        .collect();
    if constraints {
        let pk: Vec<String> = def
            .columns
            .iter()
            .filter(|c| c.is_primary_key)
            .map(|c| quote_ident(&c.name))
            .collect();
        if !pk.is_empty() {
            parts.push(format!("PRIMARY KEY ({})", pk.join(", ")));
        }
        for fk in schema.foreign_keys_from(&def.name) {
            parts.push(format!(
                "FOREIGN KEY ({}) REFERENCES {} ({})",
                quote_ident(&fk.child_column),
                quote_ident(&fk.parent_table),
                quote_ident(&fk.parent_column)
            ));
        }
    }
    format!("CREATE TABLE {} ({})", quote_ident(&def.name), parts.join(", "))
}

pub(crate) fn cell_from_value(value: ValueRef<'_>) -> Cell {
    match value {
        ValueRef::Null => Cell::Null,
        ValueRef::Integer(i) => Cell::Integer(i),
        ValueRef::Real(r) => Cell::Real(r),
        ValueRef::Text(t) => Cell::Text(String::from_utf8_lossy(t).into_owned()),
        ValueRef::Blob(b) => Cell::Text(String::from_utf8_lossy(b).into_owned()),
    }
}

fn cell_to_value(cell: &Cell) -> Value {
    match cell {
        Cell::Null => Value::Null,
        Cell::Integer(i) => Value::Integer(*i),
        Cell::Real(r) => Value::Real(*r),
        Cell::Text(s) => Value::Text(s.clone()),
    }
}

/// Reads the schema and every row of a SQLite file.
pub fn load_instance(path: impl AsRef<Path>) -> Result<DatabaseInstance, SchemaError> {
    let schema = crate::schema::introspect_schema(path.as_ref())?;
    let conn = Connection::open_with_flags(path.as_ref(), OpenFlags::SQLITE_OPEN_READ_ONLY)
        .map_err(|e| SchemaError::FileUnreadable {
            path: path.as_ref().display().to_string(),
            reason: e.to_string(),
        })?;
    read_rows(&conn, schema)
}

pub(crate) fn read_rows(conn: &Connection, schema: SchemaGraph) -> Result<DatabaseInstance, SchemaError> {
    let malformed = |e: rusqlite::Error| SchemaError::MalformedDatabase(e.to_string());
    let mut tables = Vec::with_capacity(schema.tables().len());
    for def in schema.tables() {
        let cols: Vec<String> = def.columns.iter().map(|c| quote_ident(&c.name)).collect();
        let sql = format!("SELECT {} FROM {}", cols.join(", "), quote_ident(&def.name));
        let mut stmt = conn.prepare(&sql).map_err(malformed)?;
        let width = def.columns.len();
        let rows = stmt
            .query_map([], |row| {
                (0..width)
                    .map(|i| row.get_ref(i).map(cell_from_value))
                    .collect::<Result<Vec<_>, _>>()
            })
            .map_err(malformed)?
            .collect::<Result<Vec<_>, _>>()
            .map_err(malformed)?;
        let mut data = TableData::empty(def);
        data.rows = rows;
        tables.push(data);
    }
    DatabaseInstance::new(schema, tables)
}

/// Creates all tables of `db` on `conn` and inserts every row.
pub fn populate(conn: &Connection, db: &DatabaseInstance, constraints: bool) -> rusqlite::Result<()> {
    conn.execute_batch("PRAGMA foreign_keys = OFF;")?;
    let schema = db.schema();
    conn.execute_batch("BEGIN")?;
    for (def, data) in schema.tables().iter().zip(db.tables()) {
        conn.execute_batch(&create_table_sql(schema, def, constraints))?;
        if data.rows.is_empty() {
            continue;
        }
        let placeholders = vec!["?"; def.columns.len()].join(", ");
        let mut insert = conn.prepare(&format!(
            "INSERT INTO {} VALUES ({placeholders})",
            quote_ident(&def.name)
        ))?;
        for row in &data.rows {
            insert.execute(params_from_iter(row.iter().map(cell_to_value)))?;
        }
    }
    conn.execute_batch("COMMIT")
}

/// Opens a private in-memory engine holding the rows of `db`, without key constraints.
pub fn open_in_memory(db: &DatabaseInstance) -> rusqlite::Result<Connection> {
    let conn = Connection::open_in_memory()?;
    populate(&conn, db, false)?;
    Ok(conn)
}

/// Writes `db` as a fresh SQLite file at `path`, replacing any existing file.
pub fn write_instance(db: &DatabaseInstance, path: impl AsRef<Path>) -> Result<(), StoreError> {
    let path = path.as_ref();
    if path.exists() {
        std::fs::remove_file(path)?;
    }
    let conn = Connection::open(path)?;
    populate(&conn, db, true)?;
    conn.close().map_err(|(_, e)| e)?;
    Ok(())
}

/// Re-reads an instance from a live connection (used after replaying scripts).
pub fn instance_from_connection(conn: &Connection) -> Result<DatabaseInstance, SchemaError> {
    let schema = introspect_connection(conn)?;
    read_rows(conn, schema)
}
