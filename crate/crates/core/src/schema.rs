//! Relational schema model: tables, typed columns and foreign-key edges.
//!
//! A [`SchemaGraph`] is validated on construction (unique names, resolvable
//! foreign keys) and immutable afterwards. Identifier comparison is
//! case-insensitive everywhere; endpoints of foreign keys are normalized to the
//! spelling used by the table and column definitions.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use rusqlite::{Connection, OpenFlags};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SchemaError {
    #[error("cannot read database file {path}: {reason}")]
    FileUnreadable { path: String, reason: String },
    #[error("malformed database: {0}")]
    MalformedDatabase(String),
    #[error("foreign keys form a cycle among tables: {}", .0.join(", "))]
    CyclicForeignKeys(Vec<String>),
    #[error("invalid schema: {0}")]
    Invalid(String),
}

/// Column type as it drives value generation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DeclaredType {
    Integer,
    Real,
    Text,
    /// Anything outside the three main affinities; keeps the raw label.
    Other(String),
}

impl DeclaredType {
    /// Maps a declared SQL type label onto a [`DeclaredType`].
    ///
    /// Checks run in order: `int`, then real-ish labels, then text-ish labels.
    pub fn from_label(label: &str) -> Self {
        let lower = label.to_ascii_lowercase();
        let has = |needles: &[&str]| needles.iter().any(|n| lower.contains(n));
        if has(&["int"]) {
            DeclaredType::Integer
        } else if has(&["real", "floa", "doub", "numeric", "decimal"]) {
            DeclaredType::Real
        } else if has(&["char", "text", "clob", "date", "time", "bool"]) {
            DeclaredType::Text
        } else {
            DeclaredType::Other(label.to_string())
        }
    }

    /// Label used when emitting DDL. Re-parsing it with [`from_label`](Self::from_label)
    /// yields the same variant.
    pub fn sql_label(&self) -> &str {
        match self {
            DeclaredType::Integer => "INTEGER",
            DeclaredType::Real => "REAL",
            DeclaredType::Text => "TEXT",
            DeclaredType::Other(label) => label,
        }
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self, DeclaredType::Integer | DeclaredType::Real)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnDef {
    pub name: String,
    pub declared_type: DeclaredType,
    #[serde(default)]
    pub is_primary_key: bool,
}

impl ColumnDef {
    pub fn new(name: impl Into<String>, declared_type: DeclaredType, is_primary_key: bool) -> Self {
        ColumnDef {
            name: name.into(),
            declared_type,
            is_primary_key,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ForeignKey {
    pub child_table: String,
    pub child_column: String,
    pub parent_table: String,
    pub parent_column: String,
}

impl ForeignKey {
    pub fn new(
        child_table: impl Into<String>,
        child_column: impl Into<String>,
        parent_table: impl Into<String>,
        parent_column: impl Into<String>,
    ) -> Self {
        ForeignKey {
            child_table: child_table.into(),
            child_column: child_column.into(),
            parent_table: parent_table.into(),
            parent_column: parent_column.into(),
        }
    }

    pub fn is_self_reference(&self) -> bool {
        ident_eq(&self.child_table, &self.parent_table)
    }
}

impl fmt::Display for ForeignKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}.{} -> {}.{}",
            self.child_table, self.child_column, self.parent_table, self.parent_column
        )
    }
}

/// A `(table, column)` pair, spelled as in the schema.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ColumnRef {
    pub table: String,
    pub column: String,
}

impl ColumnRef {
    pub fn new(table: impl Into<String>, column: impl Into<String>) -> Self {
        ColumnRef {
            table: table.into(),
            column: column.into(),
        }
    }
}

impl fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.table, self.column)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableDef {
    pub name: String,
    pub columns: Vec<ColumnDef>,
}

impl TableDef {
    pub fn new(name: impl Into<String>, columns: Vec<ColumnDef>) -> Self {
        TableDef {
            name: name.into(),
            columns,
        }
    }

    pub fn column(&self, name: &str) -> Option<&ColumnDef> {
        self.columns.iter().find(|c| ident_eq(&c.name, name))
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| ident_eq(&c.name, name))
    }

    pub fn primary_key_indices(&self) -> Vec<usize> {
        self.columns
            .iter()
            .enumerate()
            .filter(|(_, c)| c.is_primary_key)
            .map(|(i, _)| i)
            .collect()
    }
}

#[derive(Serialize, Deserialize)]
struct RawSchema {
    tables: Vec<TableDef>,
    #[serde(default)]
    foreign_keys: Vec<ForeignKey>,
}

/// Tables, columns and foreign keys of one database.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSchema", into = "RawSchema")]
pub struct SchemaGraph {
    tables: Vec<TableDef>,
    foreign_keys: Vec<ForeignKey>,
}

impl TryFrom<RawSchema> for SchemaGraph {
    type Error = SchemaError;

    fn try_from(raw: RawSchema) -> Result<Self, Self::Error> {
        SchemaGraph::new(raw.tables, raw.foreign_keys)
    }
}

impl From<SchemaGraph> for RawSchema {
    fn from(s: SchemaGraph) -> Self {
        RawSchema {
            tables: s.tables,
            foreign_keys: s.foreign_keys,
        }
    }
}

pub(crate) fn ident_eq(a: &str, b: &str) -> bool {
    a.eq_ignore_ascii_case(b)
}

impl SchemaGraph {
    pub fn new(tables: Vec<TableDef>, foreign_keys: Vec<ForeignKey>) -> Result<Self, SchemaError> {
        for (i, t) in tables.iter().enumerate() {
            if t.name.is_empty() {
                return Err(SchemaError::Invalid("empty table name".into()));
            }
            if tables[..i].iter().any(|o| ident_eq(&o.name, &t.name)) {
                return Err(SchemaError::Invalid(format!("duplicate table {}", t.name)));
            }
            for (j, c) in t.columns.iter().enumerate() {
                if c.name.is_empty() {
                    return Err(SchemaError::Invalid(format!("empty column name in {}", t.name)));
                }
                if t.columns[..j].iter().any(|o| ident_eq(&o.name, &c.name)) {
                    return Err(SchemaError::Invalid(format!(
                        "duplicate column {}.{}",
                        t.name, c.name
                    )));
                }
            }
        }

        let mut normalized = Vec::with_capacity(foreign_keys.len());
        for fk in foreign_keys {
            let resolve = |table: &str, column: &str| -> Option<(String, String)> {
                let t = tables.iter().find(|t| ident_eq(&t.name, table))?;
                let c = t.column(column)?;
                Some((t.name.clone(), c.name.clone()))
            };
            let (Some((ct, cc)), Some((pt, pc))) = (
                resolve(&fk.child_table, &fk.child_column),
                resolve(&fk.parent_table, &fk.parent_column),
            ) else {
                return Err(SchemaError::Invalid(format!("dangling foreign key {fk}")));
            };
            let fk = ForeignKey::new(ct, cc, pt, pc);
            if !normalized.contains(&fk) {
                normalized.push(fk);
            }
        }

        Ok(SchemaGraph {
            tables,
            foreign_keys: normalized,
        })
    }

    pub fn empty() -> Self {
        SchemaGraph {
            tables: Vec::new(),
            foreign_keys: Vec::new(),
        }
    }

    pub fn tables(&self) -> &[TableDef] {
        &self.tables
    }

    pub fn foreign_keys(&self) -> &[ForeignKey] {
        &self.foreign_keys
    }

    pub fn table(&self, name: &str) -> Option<&TableDef> {
        self.tables.iter().find(|t| ident_eq(&t.name, name))
    }

    pub fn table_index(&self, name: &str) -> Option<usize> {
        self.tables.iter().position(|t| ident_eq(&t.name, name))
    }

    pub fn table_names(&self) -> Vec<String> {
        self.tables.iter().map(|t| t.name.clone()).collect()
    }

    /// Foreign keys whose child side is `table`.
    pub fn foreign_keys_from<'a>(&'a self, table: &'a str) -> impl Iterator<Item = &'a ForeignKey> + 'a {
        self.foreign_keys
            .iter()
            .filter(move |fk| ident_eq(&fk.child_table, table))
    }

    /// Foreign keys whose parent side is `table`.
    pub fn foreign_keys_into<'a>(&'a self, table: &'a str) -> impl Iterator<Item = &'a ForeignKey> + 'a {
        self.foreign_keys
            .iter()
            .filter(move |fk| ident_eq(&fk.parent_table, table))
    }

    pub fn is_foreign_key_endpoint(&self, table: &str, column: &str) -> bool {
        self.foreign_keys.iter().any(|fk| {
            (ident_eq(&fk.child_table, table) && ident_eq(&fk.child_column, column))
                || (ident_eq(&fk.parent_table, table) && ident_eq(&fk.parent_column, column))
        })
    }

    /// Returns a copy with the given `(table, column) -> type` overrides applied.
    /// Unknown keys are reported as errors so typos in override files surface.
    pub fn with_type_overrides(
        &self,
        overrides: &HashMap<(String, String), DeclaredType>,
    ) -> Result<Self, SchemaError> {
        let mut out = self.clone();
        for ((table, column), ty) in overrides {
            let col = out
                .tables
                .iter_mut()
                .find(|t| ident_eq(&t.name, table))
                .and_then(|t| t.columns.iter_mut().find(|c| ident_eq(&c.name, column)))
                .ok_or_else(|| {
                    SchemaError::Invalid(format!("type override for unknown column {table}.{column}"))
                })?;
            col.declared_type = ty.clone();
        }
        Ok(out)
    }

    /// Table names ordered so that every parent precedes its children.
    ///
    /// Self-references impose no constraint; ties keep schema order.
    pub fn topo_order_parents_first(&self) -> Result<Vec<String>, SchemaError> {
        let n = self.tables.len();
        // parents[i] = indices of distinct parent tables of table i
        let mut parents: Vec<Vec<usize>> = vec![Vec::new(); n];
        for fk in &self.foreign_keys {
            if fk.is_self_reference() {
                continue;
            }
            let child = self.table_index(&fk.child_table).expect("validated");
            let parent = self.table_index(&fk.parent_table).expect("validated");
            if !parents[child].contains(&parent) {
                parents[child].push(parent);
            }
        }

        let mut placed = vec![false; n];
        let mut order = Vec::with_capacity(n);
        while order.len() < n {
            let next = (0..n).find(|&i| !placed[i] && parents[i].iter().all(|&p| placed[p]));
            match next {
                Some(i) => {
                    placed[i] = true;
                    order.push(self.tables[i].name.clone());
                }
                None => {
                    let stuck = (0..n)
                        .filter(|&i| !placed[i])
                        .map(|i| self.tables[i].name.clone())
                        .collect();
                    return Err(SchemaError::CyclicForeignKeys(stuck));
                }
            }
        }
        Ok(order)
    }

    /// Children before parents; the exact reverse of [`topo_order_parents_first`](Self::topo_order_parents_first).
    pub fn reverse_topo_order(&self) -> Result<Vec<String>, SchemaError> {
        let mut order = self.topo_order_parents_first()?;
        order.reverse();
        Ok(order)
    }
}

/// Reads tables, columns, declared types and foreign keys from a SQLite file.
pub fn introspect_schema(db_file: impl AsRef<Path>) -> Result<SchemaGraph, SchemaError> {
    let path = db_file.as_ref();
    let display = path.display().to_string();
    let meta = std::fs::metadata(path).map_err(|e| SchemaError::FileUnreadable {
        path: display.clone(),
        reason: e.to_string(),
    })?;
    if !meta.is_file() {
        return Err(SchemaError::FileUnreadable {
            path: display,
            reason: "not a regular file".into(),
        });
    }
    let conn = Connection::open_with_flags(
        path,
        OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX,
    )
    .map_err(|e| SchemaError::FileUnreadable {
        path: display,
        reason: e.to_string(),
    })?;
    introspect_connection(&conn)
}

pub(crate) fn introspect_connection(conn: &Connection) -> Result<SchemaGraph, SchemaError> {
    let malformed = |e: rusqlite::Error| SchemaError::MalformedDatabase(e.to_string());

    let mut stmt = conn
        .prepare(
            "SELECT name FROM sqlite_master \
             WHERE type = 'table' AND name NOT LIKE 'sqlite_%' ORDER BY rowid",
        )
        .map_err(malformed)?;
    let names: Vec<String> = stmt
        .query_map([], |row| row.get(0))
        .map_err(malformed)?
        .collect::<Result<_, _>>()
        .map_err(malformed)?;

    let mut tables = Vec::with_capacity(names.len());
    for name in &names {
        let mut info = conn
            .prepare("SELECT name, type, pk FROM pragma_table_info(?1) ORDER BY cid")
            .map_err(malformed)?;
        let columns = info
            .query_map([name], |row| {
                let col: String = row.get(0)?;
                let ty: String = row.get::<_, Option<String>>(1)?.unwrap_or_default();
                let pk: i64 = row.get(2)?;
                Ok(ColumnDef::new(col, DeclaredType::from_label(&ty), pk > 0))
            })
            .map_err(malformed)?
            .collect::<Result<Vec<_>, _>>()
            .map_err(malformed)?;
        tables.push(TableDef::new(name.clone(), columns));
    }

    let mut foreign_keys = Vec::new();
    for table in &tables {
        let mut fks = conn
            .prepare(
                "SELECT \"table\", \"from\", \"to\" FROM pragma_foreign_key_list(?1) ORDER BY id, seq",
            )
            .map_err(malformed)?;
        let rows = fks
            .query_map([&table.name], |row| {
                Ok((
                    row.get::<_, String>(0)?,
                    row.get::<_, String>(1)?,
                    row.get::<_, Option<String>>(2)?,
                ))
            })
            .map_err(malformed)?
            .collect::<Result<Vec<_>, _>>()
            .map_err(malformed)?;
        let mut found = Vec::new();
        for (parent, from, to) in rows {
            let parent_def = tables
                .iter()
                .find(|t| ident_eq(&t.name, &parent))
                .ok_or_else(|| {
                    SchemaError::MalformedDatabase(format!(
                        "{}.{} references missing table {parent}",
                        table.name, from
                    ))
                })?;
            // a bare `REFERENCES parent` targets the parent's primary key
            let to = match to {
                Some(to) => to,
                None => {
                    let pk = parent_def.primary_key_indices();
                    if pk.len() != 1 {
                        return Err(SchemaError::MalformedDatabase(format!(
                            "{}.{} references {parent} without a single-column primary key",
                            table.name, from
                        )));
                    }
                    parent_def.columns[pk[0]].name.clone()
                }
            };
            found.push(ForeignKey::new(table.name.clone(), from, parent, to));
        }
        // The pragma numbers keys in reverse declaration order; column order is stable.
        found.sort_by_key(|fk| table.column_index(&fk.child_column));
        foreign_keys.append(&mut found);
    }

    SchemaGraph::new(tables, foreign_keys).map_err(|e| match e {
        SchemaError::Invalid(msg) => SchemaError::MalformedDatabase(msg),
        other => other,
    })
}
