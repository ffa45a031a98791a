//! Concrete database contents: cells, tables and whole instances.

use std::fmt;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::schema::{ident_eq, ForeignKey, SchemaError, SchemaGraph, TableDef};

/// One value of a row.
///
/// Serializes to the matching JSON scalar: `null`, an integer, a float, or a
/// string. Floats always carry a fractional part or exponent on output, so
/// `Real(3.0)` and `Integer(3)` stay distinct through a round trip.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Null,
    Integer(i64),
    Real(f64),
    Text(String),
}

impl Cell {
    pub fn text(s: impl Into<String>) -> Self {
        Cell::Text(s.into())
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Cell::Null)
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Integer(i) => Some(*i as f64),
            Cell::Real(r) => Some(*r),
            _ => None,
        }
    }

    /// Hashable identity used for foreign-key matching. Integral reals collapse
    /// onto the integer key, mirroring how the engine compares numbers.
    pub fn key(&self) -> CellKey {
        match self {
            Cell::Null => CellKey::Null,
            Cell::Integer(i) => CellKey::Integer(*i),
            Cell::Real(r) => {
                if r.fract() == 0.0 && r.abs() < 9.0e15 {
                    CellKey::Integer(*r as i64)
                } else {
                    CellKey::Real(r.to_bits())
                }
            }
            Cell::Text(s) => CellKey::Text(s.clone()),
        }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Null => f.write_str("NULL"),
            Cell::Integer(i) => write!(f, "{i}"),
            Cell::Real(r) => write!(f, "{r:?}"),
            Cell::Text(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CellKey {
    Null,
    Integer(i64),
    Real(u64),
    Text(String),
}

impl Serialize for Cell {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Cell::Null => serializer.serialize_none(),
            Cell::Integer(i) => serializer.serialize_i64(*i),
            Cell::Real(r) => serializer.serialize_f64(*r),
            Cell::Text(s) => serializer.serialize_str(s),
        }
    }
}

impl<'de> Deserialize<'de> for Cell {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct CellVisitor;

        impl<'de> Visitor<'de> for CellVisitor {
            type Value = Cell;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("null, a number or a string")
            }
            fn visit_unit<E: de::Error>(self) -> Result<Cell, E> {
                Ok(Cell::Null)
            }
            fn visit_none<E: de::Error>(self) -> Result<Cell, E> {
                Ok(Cell::Null)
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Cell, E> {
                Ok(Cell::Integer(v))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Cell, E> {
                i64::try_from(v)
                    .map(Cell::Integer)
                    .map_err(|_| E::custom("integer out of range"))
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Cell, E> {
                Ok(Cell::Real(v))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<Cell, E> {
                Ok(Cell::Text(v.to_string()))
            }
            fn visit_string<E: de::Error>(self, v: String) -> Result<Cell, E> {
                Ok(Cell::Text(v))
            }
        }

        deserializer.deserialize_any(CellVisitor)
    }
}

/// Rows of one table. Every row has exactly `columns.len()` cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableData {
    pub table_name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl TableData {
    pub fn empty(def: &TableDef) -> Self {
        TableData {
            table_name: def.name.clone(),
            columns: def.columns.iter().map(|c| c.name.clone()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| ident_eq(c, name))
    }

    pub fn column_values(&self, index: usize) -> impl Iterator<Item = &Cell> + '_ {
        self.rows.iter().map(move |r| &r[index])
    }
}

#[derive(Serialize, Deserialize)]
struct RawInstance {
    schema: SchemaGraph,
    tables: Vec<TableData>,
}

/// A schema plus one [`TableData`] per schema table, in schema order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawInstance", into = "RawInstance")]
pub struct DatabaseInstance {
    schema: SchemaGraph,
    tables: Vec<TableData>,
}

impl TryFrom<RawInstance> for DatabaseInstance {
    type Error = SchemaError;

    fn try_from(raw: RawInstance) -> Result<Self, SchemaError> {
        DatabaseInstance::new(raw.schema, raw.tables)
    }
}

impl From<DatabaseInstance> for RawInstance {
    fn from(db: DatabaseInstance) -> Self {
        RawInstance {
            schema: db.schema,
            tables: db.tables,
        }
    }
}

/// A child value with no matching parent value.
#[derive(Debug, Clone, PartialEq)]
pub struct FkViolation {
    pub foreign_key: ForeignKey,
    pub row: usize,
    pub value: Cell,
}

impl DatabaseInstance {
    /// Pairs `tables` with `schema`, reordering them into schema order.
    /// Tables missing from `tables` get an empty entry.
    pub fn new(schema: SchemaGraph, tables: Vec<TableData>) -> Result<Self, SchemaError> {
        let mut ordered = Vec::with_capacity(schema.tables().len());
        for def in schema.tables() {
            let data = tables
                .iter()
                .find(|t| ident_eq(&t.table_name, &def.name))
                .cloned()
                .unwrap_or_else(|| TableData::empty(def));
            if data.columns.len() != def.columns.len()
                || data
                    .columns
                    .iter()
                    .zip(&def.columns)
                    .any(|(a, b)| !ident_eq(a, &b.name))
            {
                return Err(SchemaError::Invalid(format!(
                    "columns of table {} do not match its schema",
                    def.name
                )));
            }
            if let Some(bad) = data.rows.iter().position(|r| r.len() != def.columns.len()) {
                return Err(SchemaError::Invalid(format!(
                    "row {bad} of table {} has wrong arity",
                    def.name
                )));
            }
            ordered.push(TableData {
                table_name: def.name.clone(),
                columns: def.columns.iter().map(|c| c.name.clone()).collect(),
                rows: data.rows,
            });
        }
        if let Some(extra) = tables
            .iter()
            .find(|t| schema.table(&t.table_name).is_none())
        {
            return Err(SchemaError::Invalid(format!(
                "table {} is not part of the schema",
                extra.table_name
            )));
        }
        Ok(DatabaseInstance {
            schema,
            tables: ordered,
        })
    }

    pub fn empty(schema: SchemaGraph) -> Self {
        let tables = schema.tables().iter().map(TableData::empty).collect();
        DatabaseInstance { schema, tables }
    }

    pub fn schema(&self) -> &SchemaGraph {
        &self.schema
    }

    pub fn tables(&self) -> &[TableData] {
        &self.tables
    }

    pub fn table(&self, name: &str) -> Option<&TableData> {
        self.tables.iter().find(|t| ident_eq(&t.table_name, name))
    }

    pub(crate) fn table_mut(&mut self, name: &str) -> Option<&mut TableData> {
        self.tables
            .iter_mut()
            .find(|t| ident_eq(&t.table_name, name))
    }

    pub fn row_counts(&self) -> Vec<(String, usize)> {
        self.tables
            .iter()
            .map(|t| (t.table_name.clone(), t.rows.len()))
            .collect()
    }

    /// Every non-null child value that does not appear in its parent column.
    pub fn foreign_key_violations(&self) -> Vec<FkViolation> {
        let mut out = Vec::new();
        for fk in self.schema.foreign_keys() {
            let parent = self.table(&fk.parent_table).expect("validated");
            let child = self.table(&fk.child_table).expect("validated");
            let pi = parent.column_index(&fk.parent_column).expect("validated");
            let ci = child.column_index(&fk.child_column).expect("validated");
            let present: std::collections::HashSet<CellKey> =
                parent.column_values(pi).map(Cell::key).collect();
            for (row, value) in child.column_values(ci).enumerate() {
                if !value.is_null() && !present.contains(&value.key()) {
                    out.push(FkViolation {
                        foreign_key: fk.clone(),
                        row,
                        value: value.clone(),
                    });
                }
            }
        }
        out
    }
}
