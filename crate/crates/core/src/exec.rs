//! Query execution against a [`DatabaseInstance`] and result comparison.

use std::cmp::Ordering;
use std::fmt;
use std::time::{Duration, Instant};

use rusqlite::Connection;
use serde::{Deserialize, Serialize};

use crate::dbgen::{Cell, DatabaseInstance};
use crate::par::{self, Parallelism};
use crate::sql_refs::has_top_level_order_by;
use crate::store::{self, cell_from_value};

/// Absolute tolerance for numeric cell comparison.
pub const NUMERIC_TOLERANCE: f64 = 1e-6;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(5);
/// Widest result on which the relaxed comparison searches column matchings.
pub const RELAXED_WIDTH_CAP: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawResult")]
pub struct ExecutionResult {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    pub order_significant: bool,
}

#[derive(Deserialize)]
struct RawResult {
    columns: Vec<String>,
    rows: Vec<Vec<Cell>>,
    #[serde(default)]
    order_significant: bool,
}

impl TryFrom<RawResult> for ExecutionResult {
    type Error = String;

    fn try_from(raw: RawResult) -> Result<Self, String> {
        ExecutionResult::new(raw.columns, raw.rows, raw.order_significant)
    }
}

impl ExecutionResult {
    pub fn new(columns: Vec<String>, rows: Vec<Vec<Cell>>, order_significant: bool) -> Result<Self, String> {
        if let Some((i, row)) = rows.iter().enumerate().find(|(_, r)| r.len() != columns.len()) {
            return Err(format!(
                "row {i} has {} cells, expected {}",
                row.len(),
                columns.len()
            ));
        }
        Ok(ExecutionResult {
            columns,
            rows,
            order_significant,
        })
    }

    pub fn width(&self) -> usize {
        self.columns.len()
    }

    /// Keeps the listed columns, in the listed order.
    pub fn project(&self, indices: &[usize]) -> ExecutionResult {
        ExecutionResult {
            columns: indices.iter().map(|&i| self.columns[i].clone()).collect(),
            rows: self
                .rows
                .iter()
                .map(|r| indices.iter().map(|&i| r[i].clone()).collect())
                .collect(),
            order_significant: self.order_significant,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecutionOutcome {
    Ok(ExecutionResult),
    SqlError(String),
    Timeout,
}

impl ExecutionOutcome {
    pub fn ok(&self) -> Option<&ExecutionResult> {
        match self {
            ExecutionOutcome::Ok(r) => Some(r),
            _ => None,
        }
    }

    pub fn into_ok(self) -> Option<ExecutionResult> {
        match self {
            ExecutionOutcome::Ok(r) => Some(r),
            _ => None,
        }
    }
}

/// A private engine holding one database instance.
pub struct Session {
    conn: Connection,
}

impl Session {
    pub fn open(db: &DatabaseInstance) -> Result<Self, String> {
        store::open_in_memory(db)
            .map(|conn| Session { conn })
            .map_err(|e| format!("cannot materialize database: {e}"))
    }

    pub fn execute(&self, sql: &str, timeout: Duration) -> ExecutionOutcome {
        let deadline = Instant::now() + timeout;
        let timed_out = || Instant::now() >= deadline;
        if let Err(e) = self
            .conn
            .progress_handler(1000, Some(move || Instant::now() >= deadline))
        {
            return ExecutionOutcome::SqlError(e.to_string());
        }
        let outcome = self.run(sql);
        let _ = self.conn.progress_handler(0, None::<fn() -> bool>);
        match outcome {
            Ok(result) => ExecutionOutcome::Ok(result),
            Err(e) => {
                if is_interrupt(&e) && timed_out() {
                    ExecutionOutcome::Timeout
                } else {
                    ExecutionOutcome::SqlError(e.to_string())
                }
            }
        }
    }

    fn run(&self, sql: &str) -> rusqlite::Result<ExecutionResult> {
        let mut stmt = self.conn.prepare(sql)?;
        if !stmt.readonly() {
            return Err(rusqlite::Error::InvalidQuery);
        }
        let columns: Vec<String> = stmt.column_names().into_iter().map(String::from).collect();
        let width = columns.len();
        let rows = stmt
            .query_map([], |row| {
                (0..width)
                    .map(|i| row.get_ref(i).map(cell_from_value))
                    .collect::<rusqlite::Result<Vec<_>>>()
            })?
            .collect::<rusqlite::Result<Vec<_>>>()?;
        Ok(ExecutionResult {
            columns,
            rows,
            order_significant: has_top_level_order_by(sql),
        })
    }
}

fn is_interrupt(e: &rusqlite::Error) -> bool {
    matches!(e, rusqlite::Error::SqliteFailure(f, _) if f.code == rusqlite::ErrorCode::OperationInterrupted)
}

/// Runs `sql` on a fresh private copy of `db`.
pub fn execute(db: &DatabaseInstance, sql: &str, timeout: Duration) -> ExecutionOutcome {
    match Session::open(db) {
        Ok(session) => session.execute(sql, timeout),
        Err(e) => ExecutionOutcome::SqlError(e),
    }
}

/// Runs every query on its own copy of `db`; output order follows `sqls`.
pub fn execute_all<S: AsRef<str> + Sync>(
    db: &DatabaseInstance,
    sqls: &[S],
    timeout: Duration,
    mode: Parallelism,
) -> Vec<ExecutionOutcome> {
    par::map_init(
        mode,
        sqls,
        || Session::open(db),
        |session, sql| match session {
            Ok(s) => s.execute(sql.as_ref(), timeout),
            Err(e) => ExecutionOutcome::SqlError(e.clone()),
        },
    )
}

fn cell_rank(c: &Cell) -> u8 {
    match c {
        Cell::Null => 0,
        Cell::Integer(_) | Cell::Real(_) => 1,
        Cell::Text(_) => 2,
    }
}

/// Total order on cells: nulls, then numbers by value, then text.
pub fn cmp_cells(a: &Cell, b: &Cell) -> Ordering {
    match (a, b) {
        (Cell::Integer(x), Cell::Integer(y)) => x.cmp(y),
        (Cell::Text(x), Cell::Text(y)) => x.cmp(y),
        _ => match (a.as_f64(), b.as_f64()) {
            (Some(x), Some(y)) => x.total_cmp(&y),
            _ => cell_rank(a).cmp(&cell_rank(b)),
        },
    }
}

fn cmp_rows(a: &[Cell], b: &[Cell]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| cmp_cells(x, y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Cell equality with [`NUMERIC_TOLERANCE`] on numbers.
pub fn cells_equal(a: &Cell, b: &Cell) -> bool {
    match (a, b) {
        (Cell::Null, Cell::Null) => true,
        (Cell::Integer(x), Cell::Integer(y)) => x == y,
        (Cell::Text(x), Cell::Text(y)) => x == y,
        _ => match (a.as_f64(), b.as_f64()) {
            (Some(x), Some(y)) => x == y || (x - y).abs() <= NUMERIC_TOLERANCE,
            _ => false,
        },
    }
}

fn rows_equal(a: &[Cell], b: &[Cell]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| cells_equal(x, y))
}

fn sorted_rows(rows: &[Vec<Cell>]) -> Vec<&Vec<Cell>> {
    let mut refs: Vec<&Vec<Cell>> = rows.iter().collect();
    refs.sort_by(|a, b| cmp_rows(a, b));
    refs
}

/// Exact comparison: same width, and the same rows in sequence when either side
/// is order-significant, as multisets otherwise. Column labels are ignored.
pub fn results_equal(a: &ExecutionResult, b: &ExecutionResult) -> bool {
    if a.width() != b.width() || a.rows.len() != b.rows.len() {
        return false;
    }
    if a.order_significant || b.order_significant {
        a.rows.iter().zip(&b.rows).all(|(x, y)| rows_equal(x, y))
    } else {
        sorted_rows(&a.rows)
            .into_iter()
            .zip(sorted_rows(&b.rows))
            .all(|(x, y)| rows_equal(x, y))
    }
}

fn column_signature(r: &ExecutionResult, col: usize) -> Vec<&Cell> {
    let mut cells: Vec<&Cell> = r.rows.iter().map(|row| &row[col]).collect();
    cells.sort_by(|a, b| cmp_cells(a, b));
    cells
}

/// Relaxed comparison: the narrower result matches some projection of the wider
/// one onto distinct columns (taken in the narrower result's column order).
///
/// Columns are matched by content, not label. The projection keeps the wider
/// result's order flag, then [`results_equal`] decides. Equal widths try every
/// column permutation. Beyond [`RELAXED_WIDTH_CAP`] columns this is exact comparison.
pub fn results_equal_relaxed(a: &ExecutionResult, b: &ExecutionResult) -> bool {
    if results_equal(a, b) {
        return true;
    }
    let (narrow, wide) = if a.width() <= b.width() { (a, b) } else { (b, a) };
    if wide.width() > RELAXED_WIDTH_CAP || narrow.rows.len() != wide.rows.len() {
        return false;
    }
    if narrow.width() == 0 {
        return false;
    }
    let wide_sigs: Vec<Vec<&Cell>> = (0..wide.width()).map(|j| column_signature(wide, j)).collect();
    let options: Vec<Vec<usize>> = (0..narrow.width())
        .map(|i| {
            let sig = column_signature(narrow, i);
            (0..wide.width())
                .filter(|&j| {
                    sig.iter()
                        .zip(&wide_sigs[j])
                        .all(|(x, y)| cells_equal(x, y))
                })
                .collect()
        })
        .collect();
    if options.iter().any(Vec::is_empty) {
        return false;
    }
    let mut chosen = Vec::with_capacity(narrow.width());
    let mut used = vec![false; wide.width()];
    search(narrow, wide, &options, &mut chosen, &mut used)
}

fn search(
    narrow: &ExecutionResult,
    wide: &ExecutionResult,
    options: &[Vec<usize>],
    chosen: &mut Vec<usize>,
    used: &mut [bool],
) -> bool {
    let depth = chosen.len();
    if depth == options.len() {
        return results_equal(narrow, &wide.project(chosen));
    }
    for &j in &options[depth] {
        if used[j] {
            continue;
        }
        used[j] = true;
        chosen.push(j);
        if search(narrow, wide, options, chosen, used) {
            return true;
        }
        chosen.pop();
        used[j] = false;
    }
    false
}

/// Opaque token identifying an outcome up to [`results_equal`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CanonicalKey(String);

impl CanonicalKey {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_failure(&self) -> bool {
        self.0.starts_with('!')
    }
}

impl fmt::Display for CanonicalKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

fn encode_cell(c: &Cell) -> String {
    match c {
        Cell::Null => "N".into(),
        Cell::Integer(i) => format!("I{i}"),
        Cell::Real(r) => {
            let nearest = r.round();
            if (r - nearest).abs() <= NUMERIC_TOLERANCE && nearest.abs() < 9.0e15 {
                format!("I{}", nearest as i64)
            } else {
                format!("R{r:.6}")
            }
        }
        Cell::Text(s) => format!("T{}", serde_json::to_string(s).expect("string")),
    }
}

/// Canonical key of a successful result. Row order is part of the key only
/// for order-significant results with two or more rows; beyond that, ordered and
/// unordered results never share a key.
pub fn result_canonical_key(r: &ExecutionResult) -> CanonicalKey {
    let mut rows: Vec<String> = r
        .rows
        .iter()
        .map(|row| row.iter().map(encode_cell).collect::<Vec<_>>().join(","))
        .collect();
    if !r.order_significant {
        rows.sort();
    }
    let tag = if r.order_significant && r.rows.len() > 1 { 'O' } else { 'U' };
    CanonicalKey(format!("{tag}{}[{}]", r.width(), rows.join(";")))
}

/// Key of any outcome; failures map to one token per kind.
pub fn outcome_key(o: &ExecutionOutcome) -> CanonicalKey {
    match o {
        ExecutionOutcome::Ok(r) => result_canonical_key(r),
        ExecutionOutcome::SqlError(_) => CanonicalKey("!error".into()),
        ExecutionOutcome::Timeout => CanonicalKey("!timeout".into()),
    }
}
