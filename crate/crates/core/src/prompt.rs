//! Prompt rendering for result-prediction oracles and parsing of their replies.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dbgen::{Cell, DatabaseInstance};
use crate::exec::ExecutionResult;
use crate::store::{create_table_sql, quote_ident, sql_literal};

pub const INSTRUCTION: &str = "You are given a database and a question. Predict the execution result of the question on the database. Output the result as a table, one row per line, cells separated by ' | '.";
pub const DEFAULT_SHOTS: usize = 7;
const NULL_TOKEN: &str = "NULL";
const FENCE: &str = "```";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DbFormat {
    #[default]
    Csv,
    Sqlite,
}

impl std::str::FromStr for DbFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(DbFormat::Csv),
            "sqlite" | "sql" => Ok(DbFormat::Sqlite),
            other => Err(format!("unknown database format {other:?}")),
        }
    }
}

/// A worked example shown to the oracle before the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub db: DatabaseInstance,
    pub question: String,
    pub expected: ExecutionResult,
}

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("{shots} shots requested but the example pool holds {pool}")]
    NotEnoughExamples { shots: usize, pool: usize },
    #[error("example pool {path}: {reason}")]
    Pool { path: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptConfig {
    pub db_format: DbFormat,
    pub shots: usize,
    #[serde(default)]
    pub example_pool: Vec<Example>,
}

impl Default for PromptConfig {
    fn default() -> Self {
        PromptConfig {
            db_format: DbFormat::Csv,
            shots: 0,
            example_pool: Vec::new(),
        }
    }
}

impl PromptConfig {
    pub fn new(db_format: DbFormat, shots: usize, example_pool: Vec<Example>) -> Result<Self, PromptError> {
        let config = PromptConfig {
            db_format,
            shots,
            example_pool,
        };
        config.validate()?;
        Ok(config)
    }

    /// CSV with [`DEFAULT_SHOTS`] examples, or the whole pool if it is smaller.
    pub fn with_pool(example_pool: Vec<Example>) -> Self {
        PromptConfig {
            db_format: DbFormat::Csv,
            shots: DEFAULT_SHOTS.min(example_pool.len()),
            example_pool,
        }
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        if self.shots > self.example_pool.len() {
            return Err(PromptError::NotEnoughExamples {
                shots: self.shots,
                pool: self.example_pool.len(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub text: String,
    pub rendered_format: DbFormat,
    pub shot_count: usize,
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn csv_cell(c: &Cell) -> String {
    match c {
        Cell::Null => String::new(),
        Cell::Text(s) => csv_field(s),
        other => other.to_string(),
    }
}

/// Each table as its name, a header line and one line per row; tables are
/// separated by a blank line. Nulls are empty fields.
pub fn render_csv(db: &DatabaseInstance) -> String {
    let blocks: Vec<String> = db
        .tables()
        .iter()
        .map(|t| {
            let mut out = String::new();
            out.push_str(&t.table_name);
            out.push('\n');
            let header: Vec<String> = t.columns.iter().map(|c| csv_field(c)).collect();
            out.push_str(&header.join(","));
            out.push('\n');
            for row in &t.rows {
                let cells: Vec<String> = row.iter().map(csv_cell).collect();
                out.push_str(&cells.join(","));
                out.push('\n');
            }
            out
        })
        .collect();
    blocks.join("\n")
}

/// One `CREATE TABLE` (with key clauses) per table followed by its `INSERT`s.
pub fn render_sqlite(db: &DatabaseInstance) -> String {
    let schema = db.schema();
    let mut out = String::new();
    for (def, data) in schema.tables().iter().zip(db.tables()) {
        out.push_str(&create_table_sql(schema, def, true));
        out.push_str(";\n");
        for row in &data.rows {
            let values: Vec<String> = row.iter().map(sql_literal).collect();
            let _ = writeln!(
                out,
                "INSERT INTO {} VALUES ({});",
                quote_ident(&def.name),
                values.join(", ")
            );
        }
    }
    out
}

pub fn render_db(db: &DatabaseInstance, format: DbFormat) -> String {
    match format {
        DbFormat::Csv => render_csv(db),
        DbFormat::Sqlite => render_sqlite(db),
    }
}

fn looks_numeric(s: &str) -> bool {
    let b = s.as_bytes();
    let mut i = 0;
    if i < b.len() && (b[i] == b'-' || b[i] == b'+') {
        i += 1;
    }
    let int_start = i;
    while i < b.len() && b[i].is_ascii_digit() {
        i += 1;
    }
    let mut digits = i - int_start;
    if i < b.len() && b[i] == b'.' {
        i += 1;
        let frac_start = i;
        while i < b.len() && b[i].is_ascii_digit() {
            i += 1;
        }
        digits += i - frac_start;
    }
    if digits == 0 {
        return false;
    }
    if i < b.len() && (b[i] == b'e' || b[i] == b'E') {
        i += 1;
        if i < b.len() && (b[i] == b'-' || b[i] == b'+') {
            i += 1;
        }
        let exp_start = i;
        while i < b.len() && b[i].is_ascii_digit() {
            i += 1;
        }
        if i == exp_start {
            return false;
        }
    }
    i == b.len()
}

fn needs_quotes(s: &str) -> bool {
    s.is_empty()
        || s.trim() != s
        || s.contains(['|', '\n', '\r'])
        || s.starts_with('"')
        || s.starts_with(FENCE)
        || s.eq_ignore_ascii_case(NULL_TOKEN)
        || looks_numeric(s)
        || s.chars().all(|c| c == '-' || c == ':')
}

fn answer_text(s: &str) -> String {
    if needs_quotes(s) {
        serde_json::to_string(s).expect("string")
    } else {
        s.to_string()
    }
}

fn answer_cell(c: &Cell) -> String {
    match c {
        Cell::Null => NULL_TOKEN.into(),
        Cell::Integer(i) => i.to_string(),
        Cell::Real(r) if r.is_finite() => format!("{r:?}"),
        Cell::Real(_) => NULL_TOKEN.into(),
        Cell::Text(s) => answer_text(s),
    }
}

/// A result in the answer grammar, inside a fenced block: a header line of
/// column labels, then one line per row, cells separated by ` | `.
pub fn render_answer(result: &ExecutionResult) -> String {
    let mut out = String::from(FENCE);
    out.push('\n');
    let header: Vec<String> = result.columns.iter().map(|c| answer_text(c)).collect();
    out.push_str(&header.join(" | "));
    out.push('\n');
    for row in &result.rows {
        let cells: Vec<String> = row.iter().map(answer_cell).collect();
        out.push_str(&cells.join(" | "));
        out.push('\n');
    }
    out.push_str(FENCE);
    out.push('\n');
    out
}

fn push_block(out: &mut String, body: &str) {
    out.push_str(FENCE);
    out.push('\n');
    out.push_str(body);
    if !body.is_empty() && !body.ends_with('\n') {
        out.push('\n');
    }
    out.push_str(FENCE);
    out.push('\n');
}

/// Instruction, the first `config.shots` pool examples, then the target with an
/// empty answer slot.
pub fn build_prompt(db: &DatabaseInstance, question: &str, config: &PromptConfig) -> Result<Prompt, PromptError> {
    config.validate()?;
    let mut text = String::from(INSTRUCTION);
    text.push('\n');
    for (i, ex) in config.example_pool.iter().take(config.shots).enumerate() {
        let _ = write!(text, "\n### Example {}\nDatabase:\n", i + 1);
        push_block(&mut text, &render_db(&ex.db, config.db_format));
        let _ = writeln!(text, "Question: {}", ex.question.trim());
        text.push_str("Answer:\n");
        text.push_str(&render_answer(&ex.expected));
    }
    text.push_str("\n### Task\nDatabase:\n");
    push_block(&mut text, &render_db(db, config.db_format));
    let _ = writeln!(text, "Question: {}", question.trim());
    text.push_str("Answer:\n");
    Ok(Prompt {
        text,
        rendered_format: config.db_format,
        shot_count: config.shots,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unparsable answer: {0}")]
pub struct ParseFailure(pub String);

fn split_cells(line: &str) -> Vec<String> {
    let mut cells = Vec::new();
    let mut current = String::new();
    let mut in_string = false;
    let mut escaped = false;
    for ch in line.chars() {
        if in_string {
            current.push(ch);
            if escaped {
                escaped = false;
            } else if ch == '\\' {
                escaped = true;
            } else if ch == '"' {
                in_string = false;
            }
            continue;
        }
        match ch {
            '|' => cells.push(std::mem::take(&mut current)),
            '"' if current.trim().is_empty() => {
                current.push(ch);
                in_string = true;
            }
            _ => current.push(ch),
        }
    }
    cells.push(current);
    cells.into_iter().map(|c| c.trim().to_string()).collect()
}

fn table_line(line: &str) -> Option<Vec<String>> {
    let mut s = line.trim();
    if s.is_empty() {
        return None;
    }
    if s.starts_with('|') {
        s = &s[1..];
    }
    if s.ends_with('|') && !s.ends_with("\\|") {
        s = &s[..s.len() - 1];
    }
    let cells = split_cells(s);
    let separator = cells
        .iter()
        .all(|c| !c.is_empty() && c.chars().all(|ch| matches!(ch, '-' | ':' | ' ')))
        && cells.iter().any(|c| c.contains('-'));
    if separator {
        return Some(Vec::new());
    }
    Some(cells)
}

fn parse_text(s: &str) -> String {
    if s.len() >= 2 && s.starts_with('"') && s.ends_with('"') {
        if let Ok(inner) = serde_json::from_str::<String>(s) {
            return inner;
        }
    }
    s.to_string()
}

fn parse_cell(s: &str) -> Cell {
    if s == NULL_TOKEN {
        return Cell::Null;
    }
    if looks_numeric(s) {
        if let Ok(i) = s.parse::<i64>() {
            return Cell::Integer(i);
        }
        if let Ok(r) = s.parse::<f64>() {
            return Cell::Real(r);
        }
    }
    Cell::Text(parse_text(s))
}

fn parse_block(lines: &[&str]) -> Result<ExecutionResult, ParseFailure> {
    let mut parsed = lines.iter().filter_map(|l| table_line(l)).filter(|c| !c.is_empty());
    let header = parsed
        .next()
        .ok_or_else(|| ParseFailure("empty table block".into()))?;
    let columns: Vec<String> = header.iter().map(|h| parse_text(h)).collect();
    let mut rows = Vec::new();
    for (i, cells) in parsed.enumerate() {
        if cells.len() != columns.len() {
            return Err(ParseFailure(format!(
                "row {} has {} cells, header has {}",
                i + 1,
                cells.len(),
                columns.len()
            )));
        }
        rows.push(cells.iter().map(|c| parse_cell(c)).collect());
    }
    ExecutionResult::new(columns, rows, false).map_err(ParseFailure)
}

/// Parses an oracle reply. The first fenced block that holds a table wins;
/// without one, the first run of consecutive lines containing `|` is used and
/// the surrounding prose ignored. Markdown pipes and separator rows are tolerated.
pub fn parse_answer(reply: &str) -> Result<ExecutionResult, ParseFailure> {
    let lines: Vec<&str> = reply.lines().collect();
    let mut first_error = None;
    let mut i = 0;
    while i < lines.len() {
        if let Some(info) = lines[i].trim_start().strip_prefix(FENCE) {
            let start = i + 1;
            let mut end = start;
            while end < lines.len() && !lines[end].trim_start().starts_with(FENCE) {
                end += 1;
            }
            i = end + 1;
            let info = info.trim().to_ascii_lowercase();
            if info == "sql" || info == "sqlite" {
                continue;
            }
            match parse_block(&lines[start..end]) {
                Ok(r) => return Ok(r),
                Err(e) => {
                    first_error.get_or_insert(e);
                }
            }
        } else {
            i += 1;
        }
    }
    let mut i = 0;
    while i < lines.len() {
        if lines[i].contains('|') && !lines[i].trim_start().starts_with(FENCE) {
            let start = i;
            while i < lines.len() && lines[i].contains('|') {
                i += 1;
            }
            return parse_block(&lines[start..i]);
        }
        i += 1;
    }
    Err(first_error.unwrap_or_else(|| ParseFailure("no table block found".into())))
}

#[derive(Deserialize)]
#[serde(untagged)]
enum PoolDb {
    File { db_file: String },
    Inline { db: DatabaseInstance },
}

#[derive(Deserialize)]
struct PoolEntry {
    #[serde(flatten)]
    db: PoolDb,
    question: String,
    expected: ExecutionResult,
}

/// Loads an example pool: a JSON array of `{question, expected, db}` or
/// `{question, expected, db_file}` objects. `db_file` paths are relative to the
/// pool file.
pub fn load_example_pool(path: impl AsRef<Path>) -> Result<Vec<Example>, PromptError> {
    let path = path.as_ref();
    let err = |reason: String| PromptError::Pool {
        path: path.display().to_string(),
        reason,
    };
    let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    let entries: Vec<PoolEntry> = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    entries
        .into_iter()
        .enumerate()
        .map(|(i, e)| {
            let db = match e.db {
                PoolDb::Inline { db } => db,
                PoolDb::File { db_file } => crate::store::load_instance(base.join(&db_file))
                    .map_err(|x| err(format!("example {i}: {x}")))?,
            };
            Ok(Example {
                db,
                question: e.question,
                expected: e.expected,
            })
        })
        .collect()
}
