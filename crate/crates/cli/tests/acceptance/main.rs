//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits non-zero
//! when any fails.

mod fixtures;

use std::collections::{BTreeSet, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rusqlite::Connection;

use sqlrerank_core::dbgen::{self, sample_database, Cell, CellKey, DatabaseInstance, GenConfig, GenMethod};
use sqlrerank_core::eval::config::RunConfig;
use sqlrerank_core::eval::report::{EntryStatus, EvalReport};
use sqlrerank_core::eval::{self, corpus, Gate, OracleChoice};
use sqlrerank_core::exec::{self, execute, outcome_key, results_equal, results_equal_relaxed, ExecutionOutcome, ExecutionResult};
use sqlrerank_core::oracle::{ReferenceOracle, DEFAULT_API_KEY_ENV};
use sqlrerank_core::prompt::{build_prompt, parse_answer, render_answer, render_csv, render_sqlite, DbFormat, Example, PromptConfig};
use sqlrerank_core::store::instance_from_connection;
use sqlrerank_core::suite::{classify_candidates, distinguishes, generate_suite, Candidate, ClassificationSignature, SuiteConfig};

use fixtures::{all_fixtures, corpus_specs, write_corpus, Fixture};

struct Verdict {
    pass: bool,
    detail: String,
}

type Check = (&'static str, fn() -> Verdict);

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn same_value(a: &Cell, b: &Cell) -> bool {
    match (a, b) {
        (Cell::Integer(x), Cell::Integer(y)) => x == y,
        (Cell::Integer(x), Cell::Real(y)) | (Cell::Real(y), Cell::Integer(x)) => *x as f64 == *y,
        (Cell::Real(x), Cell::Real(y)) => x == y,
        (Cell::Text(x), Cell::Text(y)) => x == y,
        _ => false,
    }
}

fn column(db: &DatabaseInstance, table: &str, col: &str) -> usize {
    db.table(table).unwrap().columns.iter().position(|c| c.eq_ignore_ascii_case(col)).unwrap()
}

/// Nested-loop scan for child values with no equal parent value.
fn brute_force_violations(db: &DatabaseInstance) -> usize {
    let mut bad = 0;
    for fk in db.schema().foreign_keys() {
        let parent = db.table(&fk.parent_table).unwrap();
        let child = db.table(&fk.child_table).unwrap();
        let pi = column(db, &fk.parent_table, &fk.parent_column);
        let ci = column(db, &fk.child_table, &fk.child_column);
        for row in &child.rows {
            let v = &row[ci];
            if !v.is_null() && !parent.rows.iter().any(|p| same_value(&p[pi], v)) {
                bad += 1;
            }
        }
    }
    bad
}

fn fk_validity() -> Verdict {
    let dbs: Vec<DatabaseInstance> = all_fixtures().iter().map(Fixture::instance).collect();
    let start = Instant::now();
    let mut violations = 0;
    let mut errors = Vec::new();
    for method in [GenMethod::Fuzzing, GenMethod::RandomSelection] {
        for i in 0..1000u64 {
            let db = &dbs[i as usize % dbs.len()];
            let config = GenConfig::new(1 + i as usize % 8, method, i).unwrap();
            match dbgen::generate(db, &config) {
                Ok(g) => violations += brute_force_violations(&g),
                Err(e) => errors.push(format!("{method:?} seed {i}: {e}")),
            }
        }
    }
    let elapsed = start.elapsed();
    verdict(
        violations == 0 && errors.is_empty() && elapsed < Duration::from_secs(30),
        format!(
            "2000 generations over {} schemas, {violations} violations, {} errors, {:.1}s",
            dbs.len(),
            errors.len(),
            elapsed.as_secs_f64()
        ),
    )
}

/// Rows of `table` not referenced by any row of a table that points at it.
fn unreferenced_rows(db: &DatabaseInstance, table: &str) -> usize {
    let data = db.table(table).unwrap();
    let fks: Vec<_> = db.schema().foreign_keys_into(table).collect();
    data.rows
        .iter()
        .filter(|row| {
            !fks.iter().any(|fk| {
                let pi = column(db, table, &fk.parent_column);
                let ci = column(db, &fk.child_table, &fk.child_column);
                db.table(&fk.child_table).unwrap().rows.iter().any(|c| same_value(&c[ci], &row[pi]))
            })
        })
        .count()
}

fn sampling_subset() -> Verdict {
    let dbs: Vec<DatabaseInstance> = all_fixtures().iter().map(Fixture::instance).collect();
    let mut failures = Vec::new();
    let mut overflowing = 0;
    for i in 0..1000u64 {
        let source = &dbs[i as usize % dbs.len()];
        let mts = 1 + (i as usize * 7) % 6;
        let config = GenConfig::new(mts, GenMethod::RandomSelection, i).unwrap();
        let sampled = match sample_database(source, &config) {
            Ok(s) => s,
            Err(e) => {
                failures.push(format!("seed {i}: {e}"));
                continue;
            }
        };
        for t in sampled.tables() {
            let src = source.table(&t.table_name).unwrap();
            if t.rows.iter().any(|r| !src.rows.contains(r)) {
                failures.push(format!("seed {i}: {} has a row not in the source", t.table_name));
            }
            if t.rows.len() > mts {
                overflowing += 1;
                if unreferenced_rows(&sampled, &t.table_name) > mts {
                    failures.push(format!("seed {i}: {} exceeds mts with unreferenced rows", t.table_name));
                }
            }
        }
    }
    verdict(
        failures.is_empty(),
        format!(
            "1000 trials, {} failures, {overflowing} tables above mts all by referenced rows{}",
            failures.len(),
            failures.first().map(|f| format!(" (first: {f})")).unwrap_or_default()
        ),
    )
}

fn random_query(rng: &mut ChaCha8Rng, db: &DatabaseInstance) -> String {
    let schema = db.schema();
    let t = &schema.tables()[rng.random_range(0..schema.tables().len())];
    let numeric: Vec<&str> = t
        .columns
        .iter()
        .filter(|c| c.declared_type.is_numeric())
        .map(|c| c.name.as_str())
        .collect();
    let any = t.columns[rng.random_range(0..t.columns.len())].name.as_str();
    let x = numeric[rng.random_range(0..numeric.len())];
    let data = db.table(&t.name).unwrap();
    let xi = column(db, &t.name, x);
    let values: Vec<&Cell> = data.rows.iter().map(|r| &r[xi]).filter(|c| !c.is_null()).collect();
    let k = if values.is_empty() {
        "0".to_string()
    } else {
        values[rng.random_range(0..values.len())].to_string()
    };
    let op = ["<", "<=", ">", ">=", "=", "<>"][rng.random_range(0..6)];
    let agg = ["MAX", "MIN", "SUM", "AVG", "COUNT"][rng.random_range(0..5)];
    let table = &t.name;
    match rng.random_range(0..5) {
        0 => format!("SELECT {any} FROM {table} WHERE {x} {op} {k}"),
        1 => format!("SELECT COUNT(*) FROM {table} WHERE {x} {op} {k}"),
        2 => format!("SELECT {agg}({x}) FROM {table}"),
        3 => format!("SELECT {any} FROM {table} ORDER BY {x} DESC LIMIT {}", rng.random_range(1..4)),
        _ => format!("SELECT {any}, COUNT(*) FROM {table} GROUP BY {any}"),
    }
}

fn same_outcome(a: &ExecutionOutcome, b: &ExecutionOutcome) -> bool {
    match (a, b) {
        (ExecutionOutcome::Ok(x), ExecutionOutcome::Ok(y)) => results_equal(x, y),
        (ExecutionOutcome::SqlError(_), ExecutionOutcome::SqlError(_)) => true,
        (ExecutionOutcome::Timeout, ExecutionOutcome::Timeout) => true,
        _ => false,
    }
}

/// Order matters for the comparison of two results only when both carry several
/// rows and exactly one is order-significant; there `results_equal` is not
/// transitive and no token can follow it.
fn mixed_order(a: &ExecutionOutcome, b: &ExecutionOutcome) -> bool {
    match (a, b) {
        (ExecutionOutcome::Ok(x), ExecutionOutcome::Ok(y)) => {
            x.order_significant != y.order_significant && x.rows.len() > 1 && y.rows.len() > 1
        }
        _ => false,
    }
}

/// Signature recomputed from fresh executions, plus the number of pairs whose
/// tokens disagree with `results_equal` outside the mixed-order case.
fn rescan_signature(db: &DatabaseInstance, reps: &[Candidate]) -> (Vec<usize>, usize) {
    let outcomes: Vec<ExecutionOutcome> = reps.iter().map(|c| execute(db, &c.sql, exec::DEFAULT_TIMEOUT)).collect();
    let keys: Vec<_> = outcomes.iter().map(outcome_key).collect();
    let mut unsound = 0;
    for i in 0..outcomes.len() {
        for j in i + 1..outcomes.len() {
            if !mixed_order(&outcomes[i], &outcomes[j]) && same_outcome(&outcomes[i], &outcomes[j]) != (keys[i] == keys[j]) {
                unsound += 1;
            }
        }
    }
    let sig = (0..keys.len()).map(|i| (0..=i).find(|&j| keys[j] == keys[i]).unwrap()).collect();
    (sig, unsound)
}

fn all_pairs_separated(sigs: &[Vec<usize>], n: usize) -> bool {
    (0..n).all(|i| (i + 1..n).all(|j| sigs.iter().any(|s| s[i] != s[j])))
}

fn suite_contracts() -> Verdict {
    let dbs: Vec<DatabaseInstance> = all_fixtures().iter().map(Fixture::instance).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut trials = 0;
    let mut attempts = 0;
    let mut early_stops = 0;
    let mut failures: Vec<String> = Vec::new();
    while trials < 500 && attempts < 5000 {
        attempts += 1;
        let db = &dbs[rng.random_range(0..dbs.len())];
        let count = rng.random_range(2..=4);
        let candidates: Vec<Candidate> = (0..count)
            .map(|i| Candidate::new(random_query(&mut rng, db), Some(1.0 / (i + 1) as f64), i))
            .collect();
        let gold = candidates[rng.random_range(0..count)].sql.clone();
        let n_max = rng.random_range(1..=10);
        let method = if rng.random_bool(0.5) { GenMethod::Fuzzing } else { GenMethod::RandomSelection };
        let config = SuiteConfig {
            max_test_cases: n_max,
            gen: GenConfig::new(rng.random_range(1..=6), method, rng.random()).unwrap(),
            prune: rng.random_bool(0.5),
            constrain_numbers: rng.random_bool(0.5),
            ..SuiteConfig::default()
        };
        let classification = classify_candidates(db, &candidates, config.timeout(), config.parallelism);
        let reps: Vec<Candidate> = classification.representatives.iter().map(|&i| candidates[i].clone()).collect();
        if reps.len() < 2 {
            continue;
        }
        trials += 1;
        let oracle = ReferenceOracle::new(gold.clone(), config.timeout());
        let suite = match generate_suite(db, &reps, &candidates, "q", &config, &oracle) {
            Ok(s) => s,
            Err(e) => {
                failures.push(format!("generation failed: {e}"));
                continue;
            }
        };
        let mut fail = |m: String| failures.push(m);
        if suite.len() > n_max || suite.stats.iterations > n_max {
            fail(format!("suite of {} over N={n_max}", suite.len()));
        }
        let (sigs, unsound): (Vec<Vec<usize>>, Vec<usize>) = suite.cases.iter().map(|c| rescan_signature(&c.db, &reps)).unzip();
        if unsound.iter().sum::<usize>() > 0 {
            fail("tokens disagree with results_equal".into());
        }
        let stored: Vec<Vec<usize>> = suite.signatures.iter().map(|s| s.0.clone()).collect();
        if sigs != stored {
            fail("stored signatures disagree with a re-scan".into());
        }
        if sigs.iter().collect::<HashSet<_>>().len() != sigs.len() {
            fail("duplicate signature".into());
        }
        for case in &suite.cases {
            if !matches!(execute(&case.db, &gold, config.timeout()), ExecutionOutcome::Ok(r) if results_equal(&r, &case.expected)) {
                fail("expected result is not the gold result".into());
            }
        }
        let n = reps.len();
        if suite.stats.distinguished {
            early_stops += 1;
            if !all_pairs_separated(&sigs, n) {
                fail("early stop without pairwise distinction".into());
            }
            if all_pairs_separated(&sigs[..sigs.len() - 1], n) {
                fail("loop ran past the first distinguishing case".into());
            }
        } else if suite.stats.iterations != n_max || all_pairs_separated(&sigs, n) {
            fail("stopped early without distinction, or missed it".into());
        }
        let wrapped: Vec<ClassificationSignature> = sigs.iter().cloned().map(ClassificationSignature).collect();
        if distinguishes(&wrapped, n) != all_pairs_separated(&sigs, n) {
            fail("distinguishes() disagrees with the pairwise scan".into());
        }
    }
    verdict(
        trials >= 500 && failures.is_empty(),
        format!(
            "{trials} trials with 2+ classes ({attempts} drawn), {early_stops} early stops, {} failures{}",
            failures.len(),
            failures.first().map(|f| format!(" (first: {f})")).unwrap_or_default()
        ),
    )
}

fn corpus_config() -> SuiteConfig {
    RunConfig::default().suite_config().unwrap()
}

fn run_corpus(dir: &Path, oracle: &OracleChoice) -> EvalReport {
    let specs = corpus_specs();
    let manifest = write_corpus(dir, &specs);
    let entries = corpus::load_corpus(&manifest).unwrap();
    eval::evaluate(&entries, &Default::default(), &corpus_config(), oracle, Gate::Mixed)
}

fn perfect_oracle() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let specs = corpus_specs();
    let start = Instant::now();
    let report = run_corpus(dir.path(), &OracleChoice::Reference);
    let elapsed = start.elapsed();
    let documented: BTreeSet<&str> = specs.iter().filter(|s| s.indistinguishable).map(|s| s.id.as_str()).collect();
    let mut distinguished = 0;
    let mut top1 = 0;
    let mut surprises = Vec::new();
    let mut undistinguished = Vec::new();
    let mut failed = 0;
    for e in &report.entries {
        if matches!(e.status, EntryStatus::Failed(_)) {
            failed += 1;
        }
        if e.gold_class_distinguished == Some(true) {
            if documented.contains(e.id.as_str()) {
                surprises.push(e.id.clone());
            }
            distinguished += 1;
            top1 += e.post_correct as usize;
        } else if !documented.contains(e.id.as_str()) {
            undistinguished.push(e.id.clone());
        }
    }
    let sizes: BTreeSet<usize> = specs.iter().map(|s| s.candidates.len()).collect();
    verdict(
        specs.len() == 50
            && failed == 0
            && distinguished > 0
            && top1 == distinguished
            && surprises.is_empty()
            && elapsed < Duration::from_secs(120),
        format!(
            "{} entries ({}-{} candidates), gold class distinguished in {distinguished}, top-1 {top1}/{distinguished}; \
             excluded: documented {:?}, not distinguished by the suite {:?}; {failed} failed; {:.1}s",
            specs.len(),
            sizes.first().unwrap(),
            sizes.last().unwrap(),
            documented,
            undistinguished,
            elapsed.as_secs_f64()
        ),
    )
}

fn all_results(width: usize, rows: usize, ordered: bool) -> Vec<ExecutionResult> {
    let cells = width * rows;
    (0..1usize << cells)
        .map(|bits| {
            let data = (0..rows)
                .map(|r| (0..width).map(|c| Cell::Integer(1 + ((bits >> (r * width + c)) & 1) as i64)).collect())
                .collect();
            let columns = (0..width).map(|c| format!("c{c}")).collect();
            ExecutionResult::new(columns, data, ordered).unwrap()
        })
        .collect()
}

fn brute_rows_equal(a: &[Vec<Cell>], b: &[Vec<Cell>], ordered: bool) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let key = |r: &Vec<Cell>| r.iter().map(|c| match c { Cell::Integer(i) => *i, _ => unreachable!() }).collect::<Vec<i64>>();
    let mut x: Vec<Vec<i64>> = a.iter().map(key).collect();
    let mut y: Vec<Vec<i64>> = b.iter().map(key).collect();
    if !ordered {
        x.sort();
        y.sort();
    }
    x == y
}

fn injections(k: usize, m: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for prefix in injections(k - 1, m) {
        for j in (0..m).filter(|j| !prefix.contains(j)) {
            let mut p = prefix.clone();
            p.push(j);
            out.push(p);
        }
    }
    out
}

/// Reference: some injective map of the narrower result's columns into the
/// wider one's makes the projected rows equal.
fn brute_relaxed(a: &ExecutionResult, b: &ExecutionResult) -> bool {
    let (narrow, wide) = if a.columns.len() <= b.columns.len() { (a, b) } else { (b, a) };
    let ordered = narrow.order_significant || wide.order_significant;
    injections(narrow.columns.len(), wide.columns.len()).iter().any(|f| {
        let projected: Vec<Vec<Cell>> = wide.rows.iter().map(|r| f.iter().map(|&j| r[j].clone()).collect()).collect();
        brute_rows_equal(&narrow.rows, &projected, ordered)
    })
}

fn relaxed_exhaustive() -> Verdict {
    let mut results = Vec::new();
    for width in 1..=3 {
        for rows in 0..=3 {
            for ordered in [false, true] {
                results.extend(all_results(width, rows, ordered));
            }
        }
    }
    let mut disagreements = 0u64;
    let mut pairs = 0u64;
    let mut first = None;
    for a in &results {
        for b in &results {
            pairs += 1;
            if results_equal_relaxed(a, b) != brute_relaxed(a, b) {
                disagreements += 1;
                first.get_or_insert_with(|| format!("{a:?} vs {b:?}"));
            }
        }
    }
    verdict(
        disagreements == 0,
        format!(
            "{} results, {pairs} ordered pairs, {disagreements} disagreements{}",
            results.len(),
            first.map(|f| format!(" (first: {f})")).unwrap_or_default()
        ),
    )
}

fn csv_text(cell: &Cell) -> String {
    match cell {
        Cell::Null => String::new(),
        Cell::Integer(i) => i.to_string(),
        Cell::Real(r) => format!("{r:?}"),
        Cell::Text(s) => s.clone(),
    }
}

fn csv_round_trip(db: &DatabaseInstance) -> Result<(), String> {
    let text = render_csv(db);
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut records = reader.records();
    let mut next = || records.next().ok_or("ran out of records").and_then(|r| r.map_err(|_| "bad record"));
    for t in db.tables() {
        let name = next()?;
        if name.len() != 1 || &name[0] != t.table_name.as_str() {
            return Err(format!("expected table name {}", t.table_name));
        }
        let header = next()?;
        if header.iter().ne(t.columns.iter().map(String::as_str)) {
            return Err(format!("{}: header mismatch", t.table_name));
        }
        for row in &t.rows {
            let rec = next()?;
            if rec.iter().ne(row.iter().map(csv_text).collect::<Vec<_>>().iter().map(String::as_str)) {
                return Err(format!("{}: row mismatch {rec:?} vs {row:?}", t.table_name));
            }
        }
    }
    Ok(())
}

fn sqlite_round_trip(db: &DatabaseInstance) -> Result<(), String> {
    let conn = Connection::open_in_memory().map_err(|e| e.to_string())?;
    // Stock SQLite default: rows may precede the rows they reference.
    conn.execute_batch("PRAGMA foreign_keys = OFF;").map_err(|e| e.to_string())?;
    conn.execute_batch(&render_sqlite(db)).map_err(|e| e.to_string())?;
    let dangling = conn
        .prepare("PRAGMA foreign_key_check")
        .and_then(|mut s| s.query_map([], |_| Ok(())).map(|r| r.count()))
        .map_err(|e| e.to_string())?;
    if dangling > 0 {
        return Err(format!("engine reports {dangling} dangling references after replay"));
    }
    let back = instance_from_connection(&conn).map_err(|e| e.to_string())?;
    let rows = |d: &DatabaseInstance| -> Vec<Vec<Vec<CellKey>>> {
        d.tables()
            .iter()
            .map(|t| {
                let mut rows: Vec<Vec<CellKey>> = t.rows.iter().map(|r| r.iter().map(Cell::key).collect()).collect();
                rows.sort();
                rows
            })
            .collect()
    };
    // Tables keyed by a rowid alias come back in key order.
    if back.schema() != db.schema() {
        return Err(format!("replayed schema differs: {:?} vs {:?}", back.schema(), db.schema()));
    }
    match rows(&back).iter().zip(rows(db)).position(|(x, y)| *x != y) {
        None => Ok(()),
        Some(t) => Err(format!(
            "replayed rows of {} differ: {:?} vs {:?}",
            db.tables()[t].table_name,
            back.tables()[t].rows,
            db.tables()[t].rows
        )),
    }
}

fn answer_round_trip(r: &ExecutionResult) -> Result<(), String> {
    let parsed = parse_answer(&render_answer(r)).map_err(|e| e.to_string())?;
    let expected = ExecutionResult {
        order_significant: false,
        ..r.clone()
    };
    if parsed == expected {
        Ok(())
    } else {
        Err(format!("{r:?} parsed back as {parsed:?}"))
    }
}

fn golden_dir() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/golden")
}

#[derive(serde::Deserialize)]
struct GoldenCase {
    name: String,
    db: String,
    question: String,
    format: DbFormat,
    shots: usize,
}

fn golden_prompts() -> Result<usize, String> {
    let dir = golden_dir();
    let read = |name: &str| std::fs::read_to_string(dir.join(name)).map_err(|e| format!("{name}: {e}"));
    let cases: Vec<GoldenCase> = serde_json::from_str(&read("cases.json")?).map_err(|e| e.to_string())?;
    let pool: Vec<Example> = sqlrerank_core::prompt::load_example_pool(dir.join("pool.json")).map_err(|e| e.to_string())?;
    for case in &cases {
        let db: DatabaseInstance = serde_json::from_str(&read(&case.db)?).map_err(|e| e.to_string())?;
        let config = PromptConfig::new(case.format, case.shots, pool.clone()).map_err(|e| e.to_string())?;
        let first = build_prompt(&db, &case.question, &config).map_err(|e| e.to_string())?;
        let second = build_prompt(&db, &case.question, &config).map_err(|e| e.to_string())?;
        if first.text != second.text || first.text != read(&format!("{}.txt", case.name))? {
            return Err(format!("golden {} differs", case.name));
        }
    }
    Ok(cases.len())
}

fn round_trips() -> Verdict {
    let mut dbs: Vec<DatabaseInstance> = all_fixtures().iter().map(Fixture::instance).collect();
    for (i, base) in dbs.clone().iter().enumerate() {
        for method in [GenMethod::Fuzzing, GenMethod::RandomSelection] {
            dbs.push(dbgen::generate(base, &GenConfig::new(4, method, i as u64).unwrap()).unwrap());
        }
    }
    let mut errors = Vec::new();
    let mut results = vec![
        ExecutionResult::new(
            vec!["a | b".into(), "NULL".into()],
            vec![
                vec![Cell::text(" padded "), Cell::Null],
                vec![Cell::text("NULL"), Cell::text("")],
                vec![Cell::text("x | y"), Cell::text("42")],
                vec![Cell::text("\"quoted\""), Cell::Real(-0.5)],
            ],
            true,
        )
        .unwrap(),
    ];
    for db in &dbs {
        errors.extend(csv_round_trip(db).err());
        errors.extend(sqlite_round_trip(db).err());
        for t in db.tables() {
            if let ExecutionOutcome::Ok(r) = execute(db, &format!("SELECT * FROM \"{}\"", t.table_name), exec::DEFAULT_TIMEOUT) {
                results.push(r);
            }
        }
    }
    for r in &results {
        errors.extend(answer_round_trip(r).err());
    }
    let golden = golden_prompts();
    let golden_count = golden.as_ref().copied().unwrap_or(0);
    errors.extend(golden.err());
    verdict(
        errors.is_empty(),
        format!(
            "{} instances via CSV and SQLite, {} results via the answer grammar, {golden_count} golden prompts, {} errors{}",
            dbs.len(),
            results.len(),
            errors.len(),
            errors.first().map(|f| format!(" (first: {f})")).unwrap_or_default()
        ),
    )
}

fn run_cli(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_sqlrerank"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn pipeline(root: &Path, out: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    std::fs::create_dir_all(out).map_err(|e| e.to_string())?;
    let p = |name: &str| out.join(name).display().to_string();
    let db = root.join("db/music.sqlite").display().to_string();
    let specs = corpus_specs();
    let spec = specs.iter().find(|s| s.db == "music").unwrap();
    let cands = root.join("cands.json");
    std::fs::write(&cands, fixtures::candidates_json(&spec.candidates).to_string()).map_err(|e| e.to_string())?;
    let cands = cands.display().to_string();
    let corpus = root.display().to_string();
    let mut stdout = String::new();
    stdout += &run_cli(&["gen-db", "--db", &db, "--method", "fuzzing", "--mts", "6", "--seed", "11", "--out", &p("gen.sqlite")])?;
    stdout += &run_cli(&["gen-db", "--db", &db, "--method", "random-selection", "--seed", "11", "--out", &p("sample.sqlite")])?;
    stdout += &run_cli(&[
        "gen-suite", "--db", &db, "--candidates-file", &cands, "--question", &spec.question, "--oracle", "reference",
        "--gold", &spec.gold, "--seed", "11", "--out", &p("suite.json"),
    ])?;
    stdout += &run_cli(&["rerank", "--suite", &p("suite.json"), "--candidates-file", &cands, "--out", &p("ranked.json")])?;
    stdout += &run_cli(&["eval", "--corpus", &corpus, "--oracle", "reference", "--seed", "11", "--report", &p("report.json")])?;
    let mut files = vec![("stdout".to_string(), stdout.into_bytes())];
    for name in ["gen.sqlite", "sample.sqlite", "suite.json", "ranked.json", "report.json"] {
        files.push((name.to_string(), std::fs::read(out.join(name)).map_err(|e| e.to_string())?));
    }
    Ok(files)
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), &corpus_specs());
    let runs = (|| Ok::<_, String>((pipeline(dir.path(), &dir.path().join("run1"))?, pipeline(dir.path(), &dir.path().join("run2"))?)))();
    match runs {
        Ok((a, b)) => {
            let differing: Vec<&str> = a.iter().zip(&b).filter(|(x, y)| x.1 != y.1).map(|(x, _)| x.0.as_str()).collect();
            let bytes: usize = a.iter().map(|f| f.1.len()).sum();
            verdict(
                differing.is_empty(),
                format!("{} outputs ({bytes} bytes) compared across two runs, differing: {differing:?}", a.len()),
            )
        }
        Err(e) => verdict(false, format!("pipeline failed: {e}")),
    }
}

fn degraded_oracle() -> Verdict {
    let mut post = Vec::new();
    let mut pre = None;
    for p in [1.0, 0.7, 0.5] {
        let dir = tempfile::tempdir().unwrap();
        let report = run_corpus(dir.path(), &OracleChoice::Simulated { p, seed: 0 });
        pre.get_or_insert(report.aggregate.ex_pre);
        post.push(report.aggregate.ex_post);
    }
    let pre = pre.unwrap();
    let monotone = post[0] >= post[1] && post[1] >= post[2];
    let mut detail = format!(
        "EX before {pre:.3}; after at p=1.0/0.7/0.5: {:.3}/{:.3}/{:.3}",
        post[0], post[1], post[2]
    );
    let mut pass = monotone && post[1] > pre;
    match live_smoke() {
        None => detail.push_str(&format!("; live smoke skipped ({DEFAULT_API_KEY_ENV} unset)")),
        Some(Ok(n)) => detail.push_str(&format!("; live smoke completed {n} entries")),
        Some(Err(e)) => {
            pass = false;
            detail.push_str(&format!("; live smoke failed: {e}"));
        }
    }
    verdict(pass, detail)
}

/// Ten entries against a remote endpoint; only completion is checked.
fn live_smoke() -> Option<Result<usize, String>> {
    std::env::var(DEFAULT_API_KEY_ENV).ok()?;
    let dir = tempfile::tempdir().unwrap();
    let mut specs = corpus_specs();
    specs.truncate(10);
    let manifest = write_corpus(dir.path(), &specs);
    let mut config = RunConfig::default();
    config.oracle.kind = sqlrerank_core::eval::config::OracleKind::Remote;
    if let Ok(url) = std::env::var("SQLRERANK_BASE_URL") {
        config.oracle.chat.base_url = url;
    }
    if let Ok(model) = std::env::var("SQLRERANK_MODEL") {
        config.oracle.chat.model = model;
    }
    Some((|| {
        let choice = OracleChoice::from_config(&config.oracle, 0)?;
        let entries = corpus::load_corpus(&manifest).map_err(|e| e.to_string())?;
        let report = eval::evaluate(&entries, &Default::default(), &corpus_config(), &choice, Gate::None);
        if report.entries.len() == 10 && report.is_consistent() {
            Ok(report.entries.len())
        } else {
            Err("incomplete report".into())
        }
    })())
}

fn main() {
    let criteria: [Check; 8] = [
        ("fk-validity", fk_validity),
        ("sampling-subset", sampling_subset),
        ("suite-contracts", suite_contracts),
        ("perfect-oracle", perfect_oracle),
        ("relaxed-exhaustive", relaxed_exhaustive),
        ("round-trips", round_trips),
        ("determinism", determinism),
        ("degraded-oracle", degraded_oracle),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let v = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        failed += !v.pass as usize;
        println!("{} {} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, i + 1, v.detail);
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
