//! Fixture databases and the hand-built corpus shared by the criteria.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rusqlite::Connection;
use serde_json::{json, Value};

use sqlrerank_core::dbgen::DatabaseInstance;
use sqlrerank_core::exec::{self, execute, outcome_key, results_equal_relaxed, ExecutionOutcome};
use sqlrerank_core::store::instance_from_connection;

pub struct Fixture {
    pub name: &'static str,
    pub script: String,
}

impl Fixture {
    pub fn instance(&self) -> DatabaseInstance {
        let conn = Connection::open_in_memory().unwrap();
        conn.execute_batch(&self.script).unwrap();
        instance_from_connection(&conn).unwrap()
    }

    pub fn write(&self, path: &Path) {
        if path.exists() {
            std::fs::remove_file(path).unwrap();
        }
        let conn = Connection::open(path).unwrap();
        conn.execute_batch(&self.script).unwrap();
    }
}

fn inserts(out: &mut String, table: &str, rows: impl IntoIterator<Item = String>) {
    for r in rows {
        let _ = writeln!(out, "INSERT INTO {table} VALUES ({r});");
    }
}

pub fn music() -> Fixture {
    let mut s = String::from(
        "CREATE TABLE singer (singer_id INTEGER PRIMARY KEY, name TEXT, country TEXT, age INTEGER, net_worth REAL);\n\
         CREATE TABLE concert (concert_id INTEGER PRIMARY KEY, singer_id INTEGER REFERENCES singer(singer_id), year INTEGER, attendance INTEGER);\n",
    );
    let countries = ["US", "FR", "JP", "BR"];
    inserts(
        &mut s,
        "singer",
        (1..=12).map(|i| {
            format!(
                "{i}, 'Singer {i}', '{}', {}, {}.5",
                countries[i % 4],
                20 + (i * 7) % 30,
                (i * 13) % 50
            )
        }),
    );
    inserts(
        &mut s,
        "concert",
        (1..=24).map(|i| format!("{i}, {}, {}, {}", (i * 5) % 9 + 1, 2010 + (i * 3) % 8, 100 * ((i * 7) % 13) + 50)),
    );
    Fixture { name: "music", script: s }
}

/// Department, employee (self-referencing manager) and project: a three-table chain.
pub fn company() -> Fixture {
    let mut s = String::from(
        "CREATE TABLE dept (dept_id INTEGER PRIMARY KEY, name TEXT, budget INTEGER);\n\
         CREATE TABLE employee (emp_id INTEGER PRIMARY KEY, name TEXT, dept_id INTEGER REFERENCES dept(dept_id), \
         manager_id INTEGER REFERENCES employee(emp_id), salary INTEGER, hired INTEGER);\n\
         CREATE TABLE project (proj_id INTEGER PRIMARY KEY, lead_id INTEGER REFERENCES employee(emp_id), hours INTEGER);\n",
    );
    inserts(&mut s, "dept", (1..=5).map(|i| format!("{i}, 'D{i}', {}", 1000 * i)));
    inserts(
        &mut s,
        "employee",
        (1..=20).map(|i| {
            let manager = if i == 1 { "NULL".to_string() } else { (i / 3 + 1).min(i - 1).to_string() };
            format!("{i}, 'E{i}', {}, {manager}, {}, {}", i % 4 + 1, 3000 + ((i * 37) % 20) * 100, 2000 + i % 15)
        }),
    );
    inserts(
        &mut s,
        "project",
        (1..=12).map(|i| format!("{i}, {}, {}", (i * 7) % 20 + 1, 10 * ((i * 3) % 11) + 5)),
    );
    Fixture { name: "company", script: s }
}

pub fn shop() -> Fixture {
    let mut s = String::from(
        "CREATE TABLE product (pid INTEGER PRIMARY KEY, name TEXT, category TEXT, price REAL, stock INTEGER);\n\
         CREATE TABLE sale (sid INTEGER PRIMARY KEY, pid INTEGER REFERENCES product(pid), qty INTEGER, day INTEGER);\n",
    );
    let categories = ["toys", "food", "tools"];
    inserts(
        &mut s,
        "product",
        (1..=15).map(|i| {
            let price = if i == 15 { "NULL".to_string() } else { format!("{}.99", (i * 17) % 40) };
            format!("{i}, 'P{i}', '{}', {price}, {}", categories[i % 3], (i * 11) % 25)
        }),
    );
    inserts(
        &mut s,
        "sale",
        (1..=20).map(|i| format!("{i}, {}, {}, {}", (i * 4) % 15 + 1, (i * 3) % 7 + 1, i % 10 + 1)),
    );
    Fixture { name: "shop", script: s }
}

pub fn single() -> Fixture {
    let mut s = String::from("CREATE TABLE item (id INTEGER PRIMARY KEY, label TEXT, score REAL, qty INTEGER);\n");
    inserts(
        &mut s,
        "item",
        (1..=10).map(|i| format!("{i}, 'item, \"{i}\"', {}.25, {}", i * 3 % 7, i % 4)),
    );
    Fixture { name: "single", script: s }
}

/// Composite primary key with two parents, one of them text-keyed.
pub fn enrollment() -> Fixture {
    let mut s = String::from(
        "CREATE TABLE student (id INTEGER PRIMARY KEY, name TEXT);\n\
         CREATE TABLE course (code TEXT PRIMARY KEY, credits INTEGER);\n\
         CREATE TABLE enroll (student_id INTEGER REFERENCES student(id), course_code TEXT REFERENCES course(code), \
         grade INTEGER, PRIMARY KEY (student_id, course_code));\n",
    );
    inserts(&mut s, "student", (1..=6).map(|i| format!("{i}, 'S{i}'")));
    inserts(&mut s, "course", ["CS1", "CS2", "MA1", "PH1"].iter().enumerate().map(|(i, c)| format!("'{c}', {}", i + 2)));
    let mut rows = Vec::new();
    for st in 1..=6 {
        for (j, c) in ["CS1", "CS2", "MA1", "PH1"].iter().enumerate() {
            if (st + j) % 3 != 0 {
                rows.push(format!("{st}, '{c}', {}", 50 + (st * 13 + j * 7) % 50));
            }
        }
    }
    inserts(&mut s, "enroll", rows);
    Fixture { name: "enrollment", script: s }
}

/// Self-reference plus a child hanging off the self-referencing table.
pub fn forum() -> Fixture {
    let mut s = String::from(
        "CREATE TABLE post (id INTEGER PRIMARY KEY, parent_id INTEGER REFERENCES post(id), score INTEGER);\n\
         CREATE TABLE vote (id INTEGER PRIMARY KEY, post_id INTEGER NOT NULL REFERENCES post(id), up INTEGER);\n",
    );
    inserts(
        &mut s,
        "post",
        (1..=14).map(|i| {
            let parent = if i <= 2 { "NULL".to_string() } else { (i / 2).to_string() };
            format!("{i}, {parent}, {}", (i * 5) % 9)
        }),
    );
    inserts(&mut s, "vote", (1..=18).map(|i| format!("{i}, {}, {}", (i * 3) % 14 + 1, i % 2)));
    Fixture { name: "forum", script: s }
}

pub fn all_fixtures() -> Vec<Fixture> {
    vec![single(), music(), company(), shop(), enrollment(), forum()]
}

/// One corpus entry before it is written out.
pub struct Spec {
    pub id: String,
    pub db: &'static str,
    pub question: String,
    pub gold: String,
    pub candidates: Vec<String>,
    /// On every database of at most `mts` rows per table the candidates agree.
    pub indistinguishable: bool,
}

struct Template {
    db: &'static str,
    question: &'static str,
    gold: &'static str,
    equivalent: &'static str,
    wrong: &'static [&'static str],
    params: [i64; 5],
    indistinguishable: bool,
}

const TEMPLATES: &[Template] = &[
    Template {
        db: "music",
        question: "Names of singers older than {k}.",
        gold: "SELECT name FROM singer WHERE age > {k}",
        equivalent: "SELECT name FROM singer WHERE age >= {k} + 1",
        wrong: &[
            "SELECT name FROM singer WHERE age >= {k}",
            "SELECT name FROM singer WHERE age < {k}",
            "SELECT country FROM singer WHERE age > {k}",
            "SELECT name FROM singer WHERE age > {k} ORDER BY age DESC LIMIT 2",
        ],
        params: [27, 32, 37, 41, 46],
        indistinguishable: false,
    },
    Template {
        db: "music",
        question: "How many concerts took place in {k}?",
        gold: "SELECT COUNT(*) FROM concert WHERE year = {k}",
        equivalent: "SELECT COUNT(concert_id) FROM concert WHERE year = {k}",
        wrong: &[
            "SELECT COUNT(*) FROM concert WHERE year > {k}",
            "SELECT COUNT(DISTINCT singer_id) FROM concert WHERE year = {k}",
            "SELECT COUNT(*) FROM concert",
            "SELECT COUNT(*) FROM concert WHERE year <= {k}",
        ],
        params: [2011, 2012, 2014, 2015, 2017],
        indistinguishable: false,
    },
    Template {
        db: "music",
        question: "Singers who performed for more than {k} people.",
        gold: "SELECT DISTINCT s.name FROM singer s JOIN concert c ON s.singer_id = c.singer_id WHERE c.attendance > {k}",
        equivalent: "SELECT DISTINCT name FROM singer WHERE singer_id IN (SELECT singer_id FROM concert WHERE attendance > {k})",
        wrong: &[
            "SELECT s.name FROM singer s JOIN concert c ON s.singer_id = c.singer_id WHERE c.attendance > {k}",
            "SELECT DISTINCT s.name FROM singer s JOIN concert c ON s.singer_id = c.singer_id WHERE c.attendance < {k}",
            "SELECT DISTINCT name FROM singer WHERE age > {k} / 30",
        ],
        params: [250, 450, 650, 850, 1050],
        indistinguishable: false,
    },
    Template {
        db: "company",
        question: "Highest salary in department {k}.",
        gold: "SELECT MAX(salary) FROM employee WHERE dept_id = {k}",
        equivalent: "SELECT MAX(e.salary) FROM employee AS e WHERE e.dept_id = {k}",
        wrong: &[
            "SELECT MIN(salary) FROM employee WHERE dept_id = {k}",
            "SELECT MAX(salary) FROM employee",
            "SELECT salary FROM employee WHERE dept_id = {k} ORDER BY salary DESC LIMIT 1",
            "SELECT AVG(salary) FROM employee WHERE dept_id = {k}",
        ],
        params: [1, 2, 3, 4, 5],
        indistinguishable: false,
    },
    Template {
        db: "company",
        question: "Employees whose manager earns more than {k}.",
        gold: "SELECT e.name FROM employee e JOIN employee m ON e.manager_id = m.emp_id WHERE m.salary > {k}",
        equivalent: "SELECT name FROM employee WHERE manager_id IN (SELECT emp_id FROM employee WHERE salary > {k})",
        wrong: &[
            "SELECT e.name FROM employee e JOIN employee m ON e.manager_id = m.emp_id WHERE e.salary > {k}",
            "SELECT e.name FROM employee e JOIN employee m ON e.manager_id = m.emp_id WHERE m.salary < {k}",
            "SELECT m.name FROM employee e JOIN employee m ON e.manager_id = m.emp_id WHERE m.salary > {k}",
        ],
        params: [3500, 3900, 4200, 4500, 4700],
        indistinguishable: false,
    },
    Template {
        db: "company",
        question: "Total hours of projects led by department {k}.",
        gold: "SELECT SUM(p.hours) FROM project p JOIN employee e ON p.lead_id = e.emp_id WHERE e.dept_id = {k}",
        equivalent: "SELECT SUM(hours) FROM project WHERE lead_id IN (SELECT emp_id FROM employee WHERE dept_id = {k})",
        wrong: &[
            "SELECT COUNT(*) FROM project p JOIN employee e ON p.lead_id = e.emp_id WHERE e.dept_id = {k}",
            "SELECT SUM(p.hours) FROM project p JOIN employee e ON p.lead_id = e.emp_id WHERE e.dept_id <> {k}",
            "SELECT SUM(hours) FROM project",
            "SELECT SUM(p.hours) FROM project p JOIN employee e ON p.lead_id = e.emp_id WHERE e.dept_id >= {k}",
        ],
        params: [1, 2, 3, 4, 5],
        indistinguishable: false,
    },
    Template {
        db: "shop",
        question: "Products cheaper than {k}, cheapest first.",
        gold: "SELECT name FROM product WHERE price < {k} ORDER BY price, pid",
        equivalent: "SELECT name FROM product WHERE NOT price >= {k} ORDER BY price, pid",
        wrong: &[
            "SELECT name FROM product WHERE price < {k} ORDER BY price DESC, pid",
            "SELECT name FROM product WHERE price > {k} ORDER BY price, pid",
            "SELECT name FROM product WHERE price < {k} ORDER BY stock, pid",
        ],
        params: [10, 20, 25, 30, 35],
        indistinguishable: false,
    },
    Template {
        db: "shop",
        question: "Number of products per category with stock above {k}.",
        gold: "SELECT category, COUNT(*) FROM product WHERE stock > {k} GROUP BY category",
        equivalent: "SELECT category, COUNT(pid) FROM product WHERE stock > {k} GROUP BY category",
        wrong: &[
            "SELECT category, COUNT(*) FROM product GROUP BY category",
            "SELECT category, COUNT(*) FROM product WHERE stock >= {k} GROUP BY category",
            "SELECT category, SUM(stock) FROM product WHERE stock > {k} GROUP BY category",
        ],
        params: [5, 10, 12, 15, 20],
        indistinguishable: false,
    },
    Template {
        db: "shop",
        question: "Units sold of products priced above {k}.",
        gold: "SELECT SUM(s.qty) FROM sale s JOIN product p ON s.pid = p.pid WHERE p.price > {k}",
        equivalent: "SELECT SUM(qty) FROM sale WHERE pid IN (SELECT pid FROM product WHERE price > {k})",
        wrong: &[
            "SELECT SUM(s.qty) FROM sale s JOIN product p ON s.pid = p.pid WHERE p.price < {k}",
            "SELECT COUNT(*) FROM sale s JOIN product p ON s.pid = p.pid WHERE p.price > {k}",
            "SELECT SUM(qty) FROM sale",
        ],
        params: [10, 15, 20, 25, 30],
        indistinguishable: false,
    },
    // Only the source table is large enough for the threshold to matter: every
    // generated table has at most mts < 9 rows, so all candidates return 0.
    Template {
        db: "shop",
        question: "Were there more than eight sales after day {k}?",
        gold: "SELECT COUNT(*) > 8 FROM sale WHERE day > {k}",
        equivalent: "SELECT COUNT(*) >= 9 FROM sale WHERE day > {k}",
        wrong: &[
            "SELECT COUNT(*) > 50 FROM sale WHERE day > {k}",
            "SELECT COUNT(*) > 100 FROM sale",
        ],
        params: [0, 1, 2, 3, 4],
        indistinguishable: true,
    },
];

fn fill(s: &str, k: i64) -> String {
    s.replace("{k}", &k.to_string())
}

fn fixture_db(name: &str) -> Fixture {
    match name {
        "music" => music(),
        "company" => company(),
        "shop" => shop(),
        other => panic!("no fixture {other}"),
    }
}

/// 50 entries. On the source database exactly one class of candidates is
/// correct: the gold query and its rewrite. Wrong candidates that happen to
/// agree with the gold result there are dropped.
pub fn corpus_specs() -> Vec<Spec> {
    let timeout = exec::DEFAULT_TIMEOUT;
    let mut out = Vec::new();
    for (t, tpl) in TEMPLATES.iter().enumerate() {
        let db = fixture_db(tpl.db).instance();
        for (j, &k) in tpl.params.iter().enumerate() {
            let gold = fill(tpl.gold, k);
            let gold_outcome = execute(&db, &gold, timeout);
            let gold_result = gold_outcome.ok().expect("gold runs").clone();
            let equivalent = fill(tpl.equivalent, k);
            assert_eq!(outcome_key(&execute(&db, &equivalent, timeout)), outcome_key(&gold_outcome), "{equivalent}");
            let mut candidates = vec![gold.clone(), equivalent];
            for w in tpl.wrong {
                let sql = fill(w, k);
                let differs = match execute(&db, &sql, timeout) {
                    ExecutionOutcome::Ok(r) => !results_equal_relaxed(&r, &gold_result),
                    _ => true,
                };
                if differs {
                    candidates.push(sql);
                }
            }
            candidates.truncate(6);
            assert!(candidates.len() >= 3, "template {t} k={k} keeps {} candidates", candidates.len());
            let index = t * 5 + j;
            candidates.shuffle(&mut ChaCha8Rng::seed_from_u64(index as u64));
            out.push(Spec {
                id: format!("e{index:02}"),
                db: tpl.db,
                question: fill(tpl.question, k),
                gold,
                candidates,
                indistinguishable: tpl.indistinguishable,
            });
        }
    }
    out
}

const PROBABILITIES: [f64; 6] = [0.35, 0.25, 0.15, 0.12, 0.08, 0.05];

pub fn candidates_json(sqls: &[String]) -> Value {
    Value::Array(
        sqls.iter()
            .enumerate()
            .map(|(i, s)| json!({"sql": s, "probability": PROBABILITIES[i], "rank": i}))
            .collect(),
    )
}

/// Writes the databases and `manifest.json` under `dir`; returns the manifest path.
pub fn write_corpus(dir: &Path, specs: &[Spec]) -> PathBuf {
    std::fs::create_dir_all(dir.join("db")).unwrap();
    for f in [music(), company(), shop()] {
        f.write(&dir.join("db").join(format!("{}.sqlite", f.name)));
    }
    let entries: Vec<Value> = specs
        .iter()
        .map(|s| {
            json!({
                "id": s.id,
                "db_id": s.db,
                "db_file": format!("db/{}.sqlite", s.db),
                "question": s.question,
                "gold_sql": s.gold,
                "candidates": candidates_json(&s.candidates),
            })
        })
        .collect();
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&json!({"entries": entries})).unwrap()).unwrap();
    path
}
