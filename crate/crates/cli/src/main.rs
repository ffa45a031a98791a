use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use sqlrerank_core::dbgen::{self, GenMethod};
use sqlrerank_core::eval::config::{OracleKind, RunConfig};
use sqlrerank_core::eval::corpus::{self, MANIFEST_FILE};
use sqlrerank_core::eval::{self, spider, Gate, OracleChoice};
use sqlrerank_core::par;
use sqlrerank_core::prompt::DbFormat;
use sqlrerank_core::store;
use sqlrerank_core::suite::{
    classify_candidates, generate_suite, rerank, Candidate, Comparison, RerankOutcome, TestSuite,
};

#[derive(Parser)]
#[command(name = "sqlrerank", version, about = "Re-rank text-to-SQL candidates with generated test databases")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; flags given on the command line take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 1 runs everything sequentially.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true)]
    timeout_ms: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate one test database from an existing SQLite file.
    GenDb {
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        method: Option<GenMethod>,
        #[arg(long)]
        mts: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a test suite that separates the candidates' behaviour classes.
    GenSuite {
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        candidates_file: PathBuf,
        #[arg(long, default_value = "")]
        question: String,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        mts: Option<usize>,
        #[arg(long)]
        method: Option<GenMethod>,
        #[arg(long)]
        oracle: Option<OracleKind>,
        /// Gold query for the reference and simulated oracles.
        #[arg(long)]
        gold: Option<String>,
        #[arg(long)]
        p: Option<f64>,
        #[arg(long)]
        format: Option<DbFormat>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score candidates against a stored test suite.
    Rerank {
        #[arg(long)]
        suite: PathBuf,
        #[arg(long)]
        candidates_file: PathBuf,
        #[arg(long)]
        comparison: Option<Comparison>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate re-ranking over a corpus manifest.
    Eval {
        /// Corpus directory or manifest file.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        oracle: Option<OracleKind>,
        #[arg(long)]
        p: Option<f64>,
        #[arg(long, default_value = "mixed")]
        gate: Gate,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        mts: Option<usize>,
        #[arg(long)]
        method: Option<GenMethod>,
        #[arg(long)]
        report: PathBuf,
    },
    /// Write a corpus manifest from a Spider-style split and candidate lists.
    ImportSpider {
        #[arg(long)]
        split: PathBuf,
        #[arg(long)]
        databases: PathBuf,
        #[arg(long)]
        candidates: PathBuf,
        /// Output directory; the manifest is written inside it.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        limit: Option<usize>,
    },
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    set(&mut config.seed, common.seed);
    set(&mut config.workers, common.workers);
    set(&mut config.timeout_ms, common.timeout_ms);
    if config.workers > 1 && !par::set_worker_limit(config.workers) {
        log::warn!("worker limit already set; ignoring workers = {}", config.workers);
    }
    Ok(config)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn load_db(path: &Path) -> Result<dbgen::DatabaseInstance> {
    store::load_instance(path).with_context(|| format!("loading {}", path.display()))
}

fn load_candidates(path: &Path) -> Result<Vec<Candidate>> {
    let candidates = corpus::load_candidates(path)?;
    if candidates.is_empty() {
        bail!("{}: no candidates", path.display());
    }
    Ok(candidates)
}

fn gen_db(config: RunConfig, db: &Path, out: &Path) -> Result<()> {
    let original = load_db(db)?;
    let generated = dbgen::generate(&original, &config.gen_config()?)?;
    store::write_instance(&generated, out)?;
    for t in generated.tables() {
        println!("{}\t{}", t.table_name, t.rows.len());
    }
    Ok(())
}

fn gen_suite(config: RunConfig, db: &Path, candidates_file: &Path, question: &str, gold: Option<&str>, out: &Path) -> Result<()> {
    let suite_config = config.suite_config()?;
    let original = load_db(db)?;
    let candidates = load_candidates(candidates_file)?;
    let classification = classify_candidates(&original, &candidates, suite_config.timeout(), suite_config.parallelism);
    let representatives: Vec<Candidate> = classification
        .representatives
        .iter()
        .map(|&i| candidates[i].clone())
        .collect();
    let choice = OracleChoice::from_config(&config.oracle, suite_config.gen.seed).map_err(anyhow::Error::msg)?;
    let oracle = choice
        .for_entry(gold, &candidates, suite_config.timeout())
        .map_err(|e| anyhow::anyhow!("{e}; pass --gold"))?;
    let suite = generate_suite(&original, &representatives, &candidates, question, &suite_config, oracle.as_ref())?;
    write_file(out, &to_json(&suite)?)?;
    println!(
        "classes {} | cases {} | iterations {} | duplicates {} | unavailable {} | distinguished {}",
        classification.classes.len(),
        suite.len(),
        suite.stats.iterations,
        suite.stats.dropped_duplicate,
        suite.stats.dropped_unavailable,
        suite.stats.distinguished
    );
    Ok(())
}

fn rerank_cmd(config: RunConfig, suite_file: &Path, candidates_file: &Path, out: &Path) -> Result<()> {
    let suite_config = config.suite_config()?;
    let text = std::fs::read_to_string(suite_file).with_context(|| format!("reading {}", suite_file.display()))?;
    let suite: TestSuite = serde_json::from_str(&text).with_context(|| format!("parsing {}", suite_file.display()))?;
    let candidates = load_candidates(candidates_file)?;
    let ranked = rerank(
        &candidates,
        &suite,
        suite_config.comparison,
        suite_config.policy,
        suite_config.timeout(),
        suite_config.parallelism,
    );
    let outcome = RerankOutcome {
        ranked,
        classification: None,
        skipped_all_same: suite.representatives.len() < 2,
        oracle_unavailable_count: suite.stats.dropped_unavailable,
        suite,
    };
    write_file(out, &to_json(&outcome)?)?;
    let before = &candidates[0];
    let after = &outcome.ranked[0];
    println!("before: #{} {}", before.source_rank, before.sql);
    println!(
        "after:  #{} {} (passed {}/{})",
        after.candidate.source_rank,
        after.candidate.sql,
        after.pass_count,
        outcome.suite.len()
    );
    Ok(())
}

fn eval_cmd(config: RunConfig, corpus_path: &Path, gate: Gate, report_path: &Path) -> Result<()> {
    let suite_config = config.suite_config()?;
    let overrides = config.load_type_overrides()?;
    let entries = corpus::load_corpus(corpus_path)?;
    let choice = OracleChoice::from_config(&config.oracle, suite_config.gen.seed).map_err(anyhow::Error::msg)?;
    let report = eval::evaluate(&entries, &overrides, &suite_config, &choice, gate);
    write_file(report_path, &report.to_json().map_err(anyhow::Error::msg)?)?;
    print!("{}", report.to_table());
    Ok(())
}

fn import_spider(split: &Path, databases: &Path, candidates: &Path, out: &Path, limit: Option<usize>) -> Result<()> {
    let entries = spider::import_spider(split, databases, candidates, limit)?;
    let base = std::path::absolute(out)?;
    let manifest = corpus::manifest_json(&entries, &base);
    write_file(&out.join(MANIFEST_FILE), &manifest)?;
    println!("{} entries written to {}", entries.len(), out.join(MANIFEST_FILE).display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut config = load_config(&cli.common)?;
    match cli.command {
        Command::GenDb { db, method, mts, out } => {
            set(&mut config.method, method);
            set(&mut config.mts, mts);
            gen_db(config, &db, &out)
        }
        Command::GenSuite {
            db,
            candidates_file,
            question,
            n,
            mts,
            method,
            oracle,
            gold,
            p,
            format,
            out,
        } => {
            set(&mut config.n, n);
            set(&mut config.mts, mts);
            set(&mut config.method, method);
            set(&mut config.oracle.kind, oracle);
            set(&mut config.oracle.p, p);
            set(&mut config.format, format);
            gen_suite(config, &db, &candidates_file, &question, gold.as_deref(), &out)
        }
        Command::Rerank {
            suite,
            candidates_file,
            comparison,
            out,
        } => {
            set(&mut config.comparison, comparison);
            rerank_cmd(config, &suite, &candidates_file, &out)
        }
        Command::Eval {
            corpus,
            oracle,
            p,
            gate,
            n,
            mts,
            method,
            report,
        } => {
            set(&mut config.oracle.kind, oracle);
            set(&mut config.oracle.p, p);
            set(&mut config.n, n);
            set(&mut config.mts, mts);
            set(&mut config.method, method);
            eval_cmd(config, &corpus, gate, &report)
        }
        Command::ImportSpider {
            split,
            databases,
            candidates,
            out,
            limit,
        } => import_spider(&split, &databases, &candidates, &out, limit),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
