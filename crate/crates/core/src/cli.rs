//! Command-line entry point: ingest, index, extract, detect, synth, evaluate,
//! estimate, serve.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::config::{resolve, ConfigError, RunConfig};
use crate::corpus::{ingest_snapshot, sample_blocks, BlockFilter, CorpusSnapshot};
use crate::detectors::{detect_all, DetectorContext, SystemKind};
use crate::embedding::{build_index, Retriever, VectorIndex};
use crate::estimation::{
    cochran_sample_size, extrapolate, format_estimate, per_category_rates, proportion_ci_with, Confirmation,
    IntervalMethod,
};
use crate::evaluation::{evaluate, format_table, select_threshold, DecisionRule, LabeledFact, Split};
use crate::facts::{extract_all, faithfulness_check, retain_faithful, AtomicFact};
use crate::llm::{Llm, RunLog, TranscriptEntry};
use crate::service::{ReviewService, Store};
use crate::synthetic::{build_benchmark, fixture_corpus, split_sentences, InjectOptions, TaxonomyDistribution};
use crate::util::{read_jsonl_file, write_jsonl_file};

#[derive(Debug, Parser)]
#[command(name = "clid", version, about = "Find facts contradicted elsewhere in a corpus")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
pub enum Format {
    #[default]
    Table,
    Records,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SystemArg {
    Agent,
    Rv,
    Nli,
}

impl From<SystemArg> for SystemKind {
    fn from(s: SystemArg) -> Self {
        match s {
            SystemArg::Agent => SystemKind::Agent,
            SystemArg::Rv => SystemKind::RetrieveVerify,
            SystemArg::Nli => SystemKind::NliPipeline,
        }
    }
}

/// Flags shared by every subcommand. Each maps onto a config key.
#[derive(Debug, Clone, Args, Default)]
pub struct Common {
    /// TOML config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override any config key, e.g. `--set provider.model=gpt-4o`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[arg(long, value_enum, default_value_t = Format::Table, global = true)]
    pub format: Format,
    #[arg(long, global = true)]
    pub snapshot: Option<PathBuf>,
    #[arg(long, global = true)]
    pub index: Option<PathBuf>,
    #[arg(long, global = true)]
    pub facts: Option<PathBuf>,
    /// oracle, scripted or http.
    #[arg(long, global = true)]
    pub provider: Option<String>,
    #[arg(long, global = true)]
    pub transcript: Option<PathBuf>,
    #[arg(long, global = true)]
    pub markers: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Filter block records into a snapshot.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        date: NaiveDate,
        #[arg(long, default_value_t = 100)]
        min_chars: usize,
        #[arg(long, default_value_t = 320)]
        max_chars: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Embed a snapshot into a vector index.
    Index {
        #[command(flatten)]
        common: Common,
    },
    /// Extract atomic facts from (a sample of) the snapshot.
    Extract {
        #[arg(long)]
        sample: Option<usize>,
        #[arg(long)]
        stratify: bool,
        /// Run the automated faithfulness screen and drop failing facts.
        #[arg(long)]
        faithfulness: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Run a detector over facts.
    Detect {
        #[arg(long, value_enum)]
        system: Option<SystemArg>,
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long)]
        k_search: Option<usize>,
        #[arg(long)]
        k_baseline: Option<usize>,
        #[arg(long)]
        no_rerank: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Build a synthetic benchmark with injected contradictions.
    Synth {
        #[arg(long, default_value_t = 50)]
        n: usize,
        /// Clean facts labeled consistent (defaults to n).
        #[arg(long)]
        consistent: Option<usize>,
        /// Size of the generated fixture corpus when no snapshot is given.
        #[arg(long, default_value_t = 200)]
        fixture_docs: usize,
        #[arg(long, default_value_t = 1.0)]
        overlap: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Score detection results against a labeled dataset.
    Evaluate {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        results: PathBuf,
        /// Split to report on; all records when omitted.
        #[arg(long, value_enum)]
        split: Option<SplitArg>,
        /// Decide by refute count (NLI pipeline) instead of score.
        #[arg(long)]
        count_rule: bool,
        /// Pick the score threshold maximizing F1 on the validation split.
        #[arg(long)]
        select_threshold: bool,
        #[arg(long)]
        threshold: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Prevalence estimate from confirmation counts.
    Estimate {
        /// JSONL of {fact_id, category, confirmed}.
        #[arg(long)]
        confirmations: Option<PathBuf>,
        #[arg(long, requires = "n")]
        successes: Option<u64>,
        #[arg(long)]
        n: Option<u64>,
        #[arg(long, default_value_t = 0.99)]
        confidence: f64,
        #[arg(long)]
        wilson: bool,
        #[arg(long)]
        total_facts: Option<u64>,
        /// Also report the Cochran sample size for this margin.
        #[arg(long)]
        margin: Option<f64>,
        #[arg(long, default_value_t = 0.5)]
        p: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Run the review HTTP service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: std::net::SocketAddr,
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long, value_enum)]
        system: Option<SystemArg>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Validation,
    Test,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("{stage}: {message}")]
    Runtime { stage: &'static str, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime { .. } => 1,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Provider(_) => CliError::Runtime { stage: "provider", message: e.to_string() },
            ConfigError::File { .. } => CliError::Runtime { stage: "config", message: e.to_string() },
            _ => CliError::Usage(e.to_string()),
        }
    }
}

fn rt<E: std::fmt::Display>(stage: &'static str) -> impl Fn(E) -> CliError {
    move |e| CliError::Runtime { stage, message: e.to_string() }
}

fn overrides(common: &Common, extra: Vec<(&str, String)>) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
    let pairs = [
        ("output_dir", path(&common.out)),
        ("seed", common.seed.map(|v| v.to_string())),
        ("jobs", common.jobs.map(|v| v.to_string())),
        ("snapshot", path(&common.snapshot)),
        ("index", path(&common.index)),
        ("facts", path(&common.facts)),
        ("provider.kind", common.provider.clone()),
        ("provider.transcript", path(&common.transcript)),
        ("provider.markers", path(&common.markers)),
    ];
    for (k, v) in pairs {
        if let Some(v) = v {
            out.push((k.to_string(), v));
        }
    }
    out.extend(extra.into_iter().map(|(k, v)| (k.to_string(), v)));
    for s in &common.set {
        out.push(crate::config::parse_override(s)?);
    }
    Ok(out)
}

fn load_config(common: &Common, extra: Vec<(&str, String)>) -> Result<RunConfig, CliError> {
    let ov = overrides(common, extra)?;
    Ok(resolve(common.config.as_deref(), std::env::vars(), &ov)?)
}

fn need<'a>(value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, CliError> {
    value.as_deref().ok_or_else(|| CliError::Usage(format!("`{key}` is required (flag --{key} or config)")))
}

fn load_snapshot(config: &RunConfig) -> Result<CorpusSnapshot, CliError> {
    CorpusSnapshot::load(need(&config.snapshot, "snapshot")?).map_err(rt("snapshot"))
}

fn load_retriever(config: &RunConfig, snapshot: &CorpusSnapshot) -> Result<Retriever, CliError> {
    let embedder = config.build_embedder()?;
    let index = match &config.index {
        Some(p) => VectorIndex::load(p).map_err(rt("index"))?,
        None => build_index(snapshot.blocks(), embedder.as_ref()).map_err(rt("index"))?,
    };
    Ok(Retriever::new(index, embedder))
}

fn make_llm(config: &RunConfig) -> Result<Llm, CliError> {
    let provider = config.build_provider()?;
    let mut llm = Llm::new(provider).with_score_policy(config.score_policy).with_log(RunLog::new());
    llm.decoding.max_tokens = Some(config.provider.max_tokens);
    Ok(llm)
}

fn write_records<T: Serialize>(dir: &Path, name: &str, records: &[T]) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(dir).map_err(rt("output"))?;
    let path = dir.join(name);
    write_jsonl_file(&path, records).map_err(rt("output"))?;
    Ok(path)
}

/// Logged exchanges as a replayable transcript, sorted for stable output.
fn transcript_of(llm: &Llm) -> Vec<TranscriptEntry> {
    let mut entries: Vec<TranscriptEntry> =
        llm.log().snapshot().into_iter().map(|e| TranscriptEntry { key: e.key, response: e.response_text }).collect();
    entries.sort_by(|a, b| (&a.key, &a.response).cmp(&(&b.key, &b.response)));
    entries.dedup();
    entries
}

fn print_records<T: Serialize>(records: &T) {
    println!("{}", serde_json::to_string_pretty(records).unwrap_or_default());
}

/// Facts made by sentence splitting, for corpora generated without a model.
pub fn sentence_facts(snapshot: &CorpusSnapshot) -> Vec<AtomicFact> {
    snapshot
        .blocks()
        .iter()
        .flat_map(|b| {
            split_sentences(&b.text).into_iter().enumerate().map(move |(i, s)| AtomicFact::from_block(b, i, &s))
        })
        .collect()
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Ingest { input, date, min_chars, max_chars, common } => {
            let config = load_config(&common, vec![])?;
            let file = std::fs::File::open(&input).map_err(rt("ingest"))?;
            let snapshot = ingest_snapshot(std::io::BufReader::new(file), BlockFilter { min_chars, max_chars }, date)
                .map_err(|e| match e {
                crate::corpus::CorpusError::InvalidFilter { .. } => CliError::Usage(e.to_string()),
                other => CliError::Runtime { stage: "ingest", message: other.to_string() },
            })?;
            std::fs::create_dir_all(&config.output_dir).map_err(rt("output"))?;
            let path = config.output_dir.join("snapshot.jsonl");
            snapshot.save(&path).map_err(rt("output"))?;
            config.write_resolved(&config.output_dir).map_err(rt("output"))?;
            println!("kept {} blocks -> {}", snapshot.len(), path.display());
        }
        Command::Index { common } => {
            let config = load_config(&common, vec![])?;
            let snapshot = load_snapshot(&config)?;
            let embedder = config.build_embedder()?;
            let index = build_index(snapshot.blocks(), embedder.as_ref()).map_err(rt("index"))?;
            std::fs::create_dir_all(&config.output_dir).map_err(rt("output"))?;
            let path = config.output_dir.join("index.bin");
            index.save(&path).map_err(rt("output"))?;
            config.write_resolved(&config.output_dir).map_err(rt("output"))?;
            println!("indexed {} blocks (dim {}) -> {}", index.len(), index.dim(), path.display());
        }
        Command::Extract { sample, stratify, faithfulness, common } => {
            let config = load_config(&common, vec![])?;
            config.validate_for_provider_use()?;
            let snapshot = load_snapshot(&config)?;
            let llm = make_llm(&config)?;
            let blocks = match sample {
                Some(n) => sample_blocks(&snapshot, n, config.seed, stratify).map_err(rt("sample"))?,
                None => snapshot.blocks().to_vec(),
            };
            let (mut facts, errors) = extract_all(&blocks, &llm);
            let mut failures: Vec<String> = errors.iter().map(|e| e.to_string()).collect();
            if faithfulness {
                for f in facts.iter_mut() {
                    if let Err(e) = faithfulness_check(f, &llm) {
                        failures.push(e.to_string());
                    }
                }
                facts = retain_faithful(facts);
            }
            let path = write_records(&config.output_dir, "facts.jsonl", &facts)?;
            write_records(&config.output_dir, "extraction_errors.jsonl", &failures)?;
            write_records(&config.output_dir, "transcript.jsonl", &transcript_of(&llm))?;
            config.write_resolved(&config.output_dir).map_err(rt("output"))?;
            println!("{} facts ({} errors) -> {}", facts.len(), failures.len(), path.display());
        }
        Command::Detect { system, budget, k_search, k_baseline, no_rerank, common } => {
            let mut extra = Vec::new();
            if let Some(s) = system {
                extra.push(("system", SystemKind::from(s).to_string()));
            }
            if let Some(b) = budget {
                extra.push(("budget", b.to_string()));
            }
            if let Some(k) = k_search {
                extra.push(("k_search", k.to_string()));
            }
            if let Some(k) = k_baseline {
                extra.push(("k_baseline", k.to_string()));
            }
            if no_rerank {
                extra.push(("rerank", "false".into()));
            }
            let config = load_config(&common, extra)?;
            config.validate_for_provider_use()?;
            need(&config.snapshot, "snapshot")?;
            let facts_path = need(&config.facts, "facts")?.to_path_buf();
            let snapshot = load_snapshot(&config)?;
            let retriever = load_retriever(&config, &snapshot)?;
            let facts: Vec<AtomicFact> = read_jsonl_file(&facts_path).map_err(rt("facts"))?;
            let ctx = DetectorContext {
                snapshot: Arc::new(snapshot),
                retriever,
                llm: make_llm(&config)?,
                params: config.detector_params(),
            };
            let (results, failures) = detect_all(&facts, &ctx, config.system, config.jobs);
            let failure_records: Vec<serde_json::Value> = failures
                .iter()
                .map(|f| {
                    serde_json::json!({
                        "fact_id": f.fact_id,
                        "stage": f.error.stage().to_string(),
                        "message": f.error.to_string(),
                    })
                })
                .collect();
            let dir = &config.output_dir;
            let path = write_records(dir, "results.jsonl", &results)?;
            write_records(dir, "failures.jsonl", &failure_records)?;
            write_records(dir, "transcript.jsonl", &transcript_of(&ctx.llm))?;
            config.write_resolved(dir).map_err(rt("output"))?;
            match common.format {
                Format::Records => print_records(&results),
                Format::Table => {
                    let flagged = results.iter().filter(|r| r.score > config.threshold).count();
                    let examined: usize = results.iter().map(|r| r.evidence_examined).sum();
                    println!(
                        "system {}: {} results, {} failures, {} above {} ({} passages examined) -> {}",
                        config.system,
                        results.len(),
                        failures.len(),
                        flagged,
                        config.threshold,
                        examined,
                        path.display()
                    );
                }
            }
            if !failures.is_empty() && results.is_empty() {
                return Err(CliError::Runtime { stage: "detect", message: "every fact failed".into() });
            }
        }
        Command::Synth { n, consistent, fixture_docs, overlap, common } => {
            let config = load_config(&common, vec![])?;
            let (snapshot, facts) = match &config.snapshot {
                Some(_) => {
                    let snapshot = load_snapshot(&config)?;
                    let facts = match &config.facts {
                        Some(p) => read_jsonl_file(p).map_err(rt("facts"))?,
                        None => sentence_facts(&snapshot),
                    };
                    (snapshot, facts)
                }
                None => {
                    let records = fixture_corpus(fixture_docs, config.seed);
                    let mut buf = Vec::new();
                    crate::util::write_jsonl(&mut buf, &records).map_err(rt("synth"))?;
                    let date = NaiveDate::from_ymd_opt(2024, 1, 1).expect("valid date");
                    let snapshot =
                        ingest_snapshot(buf.as_slice(), BlockFilter::default(), date).map_err(rt("synth"))?;
                    let facts = sentence_facts(&snapshot);
                    (snapshot, facts)
                }
            };
            let bench = build_benchmark(
                &snapshot,
                &facts,
                &TaxonomyDistribution::default(),
                n,
                consistent.unwrap_or(n),
                config.seed,
                InjectOptions { lexical_overlap: overlap },
            )
            .map_err(rt("synth"))?;
            let dir = &config.output_dir;
            std::fs::create_dir_all(dir).map_err(rt("output"))?;
            bench.snapshot.save(&dir.join("snapshot.jsonl")).map_err(rt("output"))?;
            let dataset_facts: Vec<AtomicFact> = bench.dataset.iter().map(|d| d.fact.clone()).collect();
            write_records(dir, "facts.jsonl", &dataset_facts)?;
            write_records(dir, "cases.jsonl", &bench.cases)?;
            write_records(dir, "dataset.jsonl", &bench.dataset)?;
            write_records(dir, "markers.jsonl", &bench.markers())?;
            config.write_resolved(dir).map_err(rt("output"))?;
            let mut by_type: BTreeMap<String, usize> = BTreeMap::new();
            for c in &bench.cases {
                *by_type.entry(c.mutation.mutation_type.to_string()).or_default() += 1;
            }
            match common.format {
                Format::Records => print_records(&by_type),
                Format::Table => {
                    println!(
                        "{} injected, {} consistent -> {}",
                        bench.cases.len(),
                        bench.dataset.len() - bench.cases.len(),
                        dir.display()
                    );
                    for (t, c) in by_type {
                        println!("  {t:<22} {c:>5}");
                    }
                }
            }
        }
        Command::Evaluate { dataset, results, split, count_rule, select_threshold: select, threshold, common } => {
            let mut extra = Vec::new();
            if let Some(t) = threshold {
                extra.push(("threshold", t.to_string()));
            }
            let config = load_config(&common, extra)?;
            let data: Vec<LabeledFact> = read_jsonl_file(&dataset).map_err(rt("dataset"))?;
            for d in &data {
                d.validate().map_err(rt("dataset"))?;
            }
            let res: Vec<crate::detectors::DetectionResult> = read_jsonl_file(&results).map_err(rt("results"))?;
            let rule = if count_rule {
                DecisionRule::RefuteCount { min_refutes: config.count_threshold }
            } else if select {
                let val: Vec<&LabeledFact> = data.iter().filter(|d| d.split == Split::Validation).collect();
                let by_id: BTreeMap<&str, f64> = res.iter().map(|r| (r.fact_id.as_str(), r.score)).collect();
                let scores: Vec<f64> =
                    val.iter().map(|d| by_id.get(d.fact.fact_id.as_str()).copied().unwrap_or(0.0)).collect();
                let golds: Vec<bool> = val.iter().map(|d| d.gold_label.is_positive()).collect();
                DecisionRule::Score { threshold: select_threshold(&scores, &golds).map_err(rt("threshold"))? }
            } else {
                DecisionRule::Score { threshold: config.threshold }
            };
            let wanted = split.map(|s| match s {
                SplitArg::Validation => Split::Validation,
                SplitArg::Test => Split::Test,
            });
            let subset: Vec<LabeledFact> = data.into_iter().filter(|d| wanted.is_none_or(|w| d.split == w)).collect();
            let ids: std::collections::HashSet<&str> = subset.iter().map(|d| d.fact.fact_id.as_str()).collect();
            let res: Vec<_> = res.into_iter().filter(|r| ids.contains(r.fact_id.as_str())).collect();
            let report = evaluate(&subset, &res, rule).map_err(rt("evaluate"))?;
            let dir = &config.output_dir;
            std::fs::create_dir_all(dir).map_err(rt("output"))?;
            std::fs::write(dir.join("metrics.json"), serde_json::to_string_pretty(&report).unwrap_or_default() + "\n")
                .map_err(rt("output"))?;
            config.write_resolved(dir).map_err(rt("output"))?;
            match common.format {
                Format::Records => print_records(&report),
                Format::Table => {
                    let name = res.first().map(|r| r.system.to_string()).unwrap_or_else(|| "system".into());
                    print!("{}", format_table(&[(name, report)]));
                }
            }
        }
        Command::Estimate { confirmations, successes, n, confidence, wilson, total_facts, margin, p, common } => {
            let config = load_config(&common, vec![])?;
            let method = if wilson { IntervalMethod::Wilson } else { IntervalMethod::Wald };
            let (succ, total, cats) = match (&confirmations, successes, n) {
                (Some(path), _, _) => {
                    let recs: Vec<Confirmation> = read_jsonl_file(path).map_err(rt("confirmations"))?;
                    let pairs: Vec<(String, bool)> = recs.iter().map(|r| (r.category.clone(), r.confirmed)).collect();
                    let cats = per_category_rates(&pairs).map_err(rt("estimate"))?;
                    (recs.iter().filter(|r| r.confirmed).count() as u64, recs.len() as u64, Some(cats))
                }
                (None, Some(s), Some(n)) => (s, n, None),
                _ => return Err(CliError::Usage("give --confirmations or both --successes and --n".into())),
            };
            let est =
                proportion_ci_with(succ, total, confidence, method).map_err(|e| CliError::Usage(e.to_string()))?;
            let counts = total_facts.map(|t| extrapolate(est.interval, t)).transpose().map_err(rt("estimate"))?;
            let sample_size = margin
                .map(|m| cochran_sample_size(est.z, p, m))
                .transpose()
                .map_err(|e| CliError::Usage(e.to_string()))?;
            let record = serde_json::json!({
                "estimate": est,
                "categories": cats,
                "extrapolated": counts,
                "cochran_sample_size": sample_size,
            });
            let dir = &config.output_dir;
            std::fs::create_dir_all(dir).map_err(rt("output"))?;
            std::fs::write(dir.join("estimate.json"), serde_json::to_string_pretty(&record).unwrap_or_default() + "\n")
                .map_err(rt("output"))?;
            match common.format {
                Format::Records => print_records(&record),
                Format::Table => {
                    print!("{}", format_estimate(&est, cats.as_ref()));
                    if let Some((lo, hi)) = counts {
                        println!("extrapolated: {lo} to {hi} facts");
                    }
                    if let Some(s) = sample_size {
                        println!("cochran sample size: {s}");
                    }
                }
            }
        }
        Command::Serve { addr, data_dir, system, common } => {
            let mut extra = Vec::new();
            if let Some(s) = system {
                extra.push(("system", SystemKind::from(s).to_string()));
            }
            let config = load_config(&common, extra)?;
            config.validate_for_provider_use()?;
            let snapshot = load_snapshot(&config)?;
            let retriever = load_retriever(&config, &snapshot)?;
            let ctx = DetectorContext {
                snapshot: Arc::new(snapshot),
                retriever,
                llm: make_llm(&config)?,
                params: config.detector_params(),
            };
            let store = Store::open(&data_dir).map_err(rt("store"))?;
            config.write_resolved(&data_dir).map_err(rt("output"))?;
            let service = ReviewService::new(ctx, store, config.system, config.jobs);
            let runtime = tokio::runtime::Runtime::new().map_err(rt("serve"))?;
            runtime.block_on(crate::service::serve(service, addr)).map_err(rt("serve"))?;
        }
    }
    Ok(())
}

/// Parses `args` and runs; usage errors exit 2, runtime errors 1.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
