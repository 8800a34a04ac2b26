//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any fails.

mod common;

use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use clid_core::config::resolve;
use clid_core::corpus::{filter_block, ingest_snapshot, BlockFilter, CorpusSnapshot};
use clid_core::detectors::{detect_all, run_agent, ActionKind, DetectorParams, SystemKind};
use clid_core::estimation::{cochran_sample_size, proportion_ci};
use clid_core::evaluation::{
    compute_auroc, evaluate, f1_at, roc_curve, select_threshold, threshold_grid, trapezoid_auc, DecisionRule,
    GoldLabel, RocMode,
};
use clid_core::facts::AtomicFact;
use clid_core::synthetic::{sample_mutation_type, MutationType, TaxonomyDistribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, limit: Duration, outcome: Outcome) -> Outcome {
    let outcome = outcome?;
    check(elapsed <= limit, format!("{outcome}; {elapsed:.2?} (limit {limit:?})"))
}

fn c1_cochran() -> Outcome {
    let t = Instant::now();
    let n = cochran_sample_size(2.576, 0.5, 0.05).map_err(|e| e.to_string())?;
    within(t.elapsed(), Duration::from_millis(1), check(n == 664, format!("n = {n}, expected 664")))
}

fn c2_prevalence_ci() -> Outcome {
    let t = Instant::now();
    let e = proportion_ci(23, 700, 0.99).map_err(|e| e.to_string())?;
    let elapsed = t.elapsed();
    let p = (e.p_hat * 10_000.0).round() / 100.0;
    let margin_pp = e.margin * 100.0;
    let lo = (e.interval.0 * 1000.0).round() / 10.0;
    let hi = (e.interval.1 * 1000.0).round() / 10.0;
    let ok = p == 3.29 && (margin_pp - 1.74).abs() <= 0.05 && lo == 1.6 && hi == 5.0;
    within(
        elapsed,
        Duration::from_millis(1),
        check(ok, format!("p_hat {p:.2}%, margin {margin_pp:.3} pp, [{lo:.1}%, {hi:.1}%]")),
    )
}

/// P(positive outranks negative) with ties counted as one half.
fn concordance(scores: &[f64], golds: &[bool]) -> f64 {
    let pos: Vec<f64> = scores.iter().zip(golds).filter(|(_, &g)| g).map(|(&s, _)| s).collect();
    let neg: Vec<f64> = scores.iter().zip(golds).filter(|(_, &g)| !g).map(|(&s, _)| s).collect();
    let mut wins = 0.0;
    for p in &pos {
        for n in &neg {
            wins += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<bool>) {
    let n = rng.gen_range(2..=50);
    let levels = rng.gen_range(2..=12);
    let mut golds: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
    golds[0] = true;
    golds[1] = false;
    let scores = (0..n).map(|_| rng.gen_range(0..levels) as f64 / (levels - 1) as f64).collect();
    (scores, golds)
}

fn c3_auroc() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let (scores, golds) = random_instance(&mut rng);
        let a = compute_auroc(&scores, &golds).map_err(|e| e.to_string())?;
        let roc = roc_curve(&scores, &golds, RocMode::ScoreThreshold).map_err(|e| e.to_string())?;
        worst = worst.max((a - concordance(&scores, &golds)).abs()).max((a - trapezoid_auc(&roc)).abs());
    }
    within(
        t.elapsed(),
        Duration::from_secs(5),
        check(worst <= 1e-9, format!("200 instances, max deviation {worst:.1e}")),
    )
}

fn c4_threshold() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut violations = 0;
    for _ in 0..100 {
        let (scores, golds) = random_instance(&mut rng);
        let chosen = select_threshold(&scores, &golds).map_err(|e| e.to_string())?;
        let best = f1_at(&scores, &golds, chosen);
        violations += threshold_grid(&scores).iter().filter(|&&c| f1_at(&scores, &golds, c) > best).count();
    }
    within(
        t.elapsed(),
        Duration::from_secs(5),
        check(violations == 0, format!("100 sets, {violations} better candidates")),
    )
}

fn c5_synthetic_soundness() -> Outcome {
    let t = Instant::now();
    let bench = common::benchmark(100, 5);
    let facts: Vec<AtomicFact> = bench.dataset.iter().map(|d| d.fact.clone()).collect();
    let ctx = common::oracle_context(&bench, DetectorParams::default());
    let (results, failures) = detect_all(&facts, &ctx, SystemKind::NliPipeline, 4);
    if !failures.is_empty() {
        return Err(format!("{} facts failed", failures.len()));
    }
    let report =
        evaluate(&bench.dataset, &results, DecisionRule::RefuteCount { min_refutes: 1 }).map_err(|e| e.to_string())?;
    let injected: HashSet<&str> = bench.cases.iter().map(|c| c.original.fact_id.as_str()).collect();
    let flagged = |id: &str| results.iter().find(|r| r.fact_id == id).and_then(|r| r.refute_count).unwrap_or(0) >= 1;
    let caught = injected.iter().filter(|id| flagged(id)).count();
    let clean: Vec<&str> = bench
        .dataset
        .iter()
        .filter(|d| d.gold_label == GoldLabel::Consistent)
        .map(|d| d.fact.fact_id.as_str())
        .collect();
    let false_alarms = clean.iter().filter(|id| flagged(id)).count();
    let recall = caught as f64 / injected.len() as f64;
    let fpr = false_alarms as f64 / clean.len() as f64;
    let ok = bench.dataset.len() == 200 && recall == 1.0 && fpr == 0.0 && report.accuracy == 1.0;
    within(
        t.elapsed(),
        Duration::from_secs(30),
        check(ok, format!("{} facts, recall {recall}, fpr {fpr}, accuracy {}", bench.dataset.len(), report.accuracy)),
    )
}

fn c6_taxonomy() -> Outcome {
    let t = Instant::now();
    let expected = [
        (MutationType::NumericalOffByOne, 0.230),
        (MutationType::NumericalClear, 0.317),
        (MutationType::LogicalDirect, 0.148),
        (MutationType::LogicalIndirect, 0.027),
        (MutationType::Definition, 0.106),
        (MutationType::Temporal, 0.079),
        (MutationType::NamedEntity, 0.060),
        (MutationType::Categorical, 0.021),
        (MutationType::Spatial, 0.012),
    ];
    let dist = TaxonomyDistribution::default();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut counts: BTreeMap<MutationType, usize> = BTreeMap::new();
    let draws = 100_000;
    for _ in 0..draws {
        *counts.entry(sample_mutation_type(&dist, &mut rng).map_err(|e| e.to_string())?).or_default() += 1;
    }
    let worst = expected
        .iter()
        .map(|(ty, p)| (counts.get(ty).copied().unwrap_or(0) as f64 / draws as f64 - p).abs())
        .fold(0.0, f64::max);
    let numerical =
        (counts[&MutationType::NumericalOffByOne] + counts[&MutationType::NumericalClear]) as f64 / draws as f64;
    within(
        t.elapsed(),
        Duration::from_secs(5),
        check(worst <= 0.01, format!("max deviation {worst:.4}, numerical share {:.3}", numerical)),
    )
}

fn controller_stream(rng: &mut ChaCha8Rng, claim: &str, titles: &[String]) -> Vec<String> {
    let len = rng.gen_range(1..=25);
    (0..len)
        .map(|_| {
            let title = &titles[rng.gen_range(0..titles.len())];
            match rng.gen_range(0..8) {
                0 | 1 => format!("search_wikipedia_outside_claim_article({claim})"),
                2 => format!("Thought: look elsewhere\nsearch_wikipedia_outside_claim_article({title})"),
                3 => format!("explain({title})"),
                4 => format!("clarify_entity({title})"),
                5 => "report_inconsistency(found it)".to_string(),
                6 => "I am not sure what to do next.".to_string(),
                _ => "search_wikipedia_outside_claim_article()".to_string(),
            }
        })
        .collect()
}

fn c7_agent_contract() -> Outcome {
    let t = Instant::now();
    let snapshot = common::fixture_snapshot(20, 7);
    let titles: Vec<String> = snapshot.title_index().keys().cloned().collect();
    let source = snapshot.blocks()[0].clone();
    let claim = clid_core::synthetic::split_sentences(&source.text)[0].clone();
    let fact = AtomicFact::from_block(&source, 0, &claim);
    let search_claim = format!("search_wikipedia_outside_claim_article({claim})");
    let mut suites: Vec<Vec<String>> = vec![
        vec![search_claim.clone(); 30],
        vec!["report_inconsistency(now)".into()],
        vec!["garbage".into(), "more garbage".into()],
        vec!["garbage".into(), search_claim.clone(), "report_inconsistency(done)".into()],
        vec!["explain(a)".into(); 12],
        Vec::new(),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    suites.extend((0..60).map(|_| controller_stream(&mut rng, &claim, &titles)));

    let (mut scored, mut errored, mut violations) = (0, 0, Vec::new());
    let filler = |s: &'static str| vec![s; 30];
    for (i, stream) in suites.iter().enumerate() {
        let stream: Vec<&str> = stream.iter().map(String::as_str).collect();
        let explain = filler("Background text.");
        let clarify = filler("Entity notes.");
        let verify = filler("<inconsistency_score>0.4</inconsistency_score>");
        let rerank = filler("<ranking>[1]</ranking>");
        let provider = common::scripted(&[
            ("controller", &stream),
            ("explain", &explain),
            ("clarify", &clarify),
            ("verifier", &verify),
            ("rerank", &rerank),
        ]);
        let ctx = common::context(
            snapshot.clone(),
            Arc::new(provider),
            DetectorParams { rerank: false, ..Default::default() },
        );
        match run_agent(&fact, &ctx, 10, 15) {
            Ok(r) => {
                scored += 1;
                let trace = r.trace.as_ref().ok_or("missing trace")?;
                if trace.steps.len() > 10 {
                    violations.push(format!("stream {i}: {} steps", trace.steps.len()));
                }
                for step in trace.steps.iter().filter(|s| s.action.kind == ActionKind::Search) {
                    for id in &step.block_ids {
                        if snapshot.get(id).map(|b| b.doc_title.as_str()) == Some(source.doc_title.as_str()) {
                            violations.push(format!("stream {i}: source block {id} in search"));
                        }
                    }
                }
                if !(0.0..=1.0).contains(&r.score) || (r.evidence.is_empty() != r.no_evidence) {
                    violations.push(format!("stream {i}: score {} no_evidence {}", r.score, r.no_evidence));
                }
            }
            Err(e) => {
                errored += 1;
                let _stage = e.stage();
            }
        }
    }
    let detail = format!(
        "{} streams: {scored} scored, {errored} stage-labeled errors, {} violations",
        suites.len(),
        violations.len()
    );
    within(t.elapsed(), Duration::from_secs(10), check(violations.is_empty(), detail))
}

fn clid(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out =
        Command::new(env!("CARGO_BIN_EXE_clid")).args(args).current_dir(dir).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("clid {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)))
    }
}

fn c8_determinism() -> Outcome {
    let t = Instant::now();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    clid(dir, &["synth", "--n", "15", "--seed", "8", "--out", "syn"])?;
    let base = ["--snapshot", "syn/snapshot.jsonl", "--facts", "syn/facts.jsonl"];
    let mut compared = 0;
    for system in ["agent", "rv", "nli"] {
        let rec = format!("{system}-rec");
        clid(
            dir,
            &[
                &[
                    "detect",
                    "--system",
                    system,
                    "--out",
                    &rec,
                    "--provider",
                    "oracle",
                    "--markers",
                    "syn/markers.jsonl",
                ][..],
                &base,
            ]
            .concat(),
        )?;
        let transcript = format!("{rec}/transcript.jsonl");
        let mut outputs = Vec::new();
        for (run, jobs) in [("a", "1"), ("b", "3")] {
            let out = format!("{system}-{run}");
            let args = [
                "detect",
                "--system",
                system,
                "--out",
                &out,
                "--provider",
                "scripted",
                "--transcript",
                &transcript,
                "--jobs",
                jobs,
            ];
            clid(dir, &[&args[..], &base].concat())?;
            outputs.push(std::fs::read(dir.join(&out).join("results.jsonl")).map_err(|e| e.to_string())?);
        }
        if outputs[0] != outputs[1] || outputs[0].is_empty() {
            return Err(format!("{system}: result files differ"));
        }
        compared += 1;
    }

    let records = clid_core::synthetic::fixture_corpus(30, 8);
    let mut raw = Vec::new();
    clid_core::util::write_jsonl(&mut raw, &records).map_err(|e| e.to_string())?;
    let snap = ingest_snapshot(raw.as_slice(), BlockFilter::default(), common::date()).map_err(|e| e.to_string())?;
    let path = dir.join("round.jsonl");
    snap.save(&path).map_err(|e| e.to_string())?;
    let back = CorpusSnapshot::load(&path).map_err(|e| e.to_string())?;
    let lossless = back.blocks() == snap.blocks() && back.content_hash() == snap.content_hash();
    within(
        t.elapsed(),
        Duration::from_secs(30),
        check(
            lossless,
            format!("{compared} systems byte-identical; snapshot of {} blocks round-trips: {lossless}", snap.len()),
        ),
    )
}

fn c9_filter() -> Outcome {
    let t = Instant::now();
    let f = BlockFilter::default();
    let kept: Vec<bool> =
        [99, 100, 320, 321].iter().map(|&n| filter_block(&"a".repeat(n), f.min_chars, f.max_chars)).collect();
    let multibyte = filter_block(&"é".repeat(100), f.min_chars, f.max_chars);
    let ok = kept == [false, true, true, false] && multibyte && (f.min_chars, f.max_chars) == (100, 320);
    within(t.elapsed(), Duration::from_millis(1), check(ok, format!("99/100/320/321 kept = {kept:?}")))
}

fn c10_defaults() -> Outcome {
    let c = resolve(None, Vec::<(String, String)>::new(), &[]).map_err(|e| e.to_string())?;
    let golden = include_str!("golden/default_config.toml");
    let settings = (c.budget, c.k_search, c.k_baseline, c.rerank, c.threshold);
    let ok = settings == (10, 15, 20, true, 0.5) && c.to_toml() == golden && c.system == SystemKind::Agent;
    check(
        ok,
        format!(
            "budget {} k_search {} k_baseline {} rerank {} threshold {}",
            settings.0, settings.1, settings.2, settings.3, settings.4
        ),
    )
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("cochran sample size", c1_cochran),
        ("prevalence interval", c2_prevalence_ci),
        ("auroc oracle equivalence", c3_auroc),
        ("threshold selection optimality", c4_threshold),
        ("synthetic detection soundness", c5_synthetic_soundness),
        ("taxonomy distribution fidelity", c6_taxonomy),
        ("agent contract suite", c7_agent_contract),
        ("determinism", c8_determinism),
        ("block filter boundaries", c9_filter),
        ("defaults parity", c10_defaults),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        match f() {
            Ok(detail) => println!("criterion {:>2} PASS {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
