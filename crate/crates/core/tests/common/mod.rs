#![allow(dead_code)]

use std::sync::Arc;

use chrono::NaiveDate;
use clid_core::corpus::{ingest_snapshot, Block, BlockFilter, BlockKind, CorpusSnapshot};
use clid_core::detectors::{DetectorContext, DetectorParams};
use clid_core::embedding::{build_index, HashEmbedder, Retriever};
use clid_core::llm::{Llm, LlmProvider, RunLog, ScriptedProvider, TranscriptEntry};
use clid_core::oracle::OracleProvider;
use clid_core::synthetic::{build_benchmark, fixture_corpus, Benchmark, InjectOptions, TaxonomyDistribution};

pub fn date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2024, 1, 1).unwrap()
}

pub fn block(id: &str, title: &str, text: &str) -> Block {
    Block {
        block_id: id.into(),
        doc_title: title.into(),
        section_path: vec![],
        kind: BlockKind::Passage,
        text: text.into(),
        category: None,
        char_count: text.chars().count(),
    }
}

pub fn context(snapshot: CorpusSnapshot, provider: Arc<dyn LlmProvider>, params: DetectorParams) -> DetectorContext {
    let embedder = Arc::new(HashEmbedder::default());
    let index = build_index(snapshot.blocks(), embedder.as_ref()).unwrap();
    DetectorContext {
        snapshot: Arc::new(snapshot),
        retriever: Retriever::new(index, embedder),
        llm: Llm::new(provider).with_log(RunLog::new()),
        params,
    }
}

/// Template-sequenced scripted provider: `(template, responses in order)`.
pub fn scripted(entries: &[(&str, &[&str])]) -> ScriptedProvider {
    let mut all = Vec::new();
    for (template, responses) in entries {
        for r in *responses {
            all.push(TranscriptEntry { key: format!("{template}:*"), response: r.to_string() });
        }
    }
    ScriptedProvider::new(all)
}

pub fn fixture_snapshot(docs: usize, seed: u64) -> CorpusSnapshot {
    let records = fixture_corpus(docs, seed);
    let mut buf = Vec::new();
    clid_core::util::write_jsonl(&mut buf, &records).unwrap();
    ingest_snapshot(buf.as_slice(), BlockFilter::default(), date()).unwrap()
}

/// Synthetic benchmark over the fixture corpus with `n` injected and `n`
/// clean facts.
pub fn benchmark(n: usize, seed: u64) -> Benchmark {
    let snapshot = fixture_snapshot(n * 2, seed);
    let facts = clid_core::cli::sentence_facts(&snapshot);
    build_benchmark(&snapshot, &facts, &TaxonomyDistribution::default(), n, n, seed, InjectOptions::default()).unwrap()
}

pub fn oracle_context(bench: &Benchmark, params: DetectorParams) -> DetectorContext {
    let oracle = OracleProvider::new(&bench.markers());
    context(bench.snapshot.clone(), Arc::new(oracle), params)
}
