//! Frozen corpus snapshots: block records, length filtering, keyed access and
//! seeded sampling.
//!
//! A snapshot file holds one JSON block record per line. A sidecar manifest
//! (`<file>.manifest.json`) carries the snapshot date and block count.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::util::{char_len, largest_remainder, stable_id};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Passage,
    Table,
    Infobox,
}

/// One retrievable corpus unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub block_id: String,
    pub doc_title: String,
    #[serde(default)]
    pub section_path: Vec<String>,
    pub kind: BlockKind,
    pub text: String,
    #[serde(default)]
    pub category: Option<String>,
    pub char_count: usize,
}

impl Block {
    /// Title with the section path appended, `Title > Section > Subsection`.
    pub fn full_title(&self) -> String {
        full_title(&self.doc_title, &self.section_path)
    }

    /// `Title: <full title>\n<text>`, the layout used when a block is shown
    /// to a model as a document or search result.
    pub fn as_document(&self) -> String {
        format!("Title: {}\n{}", self.full_title(), self.text)
    }
}

pub fn full_title(doc_title: &str, section_path: &[String]) -> String {
    let mut out = doc_title.to_string();
    for section in section_path {
        out.push_str(" > ");
        out.push_str(section);
    }
    out
}

/// Deterministic block id from document identity and ordinal.
pub fn block_id_for(doc_title: &str, section_path: &[String], ordinal: usize) -> String {
    let sections = section_path.join("\u{1e}");
    stable_id(&[doc_title, &sections, &ordinal.to_string()])
}

/// Record as it appears in a block stream. `block_id` is optional on input and
/// always present once serialized from a snapshot.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block_id: Option<String>,
    pub doc_title: String,
    #[serde(default)]
    pub section_path: Vec<String>,
    pub kind: BlockKind,
    pub text: String,
    #[serde(default)]
    pub category: Option<String>,
}

impl From<&Block> for BlockRecord {
    fn from(b: &Block) -> Self {
        BlockRecord {
            block_id: Some(b.block_id.clone()),
            doc_title: b.doc_title.clone(),
            section_path: b.section_path.clone(),
            kind: b.kind,
            text: b.text.clone(),
            category: b.category.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockFilter {
    pub min_chars: usize,
    pub max_chars: usize,
}

impl Default for BlockFilter {
    fn default() -> Self {
        BlockFilter { min_chars: 100, max_chars: 320 }
    }
}

impl BlockFilter {
    /// Accepts every non-empty block.
    pub fn permissive() -> Self {
        BlockFilter { min_chars: 0, max_chars: usize::MAX }
    }

    pub fn accepts(&self, text: &str) -> bool {
        filter_block(text, self.min_chars, self.max_chars)
    }
}

/// True iff `min_chars <= chars(text) <= max_chars`. Empty text is always rejected.
pub fn filter_block(block_text: &str, min_chars: usize, max_chars: usize) -> bool {
    let len = char_len(block_text);
    len > 0 && min_chars <= len && len <= max_chars
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("ingest error at line {line}: {message}")]
    Ingest { line: usize, message: String },
    #[error("corrupt snapshot: duplicate block id {block_id} (line {line})")]
    DuplicateId { block_id: String, line: usize },
    #[error("invalid filter bounds: min {min} must be below max {max}")]
    InvalidFilter { min: usize, max: usize },
    #[error("sample size {requested} exceeds population {population}")]
    SampleTooLarge { requested: usize, population: usize },
    #[error("stratified sampling requires categories; missing on: {0:?}")]
    MissingCategories(Vec<String>),
    #[error("manifest mismatch: {0}")]
    Manifest(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotManifest {
    pub snapshot_date: NaiveDate,
    pub block_count: usize,
}

/// Immutable set of blocks with title index.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSnapshot {
    snapshot_date: NaiveDate,
    blocks: Vec<Block>,
    by_id: HashMap<String, usize>,
    title_index: BTreeMap<String, Vec<String>>,
}

impl CorpusSnapshot {
    /// Builds a snapshot from already-formed blocks. Fails on duplicate ids
    /// and on blank text or titles, which `load` would reject.
    pub fn from_blocks(snapshot_date: NaiveDate, blocks: Vec<Block>) -> Result<Self, CorpusError> {
        let mut by_id = HashMap::with_capacity(blocks.len());
        let mut title_index: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (i, block) in blocks.iter().enumerate() {
            if block.text.trim().is_empty() || block.doc_title.trim().is_empty() {
                let what = if block.text.trim().is_empty() { "empty text" } else { "empty doc_title" };
                return Err(CorpusError::Ingest { line: i + 1, message: what.into() });
            }
            if by_id.insert(block.block_id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateId { block_id: block.block_id.clone(), line: i + 1 });
            }
            title_index.entry(block.doc_title.clone()).or_default().push(block.block_id.clone());
        }
        Ok(CorpusSnapshot { snapshot_date, blocks, by_id, title_index })
    }

    pub fn snapshot_date(&self) -> NaiveDate {
        self.snapshot_date
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn get(&self, block_id: &str) -> Option<&Block> {
        self.by_id.get(block_id).map(|&i| &self.blocks[i])
    }

    pub fn title_index(&self) -> &BTreeMap<String, Vec<String>> {
        &self.title_index
    }

    pub fn blocks_for_title(&self, doc_title: &str) -> impl Iterator<Item = &Block> {
        self.title_index.get(doc_title).into_iter().flatten().filter_map(move |id| self.get(id))
    }

    /// New snapshot with `extra` blocks appended. Used by fault injection.
    pub fn with_blocks(&self, extra: Vec<Block>) -> Result<Self, CorpusError> {
        let mut blocks = self.blocks.clone();
        blocks.extend(extra);
        Self::from_blocks(self.snapshot_date, blocks)
    }

    /// Content hash over the serialized block records, in order.
    pub fn content_hash(&self) -> String {
        let mut buf = Vec::new();
        self.write_records(&mut buf).expect("writing to a Vec cannot fail");
        crate::util::sha256_hex(&buf)
    }

    pub fn write_records<W: Write>(&self, mut writer: W) -> Result<(), CorpusError> {
        for block in &self.blocks {
            serde_json::to_writer(&mut writer, &BlockRecord::from(block))?;
            writer.write_all(b"\n")?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn manifest(&self) -> SnapshotManifest {
        SnapshotManifest { snapshot_date: self.snapshot_date, block_count: self.blocks.len() }
    }

    /// Writes the record file and its sidecar manifest.
    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        let file = std::fs::File::create(path)?;
        self.write_records(std::io::BufWriter::new(file))?;
        let manifest = serde_json::to_string_pretty(&self.manifest())?;
        std::fs::write(manifest_path(path), manifest + "\n")?;
        Ok(())
    }

    /// Loads a snapshot written by [`CorpusSnapshot::save`] and checks it
    /// against the manifest.
    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let manifest: SnapshotManifest = serde_json::from_slice(&std::fs::read(manifest_path(path))?)?;
        let file = std::fs::File::open(path)?;
        let snapshot =
            ingest_snapshot(std::io::BufReader::new(file), BlockFilter::permissive(), manifest.snapshot_date)?;
        if snapshot.len() != manifest.block_count {
            return Err(CorpusError::Manifest(format!(
                "manifest declares {} blocks, file holds {}",
                manifest.block_count,
                snapshot.len()
            )));
        }
        Ok(snapshot)
    }
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

/// Streams block records into a snapshot, keeping those the filter accepts.
///
/// Records without an explicit `block_id` get one derived from
/// `(doc_title, section_path, ordinal)`, where the ordinal counts earlier
/// records with the same title and section path in the stream (filtered or
/// not), so ids do not shift when filter bounds change.
pub fn ingest_snapshot<R: BufRead>(
    source: R,
    filter: BlockFilter,
    snapshot_date: NaiveDate,
) -> Result<CorpusSnapshot, CorpusError> {
    if filter.min_chars >= filter.max_chars {
        return Err(CorpusError::InvalidFilter { min: filter.min_chars, max: filter.max_chars });
    }
    let mut ordinals: HashMap<(String, Vec<String>), usize> = HashMap::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut blocks = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: BlockRecord =
            serde_json::from_str(&line).map_err(|e| CorpusError::Ingest { line: line_no, message: e.to_string() })?;
        if record.text.trim().is_empty() {
            return Err(CorpusError::Ingest { line: line_no, message: "empty text".into() });
        }
        if record.doc_title.trim().is_empty() {
            return Err(CorpusError::Ingest { line: line_no, message: "empty doc_title".into() });
        }
        let key = (record.doc_title.clone(), record.section_path.clone());
        let ordinal = ordinals.entry(key).or_insert(0);
        let derived = block_id_for(&record.doc_title, &record.section_path, *ordinal);
        *ordinal += 1;
        if !filter.accepts(&record.text) {
            continue;
        }
        let block_id = record.block_id.unwrap_or(derived);
        if seen.insert(block_id.clone(), line_no).is_some() {
            return Err(CorpusError::DuplicateId { block_id, line: line_no });
        }
        blocks.push(Block {
            block_id,
            char_count: char_len(&record.text),
            doc_title: record.doc_title,
            section_path: record.section_path,
            kind: record.kind,
            text: record.text,
            category: record.category,
        });
    }
    CorpusSnapshot::from_blocks(snapshot_date, blocks)
}

/// Seeded sample of `n` blocks, returned in snapshot order.
///
/// With `stratify_by_category`, each category receives its largest-remainder
/// share of `n` (categories ordered by name), then blocks are drawn uniformly
/// without replacement inside each category.
pub fn sample_blocks(
    snapshot: &CorpusSnapshot,
    n: usize,
    seed: u64,
    stratify_by_category: bool,
) -> Result<Vec<Block>, CorpusError> {
    let population = snapshot.len();
    if n > population {
        return Err(CorpusError::SampleTooLarge { requested: n, population });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<usize> = if stratify_by_category {
        let missing: Vec<String> = snapshot
            .blocks()
            .iter()
            .filter(|b| b.category.as_deref().is_none_or(|c| c.is_empty()))
            .map(|b| b.block_id.clone())
            .collect();
        if !missing.is_empty() {
            return Err(CorpusError::MissingCategories(missing));
        }
        let mut strata: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, b) in snapshot.blocks().iter().enumerate() {
            strata.entry(b.category.as_deref().unwrap_or_default()).or_default().push(i);
        }
        let weights: Vec<f64> = strata.values().map(|v| v.len() as f64).collect();
        let shares = largest_remainder(&weights, n);
        let mut out = Vec::with_capacity(n);
        for (members, share) in strata.values().zip(shares) {
            out.extend(index::sample(&mut rng, members.len(), share).into_iter().map(|j| members[j]));
        }
        out
    } else {
        index::sample(&mut rng, population, n).into_vec()
    };
    chosen.sort_unstable();
    Ok(chosen.into_iter().map(|i| snapshot.blocks()[i].clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn date() -> NaiveDate {
        NaiveDate::from_ymd_opt(2024, 11, 1).unwrap()
    }

    fn record(title: &str, text: &str, category: Option<&str>) -> String {
        serde_json::json!({
            "doc_title": title,
            "section_path": [],
            "kind": "passage",
            "text": text,
            "category": category,
        })
        .to_string()
    }

    #[test]
    fn filter_boundaries() {
        assert!(!filter_block(&"a".repeat(99), 100, 320));
        assert!(filter_block(&"a".repeat(100), 100, 320));
        assert!(filter_block(&"a".repeat(320), 100, 320));
        assert!(!filter_block(&"a".repeat(321), 100, 320));
        assert!(!filter_block("", 0, 320));
    }

    #[test]
    fn filter_counts_characters_not_bytes() {
        let text = "é".repeat(100);
        assert_eq!(text.len(), 200);
        assert!(filter_block(&text, 100, 150));
    }

    #[test]
    fn identity_ingest() {
        let src = [
            record("A", "first passage", None),
            record("A", "second passage", None),
            record("B", "third passage", None),
        ]
        .join("\n");
        let snap = ingest_snapshot(src.as_bytes(), BlockFilter::permissive(), date()).unwrap();
        assert_eq!(snap.len(), 3);
        assert_eq!(snap.title_index()["A"].len(), 2);
        assert_eq!(snap.title_index()["B"].len(), 1);
        for ids in snap.title_index().values() {
            for id in ids {
                assert!(snap.get(id).is_some());
            }
        }
    }

    #[test]
    fn empty_text_rejected_with_line() {
        let src = [record("A", "ok", None), record("A", "   ", None)].join("\n");
        match ingest_snapshot(src.as_bytes(), BlockFilter::permissive(), date()) {
            Err(CorpusError::Ingest { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_record_names_line() {
        let src = format!("{}\n{{not json", record("A", "ok", None));
        match ingest_snapshot(src.as_bytes(), BlockFilter::permissive(), date()) {
            Err(CorpusError::Ingest { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn short_records_filtered() {
        let long = "x".repeat(150);
        let short = "y".repeat(50);
        let src = [
            record("A", &long, None),
            record("A", &short, None),
            record("B", &long, None),
            record("C", &short, None),
            record("D", &long, None),
        ]
        .join("\n");
        let snap = ingest_snapshot(src.as_bytes(), BlockFilter::default(), date()).unwrap();
        assert_eq!(snap.len(), 3);
        assert!(snap.blocks().iter().all(|b| (100..=320).contains(&b.char_count)));
    }

    #[test]
    fn duplicate_explicit_id_is_corruption() {
        let line = serde_json::json!({
            "block_id": "dup", "doc_title": "A", "kind": "passage", "text": "t"
        })
        .to_string();
        let src = format!("{line}\n{line}");
        assert!(matches!(
            ingest_snapshot(src.as_bytes(), BlockFilter::permissive(), date()),
            Err(CorpusError::DuplicateId { .. })
        ));
    }

    #[test]
    fn inverted_filter_rejected() {
        let f = BlockFilter { min_chars: 10, max_chars: 10 };
        assert!(matches!(ingest_snapshot(&b""[..], f, date()), Err(CorpusError::InvalidFilter { .. })));
    }

    #[test]
    fn ids_stable_across_reingest() {
        let src = [record("A", "one", None), record("A", "two", None)].join("\n");
        let a = ingest_snapshot(src.as_bytes(), BlockFilter::permissive(), date()).unwrap();
        let b = ingest_snapshot(src.as_bytes(), BlockFilter::permissive(), date()).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.blocks()[0].block_id, a.blocks()[1].block_id);
    }

    fn categorized(a: usize, b: usize) -> CorpusSnapshot {
        let mut lines = Vec::new();
        for i in 0..a {
            lines.push(record(&format!("A{i}"), "text", Some("A")));
        }
        for i in 0..b {
            lines.push(record(&format!("B{i}"), "text", Some("B")));
        }
        ingest_snapshot(lines.join("\n").as_bytes(), BlockFilter::permissive(), date()).unwrap()
    }

    #[test]
    fn stratified_allocation() {
        let snap = categorized(80, 20);
        let sample = sample_blocks(&snap, 10, 3, true).unwrap();
        let a = sample.iter().filter(|b| b.category.as_deref() == Some("A")).count();
        assert_eq!((a, sample.len() - a), (8, 2));
    }

    #[test]
    fn exhaustive_and_deterministic() {
        let snap = categorized(5, 5);
        assert_eq!(sample_blocks(&snap, 10, 99, false).unwrap(), snap.blocks().to_vec());
        assert_eq!(sample_blocks(&snap, 4, 1, false).unwrap(), sample_blocks(&snap, 4, 1, false).unwrap());
        assert!(matches!(sample_blocks(&snap, 11, 1, false), Err(CorpusError::SampleTooLarge { .. })));
    }

    #[test]
    fn stratified_requires_categories() {
        let src = [record("A", "x", Some("c")), record("B", "y", None)].join("\n");
        let snap = ingest_snapshot(src.as_bytes(), BlockFilter::permissive(), date()).unwrap();
        match sample_blocks(&snap, 1, 0, true) {
            Err(CorpusError::MissingCategories(ids)) => {
                assert_eq!(ids, vec![snap.blocks()[1].block_id.clone()])
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
