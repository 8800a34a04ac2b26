//! Dense retrieval: embedders, an exact cosine index, and listwise reranking.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::{Block, CorpusSnapshot};
use crate::llm::{extract_tagged, InFlightLimit, Llm, LlmError, PromptVars};

const INDEX_MAGIC: &[u8; 8] = b"CLIDVEC1";

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error("embedder transport failure: {0}")]
    Transport(String),
    #[error("embedder returned malformed output: {0}")]
    Malformed(String),
}

#[derive(Debug, thiserror::Error)]
pub enum IndexError {
    #[error("cannot build an index over zero blocks")]
    Empty,
    #[error("dimension mismatch: expected {expected}, got {got} (block {block_id})")]
    DimensionMismatch { expected: usize, got: usize, block_id: String },
    #[error("zero-norm embedding for block {0}")]
    ZeroVector(String),
    #[error("empty query")]
    EmptyQuery,
    #[error("query embeds to the zero vector")]
    ZeroQuery,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("embedding failed for {what}: {source}")]
    Embed {
        what: String,
        #[source]
        source: EmbedError,
    },
    #[error("corrupt index file: {0}")]
    Corrupt(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f32>, EmbedError>;

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, EmbedError> {
        texts.iter().map(|t| self.embed(t)).collect()
    }
}

fn token_regex() -> &'static Regex {
    static RE: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[\p{L}\p{N}]+").unwrap())
}

/// Lowercased alphanumeric tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    token_regex().find_iter(text).map(|m| m.as_str().to_lowercase()).collect()
}

/// Deterministic, dependency-free embedder: each token and each adjacent
/// token pair is hashed (FNV-1a) into a signed bucket of a fixed-width
/// vector, which is then L2-normalized.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dim must be positive");
        HashEmbedder { dim }
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        HashEmbedder::new(256)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl Embedder for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>, EmbedError> {
        let mut v = vec![0f64; self.dim];
        let tokens = tokenize(text);
        let bigrams = tokens.windows(2).map(|w| format!("{} {}", w[0], w[1]));
        for feature in tokens.iter().cloned().chain(bigrams) {
            let h = fnv1a(feature.as_bytes());
            let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
            v[(h % self.dim as u64) as usize] += sign;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        Ok(v.into_iter().map(|x| x as f32).collect())
    }
}

/// Client for an embedding service: `POST url {"input": text}` answered by
/// `{"embedding": [..]}`.
pub struct HttpEmbedder {
    url: String,
    dim: usize,
    client: reqwest::blocking::Client,
    limit: InFlightLimit,
}

impl HttpEmbedder {
    pub fn new(url: impl Into<String>, dim: usize, max_in_flight: usize) -> Result<Self, EmbedError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_secs(60))
            .build()
            .map_err(|e| EmbedError::Transport(e.to_string()))?;
        Ok(HttpEmbedder { url: url.into(), dim, client, limit: InFlightLimit::new(max_in_flight) })
    }
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    embedding: Vec<f32>,
}

impl Embedder for HttpEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>, EmbedError> {
        let _slot = self.limit.acquire();
        let response = self
            .client
            .post(&self.url)
            .json(&serde_json::json!({ "input": text }))
            .send()
            .and_then(|r| r.error_for_status())
            .map_err(|e| EmbedError::Transport(e.to_string()))?;
        let parsed: EmbeddingResponse = response.json().map_err(|e| EmbedError::Malformed(e.to_string()))?;
        Ok(parsed.embedding)
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, EmbedError> {
        texts.par_iter().map(|t| self.embed(t)).collect()
    }
}

/// One retrieved block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceItem {
    pub block_id: String,
    pub similarity: f64,
    pub rank: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rerank_rank: Option<usize>,
}

/// Immutable exact-search index over L2-normalized vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    dim: usize,
    block_ids: Vec<String>,
    doc_titles: Vec<String>,
    vectors: Vec<f32>,
}

fn normalized(v: &[f32]) -> Option<Vec<f32>> {
    let norm = v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return None;
    }
    Some(v.iter().map(|&x| (f64::from(x) / norm) as f32).collect())
}

/// Embeds every block and builds the index.
pub fn build_index(blocks: &[Block], embedder: &dyn Embedder) -> Result<VectorIndex, IndexError> {
    if blocks.is_empty() {
        return Err(IndexError::Empty);
    }
    let texts: Vec<&str> = blocks.iter().map(|b| b.text.as_str()).collect();
    let embeddings =
        embedder.embed_batch(&texts).map_err(|source| IndexError::Embed { what: "blocks".into(), source })?;
    let dim = embeddings[0].len();
    let mut vectors = Vec::with_capacity(dim * blocks.len());
    for (block, emb) in blocks.iter().zip(&embeddings) {
        if emb.len() != dim {
            return Err(IndexError::DimensionMismatch {
                expected: dim,
                got: emb.len(),
                block_id: block.block_id.clone(),
            });
        }
        let unit = normalized(emb).ok_or_else(|| IndexError::ZeroVector(block.block_id.clone()))?;
        vectors.extend(unit);
    }
    Ok(VectorIndex {
        dim,
        block_ids: blocks.iter().map(|b| b.block_id.clone()).collect(),
        doc_titles: blocks.iter().map(|b| b.doc_title.clone()).collect(),
        vectors,
    })
}

impl VectorIndex {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.block_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.block_ids.is_empty()
    }

    pub fn block_ids(&self) -> &[String] {
        &self.block_ids
    }

    fn row(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    /// Top-`k` blocks by cosine similarity to `query`, ties broken by
    /// ascending block id. Blocks of `exclude_doc_title` are never returned.
    pub fn search(
        &self,
        embedder: &dyn Embedder,
        query: &str,
        k: usize,
        exclude_doc_title: Option<&str>,
    ) -> Result<Vec<EvidenceItem>, IndexError> {
        if query.trim().is_empty() {
            return Err(IndexError::EmptyQuery);
        }
        let q = embedder.embed(query).map_err(|source| IndexError::Embed { what: "query".into(), source })?;
        self.search_vector(&q, k, exclude_doc_title)
    }

    pub fn search_vector(
        &self,
        query: &[f32],
        k: usize,
        exclude_doc_title: Option<&str>,
    ) -> Result<Vec<EvidenceItem>, IndexError> {
        if k == 0 {
            return Err(IndexError::InvalidK);
        }
        if query.len() != self.dim {
            return Err(IndexError::DimensionMismatch {
                expected: self.dim,
                got: query.len(),
                block_id: "<query>".into(),
            });
        }
        let q = normalized(query).ok_or(IndexError::ZeroQuery)?;
        let mut scored: Vec<(f64, usize)> = (0..self.len())
            .filter(|&i| exclude_doc_title.is_none_or(|t| self.doc_titles[i] != t))
            .map(|i| {
                let dot: f64 = self.row(i).iter().zip(&q).map(|(&a, &b)| f64::from(a) * f64::from(b)).sum();
                (dot.clamp(-1.0, 1.0), i)
            })
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| self.block_ids[a.1].cmp(&self.block_ids[b.1])));
        Ok(scored
            .into_iter()
            .take(k)
            .enumerate()
            .map(|(r, (similarity, i))| EvidenceItem {
                block_id: self.block_ids[i].clone(),
                similarity,
                rank: r + 1,
                rerank_rank: None,
            })
            .collect())
    }

    /// Binary layout: magic, `dim: u32`, `count: u64`, `count * dim` f32
    /// vectors, then `count` length-prefixed (u32) block ids and doc titles.
    /// All integers little-endian.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), IndexError> {
        w.write_all(INDEX_MAGIC)?;
        w.write_u32::<LittleEndian>(self.dim as u32)?;
        w.write_u64::<LittleEndian>(self.len() as u64)?;
        for x in &self.vectors {
            w.write_f32::<LittleEndian>(*x)?;
        }
        for (id, title) in self.block_ids.iter().zip(&self.doc_titles) {
            for s in [id, title] {
                w.write_u32::<LittleEndian>(s.len() as u32)?;
                w.write_all(s.as_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, IndexError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != INDEX_MAGIC {
            return Err(IndexError::Corrupt("bad magic".into()));
        }
        let dim = r.read_u32::<LittleEndian>()? as usize;
        let count = r.read_u64::<LittleEndian>()? as usize;
        if dim == 0 {
            return Err(IndexError::Corrupt("zero dim".into()));
        }
        let mut vectors = vec![0f32; dim * count];
        r.read_f32_into::<LittleEndian>(&mut vectors)?;
        let read_str = |r: &mut R| -> Result<String, IndexError> {
            let len = r.read_u32::<LittleEndian>()? as usize;
            let mut buf = vec![0u8; len];
            r.read_exact(&mut buf)?;
            String::from_utf8(buf).map_err(|e| IndexError::Corrupt(e.to_string()))
        };
        let mut block_ids = Vec::with_capacity(count);
        let mut doc_titles = Vec::with_capacity(count);
        for _ in 0..count {
            block_ids.push(read_str(&mut r)?);
            doc_titles.push(read_str(&mut r)?);
        }
        Ok(VectorIndex { dim, block_ids, doc_titles, vectors })
    }

    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        self.write_to(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self, IndexError> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// Index bundled with the embedder that built it.
#[derive(Clone)]
pub struct Retriever {
    pub index: Arc<VectorIndex>,
    pub embedder: Arc<dyn Embedder>,
}

impl Retriever {
    pub fn new(index: VectorIndex, embedder: Arc<dyn Embedder>) -> Self {
        Retriever { index: Arc::new(index), embedder }
    }

    pub fn search(
        &self,
        query: &str,
        k: usize,
        exclude_doc_title: Option<&str>,
    ) -> Result<Vec<EvidenceItem>, IndexError> {
        self.index.search(self.embedder.as_ref(), query, k, exclude_doc_title)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankOutcome {
    pub items: Vec<EvidenceItem>,
    /// Provider output was not a permutation; `items` keep retrieval order.
    pub degraded: bool,
}

/// Parses a 1-based ranking like `[2] > [3] > [1]`; `None` unless it is a
/// permutation of `1..=n`.
pub fn parse_permutation(text: &str, n: usize) -> Option<Vec<usize>> {
    static NUM: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    let re = NUM.get_or_init(|| Regex::new(r"\d+").unwrap());
    let order: Vec<usize> = re.find_iter(text).map(|m| m.as_str().parse::<usize>().ok()).collect::<Option<_>>()?;
    if order.len() != n {
        return None;
    }
    let mut seen = vec![false; n];
    for &i in &order {
        if i == 0 || i > n || seen[i - 1] {
            return None;
        }
        seen[i - 1] = true;
    }
    Some(order.into_iter().map(|i| i - 1).collect())
}

/// Listwise rerank of `items` in a single provider call.
pub fn rerank(
    query: &str,
    items: &[EvidenceItem],
    snapshot: &CorpusSnapshot,
    llm: &Llm,
) -> Result<RerankOutcome, LlmError> {
    if items.is_empty() {
        return Ok(RerankOutcome { items: Vec::new(), degraded: false });
    }
    let passages: Vec<String> = items
        .iter()
        .map(|it| snapshot.get(&it.block_id).map(Block::as_document).unwrap_or_else(|| it.block_id.clone()))
        .collect();
    let vars = PromptVars::new().set("query", query).set("count", items.len().to_string()).list("passages", passages);
    let response = llm.ask("rerank", vars)?;
    let ranking = extract_tagged(&response, "ranking").unwrap_or(response);
    let (order, degraded) = match parse_permutation(&ranking, items.len()) {
        Some(order) => (order, false),
        None => {
            log::warn!("rerank output is not a permutation of {} items; keeping retrieval order", items.len());
            ((0..items.len()).collect(), true)
        }
    };
    let items = order
        .into_iter()
        .enumerate()
        .map(|(pos, i)| EvidenceItem { rerank_rank: Some(pos + 1), ..items[i].clone() })
        .collect();
    Ok(RerankOutcome { items, degraded })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::BlockKind;
    use crate::llm::ScriptedProvider;

    fn block(id: &str, title: &str, text: &str) -> Block {
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

    fn corpus() -> Vec<Block> {
        vec![
            block("b1", "Alpha", "The river Alpha flows north into the lake."),
            block("b2", "Beta", "Beta is a town founded in 1492 by merchants."),
            block("b3", "Gamma", "Gamma was born in 1492 and died in 1550."),
            block("b4", "Gamma", "Gamma wrote several books about rivers."),
        ]
    }

    #[test]
    fn self_retrieval_single_block() {
        let e = HashEmbedder::default();
        let blocks = vec![block("only", "T", "a lone passage of text")];
        let index = build_index(&blocks, &e).unwrap();
        assert_eq!(index.len(), 1);
        let hits = index.search(&e, "a lone passage of text", 5, None).unwrap();
        assert_eq!(hits[0].block_id, "only");
        assert_eq!(hits[0].rank, 1);
        assert!((hits[0].similarity - 1.0).abs() < 1e-6);
    }

    struct Shifting(std::sync::atomic::AtomicUsize);

    impl Embedder for Shifting {
        fn dim(&self) -> usize {
            8
        }
        fn embed(&self, _: &str) -> Result<Vec<f32>, EmbedError> {
            let n = self.0.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
            Ok(vec![1.0; if n == 0 { 8 } else { 16 }])
        }
    }

    #[test]
    fn dimension_mismatch_detected() {
        let e = Shifting(Default::default());
        assert!(matches!(build_index(&corpus(), &e), Err(IndexError::DimensionMismatch { expected: 8, got: 16, .. })));
    }

    struct Zero;

    impl Embedder for Zero {
        fn dim(&self) -> usize {
            4
        }
        fn embed(&self, _: &str) -> Result<Vec<f32>, EmbedError> {
            Ok(vec![0.0; 4])
        }
    }

    #[test]
    fn zero_vector_names_block() {
        match build_index(&corpus(), &Zero) {
            Err(IndexError::ZeroVector(id)) => assert_eq!(id, "b1"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn k_larger_than_corpus_and_exclusion() {
        let e = HashEmbedder::default();
        let index = build_index(&corpus(), &e).unwrap();
        let all = index.search(&e, "born 1492", 100, None).unwrap();
        assert_eq!(all.len(), 4);
        let excl = index.search(&e, "born 1492", 100, Some("Gamma")).unwrap();
        assert_eq!(excl.len(), 2);
        assert!(excl.iter().all(|h| h.block_id != "b3" && h.block_id != "b4"));
        assert!(all.windows(2).all(|w| w[0].similarity >= w[1].similarity && w[0].rank < w[1].rank));
    }

    #[test]
    fn full_exclusion_is_empty_not_error() {
        let e = HashEmbedder::default();
        let blocks = vec![block("x", "Only", "some text here")];
        let index = build_index(&blocks, &e).unwrap();
        assert!(index.search(&e, "text", 3, Some("Only")).unwrap().is_empty());
        assert!(matches!(index.search(&e, "  ", 3, None), Err(IndexError::EmptyQuery)));
    }

    #[test]
    fn ties_break_by_block_id() {
        let e = HashEmbedder::default();
        let blocks = vec![block("z", "A", "same words"), block("a", "B", "same words"), block("m", "C", "same words")];
        let index = build_index(&blocks, &e).unwrap();
        let ids: Vec<_> = index.search(&e, "same words", 3, None).unwrap().into_iter().map(|h| h.block_id).collect();
        assert_eq!(ids, vec!["a", "m", "z"]);
    }

    #[test]
    fn persistence_round_trip() {
        let e = HashEmbedder::new(32);
        let index = build_index(&corpus(), &e).unwrap();
        let mut buf = Vec::new();
        index.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..8], INDEX_MAGIC);
        let back = VectorIndex::read_from(&buf[..]).unwrap();
        assert_eq!(back, index);
        assert!(VectorIndex::read_from(&b"NOTMAGIC"[..]).is_err());
    }

    fn evidence(n: usize) -> Vec<EvidenceItem> {
        (0..n)
            .map(|i| EvidenceItem {
                block_id: format!("b{}", i + 1),
                similarity: 1.0 - i as f64 * 0.1,
                rank: i + 1,
                rerank_rank: None,
            })
            .collect()
    }

    fn snapshot() -> CorpusSnapshot {
        CorpusSnapshot::from_blocks(chrono::NaiveDate::from_ymd_opt(2024, 11, 1).unwrap(), corpus()).unwrap()
    }

    fn rerank_with(response: &str, n: usize) -> RerankOutcome {
        let llm = Llm::new(Arc::new(ScriptedProvider::sequence("rerank", &[response])));
        rerank("query", &evidence(n), &snapshot(), &llm).unwrap()
    }

    #[test]
    fn rerank_identity() {
        let out = rerank_with("<ranking>[1] > [2] > [3]</ranking>", 3);
        assert!(!out.degraded);
        assert!(out.items.iter().all(|it| it.rerank_rank == Some(it.rank)));
    }

    #[test]
    fn rerank_reversed() {
        let out = rerank_with("<ranking>[3] > [2] > [1]</ranking>", 3);
        let ids: Vec<_> = out.items.iter().map(|i| i.block_id.as_str()).collect();
        assert_eq!(ids, vec!["b3", "b2", "b1"]);
        let rr: Vec<_> = out.items.iter().map(|i| i.rerank_rank.unwrap()).collect();
        assert_eq!(rr, vec![1, 2, 3]);
        assert_eq!(out.items[0].similarity, evidence(3)[2].similarity);
    }

    #[test]
    fn rerank_invalid_permutation_degrades() {
        let out = rerank_with("<ranking>[1] > [1] > [2]</ranking>", 3);
        assert!(out.degraded);
        let ids: Vec<_> = out.items.iter().map(|i| i.block_id.as_str()).collect();
        assert_eq!(ids, vec!["b1", "b2", "b3"]);
    }

    #[test]
    fn permutation_parser() {
        assert_eq!(parse_permutation("[2] > [1]", 2), Some(vec![1, 0]));
        assert_eq!(parse_permutation("[2] > [0]", 2), None);
        assert_eq!(parse_permutation("[1]", 2), None);
        assert_eq!(parse_permutation("", 0), Some(vec![]));
    }
}
