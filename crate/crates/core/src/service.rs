//! HTTP review service: analyze submitted page text in the background, queue
//! flagged facts with reports, and record reviewer verdicts.
//!
//! Items and verdicts live in an append-only JSONL log under the data
//! directory, periodically compacted into a snapshot file.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::corpus::{Block, BlockKind};
use crate::detectors::{detect_one, generate_report, DetectionResult, DetectorContext, SystemKind, TwoSidedReport};
use crate::embedding::tokenize;
use crate::evaluation::{GoldLabel, LabeledFact, Split, MAX_REVIEWED_PASSAGES};
use crate::facts::{extract_facts, AtomicFact};
use crate::synthetic::split_sentences;
use crate::util::{char_len, collapse_ws, stable_id};

pub const REVIEWER_HEADER: &str = "x-reviewer-id";
pub const DEFAULT_SCORE_FLOOR: f64 = 0.5;
const COMPACT_EVERY: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemStatus {
    Pending,
    Accepted,
    Rejected,
}

impl std::str::FromStr for ItemStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pending" => Ok(ItemStatus::Pending),
            "accepted" => Ok(ItemStatus::Accepted),
            "rejected" => Ok(ItemStatus::Rejected),
            other => Err(format!("unknown status `{other}`")),
        }
    }
}

/// Character offsets (not bytes) into the submitted page text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Highlight {
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub item_id: String,
    pub job_id: String,
    pub page_title: String,
    pub fact: AtomicFact,
    pub result: DetectionResult,
    pub report: Option<TwoSidedReport>,
    /// `None` when the source sentence could not be located in the page.
    pub highlight: Option<Highlight>,
    /// Source sentence the highlight covers.
    pub anchor_text: Option<String>,
    pub status: ItemStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Accept,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanVerdict {
    pub item_id: String,
    pub decision: Decision,
    #[serde(default)]
    pub note: Option<String>,
    pub reviewer_id: String,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum LogEvent {
    Item(Box<ReviewItem>),
    Verdict(HumanVerdict),
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct StoreSnapshot {
    items: Vec<ReviewItem>,
    verdicts: Vec<HumanVerdict>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: StatusCode,
    pub code: String,
    pub stage: String,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, stage: &str, message: impl Into<String>) -> Self {
        ApiError { status, code: code.into(), stage: stage.into(), message: message.into() }
    }

    fn bad_request(stage: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid_request", stage, message)
    }

    fn not_found(stage: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", stage, message)
    }

    fn storage(e: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "storage", "store", e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(&self)).into_response()
    }
}

/// Items and verdicts with their durable log.
#[derive(Debug, Default)]
pub struct Store {
    items: BTreeMap<String, ReviewItem>,
    verdicts: Vec<HumanVerdict>,
    dir: Option<PathBuf>,
    log: Option<File>,
    since_compaction: usize,
}

impl Store {
    pub fn in_memory() -> Self {
        Store::default()
    }

    fn log_path(dir: &Path) -> PathBuf {
        dir.join("events.jsonl")
    }

    fn snapshot_path(dir: &Path) -> PathBuf {
        dir.join("store_snapshot.json")
    }

    /// Opens (or creates) a store in `dir`, replaying snapshot then log.
    pub fn open(dir: &Path) -> std::io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        let mut store = Store::default();
        let snap = Self::snapshot_path(dir);
        if snap.exists() {
            let s: StoreSnapshot = serde_json::from_reader(BufReader::new(File::open(&snap)?))?;
            for item in s.items {
                store.apply(LogEvent::Item(Box::new(item)));
            }
            for v in s.verdicts {
                store.apply(LogEvent::Verdict(v));
            }
        }
        let log = Self::log_path(dir);
        if log.exists() {
            let events: Vec<LogEvent> = crate::util::read_jsonl_file(&log)
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()))?;
            store.since_compaction = events.len();
            for e in events {
                store.apply(e);
            }
        }
        store.log = Some(OpenOptions::new().create(true).append(true).open(&log)?);
        store.dir = Some(dir.to_path_buf());
        Ok(store)
    }

    /// Applies an event; replays are idempotent.
    fn apply(&mut self, event: LogEvent) {
        match event {
            LogEvent::Item(item) => {
                self.items.entry(item.item_id.clone()).or_insert(*item);
            }
            LogEvent::Verdict(v) => {
                if self.verdicts.iter().any(|x| x.item_id == v.item_id && x.reviewer_id == v.reviewer_id) {
                    return;
                }
                if let Some(item) = self.items.get_mut(&v.item_id) {
                    if item.status == ItemStatus::Pending {
                        item.status = match v.decision {
                            Decision::Accept => ItemStatus::Accepted,
                            Decision::Reject => ItemStatus::Rejected,
                        };
                    }
                }
                self.verdicts.push(v);
            }
        }
    }

    fn append(&mut self, event: LogEvent) -> std::io::Result<()> {
        if let Some(f) = self.log.as_mut() {
            let mut line = serde_json::to_string(&event)?;
            line.push('\n');
            f.write_all(line.as_bytes())?;
            f.flush()?;
            self.since_compaction += 1;
        }
        self.apply(event);
        if self.since_compaction >= COMPACT_EVERY {
            self.compact()?;
        }
        Ok(())
    }

    /// Folds the log into the snapshot file and truncates the log.
    pub fn compact(&mut self) -> std::io::Result<()> {
        let Some(dir) = self.dir.clone() else { return Ok(()) };
        let snap = StoreSnapshot { items: self.items.values().cloned().collect(), verdicts: self.verdicts.clone() };
        let tmp = dir.join("store_snapshot.json.tmp");
        std::fs::write(&tmp, serde_json::to_vec(&snap)?)?;
        std::fs::rename(&tmp, Self::snapshot_path(&dir))?;
        self.log = Some(File::create(Self::log_path(&dir))?);
        self.since_compaction = 0;
        Ok(())
    }

    pub fn insert_item(&mut self, item: ReviewItem) -> std::io::Result<()> {
        self.append(LogEvent::Item(Box::new(item)))
    }

    pub fn item(&self, id: &str) -> Option<&ReviewItem> {
        self.items.get(id)
    }

    pub fn statuses(&self) -> BTreeMap<String, ItemStatus> {
        self.items.iter().map(|(k, v)| (k.clone(), v.status)).collect()
    }

    /// Items at or above `min_score`, by score descending then item id.
    pub fn queue(&self, min_score: f64, status: Option<ItemStatus>) -> Vec<ReviewItem> {
        let mut out: Vec<ReviewItem> = self
            .items
            .values()
            .filter(|i| i.result.score >= min_score && status.is_none_or(|s| i.status == s))
            .cloned()
            .collect();
        out.sort_by(|a, b| b.result.score.total_cmp(&a.result.score).then_with(|| a.item_id.cmp(&b.item_id)));
        out
    }

    pub fn submit_verdict(&mut self, verdict: HumanVerdict) -> Result<ReviewItem, ApiError> {
        let item = self
            .items
            .get(&verdict.item_id)
            .ok_or_else(|| ApiError::not_found("verdict", format!("unknown item {}", verdict.item_id)))?;
        if self.verdicts.iter().any(|v| v.item_id == verdict.item_id && v.reviewer_id == verdict.reviewer_id) {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                "conflict",
                "verdict",
                format!("reviewer {} already judged item {}", verdict.reviewer_id, verdict.item_id),
            ));
        }
        if item.status != ItemStatus::Pending {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                "conflict",
                "verdict",
                format!("item {} is already {:?}", verdict.item_id, item.status).to_lowercase(),
            ));
        }
        let id = verdict.item_id.clone();
        self.append(LogEvent::Verdict(verdict)).map_err(ApiError::storage)?;
        Ok(self.items[&id].clone())
    }

    /// Judged items as dataset records: accepted as inconsistent, rejected as
    /// consistent. Ordered by item id.
    pub fn export_dataset(&self) -> Vec<LabeledFact> {
        self.items
            .values()
            .filter(|i| i.status != ItemStatus::Pending)
            .map(|i| {
                let mut ids: Vec<String> = i.result.evidence.iter().map(|e| e.block_id.clone()).collect();
                let gold =
                    if i.status == ItemStatus::Accepted { GoldLabel::Inconsistent } else { GoldLabel::Consistent };
                if gold == GoldLabel::Consistent {
                    ids.truncate(MAX_REVIEWED_PASSAGES);
                }
                LabeledFact {
                    fact: i.fact.clone(),
                    gold_label: gold,
                    evidence_block_ids: ids,
                    inconsistency_type: None,
                    split: Split::Test,
                }
            })
            .collect()
    }
}

/// Paragraphs of `text` (blank-line separated) with byte ranges.
pub fn paragraphs(text: &str) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    let mut last_end = 0;
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            if let Some(s) = start.take() {
                out.push((s, last_end));
            }
        } else {
            let lead = line.len() - line.trim_start().len();
            if start.is_none() {
                start = Some(offset + lead);
            }
            last_end = offset + line.trim_end().len();
        }
        offset += line.len();
    }
    if let Some(s) = start {
        out.push((s, last_end));
    }
    out
}

fn byte_to_char(text: &str, byte: usize) -> usize {
    text[..byte].chars().count()
}

/// Locates `needle` in `haystack` exactly, else modulo whitespace runs.
/// Returns byte offsets.
pub fn locate(haystack: &str, needle: &str) -> Option<(usize, usize)> {
    if needle.trim().is_empty() {
        return None;
    }
    if let Some(s) = haystack.find(needle) {
        return Some((s, s + needle.len()));
    }
    // Whitespace-collapsed fallback: map collapsed positions back.
    let mut collapsed = String::new();
    let mut map = Vec::new();
    let mut prev_ws = true;
    for (i, c) in haystack.char_indices() {
        if c.is_whitespace() {
            if !prev_ws {
                collapsed.push(' ');
                map.push(i);
            }
            prev_ws = true;
        } else {
            for _ in 0..c.len_utf8() {
                map.push(i);
            }
            collapsed.push(c);
            prev_ws = false;
        }
    }
    let n = collapse_ws(needle);
    let s = collapsed.find(&n)?;
    let e = s + n.len();
    let end_byte = map[e - 1];
    let end_char_len = haystack[end_byte..].chars().next().map_or(1, char::len_utf8);
    Some((map[s], end_byte + end_char_len))
}

/// Sentence of `paragraph` sharing the most tokens with `claim` (earliest on ties).
pub fn anchor_sentence(paragraph: &str, claim: &str) -> Option<String> {
    let claim_tokens: std::collections::HashSet<String> = tokenize(claim).into_iter().collect();
    let mut best: Option<(usize, String)> = None;
    for s in split_sentences(paragraph) {
        let overlap =
            tokenize(&s).into_iter().collect::<std::collections::HashSet<_>>().intersection(&claim_tokens).count();
        if best.as_ref().is_none_or(|(b, _)| overlap > *b) {
            best = Some((overlap, s));
        }
    }
    best.map(|(_, s)| s)
}

fn highlight_for(page: &str, paragraph: (usize, usize), fact: &AtomicFact) -> (Option<Highlight>, Option<String>) {
    let para_text = &page[paragraph.0..paragraph.1];
    let Some(anchor) = anchor_sentence(para_text, &fact.claim_text) else { return (None, None) };
    match locate(para_text, &anchor) {
        Some((s, e)) => {
            let (s, e) = (paragraph.0 + s, paragraph.0 + e);
            (Some(Highlight { start: byte_to_char(page, s), end: byte_to_char(page, e) }), Some(anchor))
        }
        None => (None, Some(anchor)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobFailure {
    pub stage: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobStatus {
    pub job_id: String,
    pub state: JobState,
    pub page_title: String,
    pub system: SystemKind,
    pub score_floor: f64,
    pub facts_total: usize,
    pub facts_processed: usize,
    pub item_ids: Vec<String>,
    #[serde(default)]
    pub errors: Vec<JobFailure>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct AnalyzeRequest {
    pub title: String,
    pub text: String,
    #[serde(default)]
    pub system: Option<String>,
    #[serde(default)]
    pub score_floor: Option<f64>,
}

#[derive(Debug, Default)]
struct Jobs {
    status: HashMap<String, JobStatus>,
    in_flight: HashMap<String, String>,
    counter: u64,
}

struct Inner {
    ctx: DetectorContext,
    default_system: SystemKind,
    store: Mutex<Store>,
    jobs: Mutex<Jobs>,
    workers: Arc<tokio::sync::Semaphore>,
}

/// Shared handle; cheap to clone.
#[derive(Clone)]
pub struct ReviewService {
    inner: Arc<Inner>,
}

impl ReviewService {
    pub fn new(ctx: DetectorContext, store: Store, default_system: SystemKind, workers: usize) -> Self {
        ReviewService {
            inner: Arc::new(Inner {
                ctx,
                default_system,
                store: Mutex::new(store),
                jobs: Mutex::new(Jobs::default()),
                workers: Arc::new(tokio::sync::Semaphore::new(workers.max(1))),
            }),
        }
    }

    fn store(&self) -> std::sync::MutexGuard<'_, Store> {
        self.inner.store.lock().expect("store poisoned")
    }

    fn jobs(&self) -> std::sync::MutexGuard<'_, Jobs> {
        self.inner.jobs.lock().expect("jobs poisoned")
    }

    pub fn queue(&self, min_score: f64, status: Option<ItemStatus>) -> Vec<ReviewItem> {
        self.store().queue(min_score, status)
    }

    pub fn item(&self, id: &str) -> Option<ReviewItem> {
        self.store().item(id).cloned()
    }

    pub fn job(&self, id: &str) -> Option<JobStatus> {
        self.jobs().status.get(id).cloned()
    }

    pub fn submit_verdict(&self, verdict: HumanVerdict) -> Result<ReviewItem, ApiError> {
        self.store().submit_verdict(verdict)
    }

    pub fn export_dataset(&self) -> Vec<LabeledFact> {
        self.store().export_dataset()
    }

    /// Registers a job, or returns the id of an identical one still in flight.
    /// The second value is true for a new job.
    pub fn enqueue(&self, req: &AnalyzeRequest) -> Result<(String, SystemKind, f64, bool), ApiError> {
        if req.text.trim().is_empty() {
            return Err(ApiError::bad_request("analyze", "page text is empty"));
        }
        if req.title.trim().is_empty() {
            return Err(ApiError::bad_request("analyze", "page title is empty"));
        }
        let floor = req.score_floor.unwrap_or(DEFAULT_SCORE_FLOOR);
        if !(0.0..=1.0).contains(&floor) {
            return Err(ApiError::bad_request("analyze", "score_floor must lie in [0, 1]"));
        }
        let system = match &req.system {
            Some(s) => s.parse().map_err(|e: String| ApiError::bad_request("analyze", e))?,
            None => self.inner.default_system,
        };
        let key = stable_id(&[&req.title, &req.text, &system.to_string(), &floor.to_string()]);
        let mut jobs = self.jobs();
        if let Some(id) = jobs.in_flight.get(&key) {
            return Ok((id.clone(), system, floor, false));
        }
        jobs.counter += 1;
        let job_id = stable_id(&[&key, &jobs.counter.to_string()]);
        jobs.in_flight.insert(key, job_id.clone());
        jobs.status.insert(
            job_id.clone(),
            JobStatus {
                job_id: job_id.clone(),
                state: JobState::Queued,
                page_title: req.title.clone(),
                system,
                score_floor: floor,
                facts_total: 0,
                facts_processed: 0,
                item_ids: Vec::new(),
                errors: Vec::new(),
            },
        );
        Ok((job_id, system, floor, true))
    }

    fn update_job(&self, job_id: &str, f: impl FnOnce(&mut JobStatus)) {
        if let Some(j) = self.jobs().status.get_mut(job_id) {
            f(j);
        }
    }

    /// Runs an enqueued job to completion on the calling thread.
    pub fn run_job(&self, job_id: &str, title: &str, text: &str, system: SystemKind, floor: f64) {
        self.update_job(job_id, |j| j.state = JobState::Running);
        let ctx = &self.inner.ctx;
        let paras = paragraphs(text);
        let mut errors = Vec::new();
        let mut facts: Vec<(usize, AtomicFact)> = Vec::new();
        let mut ordinals: HashMap<String, usize> = HashMap::new();
        for (pi, &(s, e)) in paras.iter().enumerate() {
            let para = &text[s..e];
            let ordinal = ordinals.entry(para.to_string()).or_default();
            let block = Block {
                block_id: stable_id(&["page", title, &pi.to_string(), &ordinal.to_string()]),
                doc_title: title.to_string(),
                section_path: Vec::new(),
                kind: BlockKind::Passage,
                text: para.to_string(),
                category: None,
                char_count: char_len(para),
            };
            *ordinal += 1;
            match extract_facts(&block, &ctx.llm) {
                Ok(fs) => facts.extend(fs.into_iter().map(|f| (pi, f))),
                Err(e) => errors.push(JobFailure { stage: "extraction".into(), message: e.to_string() }),
            }
        }
        self.update_job(job_id, |j| j.facts_total = facts.len());
        for (pi, fact) in facts {
            match detect_one(&fact, ctx, system) {
                Ok(result) if result.score >= floor => {
                    let report = if result.evidence.is_empty() {
                        None
                    } else {
                        match generate_report(&fact, &result, ctx) {
                            Ok(r) => Some(r),
                            Err(e) => {
                                errors.push(JobFailure { stage: e.stage().to_string(), message: e.to_string() });
                                None
                            }
                        }
                    };
                    let (highlight, anchor_text) = highlight_for(text, paras[pi], &fact);
                    let item = ReviewItem {
                        item_id: stable_id(&["item", job_id, &fact.fact_id]),
                        job_id: job_id.to_string(),
                        page_title: title.to_string(),
                        fact,
                        result,
                        report,
                        highlight,
                        anchor_text,
                        status: ItemStatus::Pending,
                    };
                    let id = item.item_id.clone();
                    match self.store().insert_item(item) {
                        Ok(()) => self.update_job(job_id, |j| j.item_ids.push(id)),
                        Err(e) => errors.push(JobFailure { stage: "store".into(), message: e.to_string() }),
                    }
                }
                Ok(_) => {}
                Err(e) => errors.push(JobFailure { stage: e.stage().to_string(), message: e.to_string() }),
            }
            self.update_job(job_id, |j| j.facts_processed += 1);
        }
        let mut jobs = self.jobs();
        jobs.in_flight.retain(|_, v| v != job_id);
        if let Some(j) = jobs.status.get_mut(job_id) {
            j.state = if errors.is_empty() { JobState::Completed } else { JobState::Failed };
            j.errors = errors;
        }
    }

    /// Enqueues and runs synchronously; returns the final job status.
    pub fn analyze_blocking(&self, req: &AnalyzeRequest) -> Result<JobStatus, ApiError> {
        let (job_id, system, floor, fresh) = self.enqueue(req)?;
        if fresh {
            self.run_job(&job_id, &req.title, &req.text, system, floor);
        }
        Ok(self.job(&job_id).expect("job registered"))
    }

    /// Enqueues and runs in the background worker pool.
    pub fn analyze(&self, req: AnalyzeRequest) -> Result<String, ApiError> {
        let (job_id, system, floor, fresh) = self.enqueue(&req)?;
        if fresh {
            let svc = self.clone();
            let id = job_id.clone();
            let workers = self.inner.workers.clone();
            tokio::spawn(async move {
                let Ok(_permit) = workers.acquire_owned().await else { return };
                let run = tokio::task::spawn_blocking(move || svc.run_job(&id, &req.title, &req.text, system, floor));
                if let Err(e) = run.await {
                    log::error!("analysis job panicked: {e}");
                }
            });
        }
        Ok(job_id)
    }
}

#[derive(Debug, Deserialize)]
struct QueueParams {
    min_score: Option<f64>,
    status: Option<String>,
}

#[derive(Debug, Deserialize)]
struct VerdictRequest {
    item_id: String,
    decision: Decision,
    #[serde(default)]
    note: Option<String>,
}

async fn analyze_handler(
    State(svc): State<ReviewService>,
    Json(req): Json<AnalyzeRequest>,
) -> Result<(StatusCode, Json<serde_json::Value>), ApiError> {
    let job_id = svc.analyze(req)?;
    Ok((StatusCode::ACCEPTED, Json(serde_json::json!({ "job_id": job_id }))))
}

async fn job_handler(
    State(svc): State<ReviewService>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<JobStatus>, ApiError> {
    svc.job(&id).map(Json).ok_or_else(|| ApiError::not_found("jobs", format!("unknown job {id}")))
}

async fn queue_handler(
    State(svc): State<ReviewService>,
    Query(q): Query<QueueParams>,
) -> Result<Json<Vec<ReviewItem>>, ApiError> {
    let status = q.status.map(|s| s.parse()).transpose().map_err(|e: String| ApiError::bad_request("queue", e))?;
    Ok(Json(svc.queue(q.min_score.unwrap_or(0.0), status)))
}

async fn item_handler(
    State(svc): State<ReviewService>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<ReviewItem>, ApiError> {
    svc.item(&id).map(Json).ok_or_else(|| ApiError::not_found("items", format!("unknown item {id}")))
}

async fn verdict_handler(
    State(svc): State<ReviewService>,
    headers: HeaderMap,
    Json(req): Json<VerdictRequest>,
) -> Result<Json<ReviewItem>, ApiError> {
    let reviewer = headers
        .get(REVIEWER_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .ok_or_else(|| ApiError::bad_request("verdict", format!("missing {REVIEWER_HEADER} header")))?;
    let verdict = HumanVerdict {
        item_id: req.item_id,
        decision: req.decision,
        note: req.note,
        reviewer_id: reviewer.to_string(),
        timestamp: Utc::now(),
    };
    svc.submit_verdict(verdict).map(Json)
}

async fn export_handler(State(svc): State<ReviewService>) -> Json<Vec<LabeledFact>> {
    Json(svc.export_dataset())
}

pub fn router(service: ReviewService) -> Router {
    Router::new()
        .route("/analyze", post(analyze_handler))
        .route("/jobs/:id", get(job_handler))
        .route("/queue", get(queue_handler))
        .route("/items/:id", get(item_handler))
        .route("/verdicts", post(verdict_handler))
        .route("/export/dataset", get(export_handler))
        .with_state(service)
}

/// Serves until ctrl-c.
pub async fn serve(service: ReviewService, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(service))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
