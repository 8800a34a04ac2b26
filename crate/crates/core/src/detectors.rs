//! The three detection systems (tool-using agent, retrieve-and-verify, NLI
//! pipeline), the agent's tools, the verifier, the weak filter and two-sided
//! reports.

use std::collections::HashSet;
use std::sync::Arc;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::{Block, CorpusSnapshot};
use crate::embedding::{rerank, EvidenceItem, IndexError, Retriever};
use crate::facts::AtomicFact;
use crate::llm::{extract_tagged, Llm, LlmError, PromptVars, ScorePolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum NliLabel {
    Supports,
    Refutes,
    NotEnoughInfo,
}

impl NliLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            NliLabel::Supports => "SUPPORTS",
            NliLabel::Refutes => "REFUTES",
            NliLabel::NotEnoughInfo => "NOT_ENOUGH_INFO",
        }
    }

    pub fn parse(text: &str) -> Option<Self> {
        let norm: String =
            text.trim().chars().map(|c| if c == ' ' || c == '-' { '_' } else { c.to_ascii_uppercase() }).collect();
        match norm.trim_matches(|c: char| !c.is_ascii_alphabetic() && c != '_') {
            "SUPPORTS" | "SUPPORT" | "ENTAILMENT" => Some(NliLabel::Supports),
            "REFUTES" | "REFUTE" | "CONTRADICTION" => Some(NliLabel::Refutes),
            "NOT_ENOUGH_INFO" | "NEI" | "NEUTRAL" => Some(NliLabel::NotEnoughInfo),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    Agent,
    RetrieveVerify,
    NliPipeline,
}

impl std::str::FromStr for SystemKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "agent" => Ok(SystemKind::Agent),
            "rv" | "retrieve_verify" => Ok(SystemKind::RetrieveVerify),
            "nli" | "nli_pipeline" => Ok(SystemKind::NliPipeline),
            other => Err(format!("unknown system `{other}` (expected agent, rv or nli)")),
        }
    }
}

impl std::fmt::Display for SystemKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SystemKind::Agent => "agent",
            SystemKind::RetrieveVerify => "retrieve_verify",
            SystemKind::NliPipeline => "nli_pipeline",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Explain,
    ClarifyEntity,
    Search,
    ReportInconsistency,
}

impl ActionKind {
    /// Name used in the controller prompt.
    pub fn prompt_name(self) -> &'static str {
        match self {
            ActionKind::Explain => "explain",
            ActionKind::ClarifyEntity => "clarify_entity",
            ActionKind::Search => "search_wikipedia_outside_claim_article",
            ActionKind::ReportInconsistency => "report_inconsistency",
        }
    }

    fn from_prompt_name(name: &str) -> Option<Self> {
        [ActionKind::Explain, ActionKind::ClarifyEntity, ActionKind::Search, ActionKind::ReportInconsistency]
            .into_iter()
            .find(|k| k.prompt_name() == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentAction {
    pub kind: ActionKind,
    pub argument: String,
}

impl std::fmt::Display for AgentAction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}({})", self.kind.prompt_name(), self.argument)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentStep {
    pub thought: String,
    pub action: AgentAction,
    pub observation: String,
    /// Blocks shown in the observation (search actions only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub block_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTrace {
    pub steps: Vec<AgentStep>,
    pub budget: usize,
    /// The loop ended on a report action rather than budget exhaustion.
    pub reported: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub fact_id: String,
    pub system: SystemKind,
    pub score: f64,
    pub evidence: Vec<EvidenceItem>,
    #[serde(default)]
    pub clarifications: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<AgentTrace>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refute_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nli_labels: Option<Vec<Option<NliLabel>>>,
    /// Nothing was retrieved, so the score is 0 by definition.
    #[serde(default)]
    pub no_evidence: bool,
    #[serde(default)]
    pub rerank_degraded: bool,
    /// Passages retrieved over the whole run, duplicates included.
    #[serde(default)]
    pub evidence_examined: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl DetectionResult {
    pub fn new(fact_id: &str, system: SystemKind, score: f64) -> Self {
        DetectionResult {
            fact_id: fact_id.to_string(),
            system,
            score,
            evidence: Vec::new(),
            clarifications: Vec::new(),
            trace: None,
            refute_count: None,
            nli_labels: None,
            no_evidence: false,
            rerank_degraded: false,
            evidence_examined: 0,
            warnings: Vec::new(),
        }
    }

    pub fn with_refute_count(mut self, count: Option<usize>) -> Self {
        self.refute_count = count;
        self
    }
}

/// Pipeline stage an error came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Retrieval,
    Rerank,
    Verification,
    Classification,
    Controller,
    Tool,
    Report,
    Filter,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = serde_json::to_value(self).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
        f.write_str(&s)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DetectError {
    #[error("{stage}: {message}")]
    Precondition { stage: Stage, message: String },
    #[error("{stage}: {source}")]
    Llm {
        stage: Stage,
        #[source]
        source: LlmError,
    },
    #[error("{stage}: {source}")]
    Index {
        stage: Stage,
        #[source]
        source: IndexError,
    },
    #[error("{stage}: {message}")]
    Parse { stage: Stage, message: String },
}

impl DetectError {
    pub fn stage(&self) -> Stage {
        match self {
            DetectError::Precondition { stage, .. }
            | DetectError::Llm { stage, .. }
            | DetectError::Index { stage, .. }
            | DetectError::Parse { stage, .. } => *stage,
        }
    }

    fn pre(stage: Stage, message: impl Into<String>) -> Self {
        DetectError::Precondition { stage, message: message.into() }
    }
}

fn llm_err(stage: Stage) -> impl Fn(LlmError) -> DetectError {
    move |source| DetectError::Llm { stage, source }
}

fn index_err(stage: Stage) -> impl Fn(IndexError) -> DetectError {
    move |source| DetectError::Index { stage, source }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorParams {
    pub budget: usize,
    pub k_search: usize,
    pub k_baseline: usize,
    pub k_clarify: usize,
    pub rerank: bool,
    pub count_threshold: usize,
}

impl Default for DetectorParams {
    fn default() -> Self {
        DetectorParams { budget: 10, k_search: 15, k_baseline: 20, k_clarify: 10, rerank: true, count_threshold: 1 }
    }
}

/// Read-only state shared by every detection call.
#[derive(Clone)]
pub struct DetectorContext {
    pub snapshot: Arc<CorpusSnapshot>,
    pub retriever: Retriever,
    pub llm: Llm,
    pub params: DetectorParams,
}

impl DetectorContext {
    fn block(&self, block_id: &str) -> Result<&Block, DetectError> {
        self.snapshot
            .get(block_id)
            .ok_or_else(|| DetectError::pre(Stage::Retrieval, format!("block {block_id} is not in the snapshot")))
    }

    fn documents(&self, evidence: &[EvidenceItem]) -> Result<Vec<String>, DetectError> {
        evidence.iter().map(|e| self.block(&e.block_id).map(Block::as_document)).collect()
    }

    fn retrieve(&self, query: &str, k: usize, exclude: Option<&str>) -> Result<Vec<EvidenceItem>, DetectError> {
        self.retriever.search(query, k, exclude).map_err(index_err(Stage::Retrieval))
    }

    fn maybe_rerank(&self, query: &str, items: Vec<EvidenceItem>) -> Result<(Vec<EvidenceItem>, bool), DetectError> {
        if !self.params.rerank || items.len() < 2 {
            return Ok((items, false));
        }
        let out = rerank(query, &items, &self.snapshot, &self.llm).map_err(llm_err(Stage::Rerank))?;
        Ok((out.items, out.degraded))
    }
}

fn fact_vars(fact: &AtomicFact) -> PromptVars {
    PromptVars::new()
        .set("claim_text", fact.claim_text.clone())
        .set("context_title", fact.context_title.clone())
        .set("context_text", fact.context_text.clone())
}

/// Parses a verifier score under `policy`; lenient mode clamps and warns.
pub fn parse_score(response: &str, policy: ScorePolicy) -> Result<(f64, Option<String>), DetectError> {
    let raw = extract_tagged(response, "inconsistency_score").map_err(llm_err(Stage::Verification))?;
    let parsed: Option<f64> = raw.parse().ok().filter(|v: &f64| !v.is_nan());
    match (parsed, policy) {
        (Some(v), _) if (0.0..=1.0).contains(&v) => Ok((v, None)),
        (Some(v), ScorePolicy::Lenient) => {
            Ok((v.clamp(0.0, 1.0), Some(format!("verifier score {v} clamped to [0, 1]"))))
        }
        (None, ScorePolicy::Lenient) => Ok((0.0, Some(format!("verifier score {raw:?} not numeric; using 0")))),
        (_, ScorePolicy::Strict) => Err(DetectError::Parse {
            stage: Stage::Verification,
            message: format!("score {raw:?} is not a number in [0, 1]"),
        }),
    }
}

/// Score in [0, 1] for `fact` given `evidence` (in rank order) and
/// `clarifications`.
pub fn verify(
    fact: &AtomicFact,
    evidence: &[EvidenceItem],
    clarifications: &[String],
    ctx: &DetectorContext,
) -> Result<(f64, Option<String>), DetectError> {
    if evidence.is_empty() {
        return Err(DetectError::pre(Stage::Verification, "no evidence to verify against"));
    }
    if fact.context_text.trim().is_empty() {
        return Err(DetectError::pre(Stage::Verification, format!("fact {} has no context", fact.fact_id)));
    }
    let vars =
        fact_vars(fact).list("clarifications", clarifications.to_vec()).list("documents", ctx.documents(evidence)?);
    let response = ctx.llm.ask("verifier", vars).map_err(llm_err(Stage::Verification))?;
    parse_score(&response, ctx.llm.score_policy)
}

fn no_evidence(fact: &AtomicFact, system: SystemKind) -> DetectionResult {
    let mut r = DetectionResult::new(&fact.fact_id, system, 0.0);
    r.no_evidence = true;
    r
}

pub fn run_retrieve_and_verify(
    fact: &AtomicFact,
    ctx: &DetectorContext,
    k: usize,
    use_rerank: bool,
) -> Result<DetectionResult, DetectError> {
    let items = ctx.retrieve(&fact.claim_text, k, Some(fact.source_title()))?;
    if items.is_empty() {
        return Ok(no_evidence(fact, SystemKind::RetrieveVerify));
    }
    let examined = items.len();
    let (items, degraded) = if use_rerank { ctx.maybe_rerank(&fact.claim_text, items)? } else { (items, false) };
    let (score, warning) = verify(fact, &items, &[], ctx)?;
    let mut r = DetectionResult::new(&fact.fact_id, SystemKind::RetrieveVerify, score);
    r.evidence = items;
    r.rerank_degraded = degraded;
    r.evidence_examined = examined;
    r.warnings.extend(warning);
    Ok(r)
}

pub fn nli_classify(fact: &AtomicFact, passage: &str, llm: &Llm) -> Result<NliLabel, DetectError> {
    if passage.trim().is_empty() {
        return Err(DetectError::pre(Stage::Classification, "empty passage"));
    }
    let vars = PromptVars::new()
        .set("claim_text", fact.claim_text.clone())
        .set("context_title", fact.context_title.clone())
        .set("passage", passage);
    let response = llm.ask("nli", vars).map_err(llm_err(Stage::Classification))?;
    let tagged = extract_tagged(&response, "label").map_err(llm_err(Stage::Classification))?;
    NliLabel::parse(&tagged).ok_or_else(|| DetectError::Parse {
        stage: Stage::Classification,
        message: format!("unrecognized label {tagged:?}"),
    })
}

/// Inconsistent iff at least `count_threshold` passages refute.
pub fn nli_decision(refute_count: usize, count_threshold: usize) -> bool {
    refute_count >= count_threshold
}

pub fn run_nli_pipeline(
    fact: &AtomicFact,
    ctx: &DetectorContext,
    k: usize,
    count_threshold: usize,
) -> Result<DetectionResult, DetectError> {
    if count_threshold < 1 {
        return Err(DetectError::pre(Stage::Classification, "count_threshold must be at least 1"));
    }
    let items = ctx.retrieve(&fact.claim_text, k, Some(fact.source_title()))?;
    if items.is_empty() {
        return Ok(no_evidence(fact, SystemKind::NliPipeline).with_refute_count(Some(0)));
    }
    let mut labels = Vec::with_capacity(items.len());
    let mut warnings = Vec::new();
    for item in &items {
        let doc = ctx.block(&item.block_id)?.as_document();
        match nli_classify(fact, &doc, &ctx.llm) {
            Ok(l) => labels.push(Some(l)),
            Err(e) => {
                warnings.push(format!("passage {} skipped: {e}", item.block_id));
                labels.push(None);
            }
        }
    }
    if labels.iter().all(Option::is_none) {
        return Err(DetectError::Parse {
            stage: Stage::Classification,
            message: format!("all {} passages failed classification: {}", items.len(), warnings.join("; ")),
        });
    }
    let refutes = labels.iter().filter(|l| **l == Some(NliLabel::Refutes)).count();
    let mut r = DetectionResult::new(&fact.fact_id, SystemKind::NliPipeline, refutes as f64 / k as f64);
    r.evidence_examined = items.len();
    r.evidence = items;
    r.refute_count = Some(refutes);
    r.nli_labels = Some(labels);
    r.warnings = warnings;
    Ok(r)
}

fn action_regex() -> &'static Regex {
    static RE: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^([a-z_]+)\((.*)\)\s*$").expect("static regex"))
}

/// Thought and action from a controller response: the action is the first
/// line of the form `name(argument)` with a known name.
pub fn parse_action(response: &str) -> Option<(String, AgentAction)> {
    let lines: Vec<&str> = response.lines().collect();
    for (i, line) in lines.iter().enumerate() {
        let mut l = line.trim().trim_matches('`').trim();
        for prefix in ["Action:", "action:", "- "] {
            if let Some(rest) = l.strip_prefix(prefix) {
                l = rest.trim();
            }
        }
        let Some(caps) = action_regex().captures(l) else { continue };
        let Some(kind) = ActionKind::from_prompt_name(&caps[1]) else { continue };
        let arg = caps[2].trim();
        let arg = arg
            .strip_prefix('"')
            .and_then(|a| a.strip_suffix('"'))
            .or_else(|| arg.strip_prefix('\'').and_then(|a| a.strip_suffix('\'')))
            .unwrap_or(arg);
        let thought = lines[..i]
            .iter()
            .map(|t| t.trim())
            .filter(|t| !t.is_empty())
            .map(|t| t.strip_prefix("Thought:").map(str::trim).unwrap_or(t))
            .collect::<Vec<_>>()
            .join("\n");
        return Some((thought, AgentAction { kind, argument: arg.to_string() }));
    }
    None
}

pub const FORMAT_REMINDER: &str = "\n\nYour previous reply did not contain a recognizable action. Give your reasoning, then exactly one line of the form action_name(argument), using one of: explain, clarify_entity, search_wikipedia_outside_claim_article, report_inconsistency.";

fn render_history(steps: &[AgentStep]) -> String {
    if steps.is_empty() {
        return String::new();
    }
    let mut out = String::from("\nActions taken so far:\n");
    for (i, s) in steps.iter().enumerate() {
        out.push_str(&format!(
            "\nStep {}:\nThought: {}\nAction: {}\nObservation: {}\n",
            i + 1,
            s.thought,
            s.action,
            s.observation
        ));
    }
    out
}

struct AgentState {
    steps: Vec<AgentStep>,
    evidence: Vec<EvidenceItem>,
    seen: HashSet<String>,
    clarifications: Vec<String>,
    examined: usize,
    degraded: bool,
}

fn agent_search(
    query: &str,
    fact: &AtomicFact,
    ctx: &DetectorContext,
    k: usize,
    state: &mut AgentState,
) -> Result<(String, Vec<String>), DetectError> {
    let items = ctx.retrieve(query, k, Some(fact.source_title()))?;
    let (items, degraded) = ctx.maybe_rerank(query, items)?;
    state.examined += items.len();
    state.degraded |= degraded;
    if items.is_empty() {
        return Ok(("No passages found outside the claim's article.".into(), Vec::new()));
    }
    let mut obs = String::new();
    let mut ids = Vec::new();
    for (i, item) in items.into_iter().enumerate() {
        let block = ctx.block(&item.block_id)?;
        obs.push_str(&format!("[{}] ({}) {}\n\n", i + 1, item.block_id, block.as_document()));
        ids.push(item.block_id.clone());
        if state.seen.insert(item.block_id.clone()) {
            state.evidence.push(item);
        }
    }
    Ok((obs.trim_end().to_string(), ids))
}

fn controller_turn(
    fact: &AtomicFact,
    ctx: &DetectorContext,
    history: &str,
) -> Result<(String, AgentAction), DetectError> {
    for reminder in ["", FORMAT_REMINDER] {
        let vars = fact_vars(fact).set("action_history", history).set("format_reminder", reminder);
        let response = ctx.llm.ask("controller", vars).map_err(llm_err(Stage::Controller))?;
        if let Some(parsed) = parse_action(&response) {
            return Ok(parsed);
        }
        log::warn!("fact {}: controller output has no recognizable action", fact.fact_id);
    }
    Err(DetectError::Parse {
        stage: Stage::Controller,
        message: "no recognizable action after a format reminder".into(),
    })
}

/// ReAct loop: thought, action, observation until a report or `budget` steps,
/// then one verification over everything gathered.
pub fn run_agent(
    fact: &AtomicFact,
    ctx: &DetectorContext,
    budget: usize,
    k_per_search: usize,
) -> Result<DetectionResult, DetectError> {
    if budget < 1 {
        return Err(DetectError::pre(Stage::Controller, "budget must be at least 1"));
    }
    let mut state = AgentState {
        steps: Vec::new(),
        evidence: Vec::new(),
        seen: HashSet::new(),
        clarifications: Vec::new(),
        examined: 0,
        degraded: false,
    };
    let mut reported = false;
    while state.steps.len() < budget {
        let (thought, action) = controller_turn(fact, ctx, &render_history(&state.steps))?;
        let outcome = match action.kind {
            ActionKind::Search => agent_search(&action.argument, fact, ctx, k_per_search, &mut state),
            ActionKind::Explain => tool_explain(&action.argument, fact, &ctx.llm).map(|t| {
                state.clarifications.push(t.clone());
                (t, Vec::new())
            }),
            ActionKind::ClarifyEntity => tool_clarify(&action.argument, fact, ctx, ctx.params.k_clarify).map(|t| {
                state.clarifications.push(t.clone());
                (t, Vec::new())
            }),
            ActionKind::ReportInconsistency => {
                reported = true;
                Ok(("Reported; a human will review it.".into(), Vec::new()))
            }
        };
        let (observation, block_ids) = outcome.unwrap_or_else(|e| (format!("tool failed: {e}"), Vec::new()));
        state.steps.push(AgentStep { thought, action, observation, block_ids });
        if reported {
            break;
        }
    }
    for (i, e) in state.evidence.iter_mut().enumerate() {
        e.rank = i + 1;
    }
    let trace = AgentTrace { steps: state.steps, budget, reported };
    let mut r = if state.evidence.is_empty() {
        no_evidence(fact, SystemKind::Agent)
    } else {
        let (score, warning) = verify(fact, &state.evidence, &state.clarifications, ctx)?;
        let mut r = DetectionResult::new(&fact.fact_id, SystemKind::Agent, score);
        r.warnings.extend(warning);
        r
    };
    r.evidence = state.evidence;
    r.clarifications = state.clarifications;
    r.trace = Some(trace);
    r.evidence_examined = state.examined;
    r.rerank_degraded = state.degraded;
    Ok(r)
}

/// Background paragraph on `topic` in the fact's context.
pub fn tool_explain(topic: &str, fact: &AtomicFact, llm: &Llm) -> Result<String, DetectError> {
    if topic.trim().is_empty() {
        return Err(DetectError::pre(Stage::Tool, "explain needs a topic"));
    }
    let vars = PromptVars::new()
        .set("topic", topic.trim())
        .set("context_title", fact.context_title.clone())
        .set("context_text", fact.context_text.clone());
    let text = llm.ask("explain", vars).map_err(llm_err(Stage::Tool))?;
    Ok(text.trim().to_string())
}

pub const NO_RESULTS_NOTE: &str =
    "(No search results were found for this entity; the report relies on the claim context alone.)";

/// Disambiguation report for `entity`, from `k` passages searched over the
/// whole corpus.
pub fn tool_clarify(entity: &str, fact: &AtomicFact, ctx: &DetectorContext, k: usize) -> Result<String, DetectError> {
    if entity.trim().is_empty() {
        return Err(DetectError::pre(Stage::Tool, "clarify_entity needs an entity"));
    }
    let items = ctx.retrieve(entity.trim(), k, None)?;
    let results = ctx.documents(&items)?;
    let vars = PromptVars::new()
        .set("entity_name", entity.trim())
        .set("context_title", fact.context_title.clone())
        .set("context_text", fact.context_text.clone())
        .list("search_results", results);
    let text = ctx.llm.ask("clarify", vars).map_err(llm_err(Stage::Tool))?;
    let text = text.trim().to_string();
    Ok(if items.is_empty() { format!("{text}\n\n{NO_RESULTS_NOTE}") } else { text })
}

/// Cheap candidate screen: one retrieval and one yes/no decision. `true`
/// keeps the fact as an inconsistency candidate.
pub fn weak_filter(fact: &AtomicFact, ctx: &DetectorContext) -> Result<bool, DetectError> {
    let items = ctx.retrieve(&fact.claim_text, ctx.params.k_baseline, Some(fact.source_title()))?;
    if items.is_empty() {
        return Ok(false);
    }
    let vars = fact_vars(fact).list("documents", ctx.documents(&items)?);
    let response = ctx.llm.ask("weak_filter", vars).map_err(llm_err(Stage::Filter))?;
    let decision = extract_tagged(&response, "decision").map_err(llm_err(Stage::Filter))?;
    match decision.trim().to_ascii_lowercase().as_str() {
        "yes" | "true" => Ok(true),
        "no" | "false" => Ok(false),
        other => Err(DetectError::Parse { stage: Stage::Filter, message: format!("decision {other:?}") }),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ReportSide {
    Available { text: String },
    Unavailable { reason: String },
}

impl ReportSide {
    pub fn text(&self) -> Option<&str> {
        match self {
            ReportSide::Available { text } => Some(text),
            ReportSide::Unavailable { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoSidedReport {
    pub pro_inconsistent: ReportSide,
    pub pro_consistent: ReportSide,
    #[serde(default)]
    pub trace: Option<AgentTrace>,
}

/// Arguments for and against inconsistency over the result's evidence. A
/// failing side is marked unavailable; the other is kept.
pub fn generate_report(
    fact: &AtomicFact,
    result: &DetectionResult,
    ctx: &DetectorContext,
) -> Result<TwoSidedReport, DetectError> {
    if result.evidence.is_empty() {
        return Err(DetectError::pre(Stage::Report, "result carries no evidence"));
    }
    let docs = ctx.documents(&result.evidence)?;
    let side = |template: &str| {
        let vars =
            fact_vars(fact).list("clarifications", result.clarifications.clone()).list("documents", docs.clone());
        match ctx.llm.ask(template, vars).and_then(|r| extract_tagged(&r, "argument").or(Ok(r))) {
            Ok(text) => ReportSide::Available { text: text.trim().to_string() },
            Err(e) => ReportSide::Unavailable { reason: format!("{}: {e}", Stage::Report) },
        }
    };
    Ok(TwoSidedReport {
        pro_inconsistent: side("report_inconsistent"),
        pro_consistent: side("report_consistent"),
        trace: result.trace.clone(),
    })
}

pub fn detect_one(
    fact: &AtomicFact,
    ctx: &DetectorContext,
    system: SystemKind,
) -> Result<DetectionResult, DetectError> {
    let p = ctx.params;
    match system {
        SystemKind::Agent => run_agent(fact, ctx, p.budget, p.k_search),
        SystemKind::RetrieveVerify => run_retrieve_and_verify(fact, ctx, p.k_baseline, p.rerank),
        SystemKind::NliPipeline => run_nli_pipeline(fact, ctx, p.k_baseline, p.count_threshold),
    }
}

#[derive(Debug)]
pub struct FactFailure {
    pub fact_id: String,
    pub error: DetectError,
}

/// Runs `system` over all facts with at most `jobs` in parallel. Output is
/// ordered by fact id regardless of scheduling.
pub fn detect_all(
    facts: &[AtomicFact],
    ctx: &DetectorContext,
    system: SystemKind,
    jobs: usize,
) -> (Vec<DetectionResult>, Vec<FactFailure>) {
    let run = || -> Vec<(String, Result<DetectionResult, DetectError>)> {
        facts.par_iter().map(|f| (f.fact_id.clone(), detect_one(f, ctx, system))).collect()
    };
    let mut out = match rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build() {
        Ok(pool) => pool.install(run),
        Err(_) => run(),
    };
    out.sort_by(|a, b| a.0.cmp(&b.0));
    let mut results = Vec::new();
    let mut failures = Vec::new();
    for (fact_id, r) in out {
        match r {
            Ok(r) => results.push(r),
            Err(error) => failures.push(FactFailure { fact_id, error }),
        }
    }
    (results, failures)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::BlockKind;
    use crate::embedding::{build_index, HashEmbedder};
    use crate::llm::ScriptedProvider;
    use chrono::NaiveDate;

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

    fn fact() -> AtomicFact {
        let src = block("src", "Adela Carrow", "Adela Carrow was born in 1701 in Ashford.");
        AtomicFact::from_block(&src, 0, "Adela Carrow was born in 1701 in Ashford.")
    }

    fn ctx(blocks: Vec<Block>, provider: ScriptedProvider, rerank: bool) -> DetectorContext {
        let snapshot = CorpusSnapshot::from_blocks(NaiveDate::from_ymd_opt(2024, 1, 1).unwrap(), blocks).unwrap();
        let embedder = Arc::new(HashEmbedder::default());
        let index = build_index(snapshot.blocks(), embedder.as_ref()).unwrap();
        DetectorContext {
            snapshot: Arc::new(snapshot),
            retriever: Retriever::new(index, embedder),
            llm: Llm::new(Arc::new(provider)),
            params: DetectorParams { rerank, ..DetectorParams::default() },
        }
    }

    fn corpus() -> Vec<Block> {
        vec![
            block("src", "Adela Carrow", "Adela Carrow was born in 1701 in Ashford."),
            block("other", "Ashford", "Ashford records list Adela Carrow as born in 1702."),
            block("far", "Quito", "Quito is a city in the Andes."),
        ]
    }

    fn scripted(entries: &[(&str, &[&str])]) -> ScriptedProvider {
        let mut all = Vec::new();
        for (template, responses) in entries {
            for r in *responses {
                all.push(crate::llm::TranscriptEntry { key: format!("{template}:*"), response: r.to_string() });
            }
        }
        ScriptedProvider::new(all)
    }

    #[test]
    fn label_parsing() {
        assert_eq!(NliLabel::parse("REFUTES"), Some(NliLabel::Refutes));
        assert_eq!(NliLabel::parse(" not enough info "), Some(NliLabel::NotEnoughInfo));
        assert_eq!(NliLabel::parse("maybe"), None);
    }

    #[test]
    fn score_policy() {
        assert_eq!(
            parse_score("<inconsistency_score>0.85</inconsistency_score>", ScorePolicy::Strict).unwrap().0,
            0.85
        );
        assert!(parse_score("<inconsistency_score>1.5</inconsistency_score>", ScorePolicy::Strict).is_err());
        assert!(parse_score("1.5", ScorePolicy::Strict).is_err());
        let (v, w) = parse_score("<inconsistency_score>1.5</inconsistency_score>", ScorePolicy::Lenient).unwrap();
        assert_eq!(v, 1.0);
        assert!(w.is_some());
    }

    #[test]
    fn action_parsing() {
        let (t, a) =
            parse_action("Thought: check the year\nsearch_wikipedia_outside_claim_article(\"Adela Carrow birth\")")
                .unwrap();
        assert_eq!(t, "check the year");
        assert_eq!(a.kind, ActionKind::Search);
        assert_eq!(a.argument, "Adela Carrow birth");
        assert!(parse_action("search(Adela)").is_none());
        assert!(parse_action("I think it is fine.").is_none());
        let (_, a) = parse_action("Action: report_inconsistency(born 1702 per Ashford)").unwrap();
        assert_eq!(a.kind, ActionKind::ReportInconsistency);
    }

    #[test]
    fn rv_excludes_source_and_scores() {
        let c = ctx(corpus(), scripted(&[("verifier", &["<inconsistency_score>0.85</inconsistency_score>"])]), false);
        let r = run_retrieve_and_verify(&fact(), &c, 20, false).unwrap();
        assert_eq!(r.score, 0.85);
        assert!(r.evidence.iter().all(|e| e.block_id != "src"));
        assert_eq!(r.evidence[0].block_id, "other");
        let log = c.llm.log().snapshot();
        assert!(log[0].rendered_prompt.contains("born in 1702"));
    }

    #[test]
    fn rv_zero_evidence() {
        let c =
            ctx(vec![block("src", "Adela Carrow", "Adela Carrow was born in 1701 in Ashford.")], scripted(&[]), true);
        let r = run_retrieve_and_verify(&fact(), &c, 20, true).unwrap();
        assert_eq!(r.score, 0.0);
        assert!(r.no_evidence);
    }

    #[test]
    fn nli_counts_and_skips_errors() {
        let c = ctx(corpus(), scripted(&[("nli", &["<label>REFUTES</label>", "<label>???</label>"])]), false);
        let r = run_nli_pipeline(&fact(), &c, 20, 1).unwrap();
        assert_eq!(r.refute_count, Some(1));
        assert_eq!(r.score, 1.0 / 20.0);
        assert_eq!(r.warnings.len(), 1);
        assert!(nli_decision(1, 1));
        assert!(!nli_decision(2, 3));
        assert!(!nli_decision(0, 1));
    }

    #[test]
    fn nli_all_errors_is_pipeline_error() {
        let c = ctx(corpus(), scripted(&[("nli", &["bad", "bad"])]), false);
        let e = run_nli_pipeline(&fact(), &c, 20, 1).unwrap_err();
        assert_eq!(e.stage(), Stage::Classification);
    }

    #[test]
    fn agent_report_at_step_three() {
        let c = ctx(
            corpus(),
            scripted(&[
                (
                    "controller",
                    &[
                        "explain(Ashford)",
                        "search_wikipedia_outside_claim_article(Adela Carrow born)",
                        "report_inconsistency(1702 vs 1701)",
                    ],
                ),
                ("explain", &["Ashford is a town."]),
                ("verifier", &["<inconsistency_score>0.9</inconsistency_score>"]),
            ]),
            false,
        );
        let r = run_agent(&fact(), &c, 10, 15).unwrap();
        let trace = r.trace.unwrap();
        assert_eq!(trace.steps.len(), 3);
        assert!(trace.reported);
        assert_eq!(r.score, 0.9);
        assert_eq!(r.clarifications, vec!["Ashford is a town.".to_string()]);
        assert!(trace.steps[1].block_ids.iter().all(|id| id != "src"));
    }

    #[test]
    fn agent_budget_cap_and_tool_failures() {
        let searches: Vec<&str> = vec!["search_wikipedia_outside_claim_article()"; 12];
        let c = ctx(corpus(), scripted(&[("controller", &searches)]), false);
        let r = run_agent(&fact(), &c, 10, 15).unwrap();
        let trace = r.trace.unwrap();
        assert_eq!(trace.steps.len(), 10);
        assert!(trace.steps[0].observation.starts_with("tool failed:"));
        assert!(r.no_evidence);
    }

    #[test]
    fn agent_malformed_twice_is_controller_error() {
        let c = ctx(corpus(), scripted(&[("controller", &["hmm", "still nothing"])]), false);
        let e = run_agent(&fact(), &c, 10, 15).unwrap_err();
        assert_eq!(e.stage(), Stage::Controller);
    }

    #[test]
    fn explain_and_clarify() {
        let c = ctx(corpus(), scripted(&[("explain", &["Tie-break rules decide draws."])]), false);
        assert_eq!(tool_explain("tie-break rules", &fact(), &c.llm).unwrap(), "Tie-break rules decide draws.");
        assert!(tool_explain("  ", &fact(), &c.llm).is_err());

        let only_src = vec![block("src", "Adela Carrow", "Adela Carrow was born in 1701 in Ashford.")];
        let c = ctx(only_src, scripted(&[("clarify", &["One entity."])]), false);
        let r = tool_clarify("Zyxwv Qrst", &fact(), &c, 10).unwrap();
        assert!(r.starts_with("One entity."));
    }

    #[test]
    fn weak_filter_decisions() {
        let c = ctx(corpus(), scripted(&[("weak_filter", &["<decision>yes</decision>"])]), false);
        assert!(weak_filter(&fact(), &c).unwrap());
        let only_src = vec![block("src", "Adela Carrow", "Adela Carrow was born in 1701 in Ashford.")];
        let c = ctx(only_src, scripted(&[]), false);
        assert!(!weak_filter(&fact(), &c).unwrap());
    }

    #[test]
    fn report_sides_degrade_independently() {
        let c = ctx(corpus(), scripted(&[("report_inconsistent", &["<argument>years differ</argument>"])]), false);
        let mut r = DetectionResult::new(&fact().fact_id, SystemKind::RetrieveVerify, 0.9);
        r.evidence = vec![EvidenceItem { block_id: "other".into(), similarity: 0.5, rank: 1, rerank_rank: None }];
        let rep = generate_report(&fact(), &r, &c).unwrap();
        assert_eq!(rep.pro_inconsistent.text(), Some("years differ"));
        assert!(matches!(rep.pro_consistent, ReportSide::Unavailable { .. }));
        assert!(rep.trace.is_none());
    }
}
