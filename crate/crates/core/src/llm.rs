//! Language-model gateway: prompt templates with few-shot blocks, provider
//! abstraction, a run log of every exchange, and a scripted provider for
//! offline, bit-reproducible runs.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::util::stable_id;

fn placeholder_regex() -> &'static Regex {
    static RE: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{\{\s*([A-Za-z_][A-Za-z0-9_]*)\s*\}\}").unwrap())
}

pub const INPUT_MARKER: &str = "# input";
pub const OUTPUT_MARKER: &str = "# output";
pub const INSTRUCTION_MARKER: &str = "# instruction";

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("template {template}: missing variable `{name}`")]
    MissingPlaceholder { template: String, name: String },
    #[error("template {template}: placeholder `{name}` is not declared")]
    UndeclaredPlaceholder { template: String, name: String },
    #[error("template asset {name}: {message}")]
    Asset { name: String, message: String },
    #[error("unknown template `{0}`")]
    UnknownTemplate(String),
    #[error("empty prompt")]
    EmptyPrompt,
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("provider returned an empty response")]
    EmptyResponse,
    #[error("no scripted response for key {key}; nearest transcript key: {nearest:?}")]
    UnmatchedPrompt { key: String, nearest: Option<String> },
    #[error("tag <{tag}> not found or unclosed in response: {raw:?}")]
    TagParse { tag: String, raw: String },
    #[error("provider configuration: {0}")]
    Config(String),
}

impl LlmError {
    pub fn is_retriable(&self) -> bool {
        matches!(self, LlmError::Transport { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShot {
    pub input: String,
    pub output: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateSource {
    /// Prompt text reproduced from published prompt figures.
    Paper,
    /// Prompt authored for this toolkit.
    Authored,
}

/// A prompt with an instruction, ordered few-shot pairs and an input slot
/// containing `{{ name }}` placeholders.
///
/// Placeholders listed in `lists` take a list of strings rendered as
/// `[1] item`, blank-line separated. `salient` names the variables whose
/// values key scripted transcripts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub name: String,
    pub version: u32,
    pub source: TemplateSource,
    pub instruction: String,
    #[serde(default)]
    pub few_shot: Vec<FewShot>,
    pub input_slot: String,
    pub placeholders: Vec<String>,
    #[serde(default)]
    pub lists: Vec<String>,
    #[serde(default)]
    pub salient: Vec<String>,
}

impl PromptTemplate {
    /// Parses a TOML template asset and checks its placeholder declarations.
    pub fn from_toml(text: &str) -> Result<Self, LlmError> {
        let template: PromptTemplate =
            toml::from_str(text).map_err(|e| LlmError::Asset { name: "<toml>".into(), message: e.to_string() })?;
        template.validate()?;
        Ok(template)
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        for name in self.slot_placeholders() {
            if !self.placeholders.iter().any(|p| p == name) {
                return Err(LlmError::UndeclaredPlaceholder { template: self.name.clone(), name: name.to_string() });
            }
        }
        for name in self.lists.iter().chain(&self.salient) {
            if !self.placeholders.contains(name) {
                return Err(LlmError::UndeclaredPlaceholder { template: self.name.clone(), name: name.clone() });
            }
        }
        Ok(())
    }

    pub fn slot_placeholders(&self) -> Vec<&str> {
        placeholder_regex().captures_iter(&self.input_slot).map(|c| c.get(1).unwrap().as_str()).collect()
    }
}

/// Variable bindings for rendering: scalars and numbered lists.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptVars {
    pub scalars: BTreeMap<String, String>,
    pub lists: BTreeMap<String, Vec<String>>,
}

impl PromptVars {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(mut self, name: &str, value: impl Into<String>) -> Self {
        self.scalars.insert(name.to_string(), value.into());
        self
    }

    pub fn list(mut self, name: &str, values: Vec<String>) -> Self {
        self.lists.insert(name.to_string(), values);
        self
    }

    pub fn scalar(&self, name: &str) -> Option<&str> {
        self.scalars.get(name).map(String::as_str)
    }

    pub fn get_list(&self, name: &str) -> Option<&[String]> {
        self.lists.get(name).map(Vec::as_slice)
    }

    fn contains(&self, name: &str) -> bool {
        self.scalars.contains_key(name) || self.lists.contains_key(name)
    }

    fn names(&self) -> impl Iterator<Item = &String> {
        self.scalars.keys().chain(self.lists.keys())
    }
}

/// `[1] a\n\n[2] b\n\n`, the numbered-list layout used for documents and
/// clarifications.
pub fn render_numbered(items: &[String]) -> String {
    let mut out = String::new();
    for (i, item) in items.iter().enumerate() {
        out.push_str(&format!("[{}] {}\n\n", i + 1, item));
    }
    out
}

/// A rendered prompt plus the bindings it was rendered from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub template_name: String,
    pub text: String,
    pub vars: PromptVars,
    /// `template_name:digest` over the salient variables.
    pub key: String,
}

impl Prompt {
    /// Key used by the scripted provider in exact mode.
    pub fn exact_key(&self) -> String {
        format!("{}:exact:{}", self.template_name, &crate::util::sha256_hex(self.text.as_bytes())[..16])
    }
}

/// Renders `template` with `vars`: instruction, then each few-shot pair
/// between input/output markers, then the filled input slot.
pub fn render_prompt(template: &PromptTemplate, vars: &PromptVars) -> Result<String, LlmError> {
    render_with_warnings(template, vars).map(|(text, _)| text)
}

/// As [`render_prompt`], also returning warnings for variables the template
/// never uses.
pub fn render_with_warnings(template: &PromptTemplate, vars: &PromptVars) -> Result<(String, Vec<String>), LlmError> {
    let used = template.slot_placeholders();
    for name in &used {
        if !vars.contains(name) {
            return Err(LlmError::MissingPlaceholder { template: template.name.clone(), name: name.to_string() });
        }
    }
    let warnings: Vec<String> = vars
        .names()
        .filter(|n| !used.contains(&n.as_str()))
        .map(|n| format!("template {}: unused variable `{}`", template.name, n))
        .collect();
    for w in &warnings {
        log::warn!("{w}");
    }

    let filled = placeholder_regex().replace_all(&template.input_slot, |caps: &regex::Captures| {
        let name = &caps[1];
        match vars.get_list(name) {
            Some(items) => render_numbered(items),
            None => vars.scalar(name).unwrap_or_default().to_string(),
        }
    });

    let mut out = String::new();
    out.push_str(INSTRUCTION_MARKER);
    out.push('\n');
    out.push_str(template.instruction.trim_end());
    out.push_str("\n\n");
    for shot in &template.few_shot {
        out.push_str(INPUT_MARKER);
        out.push('\n');
        out.push_str(shot.input.trim_end());
        out.push_str("\n\n");
        out.push_str(OUTPUT_MARKER);
        out.push('\n');
        out.push_str(shot.output.trim_end());
        out.push_str("\n\n");
    }
    out.push_str(INPUT_MARKER);
    out.push('\n');
    out.push_str(&filled);
    Ok((out, warnings))
}

/// Digest of the salient bindings, stable under cosmetic template edits.
pub fn salient_key(template: &PromptTemplate, vars: &PromptVars) -> String {
    let mut parts: Vec<String> = Vec::new();
    for name in &template.salient {
        parts.push(name.clone());
        if let Some(items) = vars.get_list(name) {
            parts.push(items.join("\u{1e}"));
        } else {
            parts.push(vars.scalar(name).unwrap_or_default().to_string());
        }
    }
    let refs: Vec<&str> = parts.iter().map(String::as_str).collect();
    format!("{}:{}", template.name, stable_id(&refs))
}

pub fn build_prompt(template: &PromptTemplate, vars: PromptVars) -> Result<Prompt, LlmError> {
    let text = render_prompt(template, &vars)?;
    Ok(Prompt { template_name: template.name.clone(), key: salient_key(template, &vars), text, vars })
}

const ASSETS: &[(&str, &str)] = &[
    ("fact_extraction", include_str!("../assets/prompts/fact_extraction.toml")),
    ("explain", include_str!("../assets/prompts/explain.toml")),
    ("clarify", include_str!("../assets/prompts/clarify.toml")),
    ("verifier", include_str!("../assets/prompts/verifier.toml")),
    ("controller", include_str!("../assets/prompts/controller.toml")),
    ("nli", include_str!("../assets/prompts/nli.toml")),
    ("weak_filter", include_str!("../assets/prompts/weak_filter.toml")),
    ("report_inconsistent", include_str!("../assets/prompts/report_inconsistent.toml")),
    ("report_consistent", include_str!("../assets/prompts/report_consistent.toml")),
    ("rerank", include_str!("../assets/prompts/rerank.toml")),
    ("faithfulness", include_str!("../assets/prompts/faithfulness.toml")),
];

/// The bundled prompt templates, keyed by name.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    templates: HashMap<String, PromptTemplate>,
}

impl TemplateSet {
    pub fn bundled() -> &'static TemplateSet {
        static SET: std::sync::OnceLock<TemplateSet> = std::sync::OnceLock::new();
        SET.get_or_init(|| {
            let mut templates = HashMap::new();
            for (name, text) in ASSETS {
                let t = PromptTemplate::from_toml(text)
                    .unwrap_or_else(|e| panic!("bundled template {name} is invalid: {e}"));
                assert_eq!(&t.name, name, "asset name mismatch");
                templates.insert(t.name.clone(), t);
            }
            TemplateSet { templates }
        })
    }

    pub fn get(&self, name: &str) -> Result<&PromptTemplate, LlmError> {
        self.templates.get(name).ok_or_else(|| LlmError::UnknownTemplate(name.to_string()))
    }

    pub fn names(&self) -> Vec<&str> {
        let mut names: Vec<&str> = self.templates.keys().map(String::as_str).collect();
        names.sort_unstable();
        names
    }

    pub fn prompt(&self, name: &str, vars: PromptVars) -> Result<Prompt, LlmError> {
        build_prompt(self.get(name)?, vars)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodingConfig {
    pub temperature: f64,
    #[serde(default)]
    pub max_tokens: Option<u32>,
}

impl Default for DecodingConfig {
    fn default() -> Self {
        DecodingConfig { temperature: 0.0, max_tokens: None }
    }
}

pub trait LlmProvider: Send + Sync {
    fn id(&self) -> &str;
    fn complete(&self, prompt: &Prompt, decoding: &DecodingConfig) -> Result<String, LlmError>;
}

/// One logged call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmExchange {
    pub template_name: String,
    pub key: String,
    pub rendered_prompt: String,
    pub response_text: String,
    pub provider_id: String,
    pub latency_ms: u64,
}

/// Append-only, shareable log of exchanges.
#[derive(Debug, Clone, Default)]
pub struct RunLog {
    inner: Arc<Mutex<Vec<LlmExchange>>>,
}

impl RunLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(&self, exchange: LlmExchange) {
        self.inner.lock().expect("run log poisoned").push(exchange);
    }

    pub fn snapshot(&self) -> Vec<LlmExchange> {
        self.inner.lock().expect("run log poisoned").clone()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("run log poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// How verifier scores outside [0, 1] or non-numeric are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorePolicy {
    #[default]
    Strict,
    Lenient,
}

/// Provider plus decoding settings, retry policy and run log.
#[derive(Clone)]
pub struct Llm {
    provider: Arc<dyn LlmProvider>,
    pub decoding: DecodingConfig,
    pub score_policy: ScorePolicy,
    pub max_attempts: u32,
    log: RunLog,
}

impl std::fmt::Debug for Llm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Llm")
            .field("provider", &self.provider.id())
            .field("decoding", &self.decoding)
            .field("score_policy", &self.score_policy)
            .finish()
    }
}

impl Llm {
    pub fn new(provider: Arc<dyn LlmProvider>) -> Self {
        Llm {
            provider,
            decoding: DecodingConfig::default(),
            score_policy: ScorePolicy::Strict,
            max_attempts: 3,
            log: RunLog::new(),
        }
    }

    pub fn with_log(mut self, log: RunLog) -> Self {
        self.log = log;
        self
    }

    pub fn with_score_policy(mut self, policy: ScorePolicy) -> Self {
        self.score_policy = policy;
        self
    }

    pub fn log(&self) -> &RunLog {
        &self.log
    }

    pub fn provider_id(&self) -> &str {
        self.provider.id()
    }

    pub fn templates(&self) -> &'static TemplateSet {
        TemplateSet::bundled()
    }

    /// Renders a bundled template and completes it.
    pub fn ask(&self, template: &str, vars: PromptVars) -> Result<String, LlmError> {
        let prompt = self.templates().prompt(template, vars)?;
        self.complete(&prompt)
    }

    /// Sends `prompt`, retrying transport failures, and logs the exchange.
    pub fn complete(&self, prompt: &Prompt) -> Result<String, LlmError> {
        if prompt.text.trim().is_empty() {
            return Err(LlmError::EmptyPrompt);
        }
        let mut attempt = 0;
        loop {
            attempt += 1;
            let started = Instant::now();
            match self.provider.complete(prompt, &self.decoding) {
                Ok(text) if text.trim().is_empty() => return Err(LlmError::EmptyResponse),
                Ok(text) => {
                    self.log.append(LlmExchange {
                        template_name: prompt.template_name.clone(),
                        key: prompt.key.clone(),
                        rendered_prompt: prompt.text.clone(),
                        response_text: text.clone(),
                        provider_id: self.provider.id().to_string(),
                        latency_ms: started.elapsed().as_millis() as u64,
                    });
                    return Ok(text);
                }
                Err(LlmError::Transport { message, .. }) if attempt < self.max_attempts => {
                    log::warn!("transport failure (attempt {attempt}): {message}");
                    std::thread::sleep(Duration::from_millis(50 * u64::from(attempt)));
                }
                Err(LlmError::Transport { message, .. }) => {
                    return Err(LlmError::Transport { attempts: attempt, message })
                }
                Err(e) => return Err(e),
            }
        }
    }
}

/// Trimmed content of the first `<tag>...</tag>` region.
pub fn extract_tagged(response: &str, tag: &str) -> Result<String, LlmError> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let err = || LlmError::TagParse { tag: tag.to_string(), raw: response.to_string() };
    let start = response.find(&open).ok_or_else(err)? + open.len();
    let end = response[start..].find(&close).ok_or_else(err)? + start;
    Ok(response[start..end].trim().to_string())
}

/// One transcript line: `{key, response}`.
///
/// A key of the form `template:*` is a sequence entry: such responses are
/// served in file order to any prompt of that template with no exact match.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub key: String,
    pub response: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    /// Match on `template:salient-digest`.
    #[default]
    Salient,
    /// Match on a digest of the full rendered prompt text.
    ExactPrompt,
}

/// Deterministic provider that answers from a transcript. Performs no I/O.
#[derive(Debug)]
pub struct ScriptedProvider {
    id: String,
    mode: MatchMode,
    keyed: HashMap<String, String>,
    sequences: Mutex<HashMap<String, VecDeque<String>>>,
}

impl ScriptedProvider {
    pub fn new(entries: Vec<TranscriptEntry>) -> Self {
        Self::with_mode(entries, MatchMode::Salient)
    }

    pub fn with_mode(entries: Vec<TranscriptEntry>, mode: MatchMode) -> Self {
        let mut keyed = HashMap::new();
        let mut sequences: HashMap<String, VecDeque<String>> = HashMap::new();
        for e in entries {
            match e.key.strip_suffix(":*") {
                Some(template) => sequences.entry(template.to_string()).or_default().push_back(e.response),
                None => {
                    keyed.insert(e.key, e.response);
                }
            }
        }
        ScriptedProvider { id: "scripted".into(), mode, keyed, sequences: Mutex::new(sequences) }
    }

    /// Replays a recorded run log.
    pub fn from_run_log(exchanges: &[LlmExchange]) -> Self {
        Self::new(
            exchanges
                .iter()
                .map(|x| TranscriptEntry { key: x.key.clone(), response: x.response_text.clone() })
                .collect(),
        )
    }

    pub fn from_file(path: &std::path::Path, mode: MatchMode) -> Result<Self, crate::util::JsonlError> {
        Ok(Self::with_mode(crate::util::read_jsonl_file(path)?, mode))
    }

    /// Convenience: a provider that serves `responses` in order for `template`.
    pub fn sequence(template: &str, responses: &[&str]) -> Self {
        Self::new(
            responses
                .iter()
                .map(|r| TranscriptEntry { key: format!("{template}:*"), response: r.to_string() })
                .collect(),
        )
    }

    fn nearest_key(&self, key: &str) -> Option<String> {
        self.keyed.keys().min_by_key(|k| (strsim::levenshtein(k, key), (*k).clone())).cloned()
    }
}

impl LlmProvider for ScriptedProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, prompt: &Prompt, _decoding: &DecodingConfig) -> Result<String, LlmError> {
        let key = match self.mode {
            MatchMode::Salient => prompt.key.clone(),
            MatchMode::ExactPrompt => prompt.exact_key(),
        };
        if let Some(response) = self.keyed.get(&key) {
            return Ok(response.clone());
        }
        let mut seqs = self.sequences.lock().expect("sequence lock poisoned");
        if let Some(next) = seqs.get_mut(&prompt.template_name).and_then(VecDeque::pop_front) {
            return Ok(next);
        }
        Err(LlmError::UnmatchedPrompt { nearest: self.nearest_key(&key), key })
    }
}

/// Caps concurrent in-flight requests.
#[derive(Debug)]
pub struct InFlightLimit {
    cap: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

impl InFlightLimit {
    pub fn new(cap: usize) -> Self {
        InFlightLimit { cap: cap.max(1), active: Mutex::new(0), freed: Condvar::new() }
    }

    pub fn acquire(&self) -> InFlightGuard<'_> {
        let mut active = self.active.lock().expect("in-flight lock poisoned");
        while *active >= self.cap {
            active = self.freed.wait(active).expect("in-flight lock poisoned");
        }
        *active += 1;
        InFlightGuard { limit: self }
    }
}

pub struct InFlightGuard<'a> {
    limit: &'a InFlightLimit,
}

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        *self.limit.active.lock().expect("in-flight lock poisoned") -= 1;
        self.limit.freed.notify_one();
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpProviderConfig {
    /// Base URL of an OpenAI-compatible API, e.g. `https://host/v1`.
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub max_in_flight: usize,
}

impl Default for HttpProviderConfig {
    fn default() -> Self {
        HttpProviderConfig {
            base_url: "http://localhost:8000/v1".into(),
            model: "gpt-4o".into(),
            api_key_env: "CLID_API_KEY".into(),
            timeout_secs: 120,
            max_in_flight: 8,
        }
    }
}

/// Chat-completions client.
pub struct HttpProvider {
    id: String,
    config: HttpProviderConfig,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    limit: InFlightLimit,
}

impl HttpProvider {
    pub fn new(config: HttpProviderConfig) -> Result<Self, LlmError> {
        let api_key = std::env::var(&config.api_key_env).ok();
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| LlmError::Config(e.to_string()))?;
        Ok(HttpProvider {
            id: format!("http:{}", config.model),
            limit: InFlightLimit::new(config.max_in_flight),
            config,
            api_key,
            client,
        })
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    #[serde(default)]
    content: Option<String>,
}

impl LlmProvider for HttpProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, prompt: &Prompt, decoding: &DecodingConfig) -> Result<String, LlmError> {
        let _slot = self.limit.acquire();
        let mut body = serde_json::json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt.text}],
            "temperature": decoding.temperature,
        });
        if let Some(max) = decoding.max_tokens {
            body["max_tokens"] = max.into();
        }
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let mut request = self.client.post(url).json(&body);
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let transport = |message: String| LlmError::Transport { attempts: 1, message };
        let response = request.send().map_err(|e| transport(e.to_string()))?;
        let status = response.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(transport(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(LlmError::Config(format!("HTTP {status}")));
        }
        let parsed: ChatResponse = response.json().map_err(|e| transport(e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .filter(|c| !c.trim().is_empty())
            .ok_or(LlmError::EmptyResponse)
    }
}
