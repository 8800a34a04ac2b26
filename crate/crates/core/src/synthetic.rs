//! Labeled contradiction injection.
//!
//! Each operator restates a fact with exactly one change from the
//! inconsistency taxonomy and places the result in a new document. The
//! operators are one concrete, rule-based realization of the taxonomy
//! categories, and every case records which operator produced it.

use std::collections::{BTreeMap, HashSet};

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::{Block, BlockKind, BlockRecord, CorpusSnapshot};
use crate::embedding::tokenize;
use crate::evaluation::{GoldLabel, LabeledFact, Split};
use crate::facts::AtomicFact;
use crate::util::{char_len, collapse_ws, largest_remainder, stable_id};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MutationType {
    NumericalOffByOne,
    NumericalClear,
    LogicalDirect,
    LogicalIndirect,
    Definition,
    Temporal,
    NamedEntity,
    Categorical,
    Spatial,
}

impl MutationType {
    pub const ALL: [MutationType; 9] = [
        MutationType::NumericalOffByOne,
        MutationType::NumericalClear,
        MutationType::LogicalDirect,
        MutationType::LogicalIndirect,
        MutationType::Definition,
        MutationType::Temporal,
        MutationType::NamedEntity,
        MutationType::Categorical,
        MutationType::Spatial,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MutationType::NumericalOffByOne => "numerical_off_by_one",
            MutationType::NumericalClear => "numerical_clear",
            MutationType::LogicalDirect => "logical_direct",
            MutationType::LogicalIndirect => "logical_indirect",
            MutationType::Definition => "definition",
            MutationType::Temporal => "temporal",
            MutationType::NamedEntity => "named_entity",
            MutationType::Categorical => "categorical",
            MutationType::Spatial => "spatial",
        }
    }

    /// Top-level family (numerical and logical merge their subtypes).
    pub fn family(self) -> &'static str {
        match self {
            MutationType::NumericalOffByOne | MutationType::NumericalClear => "numerical",
            MutationType::LogicalDirect | MutationType::LogicalIndirect => "logical",
            other => other.as_str(),
        }
    }
}

impl std::fmt::Display for MutationType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for MutationType {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MutationType::ALL.into_iter().find(|t| t.as_str() == s).ok_or_else(|| SynthError::UnknownType(s.to_string()))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("distribution sums to {0}, expected 1 within 1e-9")]
    NotNormalized(f64),
    #[error("distribution weight for {0} is negative or not finite")]
    BadWeight(MutationType),
    #[error("unknown mutation type `{0}`")]
    UnknownType(String),
    #[error("requested {requested} cases but only {available} distinct facts are available")]
    TooFewFacts { requested: usize, available: usize },
    #[error("operators exhausted: requested {requested:?}, achievable {achieved:?}")]
    Exhausted { requested: BTreeMap<MutationType, usize>, achieved: BTreeMap<MutationType, usize> },
    #[error("corpus error: {0}")]
    Corpus(#[from] crate::corpus::CorpusError),
}

/// Probabilities over mutation types.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaxonomyDistribution {
    pub weights: BTreeMap<MutationType, f64>,
}

impl Default for TaxonomyDistribution {
    /// Observed shares of each inconsistency type in real encyclopedia data.
    fn default() -> Self {
        let weights = [
            (MutationType::NumericalOffByOne, 0.230),
            (MutationType::NumericalClear, 0.317),
            (MutationType::LogicalDirect, 0.148),
            (MutationType::LogicalIndirect, 0.027),
            (MutationType::Definition, 0.106),
            (MutationType::Temporal, 0.079),
            (MutationType::NamedEntity, 0.060),
            (MutationType::Categorical, 0.021),
            (MutationType::Spatial, 0.012),
        ]
        .into_iter()
        .collect();
        TaxonomyDistribution { weights }
    }
}

impl TaxonomyDistribution {
    pub fn single(t: MutationType) -> Self {
        TaxonomyDistribution { weights: [(t, 1.0)].into_iter().collect() }
    }

    pub fn weight(&self, t: MutationType) -> f64 {
        self.weights.get(&t).copied().unwrap_or(0.0)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        for (&t, &w) in &self.weights {
            if !w.is_finite() || w < 0.0 {
                return Err(SynthError::BadWeight(t));
            }
        }
        let sum: f64 = self.weights.values().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(SynthError::NotNormalized(sum));
        }
        Ok(())
    }

    /// Weights in [`MutationType::ALL`] order.
    pub fn ordered_weights(&self) -> Vec<f64> {
        MutationType::ALL.iter().map(|&t| self.weight(t)).collect()
    }
}

/// Draws one mutation type with the configured probabilities.
pub fn sample_mutation_type<R: Rng + ?Sized>(
    distribution: &TaxonomyDistribution,
    rng: &mut R,
) -> Result<MutationType, SynthError> {
    distribution.validate()?;
    let weights = distribution.ordered_weights();
    let dist = WeightedIndex::new(&weights).map_err(|_| SynthError::NotNormalized(weights.iter().sum()))?;
    Ok(MutationType::ALL[dist.sample(rng)])
}

/// Fully determines one mutation: re-applying it to the same claim yields the
/// same text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MutationSpec {
    #[serde(rename = "type")]
    pub mutation_type: MutationType,
    pub target_fact_id: String,
    pub params: BTreeMap<String, String>,
    pub seed: u64,
}

/// What the exact-oracle provider needs to recognise an injected
/// contradiction: the full mutated block text and the claim it refutes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MutationMarker {
    pub mutated_text: String,
    pub original_claim: String,
    pub mutation_type: MutationType,
}

/// Result of applying an operator to a claim.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mutation {
    pub text: String,
    /// First link of a two-block chain (indirect contradictions only).
    pub premise: Option<String>,
    pub params: BTreeMap<String, String>,
}

fn re(pattern: &'static str) -> Regex {
    Regex::new(pattern).expect("static regex")
}

macro_rules! static_re {
    ($name:ident, $pat:expr) => {
        fn $name() -> &'static Regex {
            static RE: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
            RE.get_or_init(|| re($pat))
        }
    };
}

static_re!(number_re, r"\d+(?:[.,]\d+)*");
static_re!(aux_re, r"\b(is|was|are|were|has|had|have|can|could|will|would|did|does|do)\b");
static_re!(definition_re, r"\b(is|was|are|were) (a|an) |\b(refers to|means|is defined as) ");
static_re!(temporal_word_re, r"\b(before|after|earlier|later)\b");
static_re!(spatial_in_re, r"\bin ([A-Z][\p{L}]+)");
static_re!(capitalized_re, r"\b[A-Z][\p{L}]+\b");

const MONTHS: [&str; 12] = [
    "January",
    "February",
    "March",
    "April",
    "May",
    "June",
    "July",
    "August",
    "September",
    "October",
    "November",
    "December",
];

const CATEGORY_SWAPS: &[(&str, &str)] = &[
    ("city", "village"),
    ("town", "village"),
    ("village", "city"),
    ("river", "lake"),
    ("lake", "river"),
    ("novel", "short story"),
    ("film", "television series"),
    ("album", "single"),
    ("species", "genus"),
    ("mammal", "reptile"),
    ("painter", "sculptor"),
    ("sculptor", "painter"),
    ("poet", "novelist"),
    ("novelist", "poet"),
    ("island", "peninsula"),
    ("mountain", "hill"),
    ("language", "dialect"),
    ("university", "college"),
    ("composer", "conductor"),
    ("architect", "engineer"),
];

const DIRECTION_SWAPS: &[(&str, &str)] = &[
    ("north", "south"),
    ("south", "north"),
    ("east", "west"),
    ("west", "east"),
    ("northern", "southern"),
    ("southern", "northern"),
    ("eastern", "western"),
    ("western", "eastern"),
];

const ENTITY_POOL: &[&str] = &[
    "Halvorsen",
    "Okonkwo",
    "Marchetti",
    "Vasquez",
    "Lindqvist",
    "Takahashi",
    "Brennan",
    "Dubois",
    "Kowalski",
    "Ferreira",
    "Novak",
    "Castellanos",
];

const PLACE_POOL: &[&str] = &["Lisbon", "Tbilisi", "Quito", "Hobart", "Tromsø", "Mombasa", "Valparaíso", "Sapporo"];

fn is_month_or_day(word: &str) -> bool {
    MONTHS.contains(&word)
        || ["Monday", "Tuesday", "Wednesday", "Thursday", "Friday", "Saturday", "Sunday"].contains(&word)
}

fn replace_range(text: &str, start: usize, end: usize, with: &str) -> String {
    format!("{}{}{}", &text[..start], with, &text[end..])
}

fn first_integer(claim: &str) -> Option<(usize, usize, u64)> {
    number_re()
        .find_iter(claim)
        .find(|m| m.as_str().chars().all(|c| c.is_ascii_digit()) && m.as_str().len() <= 15)
        .and_then(|m| m.as_str().parse().ok().map(|v| (m.start(), m.end(), v)))
}

fn is_year(v: u64) -> bool {
    (1000..=2100).contains(&v)
}

fn word_boundary_find(text: &str, word: &str) -> Option<(usize, usize)> {
    let is_word = |c: Option<char>| c.is_some_and(|c| c.is_alphanumeric() || c == '_');
    text.match_indices(word)
        .map(|(s, m)| (s, s + m.len()))
        .find(|&(s, e)| !is_word(text[..s].chars().next_back()) && !is_word(text[e..].chars().next()))
}

fn param_i64(params: &BTreeMap<String, String>, name: &str) -> Option<i64> {
    params.get(name).and_then(|v| v.parse().ok())
}

fn subject_phrase(claim: &str) -> String {
    let words: Vec<&str> = claim.split_whitespace().collect();
    let mut subject: Vec<&str> =
        words.iter().take_while(|w| w.chars().next().is_some_and(char::is_uppercase)).copied().collect();
    if subject.is_empty() {
        subject = words.iter().take(3).copied().collect();
    }
    subject.join(" ").trim_end_matches([',', '.', ';']).to_string()
}

fn claim_body(claim: &str) -> String {
    claim.trim().trim_end_matches(['.', '!', '?']).to_string()
}

/// Applies `mutation_type` to `claim`. Parameters missing from `params` are
/// drawn from `rng` and recorded in the returned [`Mutation`]. `None` when the
/// operator does not apply to this claim.
pub fn apply_mutation<R: Rng + ?Sized>(
    claim: &str,
    mutation_type: MutationType,
    params: &BTreeMap<String, String>,
    rng: &mut R,
) -> Option<Mutation> {
    let mut used = params.clone();
    let text = match mutation_type {
        MutationType::NumericalOffByOne => {
            let (s, e, v) = first_integer(claim)?;
            let mut delta = param_i64(params, "delta").unwrap_or(if rng.gen_bool(0.5) { 1 } else { -1 });
            if delta.abs() != 1 {
                return None;
            }
            if v == 0 && delta < 0 {
                delta = 1;
            }
            used.insert("delta".into(), delta.to_string());
            let new = (v as i64 + delta).to_string();
            replace_range(claim, s, e, &new)
        }
        MutationType::NumericalClear => {
            let (s, e, v) = first_integer(claim)?;
            let mut delta = match param_i64(params, "delta") {
                Some(d) => d,
                None => {
                    let max = if is_year(v) { 40 } else { (v / 2).max(3) as i64 };
                    let mag = rng.gen_range(2..=max.max(2));
                    if rng.gen_bool(0.5) {
                        mag
                    } else {
                        -mag
                    }
                }
            };
            if delta.abs() < 2 {
                return None;
            }
            if (v as i64) + delta < 0 {
                delta = delta.abs();
            }
            used.insert("delta".into(), delta.to_string());
            replace_range(claim, s, e, &((v as i64) + delta).to_string())
        }
        MutationType::LogicalDirect => match aux_re().find(claim) {
            Some(m) => {
                let rest = &claim[m.end()..];
                if let Some(stripped) = rest.strip_prefix(" not") {
                    used.insert("operation".into(), "remove_negation".into());
                    format!("{}{}", &claim[..m.end()], stripped)
                } else {
                    used.insert("operation".into(), "insert_negation".into());
                    format!("{} not{}", &claim[..m.end()], rest)
                }
            }
            None => {
                used.insert("operation".into(), "prefix_negation".into());
                format!("It is not the case that {}.", claim_body(claim))
            }
        },
        MutationType::LogicalIndirect => {
            let register =
                params.get("register").cloned().unwrap_or_else(|| format!("R-{:06X}", rng.gen_range(0..0x100_0000u32)));
            let subject = subject_phrase(claim);
            used.insert("register".into(), register.clone());
            let body = claim_body(claim);
            let premise = format!("If {body}, then the register {register} lists {subject}.");
            let text =
                format!("The register {register} does not list {subject}, which bears on the statement that {body}.");
            return Some(Mutation { text, premise: Some(premise), params: used });
        }
        MutationType::Definition => {
            let m = definition_re().find(claim)?;
            let head = &claim[..m.start()];
            let tail = claim[m.end()..].trim_end_matches(['.', '!', '?']);
            let matched = m.as_str().trim();
            let verb = matched.split_whitespace().next().unwrap_or("is");
            let article = if matched.ends_with(" a") {
                "a "
            } else if matched.ends_with(" an") {
                "an "
            } else {
                ""
            };
            used.insert("operation".into(), "redefine".into());
            match verb {
                "refers" | "means" => format!("{head}does not refer to {tail}, but to a different concept."),
                "is" if matched.starts_with("is defined") => {
                    format!("{head}is not defined as {tail}, but as a different concept.")
                }
                _ => format!("{head}{verb} defined as something other than {article}{tail}."),
            }
        }
        MutationType::Temporal => {
            if let Some((i, month)) = MONTHS.iter().enumerate().find(|(_, m)| word_boundary_find(claim, m).is_some()) {
                let shift = param_i64(params, "month_shift").unwrap_or_else(|| rng.gen_range(1..12));
                if shift.rem_euclid(12) == 0 {
                    return None;
                }
                used.insert("month_shift".into(), shift.to_string());
                let (s, e) = word_boundary_find(claim, month)?;
                let replacement = MONTHS[(i as i64 + shift).rem_euclid(12) as usize];
                replace_range(claim, s, e, replacement)
            } else {
                let m = temporal_word_re().find(claim)?;
                let swapped = match m.as_str() {
                    "before" => "after",
                    "after" => "before",
                    "earlier" => "later",
                    _ => "earlier",
                };
                used.insert("operation".into(), format!("{}->{}", m.as_str(), swapped));
                replace_range(claim, m.start(), m.end(), swapped)
            }
        }
        MutationType::NamedEntity => {
            let target = match params.get("target") {
                Some(t) => t.clone(),
                None => capitalized_re()
                    .find_iter(claim)
                    .filter(|m| m.start() > 0 && !is_month_or_day(m.as_str()))
                    .last()?
                    .as_str()
                    .to_string(),
            };
            let (s, e) = word_boundary_find(claim, &target)?;
            if s == 0 {
                return None;
            }
            let replacement = params.get("replacement").cloned().unwrap_or_else(|| {
                let pool: Vec<&&str> = ENTITY_POOL.iter().filter(|p| **p != target && !claim.contains(**p)).collect();
                pool[rng.gen_range(0..pool.len())].to_string()
            });
            if replacement == target {
                return None;
            }
            used.insert("target".into(), target);
            used.insert("replacement".into(), replacement.clone());
            replace_range(claim, s, e, &replacement)
        }
        MutationType::Categorical => {
            let (from, to, s, e) = CATEGORY_SWAPS
                .iter()
                .filter_map(|(from, to)| word_boundary_find(claim, from).map(|(s, e)| (*from, *to, s, e)))
                .min_by_key(|x| x.2)?;
            used.insert("from".into(), from.into());
            used.insert("to".into(), to.into());
            replace_range(claim, s, e, to)
        }
        MutationType::Spatial => {
            let direction = DIRECTION_SWAPS
                .iter()
                .filter_map(|(from, to)| word_boundary_find(claim, from).map(|(s, e)| (*from, *to, s, e)))
                .min_by_key(|x| x.2);
            if let Some((from, to, s, e)) = direction {
                used.insert("from".into(), from.into());
                used.insert("to".into(), to.into());
                replace_range(claim, s, e, to)
            } else {
                let caps = spatial_in_re().captures_iter(claim).find(|c| !is_month_or_day(&c[1]))?;
                let place = caps.get(1)?;
                let replacement = params.get("replacement").cloned().unwrap_or_else(|| {
                    let pool: Vec<&&str> = PLACE_POOL.iter().filter(|p| **p != place.as_str()).collect();
                    pool[rng.gen_range(0..pool.len())].to_string()
                });
                used.insert("from".into(), place.as_str().into());
                used.insert("replacement".into(), replacement.clone());
                replace_range(claim, place.start(), place.end(), &replacement)
            }
        }
    };
    if collapse_ws(&text) == collapse_ws(claim) {
        return None;
    }
    Some(Mutation { text, premise: None, params: used })
}

/// True when the operator can be applied to `claim`.
pub fn is_applicable(claim: &str, t: MutationType) -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    apply_mutation(claim, t, &BTreeMap::new(), &mut rng).is_some()
}

/// One injected contradiction with its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectedCase {
    pub case_id: String,
    pub original: AtomicFact,
    pub mutated_block: Block,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub premise_block: Option<Block>,
    pub gold_label: GoldLabel,
    pub mutation: MutationSpec,
    pub marker: MutationMarker,
    /// Always `rule_based_operator`: the case comes from a synthetic operator.
    pub provenance: String,
}

impl InjectedCase {
    pub fn injected_block_ids(&self) -> Vec<&str> {
        let mut ids = vec![self.mutated_block.block_id.as_str()];
        if let Some(p) = &self.premise_block {
            ids.push(p.block_id.as_str());
        }
        ids
    }

    pub fn to_labeled(&self, split: Split) -> LabeledFact {
        LabeledFact {
            fact: self.original.clone(),
            gold_label: GoldLabel::Inconsistent,
            evidence_block_ids: self.injected_block_ids().into_iter().map(String::from).collect(),
            inconsistency_type: Some(self.mutation.mutation_type),
            split,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InjectOptions {
    /// 1.0 keeps the mutated block a bare restatement. Lower values pad it
    /// with neutral filler, lowering lexical overlap with the fact.
    pub lexical_overlap: f64,
}

impl Default for InjectOptions {
    fn default() -> Self {
        InjectOptions { lexical_overlap: 1.0 }
    }
}

const FILLER: &[&str] = &[
    "This record was compiled from several archival listings.",
    "Further details appear in regional catalogues.",
    "The entry has been revised on multiple occasions.",
    "Secondary sources summarise the matter differently in places.",
];

fn pad(text: &str, overlap: f64) -> String {
    let overlap = overlap.clamp(0.05, 1.0);
    if overlap >= 1.0 {
        return text.to_string();
    }
    let words = text.split_whitespace().count() as f64;
    let wanted = (words / overlap - words).ceil() as usize;
    let mut out = text.to_string();
    let mut added = 0;
    let mut i = 0;
    while added < wanted {
        let s = FILLER[i % FILLER.len()];
        out.push(' ');
        out.push_str(s);
        added += s.split_whitespace().count();
        i += 1;
    }
    out
}

fn synthetic_block(title: String, text: String, key: &[&str]) -> Block {
    Block {
        block_id: stable_id(key),
        char_count: char_len(&text),
        doc_title: title,
        section_path: Vec::new(),
        kind: BlockKind::Passage,
        text,
        category: None,
    }
}

fn unique_title(snapshot: &CorpusSnapshot, base: String) -> String {
    let mut title = base.clone();
    let mut n = 1;
    while snapshot.title_index().contains_key(&title) {
        n += 1;
        title = format!("{base} ({n})");
    }
    title
}

/// Injects `n` contradictions into a copy of `snapshot`.
///
/// Type counts are the largest-remainder split of `n` under `distribution`.
/// Types with the fewest applicable facts are filled first; within a type,
/// facts are tried in a seed-determined order and skipped when the operator
/// does not apply.
pub fn inject(
    snapshot: &CorpusSnapshot,
    facts: &[AtomicFact],
    distribution: &TaxonomyDistribution,
    n: usize,
    seed: u64,
    options: InjectOptions,
) -> Result<(CorpusSnapshot, Vec<InjectedCase>), SynthError> {
    distribution.validate()?;
    let mut seen_claims = HashSet::new();
    let candidates: Vec<&AtomicFact> =
        facts.iter().filter(|f| seen_claims.insert(collapse_ws(&f.claim_text).to_lowercase())).collect();
    if n > candidates.len() {
        return Err(SynthError::TooFewFacts { requested: n, available: candidates.len() });
    }

    let shares = largest_remainder(&distribution.ordered_weights(), n);
    let requested: BTreeMap<MutationType, usize> =
        MutationType::ALL.iter().copied().zip(shares.iter().copied()).filter(|(_, c)| *c > 0).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.shuffle(&mut rng);

    let applicable: BTreeMap<MutationType, Vec<usize>> = requested
        .keys()
        .map(|&t| (t, order.iter().copied().filter(|&i| is_applicable(&candidates[i].claim_text, t)).collect()))
        .collect();
    let mut fill_order: Vec<MutationType> = requested.keys().copied().collect();
    fill_order.sort_by_key(|t| (applicable[t].len(), MutationType::ALL.iter().position(|x| x == t)));

    let mut used = vec![false; candidates.len()];
    let mut achieved: BTreeMap<MutationType, usize> = BTreeMap::new();
    let mut planned: Vec<(MutationType, usize, Mutation, u64)> = Vec::new();
    for t in fill_order {
        let want = requested[&t];
        for &i in &applicable[&t] {
            if achieved.get(&t).copied().unwrap_or(0) >= want {
                break;
            }
            if used[i] {
                continue;
            }
            let case_seed = rng.gen::<u64>();
            let mut case_rng = ChaCha8Rng::seed_from_u64(case_seed);
            if let Some(m) = apply_mutation(&candidates[i].claim_text, t, &BTreeMap::new(), &mut case_rng) {
                used[i] = true;
                *achieved.entry(t).or_default() += 1;
                planned.push((t, i, m, case_seed));
            }
        }
    }
    if achieved != requested {
        return Err(SynthError::Exhausted { requested, achieved });
    }

    // Stable case numbering: by fact order in the shuffled candidate list.
    let position: BTreeMap<usize, usize> = order.iter().enumerate().map(|(p, &i)| (i, p)).collect();
    planned.sort_by_key(|(_, i, _, _)| position[i]);

    let mut cases = Vec::with_capacity(n);
    let mut extra_blocks = Vec::new();
    let mut working = snapshot.clone();
    for (case_no, (t, i, m, case_seed)) in planned.into_iter().enumerate() {
        let fact = candidates[i];
        let case_id = stable_id(&["case", &seed.to_string(), &case_no.to_string(), &fact.fact_id]);
        let title = unique_title(&working, format!("Synthetic record {:04}", case_no + 1));
        let text = pad(&m.text, options.lexical_overlap);
        let mutated_block = synthetic_block(title.clone(), text.clone(), &[&case_id, "mutated"]);
        let premise_block = m.premise.as_ref().map(|p| {
            let ptitle = unique_title(&working, format!("{title} premise"));
            synthetic_block(ptitle, p.clone(), &[&case_id, "premise"])
        });
        let mut new_blocks = vec![mutated_block.clone()];
        new_blocks.extend(premise_block.clone());
        working = working.with_blocks(new_blocks.clone())?;
        extra_blocks.extend(new_blocks);
        cases.push(InjectedCase {
            case_id,
            original: fact.clone(),
            marker: MutationMarker { mutated_text: text, original_claim: fact.claim_text.clone(), mutation_type: t },
            mutated_block,
            premise_block,
            gold_label: GoldLabel::Inconsistent,
            mutation: MutationSpec {
                mutation_type: t,
                target_fact_id: fact.fact_id.clone(),
                params: m.params,
                seed: case_seed,
            },
            provenance: "rule_based_operator".into(),
        });
    }
    let _ = extra_blocks;
    Ok((working, cases))
}

/// Injected cases plus untouched facts labeled consistent, split evenly
/// between validation and test.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub snapshot: CorpusSnapshot,
    pub cases: Vec<InjectedCase>,
    pub dataset: Vec<LabeledFact>,
}

impl Benchmark {
    pub fn markers(&self) -> Vec<MutationMarker> {
        self.cases.iter().map(|c| c.marker.clone()).collect()
    }
}

pub fn build_benchmark(
    snapshot: &CorpusSnapshot,
    facts: &[AtomicFact],
    distribution: &TaxonomyDistribution,
    n_inconsistent: usize,
    n_consistent: usize,
    seed: u64,
    options: InjectOptions,
) -> Result<Benchmark, SynthError> {
    let (mutated, cases) = inject(snapshot, facts, distribution, n_inconsistent, seed, options)?;
    let touched: HashSet<String> = cases.iter().map(|c| collapse_ws(&c.original.claim_text).to_lowercase()).collect();
    let mut seen = touched.clone();
    let mut clean: Vec<&AtomicFact> =
        facts.iter().filter(|f| seen.insert(collapse_ws(&f.claim_text).to_lowercase())).collect();
    if clean.len() < n_consistent {
        return Err(SynthError::TooFewFacts { requested: n_consistent, available: clean.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    clean.shuffle(&mut rng);
    clean.truncate(n_consistent);

    let mut dataset: Vec<LabeledFact> = cases.iter().map(|c| c.to_labeled(Split::Validation)).collect();
    dataset.extend(clean.into_iter().map(|f| LabeledFact {
        fact: f.clone(),
        gold_label: GoldLabel::Consistent,
        evidence_block_ids: Vec::new(),
        inconsistency_type: None,
        split: Split::Validation,
    }));
    dataset.sort_by(|a, b| a.fact.fact_id.cmp(&b.fact.fact_id));
    dataset.shuffle(&mut rng);
    let half = dataset.len() / 2;
    for (i, item) in dataset.iter_mut().enumerate() {
        item.split = if i < half { Split::Validation } else { Split::Test };
    }
    dataset.sort_by(|a, b| a.fact.fact_id.cmp(&b.fact.fact_id));
    Ok(Benchmark { snapshot: mutated, cases, dataset })
}

/// Content tokens shared by two texts.
pub fn shared_tokens(a: &str, b: &str) -> usize {
    let ta: HashSet<String> = tokenize(a).into_iter().collect();
    tokenize(b).into_iter().filter(|t| ta.contains(t)).collect::<HashSet<_>>().len()
}

const FIRST_NAMES: &[&str] = &[
    "Adela",
    "Bertram",
    "Casimir",
    "Delphine",
    "Emeric",
    "Fenella",
    "Gustav",
    "Hilde",
    "Ignatius",
    "Jorunn",
    "Konstantin",
    "Leocadia",
    "Marius",
    "Nerina",
    "Osric",
    "Perpetua",
    "Quirin",
    "Rosalind",
    "Sigmund",
    "Theodora",
    "Ulrich",
    "Valeska",
    "Wendelin",
    "Xenia",
];
const SURNAMES: &[&str] = &[
    "Abernathy",
    "Brightwater",
    "Carrow",
    "Delacourt",
    "Eastwick",
    "Falkenrath",
    "Grimsby",
    "Holloway",
    "Ingersoll",
    "Jessup",
    "Kettering",
    "Lowenthal",
    "Marchbank",
    "Northcote",
    "Oakhurst",
    "Pemberton",
    "Quenneville",
    "Ravenscroft",
    "Stanhope",
    "Thistlewood",
];
const TOWN_STEMS: &[&str] = &[
    "Ash", "Bram", "Cold", "Dun", "Elm", "Fair", "Glen", "Hart", "Ivy", "Kings", "Lang", "Mill", "North", "Oak", "Pen",
    "Red", "Stone", "Thorn", "Wick", "York",
];
const TOWN_SUFFIXES: &[&str] = &["ford", "bury", "wick", "haven", "mere", "stead", "holm", "dale", "port", "ton"];
const REGIONS: &[&str] = &["Varnland", "Ostmark", "Lorrimor", "Caldera", "Westerholt", "Brisania"];
const PROFESSIONS: &[&str] = &["painter", "poet", "composer", "architect", "sculptor", "novelist"];
const DIRECTIONS: &[&str] = &["north", "south", "east", "west"];
const WORK_WORDS: &[&str] =
    &["Silent", "Harbour", "Winter", "Lantern", "Garden", "Echo", "Meridian", "Ember", "Tide", "Orchard"];

/// Deterministic toy encyclopedia for tests and demos: person, town and work
/// articles whose sentences exercise every mutation operator.
pub fn fixture_corpus(n_docs: usize, seed: u64) -> Vec<BlockRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    let mut used_titles = HashSet::new();
    let mut fresh = |rng: &mut ChaCha8Rng, make: &dyn Fn(&mut ChaCha8Rng) -> String| loop {
        let t = make(rng);
        if used_titles.insert(t.clone()) {
            return t;
        }
    };
    let categories = ["History", "Geography", "Arts"];
    for d in 0..n_docs {
        let month = MONTHS[rng.gen_range(0..12)];
        let region = REGIONS[rng.gen_range(0..REGIONS.len())];
        let block = |title: &str, section: &str, text: String, category: &str| BlockRecord {
            block_id: None,
            doc_title: title.to_string(),
            section_path: vec![section.to_string()],
            kind: BlockKind::Passage,
            text,
            category: Some(category.to_string()),
        };
        match d % 3 {
            0 => {
                let name = fresh(&mut rng, &|r| {
                    format!(
                        "{} {}",
                        FIRST_NAMES[r.gen_range(0..FIRST_NAMES.len())],
                        SURNAMES[r.gen_range(0..SURNAMES.len())]
                    )
                });
                let born = rng.gen_range(1650..1900);
                let town = format!(
                    "{}{}",
                    TOWN_STEMS[rng.gen_range(0..TOWN_STEMS.len())],
                    TOWN_SUFFIXES[rng.gen_range(0..TOWN_SUFFIXES.len())]
                );
                let profession = PROFESSIONS[rng.gen_range(0..PROFESSIONS.len())];
                let books = rng.gen_range(3..40);
                let died = born + rng.gen_range(35..90);
                let day = rng.gen_range(1..29);
                records.push(block(
                    &name,
                    "Early life",
                    format!(
                        "{name} was born on {day} {month} {born} in {town}. {name} was a {profession} who spent most of a long career working in {region}."
                    ),
                    categories[0],
                ));
                records.push(block(
                    &name,
                    "Career",
                    format!(
                        "{name} completed {books} major works before {died}. The family of {name} moved to the {} of {region} in {}.",
                        DIRECTIONS[rng.gen_range(0..4)],
                        born + rng.gen_range(5..30)
                    ),
                    categories[0],
                ));
            }
            1 => {
                let town = fresh(&mut rng, &|r| {
                    format!(
                        "{}{}",
                        TOWN_STEMS[r.gen_range(0..TOWN_STEMS.len())],
                        TOWN_SUFFIXES[r.gen_range(0..TOWN_SUFFIXES.len())]
                    )
                });
                let kind = ["town", "city", "village"][rng.gen_range(0..3)];
                let population = rng.gen_range(800..250_000);
                let year = rng.gen_range(1850..2020);
                let founded = rng.gen_range(900..1700);
                records.push(block(
                    &town,
                    "Overview",
                    format!(
                        "{town} is a {kind} located in the {} of {region}. {town} had a population of {population} people in {year}.",
                        DIRECTIONS[rng.gen_range(0..4)]
                    ),
                    categories[1],
                ));
                records.push(block(
                    &town,
                    "History",
                    format!(
                        "{town} was founded in {founded} by settlers from {region}. The market charter of {town} was granted in {month} {}.",
                        founded + rng.gen_range(10..200)
                    ),
                    categories[1],
                ));
            }
            _ => {
                let title = fresh(&mut rng, &|r| {
                    format!(
                        "The {} {}",
                        WORK_WORDS[r.gen_range(0..WORK_WORDS.len())],
                        WORK_WORDS[r.gen_range(0..WORK_WORDS.len())]
                    )
                });
                let author = format!(
                    "{} {}",
                    FIRST_NAMES[rng.gen_range(0..FIRST_NAMES.len())],
                    SURNAMES[rng.gen_range(0..SURNAMES.len())]
                );
                let year = rng.gen_range(1800..2000);
                let chapters = rng.gen_range(8..60);
                records.push(block(
                    &title,
                    "Publication",
                    format!(
                        "{title} is a novel written by {author} and first printed in {year}. {title} contains {chapters} chapters arranged in four parts."
                    ),
                    categories[2],
                ));
                records.push(block(
                    &title,
                    "Adaptations",
                    format!(
                        "{title} was adapted for the stage after {} in {region}. A film version of {title} premiered in {month} {}.",
                        year + rng.gen_range(1..30),
                        year + rng.gen_range(30..90)
                    ),
                    categories[2],
                ));
            }
        }
    }
    records
}

/// Splits text into sentences on `.`, `!` or `?` followed by whitespace.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut start = 0;
    let bytes = text.as_bytes();
    for (i, c) in text.char_indices() {
        if matches!(c, '.' | '!' | '?') {
            let next = i + c.len_utf8();
            if next >= bytes.len() || bytes[next].is_ascii_whitespace() {
                let s = text[start..next].trim();
                if !s.is_empty() {
                    out.push(s.to_string());
                }
                start = next;
            }
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        out.push(tail.to_string());
    }
    out
}
