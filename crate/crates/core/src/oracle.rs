//! Deterministic provider with ground-truth NLI for synthetic corpora.
//!
//! A passage SUPPORTS a claim when it equals the claim modulo whitespace, and
//! REFUTES it when it is the text of a registered mutated block whose original
//! claim is that claim. Everything else is NOT_ENOUGH_INFO. The remaining
//! templates get simple rule-based answers built on the same judgment.

use std::collections::{HashMap, HashSet};

use crate::detectors::NliLabel;
use crate::llm::{DecodingConfig, LlmError, LlmProvider, Prompt, PromptVars};
use crate::synthetic::{split_sentences, MutationMarker};
use crate::util::collapse_ws;

#[derive(Debug, Clone, Default)]
pub struct OracleProvider {
    /// Normalized mutated text to normalized original claims.
    refutations: HashMap<String, HashSet<String>>,
}

fn norm(text: &str) -> String {
    collapse_ws(text)
}

/// Strips the `Title: ...` header that documents carry in prompts.
fn body(passage: &str) -> &str {
    match passage.strip_prefix("Title: ") {
        Some(rest) => rest.split_once('\n').map(|(_, b)| b).unwrap_or(""),
        None => passage,
    }
}

impl OracleProvider {
    pub fn new(markers: &[MutationMarker]) -> Self {
        let mut p = OracleProvider::default();
        for m in markers {
            p.register(m);
        }
        p
    }

    pub fn register(&mut self, marker: &MutationMarker) {
        self.refutations.entry(norm(&marker.mutated_text)).or_default().insert(norm(&marker.original_claim));
    }

    pub fn judge(&self, claim: &str, passage: &str) -> NliLabel {
        let c = norm(claim);
        let p = norm(body(passage));
        if p == c {
            NliLabel::Supports
        } else if self.refutations.get(&p).is_some_and(|claims| claims.contains(&c)) {
            NliLabel::Refutes
        } else {
            NliLabel::NotEnoughInfo
        }
    }

    fn refuting<'a>(&self, claim: &str, docs: &'a [String]) -> Vec<&'a String> {
        docs.iter().filter(|d| self.judge(claim, d) == NliLabel::Refutes).collect()
    }

    fn answer(&self, template: &str, vars: &PromptVars) -> Result<String, LlmError> {
        let s = |name: &str| vars.scalar(name).unwrap_or_default();
        let list = |name: &str| vars.get_list(name).unwrap_or_default();
        let claim = s("claim_text");
        Ok(match template {
            "nli" => format!("<label>{}</label>", self.judge(claim, s("passage")).as_str()),
            "verifier" => {
                let score = if self.refuting(claim, list("documents")).is_empty() { 0.0 } else { 1.0 };
                format!("<inconsistency_score>{score:.1}</inconsistency_score>")
            }
            "weak_filter" => {
                let keep = !self.refuting(claim, list("documents")).is_empty();
                format!("<decision>{}</decision>", if keep { "yes" } else { "no" })
            }
            "controller" => {
                if s("action_history").trim().is_empty() {
                    format!("Look for passages about the claim.\nsearch_wikipedia_outside_claim_article({claim})")
                } else {
                    "The search is complete.\nreport_inconsistency(oracle review complete)".to_string()
                }
            }
            "fact_extraction" => format!("<facts>\n{}\n</facts>", split_sentences(s("text")).join("\n")),
            "faithfulness" => {
                let ok = norm(s("context_text")).contains(&norm(claim));
                format!("<faithful>{}</faithful>", if ok { "yes" } else { "no" })
            }
            "explain" => format!("No further background is available for {}.", s("topic")),
            "clarify" => format!("No similarly named entities were found for {}.", s("entity_name")),
            "report_inconsistent" | "report_consistent" => {
                let refuting = self.refuting(claim, list("documents"));
                let text = match (template, refuting.is_empty()) {
                    ("report_inconsistent", false) => {
                        format!("{} passage(s) state the opposite of the claim.", refuting.len())
                    }
                    ("report_inconsistent", true) => "No passage contradicts the claim.".to_string(),
                    (_, false) => "The claim matches its source paragraph.".to_string(),
                    _ => "No passage contradicts the claim, which matches its source paragraph.".to_string(),
                };
                format!("<argument>{text}</argument>")
            }
            "rerank" => {
                let n = list("passages").len();
                let order: Vec<String> = (1..=n).map(|i| format!("[{i}]")).collect();
                format!("<ranking>{}</ranking>", order.join(" > "))
            }
            other => return Err(LlmError::UnknownTemplate(other.to_string())),
        })
    }
}

impl LlmProvider for OracleProvider {
    fn id(&self) -> &str {
        "oracle"
    }

    fn complete(&self, prompt: &Prompt, _decoding: &DecodingConfig) -> Result<String, LlmError> {
        self.answer(&prompt.template_name, &prompt.vars)
    }
}
