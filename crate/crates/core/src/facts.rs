//! Atomic fact extraction from blocks, plus an automated faithfulness screen.
//!
//! Faithfulness is judged by a model here; it stands in for the human check
//! normally done before a dataset is built, and is labeled as such in output.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Block;
use crate::llm::{extract_tagged, Llm, LlmError, PromptVars};
use crate::util::stable_id;

/// A short self-contained claim tied to the block it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomicFact {
    pub fact_id: String,
    pub claim_text: String,
    pub source_block_id: String,
    /// Source document title with section path.
    pub context_title: String,
    pub context_text: String,
    /// Source document title without section path; searches exclude it.
    #[serde(default)]
    pub source_doc_title: String,
    #[serde(default)]
    pub faithful: Option<bool>,
}

impl AtomicFact {
    /// Title of the article the fact came from. Older fact files lack
    /// `source_doc_title`; the section-free prefix of `context_title` is used then.
    pub fn source_title(&self) -> &str {
        if !self.source_doc_title.is_empty() {
            return &self.source_doc_title;
        }
        self.context_title.split(" > ").next().unwrap_or(&self.context_title)
    }

    /// Fact for line `ordinal` of `block`'s extraction output.
    pub fn from_block(block: &Block, ordinal: usize, claim_text: &str) -> Self {
        AtomicFact {
            fact_id: fact_id_for(&block.block_id, ordinal),
            claim_text: claim_text.trim().to_string(),
            source_block_id: block.block_id.clone(),
            context_title: block.full_title(),
            context_text: block.text.clone(),
            source_doc_title: block.doc_title.clone(),
            faithful: None,
        }
    }
}

pub fn fact_id_for(source_block_id: &str, ordinal: usize) -> String {
    stable_id(&[source_block_id, &ordinal.to_string()])
}

#[derive(Debug, thiserror::Error)]
pub enum FactError {
    #[error("block {0} has empty text")]
    EmptyBlock(String),
    #[error("fact {0} has no context")]
    EmptyContext(String),
    #[error("extraction for block {block_id}: {source}")]
    Extraction {
        block_id: String,
        #[source]
        source: LlmError,
    },
    #[error("faithfulness judgment for fact {fact_id} unparseable: {raw:?}")]
    Judgment { fact_id: String, raw: String },
    #[error("faithfulness check for fact {fact_id}: {source}")]
    Provider {
        fact_id: String,
        #[source]
        source: LlmError,
    },
}

/// One fact per non-empty line of the response's `<facts>` region, in order.
pub fn extract_facts(block: &Block, llm: &Llm) -> Result<Vec<AtomicFact>, FactError> {
    if block.text.trim().is_empty() {
        return Err(FactError::EmptyBlock(block.block_id.clone()));
    }
    let vars = PromptVars::new().set("full_title", block.full_title()).set("text", block.text.clone());
    let wrap = |source| FactError::Extraction { block_id: block.block_id.clone(), source };
    let response = llm.ask("fact_extraction", vars).map_err(wrap)?;
    let region = extract_tagged(&response, "facts").map_err(wrap)?;
    let facts: Vec<AtomicFact> = region
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(i, line)| AtomicFact::from_block(block, i, line))
        .collect();
    if facts.is_empty() {
        log::warn!("block {}: extraction produced no facts", block.block_id);
    }
    Ok(facts)
}

/// Extracts facts from many blocks in parallel; output is ordered by block id.
/// Per-block failures are returned alongside the facts that succeeded.
pub fn extract_all(blocks: &[Block], llm: &Llm) -> (Vec<AtomicFact>, Vec<FactError>) {
    let mut results: Vec<(String, Result<Vec<AtomicFact>, FactError>)> =
        blocks.par_iter().map(|b| (b.block_id.clone(), extract_facts(b, llm))).collect();
    results.sort_by(|a, b| a.0.cmp(&b.0));
    let mut facts = Vec::new();
    let mut errors = Vec::new();
    for (_, r) in results {
        match r {
            Ok(f) => facts.extend(f),
            Err(e) => errors.push(e),
        }
    }
    (facts, errors)
}

fn parse_yes_no(text: &str) -> Option<bool> {
    let t = text.trim().trim_matches(|c: char| !c.is_alphanumeric()).to_ascii_lowercase();
    match t.as_str() {
        "yes" | "true" => Some(true),
        "no" | "false" => Some(false),
        _ => None,
    }
}

/// Asks the provider whether the claim is entailed by its source block and
/// records the answer on the fact. On error the fact is left unset.
pub fn faithfulness_check(fact: &mut AtomicFact, llm: &Llm) -> Result<bool, FactError> {
    if fact.context_text.trim().is_empty() {
        return Err(FactError::EmptyContext(fact.fact_id.clone()));
    }
    let vars = PromptVars::new()
        .set("claim_text", fact.claim_text.clone())
        .set("context_title", fact.context_title.clone())
        .set("context_text", fact.context_text.clone());
    let response = llm
        .ask("faithfulness", vars)
        .map_err(|source| FactError::Provider { fact_id: fact.fact_id.clone(), source })?;
    let verdict = extract_tagged(&response, "faithful")
        .ok()
        .and_then(|t| parse_yes_no(&t))
        .ok_or_else(|| FactError::Judgment { fact_id: fact.fact_id.clone(), raw: response.clone() })?;
    fact.faithful = Some(verdict);
    Ok(verdict)
}

/// Drops facts whose faithfulness check ran and failed.
pub fn retain_faithful(facts: Vec<AtomicFact>) -> Vec<AtomicFact> {
    facts.into_iter().filter(|f| f.faithful != Some(false)).collect()
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::corpus::BlockKind;
    use crate::llm::ScriptedProvider;

    fn block() -> Block {
        Block {
            block_id: "blk".into(),
            doc_title: "Person A".into(),
            section_path: vec!["Life".into()],
            kind: BlockKind::Passage,
            text: "A was born in 1900. A died in 1970.".into(),
            category: None,
            char_count: 35,
        }
    }

    fn llm(template: &str, responses: &[&str]) -> Llm {
        Llm::new(Arc::new(ScriptedProvider::sequence(template, responses)))
    }

    #[test]
    fn parses_facts_in_order_with_context() {
        let facts = extract_facts(
            &block(),
            &llm("fact_extraction", &["<facts>\nA was born in 1900.\nA died in 1970.\n</facts>"]),
        )
        .unwrap();
        assert_eq!(facts.len(), 2);
        assert_eq!(facts[0].claim_text, "A was born in 1900.");
        assert_eq!(facts[1].claim_text, "A died in 1970.");
        assert_eq!(facts[0].context_title, "Person A > Life");
        assert_eq!(facts[0].context_text, block().text);
        assert_eq!(facts[0].source_doc_title, "Person A");
        assert_eq!(facts[0].fact_id, fact_id_for("blk", 0));
        assert_ne!(facts[0].fact_id, facts[1].fact_id);
    }

    #[test]
    fn process_region_is_ignored() {
        let r = "<fact_extraction_process>\nthinking\n</fact_extraction_process>\n\n<facts>\nOne.\n</facts>";
        let facts = extract_facts(&block(), &llm("fact_extraction", &[r])).unwrap();
        assert_eq!(facts.len(), 1);
    }

    #[test]
    fn empty_region_is_empty_list() {
        let facts = extract_facts(&block(), &llm("fact_extraction", &["<facts></facts>"])).unwrap();
        assert!(facts.is_empty());
    }

    #[test]
    fn missing_region_is_error() {
        assert!(matches!(
            extract_facts(&block(), &llm("fact_extraction", &["no facts here"])),
            Err(FactError::Extraction { .. })
        ));
    }

    #[test]
    fn faithfulness_sets_flag() {
        let mut fact = AtomicFact::from_block(&block(), 0, "A was born in 1900.");
        assert!(faithfulness_check(&mut fact, &llm("faithfulness", &["<faithful>yes</faithful>"])).unwrap());
        assert_eq!(fact.faithful, Some(true));

        let mut wrong = AtomicFact::from_block(&block(), 1, "A was born in 1800.");
        assert!(!faithfulness_check(&mut wrong, &llm("faithfulness", &["<faithful>no</faithful>"])).unwrap());
        assert_eq!(retain_faithful(vec![fact, wrong]).len(), 1);
    }

    #[test]
    fn faithfulness_errors() {
        let mut fact = AtomicFact::from_block(&block(), 0, "x");
        fact.context_text.clear();
        assert!(matches!(
            faithfulness_check(&mut fact, &llm("faithfulness", &["<faithful>yes</faithful>"])),
            Err(FactError::EmptyContext(_))
        ));
        let mut fact = AtomicFact::from_block(&block(), 0, "x");
        assert!(matches!(
            faithfulness_check(&mut fact, &llm("faithfulness", &["<faithful>maybe</faithful>"])),
            Err(FactError::Judgment { .. })
        ));
        assert_eq!(fact.faithful, None);
    }
}
