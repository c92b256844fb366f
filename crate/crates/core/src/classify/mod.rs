//! Time-sensitivity categorization of event queries.
//!
//! Three sources can supply a category: a label already present in the
//! dataset, an external chat-completion model prompted with the
//! categorization template, and an offline verb lexicon.

mod cache;
mod lexicon;
mod llm;

pub use cache::{CachedClassifier, ClassificationCache};
pub use lexicon::{classify_rule_based, Lexicon, RuleBasedClassifier, NO_MATCH_REASON};
pub use llm::{
    classify_llm, parse_llm_reply, render_prompt, ChatTransport, EndpointConfig, HttpChatTransport, LlmClassifier,
    PROMPT_TEMPLATE,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::span::EventCategory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CategorySource {
    RuleBased,
    ExternalLlm,
    ManualLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategorizationResult {
    pub category: EventCategory,
    pub reason: String,
    pub source: CategorySource,
}

impl CategorizationResult {
    pub fn manual(category: EventCategory) -> Self {
        CategorizationResult {
            category,
            reason: "label supplied with the sample".into(),
            source: CategorySource::ManualLabel,
        }
    }
}

/// Anything that can categorize a query.
pub trait Classifier: Send + Sync {
    fn classify(&self, query_text: &str) -> Result<CategorizationResult>;

    fn source(&self) -> CategorySource;
}

/// Fraction of predictions agreeing with gold labels.
pub fn audit_agreement(predicted: &[CategorizationResult], gold: &[EventCategory]) -> Result<f64> {
    if predicted.len() != gold.len() {
        return Err(Error::LengthMismatch {
            left: predicted.len(),
            right: gold.len(),
        });
    }
    if gold.is_empty() {
        return Err(Error::EmptyRecords);
    }
    let hits = predicted.iter().zip(gold).filter(|(p, g)| p.category == **g).count();
    Ok(hits as f64 / gold.len() as f64)
}
