use crate::error::{Error, Result};
use crate::span::EventCategory;

use super::{CategorizationResult, CategorySource, Classifier};

pub const NO_MATCH_REASON: &str = "no directional verb matched";

const DEFAULT_LEXICON: &str = include_str!("../../data/lexicon.txt");

/// One lexicon line: a sequence of words, each with its accepted spellings.
#[derive(Debug, Clone, PartialEq)]
struct Entry {
    text: String,
    words: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lexicon {
    sensitive: Vec<Entry>,
    insensitive: Vec<Entry>,
}

impl Default for Lexicon {
    fn default() -> Self {
        Lexicon::parse(DEFAULT_LEXICON).expect("bundled lexicon parses")
    }
}

impl Lexicon {
    pub fn parse(text: &str) -> Result<Self> {
        let mut lex = Lexicon {
            sensitive: Vec::new(),
            insensitive: Vec::new(),
        };
        let mut section: Option<EventCategory> = None;
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = Some(name.parse()?);
                continue;
            }
            let words: Vec<Vec<String>> = line
                .split_whitespace()
                .map(|w| w.split('|').map(|f| f.to_lowercase()).collect())
                .collect();
            let entry = Entry {
                text: line
                    .split_whitespace()
                    .map(|w| w.split('|').next().unwrap_or(w))
                    .collect::<Vec<_>>()
                    .join(" "),
                words,
            };
            match section {
                Some(EventCategory::Sensitive) => lex.sensitive.push(entry),
                Some(EventCategory::Insensitive) => lex.insensitive.push(entry),
                None => {
                    return Err(Error::Config(format!(
                        "lexicon line {} precedes any section header",
                        n + 1
                    )));
                }
            }
        }
        Ok(lex)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Lexicon::parse(&std::fs::read_to_string(path)?)
    }

    pub fn len(&self) -> usize {
        self.sensitive.len() + self.insensitive.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Regular English inflections of a base verb form.
fn inflects(word: &str, base: &str) -> bool {
    if word == base {
        return true;
    }
    let Some(rest) = word.strip_prefix(base) else {
        return irregular_stem(word, base);
    };
    if matches!(rest, "s" | "es" | "ed" | "d" | "ing") {
        return true;
    }
    // doubled final consonant: sit -> sitting, drop -> dropped
    let last = base.chars().last().unwrap_or_default();
    let mut doubled = String::new();
    doubled.push(last);
    matches!(rest.strip_prefix(doubled.as_str()), Some("ing" | "ed"))
}

fn irregular_stem(word: &str, base: &str) -> bool {
    if let Some(stem) = base.strip_suffix('e') {
        // close -> closing
        if word.strip_prefix(stem) == Some("ing") {
            return true;
        }
    }
    if let Some(stem) = base.strip_suffix('y') {
        // empty -> empties, tidy -> tidied
        if matches!(word.strip_prefix(stem), Some("ies" | "ied")) {
            return true;
        }
    }
    false
}

fn entry_matches(entry: &Entry, tokens: &[String]) -> bool {
    let n = entry.words.len();
    if n == 0 || tokens.len() < n {
        return false;
    }
    tokens.windows(n).any(|win| {
        win.iter()
            .zip(&entry.words)
            .all(|(tok, forms)| forms.iter().any(|f| inflects(tok, f)))
    })
}

/// Sensitive when any sensitive lexicon entry occurs in the query.
pub fn classify_rule_based(query_text: &str, lexicon: &Lexicon) -> CategorizationResult {
    let tokens = tokenize(query_text);
    let hit = |entries: &[Entry]| {
        entries
            .iter()
            .find(|e| entry_matches(e, &tokens))
            .map(|e| e.text.clone())
    };
    let (category, reason) = if let Some(v) = hit(&lexicon.sensitive) {
        (EventCategory::Sensitive, format!("matched time-sensitive verb \"{v}\""))
    } else if let Some(v) = hit(&lexicon.insensitive) {
        (
            EventCategory::Insensitive,
            format!("matched time-insensitive verb \"{v}\""),
        )
    } else {
        (EventCategory::Insensitive, NO_MATCH_REASON.to_string())
    };
    CategorizationResult {
        category,
        reason,
        source: CategorySource::RuleBased,
    }
}

#[derive(Debug, Clone, Default)]
pub struct RuleBasedClassifier {
    pub lexicon: Lexicon,
}

impl Classifier for RuleBasedClassifier {
    fn classify(&self, query_text: &str) -> Result<CategorizationResult> {
        Ok(classify_rule_based(query_text, &self.lexicon))
    }

    fn source(&self) -> CategorySource {
        CategorySource::RuleBased
    }
}
