//! Dataset ingestion and persistence. Every dataset, rollout and evaluation
//! file is newline-delimited JSON.

mod convert;
mod synth;

pub use convert::{from_activitynet_captions, from_charades_sta};
pub use synth::{generate_synthetic, SynthConfig};

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::classify::{CategorizationResult, CategorySource, Classifier};
use crate::error::{Error, Result};
use crate::span::{EventCategory, EventSample, TimeSpan, VideoMeta};

/// One dataset line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: String,
    pub video_id: String,
    pub duration: f64,
    pub query: String,
    pub gt_start: f64,
    pub gt_end: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<EventCategory>,
}

impl SampleRecord {
    /// Checks `0 <= gt_start <= gt_end <= duration`, naming the offending field.
    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        if self.sample_id.trim().is_empty() {
            return Err(("sample_id", "must not be empty".into()));
        }
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(("duration", format!("must be positive, got {}", self.duration)));
        }
        if !(self.gt_start.is_finite() && self.gt_start >= 0.0) {
            return Err(("gt_start", format!("must be >= 0, got {}", self.gt_start)));
        }
        if !(self.gt_end.is_finite() && self.gt_end >= self.gt_start) {
            return Err((
                "gt_end",
                format!("must be >= gt_start ({}), got {}", self.gt_start, self.gt_end),
            ));
        }
        if self.gt_end > self.duration {
            return Err(("gt_end", format!("exceeds duration {}: {}", self.duration, self.gt_end)));
        }
        Ok(())
    }

    pub fn to_sample(&self, category: EventCategory) -> Result<EventSample> {
        self.validate().map_err(|(field, msg)| Error::Precondition {
            sample: Some(self.sample_id.clone()),
            message: format!("{field} {msg}"),
        })?;
        EventSample::new(
            self.sample_id.clone(),
            VideoMeta::new(self.video_id.clone(), self.duration)?,
            self.query.clone(),
            TimeSpan::new(self.gt_start, self.gt_end)?,
            category,
        )
    }
}

impl From<&EventSample> for SampleRecord {
    fn from(s: &EventSample) -> Self {
        SampleRecord {
            sample_id: s.sample_id.clone(),
            video_id: s.video.video_id.clone(),
            duration: s.video.duration,
            query: s.query_text.clone(),
            gt_start: s.gt_span.start(),
            gt_end: s.gt_span.end(),
            category: Some(s.category),
        }
    }
}

/// Decides a sample's category from its label and the available classifiers,
/// trying sources in `precedence` order.
pub struct CategoryResolver<'a> {
    pub precedence: Vec<CategorySource>,
    pub llm: Option<&'a dyn Classifier>,
    pub rule_based: Option<&'a dyn Classifier>,
}

impl Default for CategoryResolver<'_> {
    fn default() -> Self {
        CategoryResolver {
            precedence: vec![
                CategorySource::ManualLabel,
                CategorySource::ExternalLlm,
                CategorySource::RuleBased,
            ],
            llm: None,
            rule_based: None,
        }
    }
}

impl<'a> CategoryResolver<'a> {
    pub fn with_rule_based(classifier: &'a dyn Classifier) -> Self {
        CategoryResolver {
            rule_based: Some(classifier),
            ..CategoryResolver::default()
        }
    }

    pub fn resolve(&self, label: Option<EventCategory>, query: &str) -> Result<CategorizationResult> {
        let mut last_err = None;
        for source in &self.precedence {
            match source {
                CategorySource::ManualLabel => {
                    if let Some(c) = label {
                        return Ok(CategorizationResult::manual(c));
                    }
                }
                CategorySource::ExternalLlm => {
                    if let Some(llm) = self.llm {
                        match llm.classify(query) {
                            Ok(r) => return Ok(r),
                            Err(e) => last_err = Some(e),
                        }
                    }
                }
                CategorySource::RuleBased => {
                    if let Some(rb) = self.rule_based {
                        return rb.classify(query);
                    }
                }
            }
        }
        Err(last_err.unwrap_or_else(|| Error::precondition("category missing and no classifier enabled")))
    }
}

#[derive(Default)]
pub struct LoadOptions<'a> {
    /// Fail when any line is rejected.
    pub strict: bool,
    pub resolver: CategoryResolver<'a>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostic {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadReport {
    pub samples: Vec<EventSample>,
    /// Where each sample's category came from, parallel to `samples`.
    pub sources: Vec<CategorySource>,
    pub diagnostics: Vec<Diagnostic>,
}

/// Non-empty lines of a JSONL stream with their 1-based line numbers.
pub fn jsonl_lines<R: BufRead>(reader: R) -> impl Iterator<Item = Result<(usize, String)>> {
    reader.lines().enumerate().filter_map(|(i, line)| match line {
        Ok(l) if l.trim().is_empty() => None,
        Ok(l) => Some(Ok((i + 1, l))),
        Err(e) => Some(Err(Error::Io(e))),
    })
}

/// Reads a whole JSONL file, failing on the first bad line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    jsonl_lines(reader)
        .map(|item| {
            let (n, line) = item?;
            serde_json::from_str(&line).map_err(|e| Error::Precondition {
                sample: None,
                message: format!("{}: line {n}: {e}", path.display()),
            })
        })
        .collect()
}

pub fn write_jsonl<T: Serialize, W: Write>(mut out: W, items: impl IntoIterator<Item = T>) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut out, &item)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_samples_from<R: BufRead>(reader: R, options: &LoadOptions<'_>) -> Result<LoadReport> {
    let mut report = LoadReport {
        samples: Vec::new(),
        sources: Vec::new(),
        diagnostics: Vec::new(),
    };
    let mut seen = std::collections::HashMap::new();
    for item in jsonl_lines(reader) {
        let (n, line) = item?;
        let record: SampleRecord = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                report.diagnostics.push(Diagnostic {
                    line: n,
                    message: format!("malformed record: {e}"),
                });
                continue;
            }
        };
        if let Err((field, msg)) = record.validate() {
            report.diagnostics.push(Diagnostic {
                line: n,
                message: format!("{field} {msg}"),
            });
            continue;
        }
        if let Some(first) = seen.insert(record.sample_id.clone(), n) {
            tracing::error!(id = %record.sample_id, first, line = n, "duplicate sample id");
            return Err(Error::DuplicateId {
                id: record.sample_id,
                line: n,
            });
        }
        let cat = match options.resolver.resolve(record.category, &record.query) {
            Ok(c) => c,
            Err(e) => {
                report.diagnostics.push(Diagnostic {
                    line: n,
                    message: e.to_string(),
                });
                continue;
            }
        };
        report.samples.push(record.to_sample(cat.category)?);
        report.sources.push(cat.source);
    }
    if options.strict {
        if let Some(first) = report.diagnostics.first() {
            return Err(Error::RejectedLines {
                rejected: report.diagnostics.len(),
                first_line: first.line,
                first_reason: first.message.clone(),
            });
        }
    }
    Ok(report)
}

pub fn load_samples(path: &Path, options: &LoadOptions<'_>) -> Result<LoadReport> {
    load_samples_from(BufReader::new(File::open(path)?), options)
}

pub fn save_samples(path: &Path, samples: &[EventSample]) -> Result<()> {
    let out = BufWriter::new(File::create(path)?);
    write_jsonl(out, samples.iter().map(SampleRecord::from))
}
