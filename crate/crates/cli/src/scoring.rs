//! Request validation and scoring shared by the `score` command and the HTTP
//! service, so both paths produce identical bytes.

use arrowrl_core::classify::{Classifier, RuleBasedClassifier};
use arrowrl_core::io::SampleRecord;
use arrowrl_core::reward::final_reward;
use arrowrl_core::RewardBreakdown;
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// One scoring request: the sample fields inline plus the raw policy texts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    #[serde(flatten)]
    pub sample: SampleRecord,
    pub raw_fwd_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_rev_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl FieldError {
    fn new(field: &str, message: impl Into<String>) -> Self {
        FieldError {
            field: field.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreError {
    pub error: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fields: Vec<FieldError>,
}

impl ScoreError {
    fn invalid(fields: Vec<FieldError>) -> Self {
        ScoreError {
            error: "invalid request".into(),
            fields,
        }
    }
}

impl std::fmt::Display for ScoreError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.error)?;
        for fe in &self.fields {
            write!(f, "; {}: {}", fe.field, fe.message)?;
        }
        Ok(())
    }
}

enum Kind {
    String,
    Number,
}

const FIELDS: [(&str, Kind, bool); 8] = [
    ("sample_id", Kind::String, true),
    ("video_id", Kind::String, true),
    ("duration", Kind::Number, true),
    ("query", Kind::String, true),
    ("gt_start", Kind::Number, true),
    ("gt_end", Kind::Number, true),
    ("raw_fwd_text", Kind::String, true),
    ("raw_rev_text", Kind::String, false),
];

/// Checks presence and JSON types of every field, reporting all problems at once.
fn check_shape(value: &Value) -> Vec<FieldError> {
    let Some(obj) = value.as_object() else {
        return vec![FieldError::new("$", "expected a JSON object")];
    };
    let mut errors = Vec::new();
    for (name, kind, required) in FIELDS {
        match obj.get(name) {
            None | Some(Value::Null) if required => errors.push(FieldError::new(name, "missing")),
            None | Some(Value::Null) => {}
            Some(v) => {
                let ok = match kind {
                    Kind::String => v.is_string(),
                    Kind::Number => v.is_number(),
                };
                if !ok {
                    let expected = match kind {
                        Kind::String => "a string",
                        Kind::Number => "a number",
                    };
                    errors.push(FieldError::new(name, format!("expected {expected}")));
                }
            }
        }
    }
    if let Some(v) = obj.get("lambda") {
        if !(v.is_null() || v.is_number()) {
            errors.push(FieldError::new("lambda", "expected a number"));
        }
    }
    if let Some(v) = obj.get("category") {
        if !(v.is_null() || matches!(v.as_str(), Some("sensitive" | "insensitive"))) {
            errors.push(FieldError::new("category", "expected \"sensitive\" or \"insensitive\""));
        }
    }
    errors
}

/// Stateless scorer; samples without a category are labelled by the
/// rule-based classifier.
#[derive(Debug, Clone)]
pub struct Scorer {
    pub default_lambda: f64,
    pub rule_based: RuleBasedClassifier,
}

impl Scorer {
    pub fn new(default_lambda: f64, rule_based: RuleBasedClassifier) -> Self {
        Scorer {
            default_lambda,
            rule_based,
        }
    }

    pub fn parse_request(&self, value: &Value) -> Result<ScoreRequest, ScoreError> {
        let shape = check_shape(value);
        if !shape.is_empty() {
            return Err(ScoreError::invalid(shape));
        }
        let req: ScoreRequest = serde_json::from_value(value.clone())
            .map_err(|e| ScoreError::invalid(vec![FieldError::new("$", e.to_string())]))?;
        let mut errors = Vec::new();
        if let Err((field, message)) = req.sample.validate() {
            errors.push(FieldError::new(field, message));
        }
        if let Some(l) = req.lambda {
            if !(l.is_finite() && l >= 0.0) {
                errors.push(FieldError::new("lambda", format!("must be >= 0, got {l}")));
            }
        }
        if errors.is_empty() {
            Ok(req)
        } else {
            Err(ScoreError::invalid(errors))
        }
    }

    pub fn score(&self, req: &ScoreRequest) -> Result<RewardBreakdown, ScoreError> {
        let category = match req.sample.category {
            Some(c) => c,
            None => {
                self.rule_based
                    .classify(&req.sample.query)
                    .map_err(|e| ScoreError::invalid(vec![FieldError::new("category", e.to_string())]))?
                    .category
            }
        };
        let sample = req
            .sample
            .to_sample(category)
            .map_err(|e| ScoreError::invalid(vec![FieldError::new("$", e.to_string())]))?;
        let lambda = req.lambda.unwrap_or(self.default_lambda);
        final_reward(&req.raw_fwd_text, req.raw_rev_text.as_deref(), &sample, lambda).map_err(|e| ScoreError {
            error: e.to_string(),
            fields: Vec::new(),
        })
    }

    pub fn score_value(&self, value: &Value) -> Result<RewardBreakdown, ScoreError> {
        self.score(&self.parse_request(value)?)
    }

    /// Scores one JSON document given as text.
    pub fn score_text(&self, text: &str) -> Result<RewardBreakdown, ScoreError> {
        let value: Value = serde_json::from_str(text).map_err(|e| ScoreError {
            error: format!("malformed JSON: {e}"),
            fields: Vec::new(),
        })?;
        self.score_value(&value)
    }
}

/// Canonical serialization of a breakdown, shared by CLI and service output.
pub fn render(breakdown: &RewardBreakdown) -> String {
    serde_json::to_string(breakdown).expect("breakdown serializes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use arrowrl_core::EventCategory;
    use serde_json::json;

    fn scorer() -> Scorer {
        Scorer::new(0.5, RuleBasedClassifier::default())
    }

    fn perfect_sensitive() -> Value {
        json!({
            "sample_id": "s1", "video_id": "v1", "duration": 10.0, "query": "person opens the door",
            "gt_start": 2.0, "gt_end": 6.0, "category": "sensitive",
            "raw_fwd_text": "<think>door opens early</think> <answer> <2 to 6> </answer>",
            "raw_rev_text": "<think>looks like closing</think> <answer> none </answer>"
        })
    }

    #[test]
    fn perfect_sensitive_scores_ceiling() {
        let b = scorer().score_value(&perfect_sensitive()).unwrap();
        assert_eq!(b.r_final, 2.5);
        assert_eq!(b.category, EventCategory::Sensitive);
    }

    #[test]
    fn lambda_override_and_rule_based_category() {
        let mut v = perfect_sensitive();
        v["lambda"] = json!(0.0);
        v.as_object_mut().unwrap().remove("category");
        let b = scorer().score_value(&v).unwrap();
        assert_eq!(b.category, EventCategory::Sensitive);
        assert_eq!(b.r_final, 2.0);
    }

    #[test]
    fn all_field_problems_are_reported() {
        let err = scorer()
            .score_value(&json!({"sample_id": "s", "duration": "ten", "query": "q", "gt_start": 0, "gt_end": 1}))
            .unwrap_err();
        let fields: Vec<&str> = err.fields.iter().map(|f| f.field.as_str()).collect();
        assert_eq!(fields, ["video_id", "duration", "raw_fwd_text"]);
    }

    #[test]
    fn invariant_violations_name_the_field() {
        let mut v = perfect_sensitive();
        v["gt_end"] = json!(12.0);
        let err = scorer().score_value(&v).unwrap_err();
        assert_eq!(err.fields[0].field, "gt_end");
        v["gt_end"] = json!(6.0);
        v["lambda"] = json!(-1.0);
        assert_eq!(scorer().score_value(&v).unwrap_err().fields[0].field, "lambda");
    }

    #[test]
    fn malformed_json() {
        let err = scorer().score_text("{not json").unwrap_err();
        assert!(err.error.starts_with("malformed JSON"));
    }
}
