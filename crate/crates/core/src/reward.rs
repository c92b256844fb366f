//! Response parsing and every reward term used during training.
//!
//! A response must follow the reasoning template
//! `<think> ... </think> <answer> <A to B> </answer>`, where the answer body may
//! also be the literal `none` to claim the event does not occur.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::span::{check_duration, clamp_span, iou, reverse_span, EventCategory, EventSample, Prediction, TimeSpan};

/// Default weight of the directionality term.
pub const DEFAULT_LAMBDA: f64 = 0.5;

/// Answer token used for an explicit "event absent" claim.
pub const NO_EVENT_TOKEN: &str = "none";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedResponse {
    pub think_text: String,
    pub prediction: Prediction,
    pub format_ok: bool,
    /// Set when the answer span had to be clamped into the video.
    #[serde(default)]
    pub clamped: bool,
}

impl ParsedResponse {
    fn malformed() -> Self {
        ParsedResponse {
            think_text: String::new(),
            prediction: Prediction::Invalid,
            format_ok: false,
            clamped: false,
        }
    }
}

/// Every reward component for one (forward, reversed) response pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_acc: f64,
    pub s_c: f64,
    pub r_temp: f64,
    pub r_grounding: f64,
    pub r_form: u8,
    pub r_final: f64,
    pub category: EventCategory,
}

fn template() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?s)\A<think>(.*?)</think>\s*<answer>(.*?)</answer>\z").expect("valid regex"))
}

fn span_answer() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"\A<\s*([0-9]+(?:\.[0-9]+)?)\s+to\s+([0-9]+(?:\.[0-9]+)?)\s*>\z").expect("valid regex")
    })
}

const TAGS: [&str; 4] = ["<think>", "</think>", "<answer>", "</answer>"];

/// Parses a raw policy response. Never fails: malformed text yields
/// `format_ok = false` and [`Prediction::Invalid`].
pub fn parse_response(raw_text: &str, duration: f64) -> ParsedResponse {
    let text = raw_text.trim();
    let Some(caps) = template().captures(text) else {
        return ParsedResponse::malformed();
    };
    let think = &caps[1];
    let body = &caps[2];
    if TAGS.iter().any(|t| think.contains(t) || body.contains(t)) {
        return ParsedResponse::malformed();
    }

    let body = body.trim();
    let (prediction, clamped) = if body.eq_ignore_ascii_case(NO_EVENT_TOKEN) {
        (Prediction::NoEvent, false)
    } else if let Some(c) = span_answer().captures(body) {
        let (Ok(a), Ok(b)) = (c[1].parse::<f64>(), c[2].parse::<f64>()) else {
            return ParsedResponse::malformed();
        };
        if !(a.is_finite() && b.is_finite()) || a > b || !(duration > 0.0) {
            return ParsedResponse::malformed();
        }
        let c = clamp_span(a, b, duration);
        (Prediction::Span { span: c.span }, c.clamped)
    } else {
        return ParsedResponse::malformed();
    };

    ParsedResponse {
        think_text: think.trim().to_string(),
        prediction,
        format_ok: true,
        clamped,
    }
}

/// Renders a prediction in the reasoning template. `Invalid` renders as text
/// that the parser rejects.
pub fn emit_response(prediction: &Prediction, think: &str) -> String {
    match prediction {
        Prediction::Span { span } => format!(
            "<think>{think}</think> <answer> <{} to {}> </answer>",
            span.start(),
            span.end()
        ),
        Prediction::NoEvent => format!("<think>{think}</think> <answer> {NO_EVENT_TOKEN} </answer>"),
        Prediction::Invalid => format!("{think} (no answer)"),
    }
}

/// Timestamp-aware IoU: plain IoU scaled by one penalty factor per endpoint,
/// each `1 - |delta| / duration`.
pub fn t_iou(pred: TimeSpan, target: TimeSpan, duration: f64) -> Result<f64> {
    check_duration(duration).map_err(|_| Error::Config(format!("t_iou requires positive duration, got {duration}")))?;
    let start_factor = (1.0 - (pred.start() - target.start()).abs() / duration).clamp(0.0, 1.0);
    let end_factor = (1.0 - (pred.end() - target.end()).abs() / duration).clamp(0.0, 1.0);
    Ok(iou(pred, target) * start_factor * end_factor)
}

/// Forward localization reward; abstaining or malformed output earns nothing.
pub fn accuracy_reward(pred: &Prediction, gt: TimeSpan, duration: f64) -> Result<f64> {
    match pred {
        Prediction::Span { span } => t_iou(*span, gt, duration),
        Prediction::NoEvent | Prediction::Invalid => Ok(0.0),
    }
}

/// Agreement between the reversed-video prediction and the mirror of the
/// forward prediction. Zero unless both predictions are spans.
pub fn directionality_score(fwd: &Prediction, rev: &Prediction, duration: f64) -> Result<f64> {
    match (fwd, rev) {
        (Prediction::Span { span: f }, Prediction::Span { span: r }) => {
            let mirrored = reverse_span(*f, duration)?;
            t_iou(*r, mirrored, duration)
        }
        _ => Ok(0.0),
    }
}

/// Category-conditional grounding reward. The returned breakdown has
/// `r_form = 0` and `r_final = r_grounding`; [`final_reward`] adds the format term.
pub fn grounding_reward(
    fwd: &Prediction,
    rev: &Prediction,
    gt: TimeSpan,
    category: EventCategory,
    duration: f64,
    lambda: f64,
) -> Result<RewardBreakdown> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::Config(format!("lambda must be >= 0, got {lambda}")));
    }
    let r_acc = accuracy_reward(fwd, gt, duration)?;
    let s_c = directionality_score(fwd, rev, duration)?;
    let r_temp = match category {
        EventCategory::Insensitive => s_c,
        EventCategory::Sensitive => 1.0 - s_c,
    };
    let r_grounding = r_acc + lambda * r_temp;
    Ok(RewardBreakdown {
        r_acc,
        s_c,
        r_temp,
        r_grounding,
        r_form: 0,
        r_final: r_grounding,
        category,
    })
}

/// Scores a forward/reversed response pair for one sample.
///
/// The format reward is 1 only when both responses follow the template. When
/// `raw_rev_text` is `None` the reversed prediction counts as `Invalid` and the
/// format reward depends on the forward response alone.
pub fn final_reward(
    raw_fwd_text: &str,
    raw_rev_text: Option<&str>,
    sample: &EventSample,
    lambda: f64,
) -> Result<RewardBreakdown> {
    let d = sample.duration();
    let fwd = parse_response(raw_fwd_text, d);
    let rev = raw_rev_text.map(|t| parse_response(t, d));
    let rev_pred = rev.as_ref().map_or(Prediction::Invalid, |r| r.prediction);
    let format_ok = fwd.format_ok && rev.as_ref().is_none_or(|r| r.format_ok);

    let mut out = grounding_reward(&fwd.prediction, &rev_pred, sample.gt_span, sample.category, d, lambda)
        .map_err(|e| e.for_sample(&sample.sample_id))?;
    out.r_form = u8::from(format_ok);
    out.r_final = out.r_grounding + f64::from(out.r_form);
    Ok(out)
}
