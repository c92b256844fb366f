//! Domain types shared by every module: spans, samples, predictions, and the
//! temporal reversal operator.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A closed interval `[start, end]` in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpan")]
pub struct TimeSpan {
    start: f64,
    end: f64,
}

#[derive(Deserialize)]
struct RawSpan {
    start: f64,
    end: f64,
}

impl TryFrom<RawSpan> for TimeSpan {
    type Error = Error;

    fn try_from(raw: RawSpan) -> Result<Self> {
        TimeSpan::new(raw.start, raw.end)
    }
}

impl TimeSpan {
    pub fn new(start: f64, end: f64) -> Result<Self> {
        if !(start.is_finite() && end.is_finite()) || start < 0.0 || start > end {
            return Err(Error::InvalidSpan { start, end });
        }
        Ok(TimeSpan { start, end })
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    pub fn length(&self) -> f64 {
        self.end - self.start
    }

    pub fn fits_within(&self, duration: f64) -> bool {
        self.end <= duration
    }
}

impl fmt::Display for TimeSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.start, self.end)
    }
}

pub(crate) fn check_duration(duration: f64) -> Result<()> {
    if duration.is_finite() && duration > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidDuration(duration))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoMeta {
    pub video_id: String,
    pub duration: f64,
}

impl VideoMeta {
    pub fn new(video_id: impl Into<String>, duration: f64) -> Result<Self> {
        check_duration(duration)?;
        Ok(VideoMeta {
            video_id: video_id.into(),
            duration,
        })
    }
}

/// Whether reversing the video changes what the event means.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventCategory {
    Sensitive,
    Insensitive,
}

impl EventCategory {
    pub const ALL: [EventCategory; 2] = [EventCategory::Sensitive, EventCategory::Insensitive];

    pub fn as_str(&self) -> &'static str {
        match self {
            EventCategory::Sensitive => "sensitive",
            EventCategory::Insensitive => "insensitive",
        }
    }
}

impl fmt::Display for EventCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for EventCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sensitive" => Ok(EventCategory::Sensitive),
            "insensitive" => Ok(EventCategory::Insensitive),
            other => Err(Error::Config(format!("unknown event category {other:?}"))),
        }
    }
}

/// Playback direction of the video a prediction was made on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Reversed,
}

/// One grounding item: a query against a video with a single ground-truth span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSample {
    pub sample_id: String,
    pub video: VideoMeta,
    pub query_text: String,
    pub gt_span: TimeSpan,
    pub category: EventCategory,
}

impl EventSample {
    pub fn new(
        sample_id: impl Into<String>,
        video: VideoMeta,
        query_text: impl Into<String>,
        gt_span: TimeSpan,
        category: EventCategory,
    ) -> Result<Self> {
        let sample_id = sample_id.into();
        check_duration(video.duration)?;
        if !gt_span.fits_within(video.duration) {
            return Err(Error::Precondition {
                sample: Some(sample_id),
                message: format!("ground truth {gt_span} exceeds video duration {}", video.duration),
            });
        }
        Ok(EventSample {
            sample_id,
            video,
            query_text: query_text.into(),
            gt_span,
            category,
        })
    }

    pub fn duration(&self) -> f64 {
        self.video.duration
    }
}

/// Parsed outcome of one policy response.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Prediction {
    Span {
        #[serde(flatten)]
        span: TimeSpan,
    },
    NoEvent,
    Invalid,
}

impl Prediction {
    pub fn span(&self) -> Option<TimeSpan> {
        match self {
            Prediction::Span { span } => Some(*span),
            _ => None,
        }
    }
}

impl From<TimeSpan> for Prediction {
    fn from(span: TimeSpan) -> Self {
        Prediction::Span { span }
    }
}

/// Mirrors a span inside a video of the given duration: `[d - end, d - start]`.
pub fn reverse_span(span: TimeSpan, duration: f64) -> Result<TimeSpan> {
    check_duration(duration)?;
    if !span.fits_within(duration) {
        return Err(Error::precondition(format!(
            "span {span} exceeds video duration {duration}"
        )));
    }
    Ok(TimeSpan {
        start: duration - span.end,
        end: duration - span.start,
    })
}

/// Plain intersection-over-union of two spans.
pub fn iou(a: TimeSpan, b: TimeSpan) -> f64 {
    let inter = (a.end.min(b.end) - a.start.max(b.start)).max(0.0);
    let union = a.length() + b.length() - inter;
    if union <= 0.0 {
        // only reachable with two zero-length spans
        return if a == b { 1.0 } else { 0.0 };
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Result of [`clamp_span`]; `clamped` is set whenever an endpoint moved.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Clamped {
    pub span: TimeSpan,
    pub clamped: bool,
}

/// Clamps raw endpoints into `[0, duration]`. Reversed endpoints are swapped
/// and NaN endpoints collapse to 0; both count as clamping.
pub fn clamp_span(start: f64, end: f64, duration: f64) -> Clamped {
    let fix = |v: f64| {
        if v.is_nan() {
            0.0
        } else {
            v.clamp(0.0, duration.max(0.0))
        }
    };
    let (mut s, mut e) = (fix(start), fix(end));
    let mut clamped = s != start || e != end;
    if s > e {
        std::mem::swap(&mut s, &mut e);
        clamped = true;
    }
    if clamped {
        tracing::warn!(start, end, duration, "prediction clamped to video bounds");
    }
    Clamped {
        span: TimeSpan { start: s, end: e },
        clamped,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ts(s: f64, e: f64) -> TimeSpan {
        TimeSpan::new(s, e).unwrap()
    }

    #[test]
    fn reverse_examples() {
        assert_eq!(reverse_span(ts(2.0, 6.0), 10.0).unwrap(), ts(4.0, 8.0));
        assert_eq!(reverse_span(ts(2.0, 8.0), 10.0).unwrap(), ts(2.0, 8.0));
        assert_eq!(reverse_span(ts(0.0, 10.0), 10.0).unwrap(), ts(0.0, 10.0));
    }

    #[test]
    fn reverse_rejects_overlong_span() {
        let err = reverse_span(ts(2.0, 12.0), 10.0).unwrap_err().for_sample("s-7");
        assert!(err.to_string().contains("s-7"), "{err}");
    }

    #[test]
    fn iou_examples() {
        assert_eq!(iou(ts(2.0, 6.0), ts(2.0, 6.0)), 1.0);
        assert_eq!(iou(ts(0.0, 2.0), ts(5.0, 9.0)), 0.0);
        assert!((iou(ts(2.0, 6.0), ts(3.0, 7.0)) - 0.6).abs() < 1e-15);
    }

    #[test]
    fn iou_zero_length() {
        assert_eq!(iou(ts(3.0, 3.0), ts(3.0, 3.0)), 1.0);
        assert_eq!(iou(ts(3.0, 3.0), ts(4.0, 4.0)), 0.0);
        assert_eq!(iou(ts(3.0, 3.0), ts(2.0, 4.0)), 0.0);
    }

    #[test]
    fn clamp_examples() {
        let c = clamp_span(-1.0, 5.0, 10.0);
        assert_eq!((c.span, c.clamped), (ts(0.0, 5.0), true));
        let c = clamp_span(2.0, 14.0, 10.0);
        assert_eq!((c.span, c.clamped), (ts(2.0, 10.0), true));
        let c = clamp_span(2.0, 6.0, 10.0);
        assert_eq!((c.span, c.clamped), (ts(2.0, 6.0), false));
    }

    #[test]
    fn span_constructor_rejects_bad_input() {
        assert!(TimeSpan::new(3.0, 2.0).is_err());
        assert!(TimeSpan::new(-0.5, 2.0).is_err());
        assert!(TimeSpan::new(0.0, f64::INFINITY).is_err());
        assert!(serde_json::from_str::<TimeSpan>(r#"{"start":5,"end":1}"#).is_err());
    }

    #[test]
    fn sample_rejects_gt_past_duration() {
        let video = VideoMeta::new("v", 10.0).unwrap();
        assert!(EventSample::new("a", video, "q", ts(2.0, 11.0), EventCategory::Sensitive).is_err());
        assert!(VideoMeta::new("v", 0.0).is_err());
    }

    #[test]
    fn prediction_json_shape() {
        let p = Prediction::from(ts(1.5, 4.0));
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(s, r#"{"kind":"span","start":1.5,"end":4.0}"#);
        assert_eq!(serde_json::from_str::<Prediction>(&s).unwrap(), p);
        assert_eq!(
            serde_json::to_string(&Prediction::NoEvent).unwrap(),
            r#"{"kind":"no_event"}"#
        );
    }

    // spans on a 1/64 s lattice so every operation is exact
    fn lattice_span() -> impl Strategy<Value = (TimeSpan, f64)> {
        (1u32..4096, 0u32..4096, 0u32..4096).prop_map(|(d, a, b)| {
            let d = d as f64 / 64.0;
            let a = (a as f64 / 64.0).min(d);
            let b = (b as f64 / 64.0).min(d);
            (ts(a.min(b), a.max(b)), d)
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn reverse_is_involution((span, d) in lattice_span()) {
            let back = reverse_span(reverse_span(span, d).unwrap(), d).unwrap();
            prop_assert_eq!(back, span);
            prop_assert_eq!(reverse_span(span, d).unwrap().length(), span.length());
        }

        #[test]
        fn iou_bounded_symmetric_equivariant((a, d) in lattice_span(), bs in 0u32..4096, be in 0u32..4096) {
            let bs = (bs as f64 / 64.0).min(d);
            let be = (be as f64 / 64.0).min(d);
            let b = ts(bs.min(be), bs.max(be));
            let v = iou(a, b);
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert_eq!(v, iou(b, a));
            let rv = iou(reverse_span(a, d).unwrap(), reverse_span(b, d).unwrap());
            prop_assert_eq!(v, rv);
        }
    }
}
