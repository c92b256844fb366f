//! Converters from public grounding annotation formats to [`SampleRecord`]s.
//! Categories are left unset; resolve them at load time.
//!
//! * Charades-STA: one `VIDEO_ID START END##sentence` per line. Durations are
//!   not part of the annotation and must be supplied separately.
//! * ActivityNet Captions: a JSON object keyed by video id, each value holding
//!   `duration`, `timestamps` (pairs) and `sentences`.

use std::collections::HashMap;

use serde::Deserialize;

use super::SampleRecord;
use crate::error::{Error, Result};

pub fn from_charades_sta(text: &str, durations: &HashMap<String, f64>) -> Result<Vec<SampleRecord>> {
    let mut out = Vec::new();
    let mut per_video: HashMap<&str, usize> = HashMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let bad = |m: &str| Error::Config(format!("charades line {}: {m}", n + 1));
        let (head, sentence) = line.split_once("##").ok_or_else(|| bad("missing '##' separator"))?;
        let mut parts = head.split_whitespace();
        let (Some(vid), Some(s), Some(e)) = (parts.next(), parts.next(), parts.next()) else {
            return Err(bad("expected 'VIDEO_ID START END'"));
        };
        let start: f64 = s.parse().map_err(|_| bad("bad start time"))?;
        let end: f64 = e.parse().map_err(|_| bad("bad end time"))?;
        let duration = *durations
            .get(vid)
            .ok_or_else(|| bad(&format!("no duration for video {vid}")))?;
        let k = per_video.entry(vid).or_default();
        out.push(SampleRecord {
            sample_id: format!("{vid}#{k}"),
            video_id: vid.to_string(),
            duration,
            query: sentence.trim().to_string(),
            gt_start: start,
            gt_end: end.min(duration),
            category: None,
        });
        *k += 1;
    }
    Ok(out)
}

#[derive(Deserialize)]
struct AnetVideo {
    duration: f64,
    timestamps: Vec<[f64; 2]>,
    sentences: Vec<String>,
}

pub fn from_activitynet_captions(json: &str) -> Result<Vec<SampleRecord>> {
    let videos: std::collections::BTreeMap<String, AnetVideo> = serde_json::from_str(json)?;
    let mut out = Vec::new();
    for (vid, v) in videos {
        if v.timestamps.len() != v.sentences.len() {
            return Err(Error::Config(format!(
                "video {vid}: timestamps and sentences differ in length"
            )));
        }
        for (k, (ts, sentence)) in v.timestamps.iter().zip(&v.sentences).enumerate() {
            out.push(SampleRecord {
                sample_id: format!("{vid}#{k}"),
                video_id: vid.clone(),
                duration: v.duration,
                query: sentence.trim().to_string(),
                gt_start: ts[0].max(0.0),
                gt_end: ts[1].min(v.duration),
                category: None,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charades_lines() {
        let durations = HashMap::from([("AO8RW".to_string(), 33.0)]);
        let recs = from_charades_sta(
            "AO8RW 0.0 6.9##a person is putting a book on a shelf.\nAO8RW 13.1 21.0##person opens the door.\n",
            &durations,
        )
        .unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[1].sample_id, "AO8RW#1");
        assert_eq!((recs[1].gt_start, recs[1].gt_end, recs[1].duration), (13.1, 21.0, 33.0));
        assert!(recs.iter().all(|r| r.validate().is_ok()));
        assert!(from_charades_sta("XYZ 0 1##q", &durations).is_err());
    }

    #[test]
    fn activitynet_json() {
        let json = r#"{"v_abc": {"duration": 82.7, "timestamps": [[0, 20.5], [18.2, 90.0]], "sentences": ["A man enters.", " He sits. "]}}"#;
        let recs = from_activitynet_captions(json).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[1].gt_end, 82.7);
        assert_eq!(recs[1].query, "He sits.");
    }
}
