//! Grounding metrics: R1@m, mIoU and the temporal directionality discrepancy.
//!
//! Reversed-video predictions are scored against the mirrored ground truth.
//! Abstentions and malformed predictions count as zero overlap.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::span::{iou, reverse_span, Direction, EventCategory, Prediction, TimeSpan};

pub const DEFAULT_THRESHOLDS: [f64; 3] = [0.3, 0.5, 0.7];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub sample_id: String,
    pub category: EventCategory,
    pub fwd_pred: Prediction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rev_pred: Option<Prediction>,
    pub gt_span: TimeSpan,
    pub duration: f64,
}

impl EvalRecord {
    /// Overlap of the prediction for `direction` with its ground truth.
    pub fn overlap(&self, direction: Direction) -> Result<f64> {
        let (pred, target) = match direction {
            Direction::Forward => (&self.fwd_pred, self.gt_span),
            Direction::Reversed => {
                let pred = self.rev_pred.as_ref().ok_or_else(|| Error::Precondition {
                    sample: Some(self.sample_id.clone()),
                    message: "reversed metric requested but no reversed prediction".into(),
                })?;
                let mirrored = reverse_span(self.gt_span, self.duration).map_err(|e| e.for_sample(&self.sample_id))?;
                (pred, mirrored)
            }
        };
        Ok(pred.span().map_or(0.0, |s| iou(s, target)))
    }
}

/// Pairwise (cascade) summation.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BASE: usize = 16;
    if xs.len() <= BASE {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

fn sorted(records: &[EvalRecord]) -> Vec<&EvalRecord> {
    let mut v: Vec<&EvalRecord> = records.iter().collect();
    v.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    v
}

fn overlaps(records: &[EvalRecord], direction: Direction) -> Result<Vec<f64>> {
    if records.is_empty() {
        return Err(Error::EmptyRecords);
    }
    sorted(records).into_iter().map(|r| r.overlap(direction)).collect()
}

/// Fraction of records whose IoU strictly exceeds `m`.
pub fn r1_at_m(records: &[EvalRecord], m: f64, direction: Direction) -> Result<f64> {
    let v = overlaps(records, direction)?;
    Ok(v.iter().filter(|x| **x > m).count() as f64 / v.len() as f64)
}

pub fn mean_iou(records: &[EvalRecord], direction: Direction) -> Result<f64> {
    let v = overlaps(records, direction)?;
    Ok(pairwise_sum(&v) / v.len() as f64)
}

/// `(R1(fwd) - R1(rev)) / R1(fwd)` on one category subset; `None` when the
/// forward R1 is zero.
pub fn tdd(records: &[EvalRecord], m: f64, subset: EventCategory) -> Result<Option<f64>> {
    let subset_records: Vec<EvalRecord> = records.iter().filter(|r| r.category == subset).cloned().collect();
    if subset_records.is_empty() {
        return Err(Error::EmptySubset(subset.to_string()));
    }
    let fwd = r1_at_m(&subset_records, m, Direction::Forward)?;
    if fwd == 0.0 {
        return Ok(None);
    }
    let rev = r1_at_m(&subset_records, m, Direction::Reversed)?;
    Ok(Some((fwd - rev) / fwd))
}

fn key(m: f64) -> String {
    format!("{m}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionMetrics {
    pub r1: BTreeMap<String, f64>,
    pub miou: f64,
}

impl DirectionMetrics {
    fn compute(records: &[EvalRecord], thresholds: &[f64], direction: Direction) -> Result<Self> {
        let v = overlaps(records, direction)?;
        let r1 = thresholds
            .iter()
            .map(|m| (key(*m), v.iter().filter(|x| **x > *m).count() as f64 / v.len() as f64))
            .collect();
        Ok(DirectionMetrics {
            r1,
            miou: pairwise_sum(&v) / v.len() as f64,
        })
    }

    pub fn r1_at(&self, m: f64) -> Option<f64> {
        self.r1.get(&key(m)).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetMetrics {
    pub count: usize,
    pub forward: DirectionMetrics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reversed: Option<DirectionMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub thresholds: Vec<f64>,
    pub count: usize,
    pub counts: BTreeMap<EventCategory, usize>,
    pub forward: DirectionMetrics,
    /// Present when every record carries a reversed prediction.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reversed: Option<DirectionMetrics>,
    /// Per category and threshold; `null` when undefined.
    pub tdd: BTreeMap<EventCategory, BTreeMap<String, Option<f64>>>,
    pub subsets: BTreeMap<EventCategory, SubsetMetrics>,
}

impl MetricReport {
    pub fn compute(records: &[EvalRecord], thresholds: &[f64]) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyRecords);
        }
        let has_rev = records.iter().all(|r| r.rev_pred.is_some());
        let mut counts = BTreeMap::new();
        let mut tdd_map = BTreeMap::new();
        let mut subsets = BTreeMap::new();
        for cat in EventCategory::ALL {
            let sub: Vec<EvalRecord> = records.iter().filter(|r| r.category == cat).cloned().collect();
            counts.insert(cat, sub.len());
            if sub.is_empty() {
                continue;
            }
            let forward = DirectionMetrics::compute(&sub, thresholds, Direction::Forward)?;
            let reversed = if has_rev {
                Some(DirectionMetrics::compute(&sub, thresholds, Direction::Reversed)?)
            } else {
                None
            };
            let per_m = thresholds
                .iter()
                .map(|m| {
                    let v = reversed.as_ref().and_then(|rev| {
                        let f = forward.r1_at(*m)?;
                        let r = rev.r1_at(*m)?;
                        (f > 0.0).then(|| (f - r) / f)
                    });
                    (key(*m), v)
                })
                .collect();
            tdd_map.insert(cat, per_m);
            subsets.insert(
                cat,
                SubsetMetrics {
                    count: sub.len(),
                    forward,
                    reversed,
                },
            );
        }
        Ok(MetricReport {
            thresholds: thresholds.to_vec(),
            count: records.len(),
            counts,
            forward: DirectionMetrics::compute(records, thresholds, Direction::Forward)?,
            reversed: if has_rev {
                Some(DirectionMetrics::compute(records, thresholds, Direction::Reversed)?)
            } else {
                None
            },
            tdd: tdd_map,
            subsets,
        })
    }

    pub fn tdd_at(&self, subset: EventCategory, m: f64) -> Option<f64> {
        self.tdd.get(&subset)?.get(&key(m)).copied().flatten()
    }

    pub fn subset_r1(&self, subset: EventCategory, m: f64, direction: Direction) -> Option<f64> {
        let s = self.subsets.get(&subset)?;
        match direction {
            Direction::Forward => s.forward.r1_at(m),
            Direction::Reversed => s.reversed.as_ref()?.r1_at(m),
        }
    }

    /// Plain-text table with one row per subset.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{:.4}", x));
        out.push_str(&format!("{:<12} {:>6}", "subset", "n"));
        for m in &self.thresholds {
            out.push_str(&format!(
                " {:>9} {:>9} {:>9}",
                format!("fwd@{m}"),
                format!("rev@{m}"),
                format!("tdd@{m}")
            ));
        }
        out.push_str(&format!(" {:>9}\n", "mIoU"));
        for (cat, s) in &self.subsets {
            out.push_str(&format!("{:<12} {:>6}", cat.as_str(), s.count));
            for m in &self.thresholds {
                out.push_str(&format!(
                    " {:>9} {:>9} {:>9}",
                    fmt(s.forward.r1_at(*m)),
                    fmt(s.reversed.as_ref().and_then(|r| r.r1_at(*m))),
                    fmt(self.tdd_at(*cat, *m))
                ));
            }
            out.push_str(&format!(" {:>9}\n", format!("{:.4}", s.forward.miou)));
        }
        out.push_str(&format!("{:<12} {:>6}", "all", self.count));
        for m in &self.thresholds {
            out.push_str(&format!(
                " {:>9} {:>9} {:>9}",
                fmt(self.forward.r1_at(*m)),
                fmt(self.reversed.as_ref().and_then(|r| r.r1_at(*m))),
                "-"
            ));
        }
        out.push_str(&format!(" {:>9}\n", format!("{:.4}", self.forward.miou)));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ts(s: f64, e: f64) -> TimeSpan {
        TimeSpan::new(s, e).unwrap()
    }

    fn rec(id: &str, cat: EventCategory, fwd: Prediction, rev: Option<Prediction>) -> EvalRecord {
        EvalRecord {
            sample_id: id.into(),
            category: cat,
            fwd_pred: fwd,
            rev_pred: rev,
            gt_span: ts(2.0, 6.0),
            duration: 10.0,
        }
    }

    #[test]
    fn r1_examples() {
        let perfect = vec![rec("a", EventCategory::Sensitive, ts(2.0, 6.0).into(), None)];
        assert_eq!(r1_at_m(&perfect, 0.7, Direction::Forward).unwrap(), 1.0);
        let none = vec![
            rec(
                "a",
                EventCategory::Sensitive,
                Prediction::NoEvent,
                Some(Prediction::NoEvent),
            ),
            rec(
                "b",
                EventCategory::Sensitive,
                Prediction::Invalid,
                Some(Prediction::NoEvent),
            ),
        ];
        for m in DEFAULT_THRESHOLDS {
            assert_eq!(r1_at_m(&none, m, Direction::Forward).unwrap(), 0.0);
            assert_eq!(r1_at_m(&none, m, Direction::Reversed).unwrap(), 0.0);
        }
        let one = vec![rec("a", EventCategory::Sensitive, ts(3.0, 7.0).into(), None)];
        assert_eq!(r1_at_m(&one, 0.5, Direction::Forward).unwrap(), 1.0);
        assert_eq!(r1_at_m(&one, 0.7, Direction::Forward).unwrap(), 0.0);
        assert!(matches!(
            r1_at_m(&[], 0.5, Direction::Forward),
            Err(Error::EmptyRecords)
        ));
        assert!(r1_at_m(&one, 0.5, Direction::Reversed).is_err());
    }

    #[test]
    fn miou_examples() {
        let two = vec![
            rec("a", EventCategory::Sensitive, ts(2.0, 6.0).into(), None),
            rec("b", EventCategory::Sensitive, ts(7.0, 9.0).into(), None),
        ];
        assert_eq!(mean_iou(&two, Direction::Forward).unwrap(), 0.5);
        let one = vec![rec("a", EventCategory::Sensitive, ts(3.0, 7.0).into(), None)];
        assert!((mean_iou(&one, Direction::Forward).unwrap() - 0.6).abs() < 1e-15);
        assert!(mean_iou(&[], Direction::Forward).is_err());
    }

    #[test]
    fn tdd_examples() {
        let same = vec![rec(
            "a",
            EventCategory::Insensitive,
            ts(2.0, 6.0).into(),
            Some(ts(4.0, 8.0).into()),
        )];
        assert_eq!(tdd(&same, 0.5, EventCategory::Insensitive).unwrap(), Some(0.0));
        let absent = vec![rec(
            "a",
            EventCategory::Sensitive,
            ts(2.0, 6.0).into(),
            Some(Prediction::NoEvent),
        )];
        assert_eq!(tdd(&absent, 0.5, EventCategory::Sensitive).unwrap(), Some(1.0));

        // 8 of 10 forward hits, 2 of 10 reversed hits
        let recs: Vec<EvalRecord> = (0..10)
            .map(|i| {
                let fwd: Prediction = if i < 8 {
                    ts(2.0, 6.0).into()
                } else {
                    Prediction::NoEvent
                };
                let rev: Prediction = if i < 2 {
                    ts(4.0, 8.0).into()
                } else {
                    Prediction::NoEvent
                };
                rec(&format!("r{i}"), EventCategory::Sensitive, fwd, Some(rev))
            })
            .collect();
        assert!((tdd(&recs, 0.5, EventCategory::Sensitive).unwrap().unwrap() - 0.75).abs() < 1e-12);

        let zero = vec![rec(
            "a",
            EventCategory::Sensitive,
            Prediction::NoEvent,
            Some(Prediction::NoEvent),
        )];
        assert_eq!(tdd(&zero, 0.5, EventCategory::Sensitive).unwrap(), None);
        assert!(matches!(
            tdd(&zero, 0.5, EventCategory::Insensitive),
            Err(Error::EmptySubset(_))
        ));
    }

    #[test]
    fn report_is_order_independent() {
        let mut recs: Vec<EvalRecord> = (0..40)
            .map(|i| {
                let s = (i % 7) as f64;
                let cat = if i % 3 == 0 {
                    EventCategory::Insensitive
                } else {
                    EventCategory::Sensitive
                };
                rec(
                    &format!("r{i:02}"),
                    cat,
                    ts(s * 0.5, s * 0.5 + 3.3).into(),
                    Some(ts(3.0, 8.1).into()),
                )
            })
            .collect();
        let a = MetricReport::compute(&recs, &DEFAULT_THRESHOLDS).unwrap();
        recs.reverse();
        recs.swap(3, 17);
        let b = MetricReport::compute(&recs, &DEFAULT_THRESHOLDS).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert!(a.to_table().contains("sensitive"));
    }

    #[test]
    fn reversed_protocol_matches_mirrored_predictions() {
        for (ps, pe) in [(1.0, 4.0), (4.0, 8.0), (0.0, 10.0), (5.5, 6.0)] {
            let r = rec(
                "a",
                EventCategory::Sensitive,
                Prediction::NoEvent,
                Some(ts(ps, pe).into()),
            );
            let via_mirrored_gt = r.overlap(Direction::Reversed).unwrap();
            let mirrored_pred = reverse_span(ts(ps, pe), 10.0).unwrap();
            assert!((via_mirrored_gt - iou(mirrored_pred, r.gt_span)).abs() < 1e-12);
        }
    }

    #[test]
    fn pairwise_sum_matches_naive_on_exact_values() {
        let xs: Vec<f64> = (0..1000).map(|i| (i % 13) as f64 * 0.25).collect();
        assert_eq!(pairwise_sum(&xs), xs.iter().sum::<f64>());
    }
}
