//! Difficulty weighting and epoch-end removal of mastered samples.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mastery threshold used when none is configured.
pub const DEFAULT_ETA: f64 = 0.7;

/// `exp((1 - mean(t_ious)) / tau)`: harder samples (lower mean tIoU) weigh more.
pub fn difficulty_weight(t_ious: &[f64], tau: f64) -> Result<f64> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::Config(format!("tau must be > 0, got {tau}")));
    }
    if t_ious.is_empty() {
        return Err(Error::Config("difficulty weight needs at least one rollout".into()));
    }
    let mean = t_ious.iter().sum::<f64>() / t_ious.len() as f64;
    Ok(((1.0 - mean) / tau).exp())
}

/// Divides each weight by the batch mean. Off by default in training.
pub fn normalize_weights(weights: &mut [f64]) {
    if weights.is_empty() {
        return;
    }
    let mean = weights.iter().sum::<f64>() / weights.len() as f64;
    if mean > 0.0 {
        weights.iter_mut().for_each(|w| *w /= mean);
    }
}

/// Which overlap measure decides mastery.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MasteryMetric {
    #[default]
    Iou,
    TIou,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Removal {
    pub sample_id: String,
    pub epoch_removed: usize,
    pub min_iou_at_removal: f64,
}

/// Active training set plus the log of everything filtered out so far.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CurriculumState {
    pub epoch: usize,
    pub active_ids: BTreeSet<String>,
    pub removed: Vec<Removal>,
}

impl CurriculumState {
    pub fn new<I, S>(ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        CurriculumState {
            epoch: 0,
            active_ids: ids.into_iter().map(Into::into).collect(),
            removed: Vec::new(),
        }
    }

    pub fn is_exhausted(&self) -> bool {
        self.active_ids.is_empty()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Ends an epoch: drops every active sample whose worst rollout overlap is
/// strictly above `eta`, then advances the epoch counter.
pub fn filter_epoch(
    state: &CurriculumState,
    per_sample_ious: &BTreeMap<String, Vec<f64>>,
    eta: f64,
) -> Result<CurriculumState> {
    let missing: Vec<String> = state
        .active_ids
        .iter()
        .filter(|id| per_sample_ious.get(*id).is_none_or(|v| v.is_empty()))
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingSamples(missing));
    }

    let mut next = state.clone();
    next.epoch += 1;
    for id in &state.active_ids {
        let worst = per_sample_ious[id].iter().copied().fold(f64::INFINITY, f64::min);
        if worst > eta {
            tracing::debug!(sample = %id, worst, eta, "sample mastered; removing");
            next.active_ids.remove(id);
            next.removed.push(Removal {
                sample_id: id.clone(),
                epoch_removed: state.epoch,
                min_iou_at_removal: worst,
            });
        }
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ious(pairs: &[(&str, &[f64])]) -> BTreeMap<String, Vec<f64>> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_vec())).collect()
    }

    #[test]
    fn weight_examples() {
        assert_eq!(difficulty_weight(&[1.0; 8], 2.0).unwrap(), 1.0);
        assert!((difficulty_weight(&[0.0; 8], 2.0).unwrap() - 0.5f64.exp()).abs() < 1e-12);
        assert!((difficulty_weight(&[0.0; 8], 2.0).unwrap() - 1.64872).abs() < 1e-5);
        assert!((difficulty_weight(&[0.5, 0.5], 2.0).unwrap() - 1.28403).abs() < 1e-5);
        assert!(matches!(difficulty_weight(&[0.5], 0.0), Err(Error::Config(_))));
        assert!(difficulty_weight(&[0.5], -1.0).is_err());
    }

    #[test]
    fn filter_examples() {
        let state = CurriculumState::new(["a", "b", "c"]);
        let map = ious(&[("a", &[0.8, 0.9, 0.75]), ("b", &[0.9, 0.65]), ("c", &[0.7, 0.7])]);
        let next = filter_epoch(&state, &map, 0.7).unwrap();
        assert_eq!(next.epoch, 1);
        assert_eq!(next.active_ids, ["b", "c"].iter().map(|s| s.to_string()).collect());
        assert_eq!(next.removed.len(), 1);
        assert_eq!(next.removed[0].sample_id, "a");
        assert_eq!(next.removed[0].min_iou_at_removal, 0.75);
        assert_eq!(next.removed[0].epoch_removed, 0);
    }

    #[test]
    fn filter_reports_missing_ids() {
        let state = CurriculumState::new(["a", "b", "z"]);
        let map = ious(&[("a", &[0.1])]);
        match filter_epoch(&state, &map, 0.7) {
            Err(Error::MissingSamples(ids)) => assert_eq!(ids, vec!["b", "z"]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn normalization_gives_unit_mean() {
        let mut w = vec![1.0, 1.5, 2.0];
        normalize_weights(&mut w);
        assert!((w.iter().sum::<f64>() / 3.0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn state_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.json");
        let state = filter_epoch(
            &CurriculumState::new(["x", "y"]),
            &ious(&[("x", &[0.95, 0.99]), ("y", &[0.2])]),
            0.7,
        )
        .unwrap();
        state.save(&path).unwrap();
        assert_eq!(CurriculumState::load(&path).unwrap(), state);
    }

    proptest! {
        #[test]
        fn filter_shrinks_and_is_idempotent(vals in prop::collection::vec(prop::collection::vec(0.0..=1.0f64, 1..6), 1..30)) {
            let map: BTreeMap<String, Vec<f64>> =
                vals.into_iter().enumerate().map(|(i, v)| (format!("s{i}"), v)).collect();
            let state = CurriculumState::new(map.keys().cloned());
            let once = filter_epoch(&state, &map, DEFAULT_ETA).unwrap();
            prop_assert!(once.active_ids.is_subset(&state.active_ids));
            for r in &once.removed {
                prop_assert!(r.min_iou_at_removal > DEFAULT_ETA);
                prop_assert!(!once.active_ids.contains(&r.sample_id));
            }
            let twice = filter_epoch(&once, &map, DEFAULT_ETA).unwrap();
            prop_assert_eq!(&twice.active_ids, &once.active_ids);
            prop_assert_eq!(twice.removed.len(), once.removed.len());
        }

        #[test]
        fn weight_bounds_and_monotonicity(a in prop::collection::vec(0.0..=1.0f64, 1..9), b in prop::collection::vec(0.0..=1.0f64, 1..9)) {
            let wa = difficulty_weight(&a, 2.0).unwrap();
            let wb = difficulty_weight(&b, 2.0).unwrap();
            for w in [wa, wb] {
                prop_assert!((1.0..=0.5f64.exp()).contains(&w));
            }
            let ma = a.iter().sum::<f64>() / a.len() as f64;
            let mb = b.iter().sum::<f64>() / b.len() as f64;
            if ma < mb - 1e-9 {
                prop_assert!(wa > wb);
            }
        }
    }
}
