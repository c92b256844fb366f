//! Desk-scale training loop: rollouts, rewards, difficulty weights,
//! group-relative advantages, a gradient step, and the epoch-end filter.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    derive_seed, observe, sample_rollouts, score_rollouts, Observation, PolicyGradient, PolicyParams, PolicySet,
    SpanGrid,
};
use crate::curriculum::{
    difficulty_weight, filter_epoch, normalize_weights, CurriculumState, MasteryMetric, Removal, DEFAULT_ETA,
};
use crate::error::{Error, Result};
use crate::grpo::{accumulate_gradient, GrpoConfig};
use crate::io::SynthConfig;
use crate::metrics::{EvalRecord, MetricReport, DEFAULT_THRESHOLDS};
use crate::reward::{emit_response, final_reward};
use crate::span::{Direction, EventCategory, EventSample};

const STREAM_SHUFFLE: u64 = 1;
const STREAM_STEP: u64 = 2;
const STREAM_FILTER: u64 = 3;
const STREAM_EVAL: u64 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub grpo: GrpoConfig,
    pub num_bins: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub step_size: f64,
    pub eta: f64,
    pub mastery_metric: MasteryMetric,
    /// Rescale difficulty weights to unit mean within each batch.
    pub normalize_weights: bool,
    /// Iterations between refreshes of the behaviour policy snapshot.
    pub old_refresh_interval: usize,
    pub thresholds: Vec<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            grpo: GrpoConfig::default(),
            num_bins: 8,
            batch_size: 16,
            epochs: 5,
            step_size: 3.0,
            eta: DEFAULT_ETA,
            mastery_metric: MasteryMetric::Iou,
            normalize_weights: false,
            old_refresh_interval: 1,
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.grpo.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.old_refresh_interval == 0 {
            return Err(Error::Config("old_refresh_interval must be >= 1".into()));
        }
        if !(self.step_size.is_finite() && self.step_size >= 0.0) {
            return Err(Error::Config(format!("step_size must be >= 0, got {}", self.step_size)));
        }
        if !self.eta.is_finite() {
            return Err(Error::Config("eta must be finite".into()));
        }
        SpanGrid::new(self.num_bins)?;
        Ok(())
    }
}

/// Synthetic data plus training settings for one simulated experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub seed: u64,
    pub synth: SynthConfig,
    pub train: TrainConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 2024,
            synth: SynthConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingStatus {
    Completed,
    CurriculumExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// 0 is the untrained baseline.
    pub epoch: usize,
    pub iterations: usize,
    pub active_size: usize,
    pub removed: usize,
    /// Means over greedy predictions on the full dataset.
    pub mean_r_acc: f64,
    pub mean_r_final: f64,
    pub eval: MetricReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub seed: u64,
    pub config: TrainConfig,
    pub observation_noise: f64,
    pub dataset_size: usize,
    pub status: TrainingStatus,
    pub epochs: Vec<EpochMetrics>,
    pub removed: Vec<Removal>,
    pub final_policy: PolicyParams,
}

impl TrainingReport {
    pub fn last(&self) -> &EpochMetrics {
        self.epochs.last().expect("report always holds the baseline epoch")
    }

    pub fn baseline(&self) -> &EpochMetrics {
        &self.epochs[0]
    }

    /// Writes the per-epoch metric curves as CSV.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let ms = &self.config.thresholds;
        let mut header: Vec<String> = [
            "epoch",
            "iterations",
            "active_size",
            "removed",
            "mean_r_acc",
            "mean_r_final",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        for m in ms {
            header.push(format!("r1_fwd@{m}"));
            header.push(format!("r1_rev@{m}"));
        }
        header.push("miou_fwd".into());
        header.push("miou_rev".into());
        for cat in EventCategory::ALL {
            for m in ms {
                header.push(format!("tdd_{cat}@{m}"));
            }
        }
        w.write_record(&header)?;

        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for e in &self.epochs {
            let mut row = vec![
                e.epoch.to_string(),
                e.iterations.to_string(),
                e.active_size.to_string(),
                e.removed.to_string(),
                e.mean_r_acc.to_string(),
                e.mean_r_final.to_string(),
            ];
            for m in ms {
                row.push(opt(e.eval.forward.r1_at(*m)));
                row.push(opt(e.eval.reversed.as_ref().and_then(|r| r.r1_at(*m))));
            }
            row.push(e.eval.forward.miou.to_string());
            row.push(opt(e.eval.reversed.as_ref().map(|r| r.miou)));
            for cat in EventCategory::ALL {
                for m in ms {
                    row.push(opt(e.eval.tdd_at(cat, *m)));
                }
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub iteration: usize,
    pub groups: usize,
    pub mean_reward: f64,
    pub max_reward: f64,
    pub mean_weight: f64,
}

/// Stateful trainer over a fixed dataset. [`Trainer::run`] drives whole
/// epochs; [`Trainer::step`] exposes single iterations.
pub struct Trainer<'a> {
    dataset: &'a [EventSample],
    index: HashMap<&'a str, usize>,
    config: TrainConfig,
    grid: SpanGrid,
    observation_noise: f64,
    seed: u64,
    policy: PolicyParams,
    old: PolicyParams,
    reference: PolicyParams,
    state: CurriculumState,
    iteration: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(dataset: &'a [EventSample], config: &TrainConfig, observation_noise: f64, seed: u64) -> Result<Self> {
        config.validate()?;
        if dataset.is_empty() {
            return Err(Error::Config("training dataset is empty".into()));
        }
        if !(0.0..=1.0).contains(&observation_noise) {
            return Err(Error::Config(format!(
                "observation_noise must be in [0, 1], got {observation_noise}"
            )));
        }
        let mut index = HashMap::with_capacity(dataset.len());
        for (i, s) in dataset.iter().enumerate() {
            if index.insert(s.sample_id.as_str(), i).is_some() {
                return Err(Error::DuplicateId {
                    id: s.sample_id.clone(),
                    line: i + 1,
                });
            }
        }
        let grid = SpanGrid::new(config.num_bins)?;
        let policy = PolicyParams::uniform(&grid, config.step_size)?;
        Ok(Trainer {
            dataset,
            index,
            config: config.clone(),
            grid,
            observation_noise,
            seed,
            old: policy.clone(),
            reference: policy.clone(),
            policy,
            state: CurriculumState::new(dataset.iter().map(|s| s.sample_id.clone())),
            iteration: 0,
        })
    }

    pub fn policy(&self) -> &PolicyParams {
        &self.policy
    }

    pub fn grid(&self) -> &SpanGrid {
        &self.grid
    }

    pub fn state(&self) -> &CurriculumState {
        &self.state
    }

    /// One gradient-ascent iteration over the given dataset indices.
    pub fn step(&mut self, batch: &[usize]) -> Result<StepStats> {
        let g = self.config.grpo.group_size;
        let lambda = self.config.grpo.lambda;
        let mut groups = Vec::with_capacity(batch.len());
        let mut weights = Vec::with_capacity(batch.len());
        let mut rewards = Vec::new();
        {
            let policies = PolicySet {
                current: &self.policy,
                old: &self.old,
                reference: &self.reference,
            };
            for &idx in batch {
                let sample = self
                    .dataset
                    .get(idx)
                    .ok_or_else(|| Error::Config(format!("batch index {idx} out of range")))?;
                let seed = derive_seed(self.seed, &[STREAM_STEP, self.iteration as u64, idx as u64]);
                let mut rollouts = sample_rollouts(&policies, sample, &self.grid, g, self.observation_noise, seed)?;
                let breakdowns = score_rollouts(&mut rollouts, sample, lambda)?;
                rewards.extend(breakdowns.iter().map(|b| b.r_final));
                let t_ious: Vec<f64> = breakdowns.iter().map(|b| b.r_acc).collect();
                weights.push(difficulty_weight(&t_ious, self.config.grpo.tau)?);
                groups.push(rollouts);
            }
        }
        if self.config.normalize_weights {
            normalize_weights(&mut weights);
        }

        // each table row takes the mean gradient of the groups that touched it,
        // so the shared context rows move no faster than a perception row
        let mut grad = PolicyGradient::zeros_like(&self.policy);
        for (rollouts, w) in groups.iter().zip(&weights) {
            accumulate_gradient(&mut grad, &rollouts.forward, *w, &self.policy, &self.config.grpo)?;
            accumulate_gradient(&mut grad, &rollouts.reversed, *w, &self.policy, &self.config.grpo)?;
        }
        let observations: Vec<Observation> = groups
            .iter()
            .flat_map(|r| [&r.forward, &r.reversed])
            .filter_map(|g| g.observation)
            .collect();
        grad.average_rows(&observations);
        let step_size = self.policy.step_size;
        self.policy.apply(&grad, step_size)?;
        self.iteration += 1;
        if self.iteration.is_multiple_of(self.config.old_refresh_interval) {
            self.old = self.policy.clone();
        }

        let n = rewards.len().max(1) as f64;
        Ok(StepStats {
            iteration: self.iteration,
            groups: groups.len(),
            mean_reward: rewards.iter().sum::<f64>() / n,
            max_reward: rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            mean_weight: weights.iter().sum::<f64>() / weights.len().max(1) as f64,
        })
    }

    fn active_indices(&self) -> Vec<usize> {
        self.state.active_ids.iter().map(|id| self.index[id.as_str()]).collect()
    }

    /// Trains one epoch over the active set in shuffled batches.
    pub fn train_epoch(&mut self) -> Result<Vec<StepStats>> {
        let mut order = self.active_indices();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &[STREAM_SHUFFLE, self.state.epoch as u64]));
        order.shuffle(&mut rng);
        let batches: Vec<Vec<usize>> = order.chunks(self.config.batch_size).map(|c| c.to_vec()).collect();
        batches.iter().map(|b| self.step(b)).collect()
    }

    /// Greedy predictions of the current policy on the whole dataset.
    pub fn evaluate(&self, epoch: usize) -> Result<(Vec<EvalRecord>, f64, f64)> {
        let mut records = Vec::with_capacity(self.dataset.len());
        let (mut acc, mut fin) = (0.0, 0.0);
        for (idx, sample) in self.dataset.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &[STREAM_EVAL, epoch as u64, idx as u64]));
            let d = sample.duration();
            let fwd_obs = observe(sample, Direction::Forward, &self.grid, self.observation_noise, &mut rng)?;
            let rev_obs = observe(
                sample,
                Direction::Reversed,
                &self.grid,
                self.observation_noise,
                &mut rng,
            )?;
            let fwd = self.grid.to_prediction(self.policy.greedy_action(&fwd_obs), d);
            let rev = self.grid.to_prediction(self.policy.greedy_action(&rev_obs), d);
            let b = final_reward(
                &emit_response(&fwd, "forward video"),
                Some(&emit_response(&rev, "reversed video")),
                sample,
                self.config.grpo.lambda,
            )?;
            acc += b.r_acc;
            fin += b.r_final;
            records.push(EvalRecord {
                sample_id: sample.sample_id.clone(),
                category: sample.category,
                fwd_pred: fwd,
                rev_pred: Some(rev),
                gt_span: sample.gt_span,
                duration: d,
            });
        }
        let n = self.dataset.len() as f64;
        Ok((records, acc / n, fin / n))
    }

    fn epoch_metrics(&self, epoch: usize, removed: usize) -> Result<EpochMetrics> {
        let (records, mean_r_acc, mean_r_final) = self.evaluate(epoch)?;
        Ok(EpochMetrics {
            epoch,
            iterations: self.iteration,
            active_size: self.state.active_ids.len(),
            removed,
            mean_r_acc,
            mean_r_final,
            eval: MetricReport::compute(&records, &self.config.thresholds)?,
        })
    }

    /// Samples fresh forward rollouts for every active sample and removes the
    /// mastered ones. Returns the number removed.
    pub fn filter(&mut self) -> Result<usize> {
        let g = self.config.grpo.group_size;
        let policies = PolicySet::single(&self.policy);
        let mut overlaps = BTreeMap::new();
        for id in &self.state.active_ids {
            let idx = self.index[id.as_str()];
            let seed = derive_seed(self.seed, &[STREAM_FILTER, self.state.epoch as u64, idx as u64]);
            let rollouts = sample_rollouts(
                &policies,
                &self.dataset[idx],
                &self.grid,
                g,
                self.observation_noise,
                seed,
            )?;
            let vals = rollouts
                .forward
                .responses
                .iter()
                .map(|r| match self.config.mastery_metric {
                    MasteryMetric::Iou => r.iou_fwd,
                    MasteryMetric::TIou => r.t_iou_fwd,
                })
                .collect();
            overlaps.insert(id.clone(), vals);
        }
        let before = self.state.active_ids.len();
        self.state = filter_epoch(&self.state, &overlaps, self.config.eta)?;
        Ok(before - self.state.active_ids.len())
    }

    pub fn run(mut self) -> Result<TrainingReport> {
        let mut epochs = vec![self.epoch_metrics(0, 0)?];
        let mut status = TrainingStatus::Completed;
        for epoch in 1..=self.config.epochs {
            self.train_epoch()?;
            let removed = self.filter()?;
            epochs.push(self.epoch_metrics(epoch, removed)?);
            tracing::info!(epoch, active = self.state.active_ids.len(), removed, "epoch finished");
            if self.state.is_exhausted() {
                tracing::warn!(epoch, "curriculum exhausted; stopping early");
                status = TrainingStatus::CurriculumExhausted;
                break;
            }
        }
        Ok(TrainingReport {
            seed: self.seed,
            config: self.config,
            observation_noise: self.observation_noise,
            dataset_size: self.dataset.len(),
            status,
            epochs,
            removed: self.state.removed,
            final_policy: self.policy,
        })
    }
}

/// Runs a full training simulation.
pub fn train(
    dataset: &[EventSample],
    config: &TrainConfig,
    observation_noise: f64,
    seed: u64,
) -> Result<TrainingReport> {
    Trainer::new(dataset, config, observation_noise, seed)?.run()
}
