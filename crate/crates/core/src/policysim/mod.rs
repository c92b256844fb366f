//! Tabular stand-in for the video-language policy.
//!
//! Span predictions are discretized onto a grid of `K` bins per video, giving
//! `K(K+1)/2` span actions plus one abstain action. The policy sees a coarse
//! [`Observation`] of where the event appears in the presented video together
//! with the playback direction and the event category.
//!
//! Logits are the sum of two tables: a perception table indexed only by the
//! observed location bucket, shared by both playback directions, and a context
//! table with one bias row per (direction, category) pair. An untrained policy
//! therefore localizes an event in the reversed video wherever it appears,
//! regardless of direction; learning to treat reversed time-sensitive events
//! differently has to go through the context row.

mod train;

pub use train::{train, EpochMetrics, SimConfig, StepStats, TrainConfig, Trainer, TrainingReport, TrainingStatus};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grpo::{Response, ResponseGroup};
use crate::reward::{emit_response, final_reward, RewardBreakdown};
use crate::span::{iou, reverse_span, Direction, EventCategory, EventSample, Prediction, TimeSpan};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridAction {
    /// Bins `lo..hi` (exclusive upper bin edge index).
    Span {
        lo: usize,
        hi: usize,
    },
    Abstain,
}

/// All bin-pair spans of a `K`-bin grid followed by the abstain action.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanGrid {
    num_bins: usize,
    actions: Vec<GridAction>,
}

impl SpanGrid {
    pub fn new(num_bins: usize) -> Result<Self> {
        if num_bins < 2 {
            return Err(Error::Config(format!("grid needs at least 2 bins, got {num_bins}")));
        }
        let mut actions = Vec::with_capacity(num_bins * (num_bins + 1) / 2 + 1);
        for lo in 0..num_bins {
            for hi in lo + 1..=num_bins {
                actions.push(GridAction::Span { lo, hi });
            }
        }
        actions.push(GridAction::Abstain);
        Ok(SpanGrid { num_bins, actions })
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    pub fn num_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn num_span_actions(&self) -> usize {
        self.actions.len() - 1
    }

    pub fn abstain_id(&self) -> usize {
        self.actions.len() - 1
    }

    pub fn action(&self, id: usize) -> Option<GridAction> {
        self.actions.get(id).copied()
    }

    pub fn span_for(&self, id: usize, duration: f64) -> Option<TimeSpan> {
        match self.action(id)? {
            GridAction::Span { lo, hi } => {
                let k = self.num_bins as f64;
                let start = lo as f64 * duration / k;
                let end = if hi == self.num_bins {
                    duration
                } else {
                    hi as f64 * duration / k
                };
                TimeSpan::new(start, end).ok()
            }
            GridAction::Abstain => None,
        }
    }

    pub fn to_prediction(&self, id: usize, duration: f64) -> Prediction {
        match self.action(id) {
            Some(GridAction::Abstain) => Prediction::NoEvent,
            Some(GridAction::Span { .. }) => self
                .span_for(id, duration)
                .map_or(Prediction::Invalid, Prediction::from),
            None => Prediction::Invalid,
        }
    }

    /// The span action with the highest IoU against `span`; ties go to the lowest id.
    pub fn nearest_span_action(&self, span: TimeSpan, duration: f64) -> usize {
        let mut best = (0, f64::NEG_INFINITY);
        for id in 0..self.num_span_actions() {
            let cand = self.span_for(id, duration).expect("span action");
            let v = iou(cand, span);
            if v > best.1 {
                best = (id, v);
            }
        }
        best.0
    }
}

/// What the tabular policy conditions on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Observation {
    /// Grid span action closest to where the event appears in the presented video.
    pub gt_bucket: usize,
    pub direction: Direction,
    pub category: EventCategory,
}

impl Observation {
    pub(crate) fn context_row(&self) -> usize {
        let dir = matches!(self.direction, Direction::Reversed) as usize;
        let cat = matches!(self.category, EventCategory::Insensitive) as usize;
        dir * 2 + cat
    }
}

/// Builds the observation for one playback direction of a sample. With
/// probability `noise` the location bucket is replaced by a uniform draw.
pub fn observe<R: Rng>(
    sample: &EventSample,
    direction: Direction,
    grid: &SpanGrid,
    noise: f64,
    rng: &mut R,
) -> Result<Observation> {
    let d = sample.duration();
    let presented = match direction {
        Direction::Forward => sample.gt_span,
        Direction::Reversed => reverse_span(sample.gt_span, d).map_err(|e| e.for_sample(&sample.sample_id))?,
    };
    let mut gt_bucket = grid.nearest_span_action(presented, d);
    if noise > 0.0 && rng.random::<f64>() < noise {
        gt_bucket = rng.random_range(0..grid.num_span_actions());
    }
    Ok(Observation {
        gt_bucket,
        direction,
        category: sample.category,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitTable {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl LogitTable {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        LogitTable {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.values[r * self.cols..(r + 1) * self.cols]
    }

    fn same_shape(&self, other: &LogitTable) -> bool {
        self.rows == other.rows && self.cols == other.cols && self.values.len() == other.values.len()
    }
}

/// Parameters of the tabular softmax policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub num_bins: usize,
    pub perception: LogitTable,
    pub context: LogitTable,
    pub step_size: f64,
}

impl PolicyParams {
    /// All-zero logits, i.e. the uniform policy.
    pub fn uniform(grid: &SpanGrid, step_size: f64) -> Result<Self> {
        if !(step_size.is_finite() && step_size >= 0.0) {
            return Err(Error::Config(format!("step size must be >= 0, got {step_size}")));
        }
        let buckets = grid.num_span_actions();
        let actions = grid.num_actions();
        Ok(PolicyParams {
            num_bins: grid.num_bins(),
            perception: LogitTable::zeros(buckets, actions),
            context: LogitTable::zeros(4, actions),
            step_size,
        })
    }

    pub fn num_actions(&self) -> usize {
        self.perception.cols
    }

    pub fn num_buckets(&self) -> usize {
        self.perception.rows
    }

    pub fn check_observation(&self, obs: &Observation) -> Result<()> {
        if obs.gt_bucket >= self.num_buckets() {
            return Err(Error::ShapeMismatch(format!(
                "bucket {} out of range for {} buckets",
                obs.gt_bucket,
                self.num_buckets()
            )));
        }
        Ok(())
    }

    pub fn logits(&self, obs: &Observation) -> Vec<f64> {
        self.perception
            .row(obs.gt_bucket)
            .iter()
            .zip(self.context.row(obs.context_row()))
            .map(|(a, b)| a + b)
            .collect()
    }

    pub fn log_probs(&self, obs: &Observation) -> Vec<f64> {
        log_softmax(&self.logits(obs))
    }

    pub fn probs(&self, obs: &Observation) -> Vec<f64> {
        self.log_probs(obs).into_iter().map(f64::exp).collect()
    }

    /// Most likely action; ties go to the lowest id.
    pub fn greedy_action(&self, obs: &Observation) -> usize {
        let logits = self.logits(obs);
        let mut best = 0;
        for (i, v) in logits.iter().enumerate() {
            if *v > logits[best] {
                best = i;
            }
        }
        best
    }

    pub fn sample_action<R: Rng>(&self, obs: &Observation, rng: &mut R) -> usize {
        let probs = self.probs(obs);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        // u landed in the rounding gap above the cumulative sum
        probs.iter().rposition(|p| *p > 0.0).unwrap_or(probs.len() - 1)
    }

    /// Gradient ascent: `params += scale * grad`.
    pub fn apply(&mut self, grad: &PolicyGradient, scale: f64) -> Result<()> {
        if !grad.matches(self) {
            return Err(Error::ShapeMismatch("gradient does not match policy".into()));
        }
        for (p, g) in self.perception.values.iter_mut().zip(&grad.perception.values) {
            *p += scale * g;
        }
        for (p, g) in self.context.values.iter_mut().zip(&grad.context.values) {
            *p += scale * g;
        }
        Ok(())
    }

    fn same_shape(&self, other: &PolicyParams) -> bool {
        self.perception.same_shape(&other.perception) && self.context.same_shape(&other.context)
    }
}

/// Same layout as [`PolicyParams`]' logit tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyGradient {
    pub perception: LogitTable,
    pub context: LogitTable,
}

impl PolicyGradient {
    pub fn zeros_like(policy: &PolicyParams) -> Self {
        PolicyGradient {
            perception: LogitTable::zeros(policy.perception.rows, policy.perception.cols),
            context: LogitTable::zeros(policy.context.rows, policy.context.cols),
        }
    }

    pub fn matches(&self, policy: &PolicyParams) -> bool {
        self.perception.same_shape(&policy.perception) && self.context.same_shape(&policy.context)
    }

    /// Adds a gradient with respect to the combined logits of `obs`; both
    /// tables receive it because both enter the sum.
    pub(crate) fn add_row(&mut self, obs: &Observation, d_logits: &[f64]) {
        for (g, d) in self.perception.row_mut(obs.gt_bucket).iter_mut().zip(d_logits) {
            *g += d;
        }
        for (g, d) in self.context.row_mut(obs.context_row()).iter_mut().zip(d_logits) {
            *g += d;
        }
    }

    pub fn add(&mut self, other: &PolicyGradient) {
        for (a, b) in self.perception.values.iter_mut().zip(&other.perception.values) {
            *a += b;
        }
        for (a, b) in self.context.values.iter_mut().zip(&other.context.values) {
            *a += b;
        }
    }

    /// Divides each row by the number of groups whose observation touched it,
    /// turning a summed batch gradient into per-row means.
    pub fn average_rows(&mut self, observations: &[Observation]) {
        let mut p = vec![0usize; self.perception.rows];
        let mut x = vec![0usize; self.context.rows];
        for o in observations {
            p[o.gt_bucket] += 1;
            x[o.context_row()] += 1;
        }
        for (table, counts) in [(&mut self.perception, p), (&mut self.context, x)] {
            for (r, n) in counts.into_iter().enumerate() {
                if n > 1 {
                    table.row_mut(r).iter_mut().for_each(|v| *v /= n as f64);
                }
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.perception
            .values
            .iter()
            .chain(&self.context.values)
            .all(|v| *v == 0.0)
    }
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

/// Exact `KL(a || b)` between two policies at one observation.
pub fn exact_kl(policy_a: &PolicyParams, policy_b: &PolicyParams, obs: &Observation) -> Result<f64> {
    if !policy_a.same_shape(policy_b) {
        return Err(Error::ShapeMismatch("policies use different grids".into()));
    }
    policy_a.check_observation(obs)?;
    let la = policy_a.log_probs(obs);
    let lb = policy_b.log_probs(obs);
    let mut kl = 0.0;
    for (action, (a, b)) in la.iter().zip(&lb).enumerate() {
        let pa = a.exp();
        if pa == 0.0 {
            continue;
        }
        if b.exp() == 0.0 {
            return Err(Error::InfiniteDivergence { action });
        }
        kl += pa * (a - b);
    }
    Ok(kl.max(0.0))
}

/// The three policy snapshots a rollout records log-probabilities under.
#[derive(Debug, Clone, Copy)]
pub struct PolicySet<'a> {
    pub current: &'a PolicyParams,
    pub old: &'a PolicyParams,
    pub reference: &'a PolicyParams,
}

impl<'a> PolicySet<'a> {
    pub fn single(policy: &'a PolicyParams) -> Self {
        PolicySet {
            current: policy,
            old: policy,
            reference: policy,
        }
    }
}

/// Forward and reversed rollout groups for one sample. Response `i` of each
/// group together form the `i`-th candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollouts {
    pub forward: ResponseGroup,
    pub reversed: ResponseGroup,
}

fn draw_group<R: Rng>(
    policies: &PolicySet<'_>,
    sample: &EventSample,
    grid: &SpanGrid,
    obs: Observation,
    target: TimeSpan,
    g: usize,
    rng: &mut R,
) -> Result<ResponseGroup> {
    policies.current.check_observation(&obs)?;
    let d = sample.duration();
    let lc = policies.current.log_probs(&obs);
    let lo = policies.old.log_probs(&obs);
    let lr = policies.reference.log_probs(&obs);
    let mut responses = Vec::with_capacity(g);
    for _ in 0..g {
        let a = policies.old.sample_action(&obs, rng);
        let prediction = grid.to_prediction(a, d);
        let (t_iou_fwd, iou_fwd) = match prediction.span() {
            Some(span) => (crate::reward::t_iou(span, target, d)?, iou(span, target)),
            None => (0.0, 0.0),
        };
        responses.push(Response {
            action_id: a,
            prediction,
            logp_current: lc[a],
            logp_old: lo[a],
            logp_ref: lr[a],
            reward: 0.0,
            t_iou_fwd,
            iou_fwd,
        });
    }
    Ok(ResponseGroup {
        sample_id: sample.sample_id.clone(),
        observation: Some(obs),
        responses,
    })
}

/// Draws `g` actions per direction from the behaviour (old) policy. Overlap
/// fields of the reversed group are measured against the mirrored ground truth.
/// Rewards are left at zero; see [`score_rollouts`].
pub fn sample_rollouts(
    policies: &PolicySet<'_>,
    sample: &EventSample,
    grid: &SpanGrid,
    g: usize,
    observation_noise: f64,
    rng_seed: u64,
) -> Result<Rollouts> {
    if g < 2 {
        return Err(Error::GroupTooSmall(g));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let d = sample.duration();
    let mirrored = reverse_span(sample.gt_span, d).map_err(|e| e.for_sample(&sample.sample_id))?;
    let fwd_obs = observe(sample, Direction::Forward, grid, observation_noise, &mut rng)?;
    let rev_obs = observe(sample, Direction::Reversed, grid, observation_noise, &mut rng)?;
    let forward = draw_group(policies, sample, grid, fwd_obs, sample.gt_span, g, &mut rng)?;
    let reversed = draw_group(policies, sample, grid, rev_obs, mirrored, g, &mut rng)?;
    Ok(Rollouts { forward, reversed })
}

/// Scores candidate `i` from its forward and reversed responses, rendered
/// through the reasoning template, and stores `r_final` as both responses' reward.
pub fn score_rollouts(rollouts: &mut Rollouts, sample: &EventSample, lambda: f64) -> Result<Vec<RewardBreakdown>> {
    let mut out = Vec::with_capacity(rollouts.forward.responses.len());
    for (f, r) in rollouts
        .forward
        .responses
        .iter_mut()
        .zip(rollouts.reversed.responses.iter_mut())
    {
        let fwd_text = emit_response(&f.prediction, "forward video");
        let rev_text = emit_response(&r.prediction, "reversed video");
        let b = final_reward(&fwd_text, Some(&rev_text), sample, lambda)?;
        f.reward = b.r_final;
        r.reward = b.r_final;
        out.push(b);
    }
    Ok(out)
}

/// Deterministic 64-bit seed derivation (SplitMix64 over the stream path).
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    path.iter().fold(mix(seed), |acc, p| mix(acc ^ mix(*p)))
}
