//! Group-relative advantages and the KL-regularized surrogate objective,
//! with its exact gradient for the tabular softmax policy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policysim::{Observation, PolicyGradient, PolicyParams};
use crate::span::Prediction;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub action_id: usize,
    #[serde(default = "invalid_prediction")]
    pub prediction: Prediction,
    pub logp_current: f64,
    pub logp_old: f64,
    pub logp_ref: f64,
    pub reward: f64,
    pub t_iou_fwd: f64,
    pub iou_fwd: f64,
}

fn invalid_prediction() -> Prediction {
    Prediction::Invalid
}

/// The G sampled responses for one sample and direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseGroup {
    pub sample_id: String,
    /// Needed only for gradients; the objective ignores it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observation: Option<Observation>,
    pub responses: Vec<Response>,
}

impl ResponseGroup {
    pub fn rewards(&self) -> Vec<f64> {
        self.responses.iter().map(|r| r.reward).collect()
    }

    fn validate(&self) -> Result<()> {
        if self.responses.len() < 2 {
            return Err(Error::GroupTooSmall(self.responses.len()));
        }
        for r in &self.responses {
            if !(r.logp_current.is_finite() && r.logp_old.is_finite() && r.logp_ref.is_finite()) {
                return Err(Error::Precondition {
                    sample: Some(self.sample_id.clone()),
                    message: format!("non-finite log-probability for action {}", r.action_id),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrpoConfig {
    pub group_size: usize,
    pub kl_beta: f64,
    pub clip_eps: Option<f64>,
    pub std_floor: f64,
    pub tau: f64,
    pub lambda: f64,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        GrpoConfig {
            group_size: 8,
            kl_beta: 0.0,
            clip_eps: None,
            std_floor: 1e-6,
            tau: 2.0,
            lambda: 0.5,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.group_size < 2 {
            return bad(format!("group_size must be >= 2, got {}", self.group_size));
        }
        if !(self.kl_beta >= 0.0) {
            return bad(format!("kl_beta must be >= 0, got {}", self.kl_beta));
        }
        if let Some(eps) = self.clip_eps {
            if !(eps > 0.0 && eps < 1.0) {
                return bad(format!("clip_eps must be in (0, 1), got {eps}"));
            }
        }
        if !(self.std_floor > 0.0) {
            return bad(format!("std_floor must be > 0, got {}", self.std_floor));
        }
        if !(self.tau > 0.0) {
            return bad(format!("tau must be > 0, got {}", self.tau));
        }
        if !(self.lambda >= 0.0) {
            return bad(format!("lambda must be >= 0, got {}", self.lambda));
        }
        Ok(())
    }
}

/// Standardizes rewards within a group using the population standard
/// deviation. Groups whose spread is below `std_floor` get all-zero advantages.
pub fn advantages(rewards: &[f64], std_floor: f64) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(Error::GroupTooSmall(rewards.len()));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if !(std >= std_floor) {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

pub fn weighted_advantages(adv: &[f64], weight: f64) -> Result<Vec<f64>> {
    if !(weight.is_finite() && weight > 0.0) {
        return Err(Error::Config(format!("sample weight must be > 0, got {weight}")));
    }
    Ok(adv.iter().map(|a| a * weight).collect())
}

/// Non-negative per-sample estimate of KL(current || ref) from log-probs.
pub fn kl_estimate(logp_current: f64, logp_ref: f64) -> f64 {
    let x = logp_ref - logp_current;
    // exp(x) - x - 1 >= 0; rounding can dip a hair below near x = 0
    (x.exp() - x - 1.0).max(0.0)
}

fn clip_range(eps: f64) -> (f64, f64) {
    (1.0 - eps, 1.0 + eps)
}

/// Per-response objective value and its derivative with respect to `logp_current`.
struct Term {
    value: f64,
    d_logp: f64,
}

fn terms(group: &ResponseGroup, weight: f64, config: &GrpoConfig) -> Result<Vec<Term>> {
    group.validate()?;
    let adv = weighted_advantages(&advantages(&group.rewards(), config.std_floor)?, weight)?;
    let mut out = Vec::with_capacity(adv.len());
    for (r, a) in group.responses.iter().zip(adv) {
        let ratio = (r.logp_current - r.logp_old).exp();
        if !ratio.is_finite() {
            return Err(Error::NonFiniteRatio {
                sample_id: group.sample_id.clone(),
            });
        }
        let unclipped = ratio * a;
        let (surrogate, d_surrogate) = match config.clip_eps {
            Some(eps) => {
                let (lo, hi) = clip_range(eps);
                let clipped = ratio.clamp(lo, hi) * a;
                if unclipped <= clipped {
                    (unclipped, unclipped)
                } else {
                    // clipped branch is flat in the ratio
                    (clipped, 0.0)
                }
            }
            None => (unclipped, unclipped),
        };
        let kl = kl_estimate(r.logp_current, r.logp_ref);
        let d_kl = 1.0 - (r.logp_ref - r.logp_current).exp();
        out.push(Term {
            value: surrogate - config.kl_beta * kl,
            d_logp: d_surrogate - config.kl_beta * d_kl,
        });
    }
    Ok(out)
}

/// Group mean of the importance-weighted, difficulty-scaled advantages minus
/// the KL penalty.
pub fn surrogate_objective(group: &ResponseGroup, weight: f64, config: &GrpoConfig) -> Result<f64> {
    let terms = terms(group, weight, config)?;
    Ok(terms.iter().map(|t| t.value).sum::<f64>() / terms.len() as f64)
}

/// Exact gradient of [`surrogate_objective`] with respect to the policy logits.
///
/// The group's `logp_current` values must match `policy` for the group's
/// observation.
pub fn surrogate_gradient(
    group: &ResponseGroup,
    weight: f64,
    policy: &PolicyParams,
    config: &GrpoConfig,
) -> Result<PolicyGradient> {
    let mut grad = PolicyGradient::zeros_like(policy);
    accumulate_gradient(&mut grad, group, weight, policy, config)?;
    Ok(grad)
}

/// Adds the surrogate gradient of `group` into `grad`.
pub fn accumulate_gradient(
    grad: &mut PolicyGradient,
    group: &ResponseGroup,
    weight: f64,
    policy: &PolicyParams,
    config: &GrpoConfig,
) -> Result<()> {
    if !grad.matches(policy) {
        return Err(Error::ShapeMismatch("gradient buffer does not match policy".into()));
    }
    let obs = group
        .observation
        .ok_or_else(|| Error::ShapeMismatch(format!("group {} carries no observation", group.sample_id)))?;
    policy.check_observation(&obs)?;
    let log_probs = policy.log_probs(&obs);
    for r in &group.responses {
        let Some(lp) = log_probs.get(r.action_id) else {
            return Err(Error::ShapeMismatch(format!(
                "action {} out of range for {} actions",
                r.action_id,
                log_probs.len()
            )));
        };
        if (lp - r.logp_current).abs() > 1e-6 {
            return Err(Error::Precondition {
                sample: Some(group.sample_id.clone()),
                message: format!(
                    "logp_current {} disagrees with policy ({lp}) for action {}",
                    r.logp_current, r.action_id
                ),
            });
        }
    }

    let terms = terms(group, weight, config)?;
    let g = terms.len() as f64;
    let probs: Vec<f64> = log_probs.iter().map(|l| l.exp()).collect();
    // d logp(a) / d logit(b) = 1[a = b] - p(b)
    let mut d_logits = vec![0.0; probs.len()];
    for (r, t) in group.responses.iter().zip(&terms) {
        let c = t.d_logp / g;
        if c == 0.0 {
            continue;
        }
        for (b, p) in probs.iter().enumerate() {
            d_logits[b] -= c * p;
        }
        d_logits[r.action_id] += c;
    }
    grad.add_row(&obs, &d_logits);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resp(action: usize, lc: f64, lo: f64, lr: f64, reward: f64) -> Response {
        Response {
            action_id: action,
            prediction: Prediction::Invalid,
            logp_current: lc,
            logp_old: lo,
            logp_ref: lr,
            reward,
            t_iou_fwd: 0.0,
            iou_fwd: 0.0,
        }
    }

    fn group(rs: Vec<Response>) -> ResponseGroup {
        ResponseGroup {
            sample_id: "g".into(),
            observation: None,
            responses: rs,
        }
    }

    #[test]
    fn advantage_examples() {
        assert_eq!(
            advantages(&[1.0, 0.0, 1.0, 0.0], 1e-6).unwrap(),
            vec![1.0, -1.0, 1.0, -1.0]
        );
        assert_eq!(advantages(&[0.7; 4], 1e-6).unwrap(), vec![0.0; 4]);
        let a = advantages(&[2.0, 1.0, 0.0], 1e-6).unwrap();
        let s = (1.5f64).sqrt();
        assert!((a[0] - s).abs() < 1e-12 && a[1].abs() < 1e-12 && (a[2] + s).abs() < 1e-12);
        assert!((a[0] - 1.2247).abs() < 1e-4);
        assert!(matches!(advantages(&[1.0], 1e-6), Err(Error::GroupTooSmall(1))));
    }

    #[test]
    fn weighted_examples() {
        assert_eq!(weighted_advantages(&[1.0, -1.0], 1.0).unwrap(), vec![1.0, -1.0]);
        assert_eq!(
            weighted_advantages(&[1.0, -1.0], 1.6487).unwrap(),
            vec![1.6487, -1.6487]
        );
        assert_eq!(weighted_advantages(&[0.0, 0.0], 3.0).unwrap(), vec![0.0, 0.0]);
        assert!(weighted_advantages(&[1.0], 0.0).is_err());
    }

    #[test]
    fn objective_with_unit_ratios_is_mean_advantage() {
        let g = group(vec![
            resp(0, -1.0, -1.0, -1.0, 1.0),
            resp(1, -2.0, -2.0, -2.0, 0.0),
            resp(2, -0.5, -0.5, -0.5, 3.0),
        ]);
        let cfg = GrpoConfig::default();
        let adv = advantages(&g.rewards(), cfg.std_floor).unwrap();
        let mean_adv = adv.iter().sum::<f64>() / 3.0;
        assert!((surrogate_objective(&g, 1.0, &cfg).unwrap() - mean_adv).abs() < 1e-12);
    }

    #[test]
    fn kl_vanishes_for_identical_policies() {
        assert_eq!(kl_estimate(-1.3, -1.3), 0.0);
        let cfg = GrpoConfig {
            kl_beta: 0.7,
            ..GrpoConfig::default()
        };
        let g = group(vec![resp(0, -1.0, -1.0, -1.0, 1.0), resp(1, -2.0, -2.0, -2.0, 0.0)]);
        let plain = surrogate_objective(&g, 1.0, &GrpoConfig::default()).unwrap();
        assert_eq!(surrogate_objective(&g, 1.0, &cfg).unwrap(), plain);
    }

    #[test]
    fn ratio_two_times_half_advantage() {
        // rewards [1, 0] give advantages [1, -1]; weight 0.5 makes the first 0.5
        let g = group(vec![resp(0, 2f64.ln(), 0.0, 0.0, 1.0), resp(1, 0.0, 0.0, 0.0, 0.0)]);
        let cfg = GrpoConfig::default();
        assert!((terms(&g, 0.5, &cfg).unwrap()[0].value - 1.0).abs() < 1e-12);
        let total = surrogate_objective(&g, 0.5, &cfg).unwrap();
        // (2 * 0.5 + 1 * -0.5) / 2
        assert!((total - 0.25).abs() < 1e-12);
    }

    #[test]
    fn clipping_never_exceeds_unclipped_for_positive_advantage() {
        let cfg = GrpoConfig {
            clip_eps: Some(0.2),
            ..GrpoConfig::default()
        };
        for lc in [-3.0, -1.0, -0.1, 0.0, 0.1, 0.5, 1.0] {
            let g = group(vec![resp(0, lc, 0.0, 0.0, 1.0), resp(1, 0.0, 0.0, 0.0, 0.0)]);
            let clipped = terms(&g, 1.0, &cfg).unwrap()[0].value;
            let unclipped = terms(&g, 1.0, &GrpoConfig::default()).unwrap()[0].value;
            assert!(clipped <= unclipped + 1e-15, "lc={lc}");
        }
    }

    #[test]
    fn non_finite_ratio_is_reported() {
        let g = group(vec![resp(0, 800.0, -800.0, 0.0, 1.0), resp(1, 0.0, 0.0, 0.0, 0.0)]);
        let err = surrogate_objective(&g, 1.0, &GrpoConfig::default()).unwrap_err();
        assert!(matches!(err, Error::NonFiniteRatio { ref sample_id } if sample_id == "g"));
    }

    #[test]
    fn config_defaults_and_validation() {
        let c = GrpoConfig::default();
        assert_eq!(
            (c.group_size, c.kl_beta, c.clip_eps, c.tau, c.lambda),
            (8, 0.0, None, 2.0, 0.5)
        );
        assert!(c.validate().is_ok());
        assert!(GrpoConfig { tau: 0.0, ..c.clone() }.validate().is_err());
        assert!(GrpoConfig { group_size: 1, ..c }.validate().is_err());
    }
}
