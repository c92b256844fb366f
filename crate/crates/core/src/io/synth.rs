use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::span::{EventCategory, EventSample, TimeSpan, VideoMeta};

const SENSITIVE_QUERIES: &[&str] = &[
    "person opens the door",
    "person closes the cabinet",
    "person picks up a bag from the floor",
    "person puts down a cup on the table",
    "person sits down on the sofa",
    "person stands up from the chair",
    "person pours water into a glass",
    "person takes off a jacket",
    "person enters the room",
    "person turns on the light",
];

const INSENSITIVE_QUERIES: &[&str] = &[
    "person holding a towel in the left hand",
    "person smiling at the laptop",
    "person watching television",
    "person looking out the window",
    "person talking on the phone",
    "person reading a book",
    "person laughing at something",
    "a ball bouncing on the floor",
    "person waiting by the stairs",
    "person playing with a light switch",
];

/// Knobs for the desk-scale synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub num_samples: usize,
    pub duration_range: [f64; 2],
    pub span_length_range: [f64; 2],
    pub sensitive_fraction: f64,
    /// Probability that the policy observes a random location bucket.
    pub observation_noise: f64,
    pub rng_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_samples: 200,
            duration_range: [30.0, 60.0],
            span_length_range: [12.0, 30.0],
            sensitive_fraction: 0.5,
            observation_noise: 0.0,
            rng_seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let [dlo, dhi] = self.duration_range;
        let [llo, lhi] = self.span_length_range;
        let err = |m: String| Err(Error::Config(m));
        if !(dlo.is_finite() && dhi.is_finite() && dlo > 0.0 && dlo <= dhi) {
            return err(format!("duration_range must satisfy 0 < lo <= hi, got [{dlo}, {dhi}]"));
        }
        if !(llo.is_finite() && lhi.is_finite() && llo > 0.0 && llo <= lhi) {
            return err(format!(
                "span_length_range must satisfy 0 < lo <= hi, got [{llo}, {lhi}]"
            ));
        }
        if lhi > dlo {
            return err(format!("longest span ({lhi}) exceeds shortest video ({dlo})"));
        }
        if !(0.0..=1.0).contains(&self.sensitive_fraction) {
            return err(format!(
                "sensitive_fraction must be in [0, 1], got {}",
                self.sensitive_fraction
            ));
        }
        if !(0.0..=1.0).contains(&self.observation_noise) {
            return err(format!(
                "observation_noise must be in [0, 1], got {}",
                self.observation_noise
            ));
        }
        Ok(())
    }

    /// Exact number of sensitive samples generated.
    pub fn sensitive_count(&self) -> usize {
        (self.num_samples as f64 * self.sensitive_fraction).round() as usize
    }
}

fn tenth(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

fn uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

/// Seeded synthetic samples; times are rounded to 0.1 s.
pub fn generate_synthetic(config: &SynthConfig) -> Result<Vec<EventSample>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let n = config.num_samples;
    let mut categories: Vec<EventCategory> = (0..n)
        .map(|i| {
            if i < config.sensitive_count() {
                EventCategory::Sensitive
            } else {
                EventCategory::Insensitive
            }
        })
        .collect();
    categories.shuffle(&mut rng);

    let mut out = Vec::with_capacity(n);
    for (i, category) in categories.into_iter().enumerate() {
        let duration = tenth(uniform(&mut rng, config.duration_range[0], config.duration_range[1]));
        let length = uniform(&mut rng, config.span_length_range[0], config.span_length_range[1]).min(duration);
        let start = tenth(uniform(&mut rng, 0.0, duration - length));
        let end = tenth(start + length).min(duration);
        let pool = match category {
            EventCategory::Sensitive => SENSITIVE_QUERIES,
            EventCategory::Insensitive => INSENSITIVE_QUERIES,
        };
        let query = pool[rng.random_range(0..pool.len())];
        out.push(EventSample::new(
            format!("synth-{i:05}"),
            VideoMeta::new(format!("synth-video-{i:05}"), duration)?,
            query,
            TimeSpan::new(start, end)?,
            category,
        )?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classify::{classify_rule_based, Lexicon};
    use crate::io::{write_jsonl, SampleRecord};

    fn bytes(samples: &[EventSample]) -> Vec<u8> {
        let mut buf = Vec::new();
        write_jsonl(&mut buf, samples.iter().map(SampleRecord::from)).unwrap();
        buf
    }

    #[test]
    fn exact_sensitive_fraction_and_determinism() {
        let cfg = SynthConfig {
            num_samples: 100,
            sensitive_fraction: 0.5,
            ..SynthConfig::default()
        };
        let a = generate_synthetic(&cfg).unwrap();
        assert_eq!(a.iter().filter(|s| s.category == EventCategory::Sensitive).count(), 50);
        let b = generate_synthetic(&cfg).unwrap();
        assert_eq!(bytes(&a), bytes(&b));
        assert_eq!(a[0].sample_id, "synth-00000");
        let other = generate_synthetic(&SynthConfig { rng_seed: 8, ..cfg }).unwrap();
        assert_ne!(bytes(&a), bytes(&other));
    }

    #[test]
    fn rounded_counts() {
        let cfg = SynthConfig {
            num_samples: 7,
            sensitive_fraction: 0.57,
            ..SynthConfig::default()
        };
        let s = generate_synthetic(&cfg).unwrap();
        assert_eq!(s.iter().filter(|s| s.category == EventCategory::Sensitive).count(), 4);
    }

    #[test]
    fn span_longer_than_shortest_video_is_rejected() {
        let cfg = SynthConfig {
            duration_range: [10.0, 60.0],
            span_length_range: [5.0, 12.0],
            ..SynthConfig::default()
        };
        assert!(matches!(generate_synthetic(&cfg), Err(Error::Config(_))));
        assert!(generate_synthetic(&SynthConfig {
            sensitive_fraction: 1.5,
            ..SynthConfig::default()
        })
        .is_err());
    }

    #[test]
    fn spans_respect_bounds() {
        for s in generate_synthetic(&SynthConfig::default()).unwrap() {
            assert!(s.gt_span.end() <= s.duration());
            assert!(s.gt_span.length() > 0.0);
        }
    }

    #[test]
    fn query_pools_agree_with_rule_based_classifier() {
        let lex = Lexicon::default();
        for q in SENSITIVE_QUERIES {
            assert_eq!(classify_rule_based(q, &lex).category, EventCategory::Sensitive, "{q}");
        }
        for q in INSENSITIVE_QUERIES {
            assert_eq!(classify_rule_based(q, &lex).category, EventCategory::Insensitive, "{q}");
        }
    }
}
