//! Reward designs and the adaptive shifting bias.
//!
//! The base reward of one GA iteration is `Δf − E`, the fitness gain minus
//! the evaluations spent. Variants scale it by `1/n`, add a fixed bias, or
//! add a bias estimated from the naive rewards seen during warm-up:
//! `b = 0.0052 · mean · (Q1 / Q3)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Multiplier of the adaptive bias.
pub const ADAPTIVE_BIAS_COEFFICIENT: f64 = 0.0052;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RewardVariant {
    Naive,
    Scaled,
    ShiftedFixed { bias: f64 },
    ShiftedAdaptive,
    /// `(Δf − E)/n + b` with the adaptive bias.
    ScaledShiftedAdaptive,
}

impl RewardVariant {
    pub fn is_adaptive(&self) -> bool {
        matches!(
            self,
            RewardVariant::ShiftedAdaptive | RewardVariant::ScaledShiftedAdaptive
        )
    }

    pub fn name(&self) -> &'static str {
        match self {
            RewardVariant::Naive => "naive",
            RewardVariant::Scaled => "scaled",
            RewardVariant::ShiftedFixed { .. } => "shifted_fixed",
            RewardVariant::ShiftedAdaptive => "shifted_adaptive",
            RewardVariant::ScaledShiftedAdaptive => "scaled_shifted_adaptive",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardSpec {
    pub variant: RewardVariant,
    pub resolved_bias: Option<f64>,
}

impl RewardSpec {
    pub fn new(variant: RewardVariant) -> Self {
        Self {
            variant,
            resolved_bias: None,
        }
    }

    pub fn naive() -> Self {
        Self::new(RewardVariant::Naive)
    }

    /// Fixes the adaptive bias from warm-up statistics; no-op for other variants.
    pub fn resolve(&mut self, stats: &RewardStats) -> Result<()> {
        if self.variant.is_adaptive() {
            self.resolved_bias = Some(adaptive_bias(stats)?);
        }
        Ok(())
    }

    /// Errors if an adaptive variant has no bias yet.
    pub fn ensure_ready(&self) -> Result<()> {
        if self.variant.is_adaptive() && self.resolved_bias.is_none() {
            return Err(Error::Usage(
                "adaptive reward used before its bias was resolved".into(),
            ));
        }
        Ok(())
    }

    pub fn reward(&self, delta_f: usize, step_evals: u64, n: usize) -> Result<f64> {
        reward(self, delta_f, step_evals, n)
    }
}

/// `Δf − E`.
pub fn naive_reward(delta_f: usize, step_evals: u64) -> f64 {
    delta_f as f64 - step_evals as f64
}

pub fn reward(spec: &RewardSpec, delta_f: usize, step_evals: u64, n: usize) -> Result<f64> {
    if step_evals == 0 {
        return Err(Error::Usage("an iteration evaluates at least one solution".into()));
    }
    let base = naive_reward(delta_f, step_evals);
    let bias = || {
        spec.resolved_bias.ok_or_else(|| {
            Error::Usage("adaptive reward used before its bias was resolved".into())
        })
    };
    Ok(match spec.variant {
        RewardVariant::Naive => base,
        RewardVariant::Scaled => base / n as f64,
        RewardVariant::ShiftedFixed { bias } => base + bias,
        RewardVariant::ShiftedAdaptive => base + bias()?,
        RewardVariant::ScaledShiftedAdaptive => base / n as f64 + bias()?,
    })
}

/// Mean and quartiles of a reward sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardStats {
    pub mean: f64,
    pub q1: f64,
    pub q3: f64,
    pub count: usize,
}

/// Quantile by linear interpolation between order statistics
/// (`h = (len − 1)·q`). `sorted` must be ascending and non-empty.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn collect_reward_stats(rewards: &[f64]) -> Result<RewardStats> {
    if rewards.is_empty() {
        return Err(Error::Usage("reward statistics need at least one sample".into()));
    }
    let mut sorted = rewards.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(RewardStats {
        mean: rewards.iter().sum::<f64>() / rewards.len() as f64,
        q1: quantile_sorted(&sorted, 0.25),
        q3: quantile_sorted(&sorted, 0.75),
        count: rewards.len(),
    })
}

/// `0.0052 · mean · (Q1 / Q3)`.
pub fn adaptive_bias(stats: &RewardStats) -> Result<f64> {
    if stats.q3 == 0.0 {
        return Err(Error::DegenerateStats(format!(
            "third quartile is zero (mean {}, Q1 {}, {} samples)",
            stats.mean, stats.q1, stats.count
        )));
    }
    Ok(ADAPTIVE_BIAS_COEFFICIENT * stats.mean * (stats.q1 / stats.q3))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn variant_arithmetic() {
        assert_eq!(reward(&RewardSpec::naive(), 2, 16, 100).unwrap(), -14.0);
        let scaled = RewardSpec::new(RewardVariant::Scaled);
        assert!((reward(&scaled, 2, 16, 100).unwrap() + 0.14).abs() < 1e-15);
        let fixed = RewardSpec::new(RewardVariant::ShiftedFixed { bias: -3.0 });
        assert_eq!(reward(&fixed, 2, 16, 100).unwrap(), -17.0);
        let mut adaptive = RewardSpec::new(RewardVariant::ShiftedAdaptive);
        assert!(reward(&adaptive, 2, 16, 100).is_err());
        assert!(adaptive.ensure_ready().is_err());
        adaptive.resolved_bias = Some(-0.5);
        assert_eq!(reward(&adaptive, 2, 16, 100).unwrap(), -14.5);
        assert!(reward(&RewardSpec::naive(), 2, 0, 100).is_err());
    }

    #[test]
    fn adaptive_bias_values() {
        let stats = RewardStats {
            mean: -10.0,
            q1: -14.0,
            q3: -6.0,
            count: 4,
        };
        let expected = 0.0052 * -10.0 * (14.0 / 6.0);
        assert!((adaptive_bias(&stats).unwrap() - expected).abs() < 1e-15);
        assert!((expected + 0.12133).abs() < 1e-5);
        let zero_mean = RewardStats { mean: 0.0, ..stats };
        assert_eq!(adaptive_bias(&zero_mean).unwrap(), 0.0);
        let degenerate = RewardStats { q3: 0.0, ..stats };
        assert!(matches!(
            adaptive_bias(&degenerate),
            Err(Error::DegenerateStats(_))
        ));
    }

    #[test]
    fn stats_small_samples() {
        let s = collect_reward_stats(&[-1.0, -2.0, -3.0, -4.0]).unwrap();
        assert!((s.mean + 2.5).abs() < 1e-15);
        assert!((s.q1 + 3.25).abs() < 1e-15);
        assert!((s.q3 + 1.75).abs() < 1e-15);
        let c = collect_reward_stats(&[4.5; 9]).unwrap();
        assert_eq!((c.mean, c.q1, c.q3), (4.5, 4.5, 4.5));
        let one = collect_reward_stats(&[-5.0]).unwrap();
        assert_eq!((one.mean, one.q1, one.q3), (-5.0, -5.0, -5.0));
        assert!(collect_reward_stats(&[]).is_err());
    }

    proptest! {
        #[test]
        fn variants_are_consistent(df in 0usize..200, e in 1u64..400, n in 2usize..500, b in -10.0f64..10.0) {
            let naive = reward(&RewardSpec::naive(), df, e, n).unwrap();
            let scaled = reward(&RewardSpec::new(RewardVariant::Scaled), df, e, n).unwrap();
            let fixed = reward(&RewardSpec::new(RewardVariant::ShiftedFixed { bias: b }), df, e, n).unwrap();
            prop_assert_eq!(scaled, naive / n as f64);
            prop_assert_eq!(fixed, naive + b);
        }

        #[test]
        fn negative_statistics_give_negative_bias(mean in -500.0f64..-0.01, a in -500.0f64..-0.01, b in -500.0f64..-0.01) {
            let (q1, q3) = if a <= b { (a, b) } else { (b, a) };
            let stats = RewardStats { mean, q1, q3, count: 10 };
            prop_assert!(adaptive_bias(&stats).unwrap() < 0.0);
            let doubled = RewardStats { mean: 2.0 * mean, ..stats };
            let ratio = adaptive_bias(&doubled).unwrap() / adaptive_bias(&stats).unwrap();
            prop_assert!((ratio - 2.0).abs() < 1e-12);
        }

        #[test]
        fn quartiles_are_ordered(values in proptest::collection::vec(-1e4f64..1e4, 1..200)) {
            let s = collect_reward_stats(&values).unwrap();
            prop_assert!(s.q1 <= s.q3);
            let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(s.q1 >= min && s.q3 <= max);
        }
    }
}
