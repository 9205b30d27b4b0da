//! Stopping rules.
//!
//! The single-crowd threshold rule stops once the margin between the two most
//! frequent options exceeds `quality * sqrt(N)`, where `N` is the number of
//! responses it has seen. In smooth mode the threshold is randomly rounded to
//! an adjacent integer each time the rule is consulted, which keeps the rule
//! meaningful for `quality < 1`. The total-crowd rule applies the same test to
//! the pooled responses and is forced to stop at a fixed horizon.
//!
//! A composite rule runs one threshold instance per crowd plus an optional
//! total-crowd instance and stops as soon as any instance stops.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{count_margin, TallySheet};
use crate::seed::SimRng;

/// Parameters of the per-crowd threshold rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRuleConfig {
    pub quality: f64,
    #[serde(default)]
    pub smooth: bool,
    /// When set, the quality is replaced by `sqrt(ln(n * N^2 / delta))`.
    #[serde(default)]
    pub adaptive_delta: Option<f64>,
}

impl ThresholdRuleConfig {
    pub fn deterministic(quality: f64) -> Result<Self> {
        Self::checked(Self {
            quality,
            smooth: false,
            adaptive_delta: None,
        })
    }

    pub fn smooth(quality: f64) -> Result<Self> {
        Self::checked(Self {
            quality,
            smooth: true,
            adaptive_delta: None,
        })
    }

    pub fn adaptive(delta: f64, smooth: bool) -> Result<Self> {
        Self::checked(Self {
            quality: 1.0,
            smooth,
            adaptive_delta: Some(delta),
        })
    }

    pub fn checked(self) -> Result<Self> {
        if !(self.quality > 0.0 && self.quality.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "quality must be positive, got {}",
                self.quality
            )));
        }
        if let Some(delta) = self.adaptive_delta {
            if !(delta > 0.0 && delta < 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "delta must lie in (0, 1), got {delta}"
                )));
            }
        }
        Ok(self)
    }

    /// Quality in effect after `samples` responses over `num_options` options.
    pub fn quality_at(&self, num_options: usize, samples: u64) -> f64 {
        match self.adaptive_delta {
            Some(delta) => {
                let n = samples as f64;
                (num_options as f64 * n * n / delta).ln().max(0.0).sqrt()
            }
            None => self.quality,
        }
    }
}

/// Parameters of the total-crowd rule with a forced stop at `horizon`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TotalRuleConfig {
    pub quality: f64,
    pub horizon: u64,
    #[serde(default)]
    pub smooth: bool,
}

impl TotalRuleConfig {
    pub fn new(quality: f64, horizon: u64) -> Result<Self> {
        Self {
            quality,
            horizon,
            smooth: false,
        }
        .checked()
    }

    pub fn checked(self) -> Result<Self> {
        if !(self.quality > 0.0 && self.quality.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "quality must be positive, got {}",
                self.quality
            )));
        }
        if self.horizon == 0 {
            return Err(Error::InvalidConfig("horizon must be at least 1".into()));
        }
        Ok(self)
    }
}

/// Which rule instance made a composite rule stop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Trigger {
    Crowd(usize),
    Total,
}

impl std::fmt::Display for Trigger {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Trigger::Crowd(i) => write!(f, "crowd{i}"),
            Trigger::Total => f.write_str("total"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StoppingDecision {
    Continue,
    Stop { output: usize, trigger: Trigger },
}

impl StoppingDecision {
    pub fn is_stop(&self) -> bool {
        matches!(self, StoppingDecision::Stop { .. })
    }

    pub fn output(&self) -> Option<usize> {
        match self {
            StoppingDecision::Stop { output, .. } => Some(*output),
            StoppingDecision::Continue => None,
        }
    }
}

/// Most frequent option; ties broken uniformly at random.
pub fn majority_option(counts: &[u64], rng: &mut SimRng) -> usize {
    let max = counts.iter().copied().max().unwrap_or(0);
    let tied = counts.iter().filter(|&&c| c == max).count();
    let mut pick = if tied > 1 {
        rng.random_range(0..tied)
    } else {
        0
    };
    for (x, &c) in counts.iter().enumerate() {
        if c == max {
            if pick == 0 {
                return x;
            }
            pick -= 1;
        }
    }
    unreachable!("counts is non-empty")
}

/// Rounds `theta` down with probability `1 - frac(theta)` and up otherwise.
/// Integral thresholds are returned as-is without consuming randomness.
pub fn smooth_round(theta: f64, rng: &mut SimRng) -> f64 {
    let floor = theta.floor();
    let frac = theta - floor;
    if frac == 0.0 {
        return floor;
    }
    if rng.random::<f64>() < frac {
        floor + 1.0
    } else {
        floor
    }
}

fn exceeds(margin: u64, theta: f64, smooth: bool, rng: &mut SimRng) -> bool {
    let threshold = if smooth {
        smooth_round(theta, rng)
    } else {
        theta
    };
    margin as f64 > threshold
}

/// Single-crowd threshold rule on one crowd's option counts.
///
/// Returns the output option when the rule stops. With no responses yet the
/// rule has no data and continues.
pub fn threshold_decide(
    counts: &[u64],
    config: &ThresholdRuleConfig,
    rng: &mut SimRng,
) -> Option<usize> {
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return None;
    }
    let theta = config.quality_at(counts.len(), n) * (n as f64).sqrt();
    exceeds(count_margin(counts), theta, config.smooth, rng).then(|| majority_option(counts, rng))
}

/// Total-crowd rule: stop once the pooled empirical gap exceeds
/// `quality / sqrt(t)`, or unconditionally at the horizon.
pub fn total_decide(
    total_counts: &[u64],
    t: u64,
    config: &TotalRuleConfig,
    rng: &mut SimRng,
) -> Result<Option<usize>> {
    if t == 0 {
        return Err(Error::InvalidConfig(
            "total rule consulted at round 0".into(),
        ));
    }
    if t > config.horizon {
        return Err(Error::PastHorizon {
            round: t,
            horizon: config.horizon,
        });
    }
    let n: u64 = total_counts.iter().sum();
    if n != t {
        return Err(Error::InvalidConfig(format!(
            "total counts sum to {n} at round {t}"
        )));
    }
    let theta = config.quality * (t as f64).sqrt();
    let stop =
        exceeds(count_margin(total_counts), theta, config.smooth, rng) || t == config.horizon;
    Ok(stop.then(|| majority_option(total_counts, rng)))
}

/// A stopping rule applied to a single pooled data source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SingleSourceRule {
    Threshold(ThresholdRuleConfig),
    Total(TotalRuleConfig),
}

impl SingleSourceRule {
    /// Decision after the source has produced `counts` (round = sum of counts).
    pub fn decide(&self, counts: &[u64], rng: &mut SimRng) -> Result<Option<usize>> {
        match self {
            SingleSourceRule::Threshold(cfg) => Ok(threshold_decide(counts, cfg, rng)),
            SingleSourceRule::Total(cfg) => {
                let t = counts.iter().sum();
                total_decide(counts, t, cfg, rng)
            }
        }
    }

    pub fn horizon(&self) -> Option<u64> {
        match self {
            SingleSourceRule::Threshold(_) => None,
            SingleSourceRule::Total(cfg) => Some(cfg.horizon),
        }
    }
}

/// Per-crowd threshold instances plus an optional total-crowd instance.
/// Either part may be absent, but not both.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompositeRule {
    pub per_crowd: Option<ThresholdRuleConfig>,
    pub total: Option<TotalRuleConfig>,
}

impl CompositeRule {
    pub fn new(per_crowd: ThresholdRuleConfig, total: Option<TotalRuleConfig>) -> Self {
        Self {
            per_crowd: Some(per_crowd),
            total,
        }
    }

    /// Only the total-crowd instance.
    pub fn total_only(total: TotalRuleConfig) -> Self {
        Self {
            per_crowd: None,
            total: Some(total),
        }
    }

    pub fn checked(self) -> Result<Self> {
        if self.per_crowd.is_none() && self.total.is_none() {
            return Err(Error::InvalidConfig(
                "composite rule has no instances".into(),
            ));
        }
        Ok(self)
    }

    pub fn decide(
        &self,
        tally: &TallySheet,
        updated: Option<usize>,
        rng: &mut SimRng,
    ) -> Result<StoppingDecision> {
        composite_decide(
            tally,
            updated,
            self.per_crowd.as_ref(),
            self.total.as_ref(),
            rng,
        )
    }
}

/// Composite rule after a round.
///
/// A per-crowd instance only sees responses from its own crowd, so it is
/// consulted only when that crowd produced the newest response: pass the crowd
/// sampled this round as `updated`. `None` consults every instance. The total
/// instance, when configured, is consulted every round. When several instances
/// stop together the output is drawn uniformly from their distinct majority
/// options.
pub fn composite_decide(
    tally: &TallySheet,
    updated: Option<usize>,
    per_crowd: Option<&ThresholdRuleConfig>,
    total: Option<&TotalRuleConfig>,
    rng: &mut SimRng,
) -> Result<StoppingDecision> {
    if tally.round() == 0 {
        return Err(Error::InvalidConfig(
            "composite rule consulted at round 0".into(),
        ));
    }
    let mut stopped: Vec<(Trigger, usize)> = Vec::new();
    let crowds: Box<dyn Iterator<Item = usize>> = match updated {
        Some(i) if i >= tally.num_crowds() => {
            return Err(Error::IndexOutOfRange {
                what: "crowd",
                index: i,
                len: tally.num_crowds(),
            })
        }
        Some(i) => Box::new(std::iter::once(i)),
        None => Box::new(0..tally.num_crowds()),
    };
    if let Some(cfg) = per_crowd {
        for i in crowds {
            if let Some(x) = threshold_decide(tally.counts(i), cfg, rng) {
                stopped.push((Trigger::Crowd(i), x));
            }
        }
    }
    if let Some(cfg) = total {
        if let Some(x) = total_decide(tally.total_counts(), tally.round(), cfg, rng)? {
            stopped.push((Trigger::Total, x));
        }
    }
    Ok(match stopped.len() {
        0 => StoppingDecision::Continue,
        1 => StoppingDecision::Stop {
            output: stopped[0].1,
            trigger: stopped[0].0,
        },
        _ => {
            let mut options: Vec<usize> = stopped.iter().map(|&(_, x)| x).collect();
            options.sort_unstable();
            options.dedup();
            let output = options[rng.random_range(0..options.len())];
            let trigger = stopped
                .iter()
                .find(|&&(_, x)| x == output)
                .map(|&(t, _)| t)
                .unwrap();
            StoppingDecision::Stop { output, trigger }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;

    fn det(q: f64) -> ThresholdRuleConfig {
        ThresholdRuleConfig::deterministic(q).unwrap()
    }

    #[test]
    fn threshold_examples() {
        let mut rng = rng_from_seed(1);
        // 6 > 2 * sqrt(8)
        assert_eq!(threshold_decide(&[7, 1], &det(2.0), &mut rng), Some(0));
        assert_eq!(threshold_decide(&[1, 7], &det(2.0), &mut rng), Some(1));
        assert_eq!(threshold_decide(&[5, 5], &det(0.01), &mut rng), None);
        // 2 < sqrt(10)
        assert_eq!(threshold_decide(&[6, 4], &det(1.0), &mut rng), None);
        assert_eq!(threshold_decide(&[0, 0], &det(1.0), &mut rng), None);
        // quality below one stops after a single response
        assert_eq!(threshold_decide(&[0, 1], &det(0.5), &mut rng), Some(1));
    }

    #[test]
    fn three_option_margin_uses_top_two() {
        let mut rng = rng_from_seed(1);
        // margin 4 - 3 = 1 against 0.1 * sqrt(8)
        assert_eq!(threshold_decide(&[4, 3, 1], &det(0.1), &mut rng), Some(0));
        assert_eq!(threshold_decide(&[4, 3, 1], &det(1.0), &mut rng), None);
    }

    #[test]
    fn smooth_rounding_probability_matches_fraction() {
        // theta = 0.75 * sqrt(4) = 1.5; margin 2 > 1 w.p. 1/2, never > 2
        let cfg = ThresholdRuleConfig::smooth(0.75).unwrap();
        let mut rng = rng_from_seed(9);
        let trials = 40_000;
        let stops = (0..trials)
            .filter(|_| threshold_decide(&[3, 1], &cfg, &mut rng).is_some())
            .count();
        let frac = stops as f64 / trials as f64;
        assert!((frac - 0.5).abs() < 0.015, "{frac}");
    }

    #[test]
    fn smooth_equals_deterministic_on_integral_threshold() {
        // theta = 1 * sqrt(4) = 2
        let smooth = ThresholdRuleConfig::smooth(1.0).unwrap();
        let mut rng = rng_from_seed(2);
        for counts in [[3u64, 1], [4, 0], [2, 2], [0, 4]] {
            for _ in 0..50 {
                assert_eq!(
                    threshold_decide(&counts, &smooth, &mut rng),
                    threshold_decide(&counts, &det(1.0), &mut rng)
                );
            }
        }
    }

    #[test]
    fn adaptive_quality_formula() {
        let cfg = ThresholdRuleConfig::adaptive(0.1, false).unwrap();
        let q = cfg.quality_at(2, 10);
        assert!((q - (2.0 * 100.0 / 0.1f64).ln().sqrt()).abs() < 1e-12);
        assert!(ThresholdRuleConfig::adaptive(1.5, false).is_err());
        assert!(ThresholdRuleConfig::deterministic(0.0).is_err());
    }

    #[test]
    fn total_rule_examples() {
        let mut rng = rng_from_seed(3);
        let cfg = TotalRuleConfig::new(3.0, 10_000).unwrap();
        // gap 0.35 > 3 / sqrt(100)
        assert_eq!(
            total_decide(&[60, 25, 15], 100, &cfg, &mut rng).unwrap(),
            Some(0)
        );
        // gap 0.2 < 0.3
        assert_eq!(
            total_decide(&[50, 30, 20], 100, &cfg, &mut rng).unwrap(),
            None
        );
        assert_eq!(total_decide(&[60, 40], 100, &cfg, &mut rng).unwrap(), None);
        // forced stop at the horizon
        let cfg = TotalRuleConfig::new(3.0, 100).unwrap();
        assert_eq!(
            total_decide(&[60, 40], 100, &cfg, &mut rng).unwrap(),
            Some(0)
        );
        assert!(total_decide(&[50, 50], 100, &cfg, &mut rng)
            .unwrap()
            .is_some());
        assert!(matches!(
            total_decide(&[60, 41], 101, &cfg, &mut rng),
            Err(Error::PastHorizon { .. })
        ));
        assert!(total_decide(&[60, 40], 99, &cfg, &mut rng).is_err());
    }

    #[test]
    fn forced_stop_breaks_ties_uniformly() {
        let cfg = TotalRuleConfig::new(3.0, 10).unwrap();
        let mut rng = rng_from_seed(4);
        let zeros = (0..10_000)
            .filter(|_| total_decide(&[5, 5], 10, &cfg, &mut rng).unwrap() == Some(0))
            .count();
        assert!((zeros as f64 / 10_000.0 - 0.5).abs() < 0.03);
    }

    #[test]
    fn composite_single_trigger_and_vacuous() {
        let mut rng = rng_from_seed(5);
        let mut tally = TallySheet::new(2, 2);
        tally.record(0, 1).unwrap();
        let d = composite_decide(&tally, Some(0), Some(&det(2.0)), None, &mut rng).unwrap();
        assert_eq!(d, StoppingDecision::Continue);
        for _ in 0..8 {
            tally.record(1, 0).unwrap();
        }
        let d = composite_decide(&tally, Some(1), Some(&det(2.0)), None, &mut rng).unwrap();
        assert_eq!(
            d,
            StoppingDecision::Stop {
                output: 0,
                trigger: Trigger::Crowd(1)
            }
        );
        assert_eq!(tally.round(), 9);
        // the instance of an unsampled crowd is not consulted
        let d = composite_decide(&tally, Some(0), Some(&det(2.0)), None, &mut rng).unwrap();
        assert_eq!(d, StoppingDecision::Continue);
    }

    #[test]
    fn composite_simultaneous_stops_split_evenly() {
        let mut tally = TallySheet::new(2, 2);
        for _ in 0..9 {
            tally.record(0, 0).unwrap();
            tally.record(1, 1).unwrap();
        }
        let mut rng = rng_from_seed(6);
        let trials = 20_000;
        let mut zeros = 0;
        for _ in 0..trials {
            match composite_decide(&tally, None, Some(&det(2.0)), None, &mut rng).unwrap() {
                StoppingDecision::Stop { output: 0, trigger } => {
                    assert_eq!(trigger, Trigger::Crowd(0));
                    zeros += 1
                }
                StoppingDecision::Stop { output: 1, trigger } => {
                    assert_eq!(trigger, Trigger::Crowd(1))
                }
                other => panic!("{other:?}"),
            }
        }
        let frac = zeros as f64 / trials as f64;
        assert!((frac - 0.5).abs() < 0.015, "{frac}");
    }

    #[test]
    fn composite_total_instance_pools_crowds() {
        // each crowd alone is below threshold, the pooled tally is not
        let mut tally = TallySheet::new(2, 2);
        for _ in 0..4 {
            tally.record(0, 0).unwrap();
            tally.record(1, 0).unwrap();
        }
        let mut rng = rng_from_seed(7);
        let total = TotalRuleConfig::new(2.0, 1_000).unwrap();
        assert_eq!(
            composite_decide(&tally, None, Some(&det(2.0)), None, &mut rng).unwrap(),
            StoppingDecision::Continue
        );
        assert_eq!(
            composite_decide(&tally, Some(1), Some(&det(2.0)), Some(&total), &mut rng).unwrap(),
            StoppingDecision::Stop {
                output: 0,
                trigger: Trigger::Total
            }
        );
    }

    #[test]
    fn majority_is_unique_max_without_randomness() {
        let mut rng = rng_from_seed(8);
        assert_eq!(majority_option(&[1, 9, 3], &mut rng), 1);
        let mut seen = [0; 3];
        for _ in 0..3000 {
            seen[majority_option(&[4, 1, 4], &mut rng)] += 1;
        }
        assert_eq!(seen[1], 0);
        assert!(seen[0] > 1300 && seen[2] > 1300);
    }

    #[test]
    fn total_only_composite() {
        let mut rng = rng_from_seed(4);
        let total = TotalRuleConfig::new(2.0, 100).unwrap();
        let rule = CompositeRule::total_only(total);
        let mut tally = TallySheet::new(2, 2);
        for _ in 0..6 {
            tally.record(0, 0).unwrap();
        }
        // each crowd alone would stop, but the pooled counts are tied
        for _ in 0..6 {
            tally.record(1, 1).unwrap();
        }
        assert_eq!(
            rule.decide(&tally, None, &mut rng).unwrap(),
            StoppingDecision::Continue
        );
        assert!(CompositeRule {
            per_crowd: None,
            total: None
        }
        .checked()
        .is_err());
    }
}
