//! Exact reference computations.
//!
//! For two options the threshold rule is a function of the signed count
//! difference `d = N(correct) - N(wrong)`, a lazy-free ±1 random walk. A
//! forward dynamic program over `(t, d)` gives the exact distribution of the
//! stopping round and of the output up to a truncation horizon; whatever mass
//! survives to the horizon is reported rather than dropped.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fraction of probability mass the horizon must absorb for
/// [`exact_rule_stats`] to accept it.
pub const MIN_ABSORBED: f64 = 0.999;

/// Surviving mass below which the forward pass stops early.
const NEGLIGIBLE_MASS: f64 = 1e-18;

/// Exact statistics of the two-option threshold rule, truncated at `horizon`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuleStats {
    pub p: f64,
    pub quality: f64,
    pub horizon: u64,
    /// `E[min(tau, horizon)]`.
    pub expected_stop_time: f64,
    /// Probability of stopping by the horizon with the wrong majority.
    pub error_rate: f64,
    /// Probability of stopping by the horizon.
    pub stop_mass: f64,
    /// `1 - stop_mass`; attributed worst-case to the error and time bounds.
    pub residual_mass: f64,
    /// Largest deviation of `surviving + stopped` from one over all rounds.
    pub max_mass_drift: f64,
}

impl RuleStats {
    /// Error probability conditional on stopping by the horizon.
    pub fn conditional_error(&self) -> f64 {
        self.error_rate / self.stop_mass
    }

    /// Interval containing the untruncated error rate.
    pub fn error_interval(&self) -> (f64, f64) {
        (self.error_rate, self.error_rate + self.residual_mass)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Rounding {
    Deterministic,
    Smooth,
}

fn check_args(p: f64, quality: f64, horizon: u64) -> Result<()> {
    if !(0.5..=1.0).contains(&p) {
        return Err(Error::InvalidConfig(format!("p = {p} outside [1/2, 1]")));
    }
    if !(quality > 0.0 && quality.is_finite()) {
        return Err(Error::InvalidConfig(format!("quality = {quality}")));
    }
    if horizon == 0 {
        return Err(Error::InvalidConfig("horizon must be at least 1".into()));
    }
    Ok(())
}

fn forward_pass(p: f64, quality: f64, horizon: u64, rounding: Rounding) -> Result<RuleStats> {
    check_args(p, quality, horizon)?;
    let q = 1.0 - p;
    // |d| never exceeds t, and survivors satisfy |d| <= quality * sqrt(t) + 1
    let reach = ((quality * (horizon as f64).sqrt()).ceil() as u64 + 2).min(horizon + 1) as usize;
    let offset = reach;
    let width = 2 * reach + 1;
    let mut cur = vec![0.0f64; width];
    let mut next = vec![0.0f64; width];
    cur[offset] = 1.0;
    let mut live = 0usize; // survivors occupy |d| <= live

    let mut stop_mass = 0.0;
    let mut error_mass = 0.0;
    let mut time_mass = 0.0;
    let mut surviving = 1.0;
    let mut max_drift = 0.0f64;

    for t in 1..=horizon {
        let lo = offset - live - 1;
        let hi = offset + live + 1;
        for slot in &mut next[lo..=hi] {
            *slot = 0.0;
        }
        for idx in (offset - live)..=(offset + live) {
            let m = cur[idx];
            if m != 0.0 {
                next[idx + 1] += m * p;
                next[idx - 1] += m * q;
            }
        }
        let theta = quality * (t as f64).sqrt();
        // stop_prob(|d|) for the rule at this round
        let (floor, frac) = match rounding {
            Rounding::Deterministic => (theta, 0.0),
            Rounding::Smooth => (theta.floor(), theta - theta.floor()),
        };
        let stop_prob = |abs_d: f64| -> f64 {
            match rounding {
                Rounding::Deterministic => f64::from(u8::from(abs_d > floor)),
                Rounding::Smooth => {
                    if abs_d > floor + 1.0 || (frac == 0.0 && abs_d > floor) {
                        1.0
                    } else if abs_d > floor {
                        1.0 - frac
                    } else {
                        0.0
                    }
                }
            }
        };
        let mut new_live = 0usize;
        let mut stopped_now = 0.0;
        for idx in lo..=hi {
            let m = next[idx];
            if m == 0.0 {
                continue;
            }
            let d = idx as i64 - offset as i64;
            let s = stop_prob(d.unsigned_abs() as f64);
            if s > 0.0 {
                let absorbed = m * s;
                stopped_now += absorbed;
                if d < 0 {
                    error_mass += absorbed;
                }
                next[idx] = m - absorbed;
            }
            if next[idx] > 0.0 {
                new_live = new_live.max(d.unsigned_abs() as usize);
            }
        }
        stop_mass += stopped_now;
        time_mass += stopped_now * t as f64;
        surviving = next[lo..=hi].iter().sum::<f64>();
        max_drift = max_drift.max((surviving + stop_mass - 1.0).abs());
        std::mem::swap(&mut cur, &mut next);
        live = new_live;
        if live + 1 > offset {
            return Err(Error::InvalidConfig(
                "dynamic program outgrew its buffer".into(),
            ));
        }
        if surviving < NEGLIGIBLE_MASS {
            break;
        }
    }
    let residual = (1.0 - stop_mass).max(0.0);
    Ok(RuleStats {
        p,
        quality,
        horizon,
        expected_stop_time: time_mass + surviving * horizon as f64,
        error_rate: error_mass,
        stop_mass,
        residual_mass: residual,
        max_mass_drift: max_drift,
    })
}

/// Exact truncated statistics of the deterministic two-option threshold rule
/// on a crowd answering correctly with probability `p`, regardless of how
/// much mass survives to the horizon.
pub fn truncated_rule_stats(p: f64, quality: f64, horizon: u64) -> Result<RuleStats> {
    forward_pass(p, quality, horizon, Rounding::Deterministic)
}

/// Same as [`truncated_rule_stats`] for the smooth (randomly rounded) rule.
pub fn truncated_smooth_rule_stats(p: f64, quality: f64, horizon: u64) -> Result<RuleStats> {
    forward_pass(p, quality, horizon, Rounding::Smooth)
}

fn require_absorbed(stats: RuleStats) -> Result<RuleStats> {
    if stats.stop_mass < MIN_ABSORBED {
        return Err(Error::HorizonTooShort {
            horizon: stats.horizon,
            absorbed: stats.stop_mass,
        });
    }
    Ok(stats)
}

/// Exact statistics of the deterministic threshold rule; fails with
/// [`Error::HorizonTooShort`] when the horizon absorbs less than 99.9% of the
/// mass.
pub fn exact_rule_stats(p: f64, quality: f64, horizon: u64) -> Result<RuleStats> {
    require_absorbed(truncated_rule_stats(p, quality, horizon)?)
}

/// Smooth-rule counterpart of [`exact_rule_stats`].
pub fn exact_smooth_rule_stats(p: f64, quality: f64, horizon: u64) -> Result<RuleStats> {
    require_absorbed(truncated_smooth_rule_stats(p, quality, horizon)?)
}

/// Outcome of comparing the gap-zero stopping probability against twice the
/// worst-case error rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiniteStopReport {
    pub quality: f64,
    pub horizon: u64,
    /// Probability of stopping by the horizon on a gap-zero crowd.
    pub stop_mass_gap_zero: f64,
    /// Largest truncated error rate over the gap grid.
    pub worst_error: f64,
    pub worst_gap: f64,
    /// Twice the largest mass left unabsorbed at any grid gap.
    pub truncation_slack: f64,
    pub holds: bool,
}

/// Gaps `0.01, 0.02, ..., 0.99`.
pub fn gap_grid() -> impl Iterator<Item = f64> {
    (1..=99).map(|i| i as f64 / 100.0)
}

/// Checks `P[stop | gap 0] <= 2 * rho` for the deterministic rule, with `rho`
/// the worst error rate over [`gap_grid`] and the comparison widened by the
/// truncation slack.
pub fn finite_stop_bound_check(quality: f64, horizon: u64) -> Result<FiniteStopReport> {
    let zero = truncated_rule_stats(0.5, quality, horizon)?;
    let mut worst_error = 0.0;
    let mut worst_gap = 0.0;
    let mut max_residual = 0.0f64;
    for g in gap_grid() {
        let s = truncated_rule_stats((1.0 + g) / 2.0, quality, horizon)?;
        if s.error_rate > worst_error {
            worst_error = s.error_rate;
            worst_gap = g;
        }
        max_residual = max_residual.max(s.residual_mass);
    }
    let slack = 2.0 * max_residual;
    Ok(FiniteStopReport {
        quality,
        horizon,
        stop_mass_gap_zero: zero.stop_mass,
        worst_error,
        worst_gap,
        truncation_slack: slack,
        holds: zero.stop_mass <= 2.0 * worst_error + slack,
    })
}

/// `(x . alpha)(x . beta) >= min_i alpha_i beta_i` for positive vectors and a
/// distribution `x`, with `1e-12` slack.
pub fn check_vector_inequality(alpha: &[f64], beta: &[f64], x: &[f64]) -> bool {
    assert_eq!(alpha.len(), beta.len());
    assert_eq!(alpha.len(), x.len());
    let dot = |v: &[f64]| v.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    let lhs = dot(alpha) * dot(beta);
    let rhs = alpha
        .iter()
        .zip(beta)
        .map(|(a, b)| a * b)
        .fold(f64::INFINITY, f64::min);
    lhs >= rhs - 1e-12 * rhs.abs().max(1.0)
}
