//! Domain model: response distributions, problem instances, vote tallies and
//! the gap quantities that drive every stopping rule and selection policy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance for every probability sum and identity check.
pub const PROB_TOL: f64 = 1e-12;

/// Gap of a distribution: largest probability minus second-largest.
///
/// Always in `[0, 1]` for a probability vector, and zero exactly when the two
/// largest entries tie.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct Gap(f64);

impl Gap {
    pub const ZERO: Gap = Gap(0.0);

    pub fn value(self) -> f64 {
        self.0
    }
}

impl From<Gap> for f64 {
    fn from(g: Gap) -> f64 {
        g.0
    }
}

/// Largest minus second-largest entry of a slice. A single-entry slice has
/// an implicit second entry of zero.
pub fn top_two_gap(values: &[f64]) -> f64 {
    let (first, second) = top_two(values);
    first - second
}

/// Largest minus second-largest count, as an integer margin.
pub fn count_margin(counts: &[u64]) -> u64 {
    let mut first = 0u64;
    let mut second = 0u64;
    for &c in counts {
        if c > first {
            second = first;
            first = c;
        } else if c > second {
            second = c;
        }
    }
    first - second
}

fn top_two(values: &[f64]) -> (f64, f64) {
    let mut first = f64::NEG_INFINITY;
    let mut second = f64::NEG_INFINITY;
    for &v in values {
        if v > first {
            second = first;
            first = v;
        } else if v > second {
            second = v;
        }
    }
    if second == f64::NEG_INFINITY {
        second = 0.0;
    }
    (first, second)
}

/// A response distribution over `n >= 2` options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ResponseDistribution {
    probs: Vec<f64>,
}

impl ResponseDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::InvalidDistribution(format!(
                "need at least two options, got {}",
                probs.len()
            )));
        }
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidDistribution(format!(
                "probability {p} outside [0, 1]"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > PROB_TOL {
            return Err(Error::InvalidDistribution(format!(
                "probabilities sum to {sum}"
            )));
        }
        Ok(Self { probs })
    }

    /// Two-option distribution `(p, 1 - p)`.
    pub fn binary(p: f64) -> Result<Self> {
        Self::new(vec![p, 1.0 - p])
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn num_options(&self) -> usize {
        self.probs.len()
    }

    pub fn gap(&self) -> Gap {
        Gap(top_two_gap(&self.probs).clamp(0.0, 1.0))
    }

    /// Draws an option index by inverse-CDF sampling from one uniform variate.
    pub fn sample_with(&self, u: f64) -> usize {
        let mut acc = 0.0;
        for (x, &p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return x;
            }
        }
        // u landed in the rounding slack above the accumulated sum
        self.probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
    }
}

impl TryFrom<Vec<f64>> for ResponseDistribution {
    type Error = Error;

    fn try_from(probs: Vec<f64>) -> Result<Self> {
        Self::new(probs)
    }
}

impl From<ResponseDistribution> for Vec<f64> {
    fn from(d: ResponseDistribution) -> Vec<f64> {
        d.probs
    }
}

/// Gap of a distribution.
pub fn gap(dist: &ResponseDistribution) -> Gap {
    dist.gap()
}

/// `k` crowds over a shared option set, their per-round costs, and the
/// correct option `x*`.
///
/// `x*` must be a most probable option of every crowd. Uninformative crowds
/// (gap zero) are allowed, so the maximum need not be strict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemInstance {
    crowds: Vec<ResponseDistribution>,
    costs: Vec<f64>,
    correct_option: usize,
}

impl ProblemInstance {
    pub fn new(
        crowds: Vec<ResponseDistribution>,
        costs: Vec<f64>,
        correct_option: usize,
    ) -> Result<Self> {
        if crowds.is_empty() {
            return Err(Error::InvalidInstance("no crowds".into()));
        }
        if costs.len() != crowds.len() {
            return Err(Error::DimensionMismatch {
                expected: crowds.len(),
                found: costs.len(),
            });
        }
        if let Some(c) = costs.iter().find(|c| !(**c > 0.0 && c.is_finite())) {
            return Err(Error::InvalidInstance(format!("cost {c} is not positive")));
        }
        let n = crowds[0].num_options();
        if correct_option >= n {
            return Err(Error::IndexOutOfRange {
                what: "option",
                index: correct_option,
                len: n,
            });
        }
        for (i, d) in crowds.iter().enumerate() {
            if d.num_options() != n {
                return Err(Error::InvalidInstance(format!(
                    "crowd {i} has {} options, expected {n}",
                    d.num_options()
                )));
            }
            let star = d.probs()[correct_option];
            if d.probs().iter().any(|&p| p > star) {
                return Err(Error::InvalidInstance(format!(
                    "option {correct_option} is not a most probable option of crowd {i}"
                )));
            }
        }
        Ok(Self {
            crowds,
            costs,
            correct_option,
        })
    }

    /// Instance with every cost equal to one.
    pub fn with_unit_costs(
        crowds: Vec<ResponseDistribution>,
        correct_option: usize,
    ) -> Result<Self> {
        let k = crowds.len();
        Self::new(crowds, vec![1.0; k], correct_option)
    }

    pub fn crowds(&self) -> &[ResponseDistribution] {
        &self.crowds
    }

    pub fn crowd(&self, i: usize) -> &ResponseDistribution {
        &self.crowds[i]
    }

    pub fn costs(&self) -> &[f64] {
        &self.costs
    }

    pub fn correct_option(&self) -> usize {
        self.correct_option
    }

    pub fn num_crowds(&self) -> usize {
        self.crowds.len()
    }

    pub fn num_options(&self) -> usize {
        self.crowds[0].num_options()
    }

    pub fn gaps(&self) -> Vec<Gap> {
        self.crowds.iter().map(|d| d.gap()).collect()
    }

    pub fn has_uniform_costs(&self) -> bool {
        self.costs
            .iter()
            .all(|&c| (c - self.costs[0]).abs() <= PROB_TOL)
    }

    /// Response vector `(D_1(x), ..., D_k(x))` for one option.
    pub fn response_vector(&self, option: usize) -> Vec<f64> {
        self.crowds.iter().map(|d| d.probs()[option]).collect()
    }

    /// Same instance with crowds reordered: crowd `j` of the result is crowd
    /// `order[j]` of `self`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let k = self.num_crowds();
        let mut seen = vec![false; k];
        if order.len() != k
            || order
                .iter()
                .any(|&i| i >= k || std::mem::replace(&mut seen[i], true))
        {
            return Err(Error::InvalidInstance(format!(
                "{order:?} is not a permutation of 0..{k}"
            )));
        }
        Ok(Self {
            crowds: order.iter().map(|&i| self.crowds[i].clone()).collect(),
            costs: order.iter().map(|&i| self.costs[i]).collect(),
            correct_option: self.correct_option,
        })
    }
}

fn check_mixture(instance: &ProblemInstance, mu: &[f64]) -> Result<()> {
    if mu.len() != instance.num_crowds() {
        return Err(Error::DimensionMismatch {
            expected: instance.num_crowds(),
            found: mu.len(),
        });
    }
    let sum: f64 = mu.iter().sum();
    if mu.iter().any(|&w| w < 0.0) || (sum - 1.0).abs() > PROB_TOL {
        return Err(Error::InvalidMixture(format!("{mu:?}")));
    }
    Ok(())
}

/// Response distribution of the total crowd when crowds are drawn from `mu`.
pub fn mix(instance: &ProblemInstance, mu: &[f64]) -> Result<ResponseDistribution> {
    check_mixture(instance, mu)?;
    let n = instance.num_options();
    let mut probs = vec![0.0; n];
    for (d, &w) in instance.crowds().iter().zip(mu) {
        for (acc, &p) in probs.iter_mut().zip(d.probs()) {
            *acc += w * p;
        }
    }
    // absorb float drift so the result passes validation
    let sum: f64 = probs.iter().sum();
    for p in &mut probs {
        *p = (*p / sum).clamp(0.0, 1.0);
    }
    ResponseDistribution::new(probs)
}

/// Induced gap `f(mu)`: the gap of the mixed distribution.
pub fn induced_gap(instance: &ProblemInstance, mu: &[f64]) -> Result<Gap> {
    Ok(mix(instance, mu)?.gap())
}

/// Induced gap computed as a minimum of linear functions of `mu`:
/// `min_{x != x*} mu . (D(x*) - D(x))`. Agrees with [`induced_gap`] because
/// `x*` maximizes every crowd's distribution.
pub fn induced_gap_linear(instance: &ProblemInstance, mu: &[f64]) -> Result<Gap> {
    check_mixture(instance, mu)?;
    let star = instance.correct_option();
    let value = (0..instance.num_options())
        .filter(|&x| x != star)
        .map(|x| {
            instance
                .crowds()
                .iter()
                .zip(mu)
                .map(|(d, &w)| w * (d.probs()[star] - d.probs()[x]))
                .sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min);
    Ok(Gap(value.clamp(0.0, 1.0)))
}

/// Per-crowd and total-crowd vote counts after `round` rounds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TallySheet {
    counts: Vec<Vec<u64>>,
    pulls: Vec<u64>,
    totals: Vec<u64>,
    round: u64,
}

impl TallySheet {
    pub fn new(num_crowds: usize, num_options: usize) -> Self {
        Self {
            counts: vec![vec![0; num_options]; num_crowds],
            pulls: vec![0; num_crowds],
            totals: vec![0; num_options],
            round: 0,
        }
    }

    pub fn for_instance(instance: &ProblemInstance) -> Self {
        Self::new(instance.num_crowds(), instance.num_options())
    }

    /// Records one response `option` from `crowd`, advancing the round.
    pub fn record(&mut self, crowd: usize, option: usize) -> Result<()> {
        let k = self.counts.len();
        let n = self.totals.len();
        if crowd >= k {
            return Err(Error::IndexOutOfRange {
                what: "crowd",
                index: crowd,
                len: k,
            });
        }
        if option >= n {
            return Err(Error::IndexOutOfRange {
                what: "option",
                index: option,
                len: n,
            });
        }
        self.counts[crowd][option] += 1;
        self.pulls[crowd] += 1;
        self.totals[option] += 1;
        self.round += 1;
        Ok(())
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn num_crowds(&self) -> usize {
        self.counts.len()
    }

    pub fn num_options(&self) -> usize {
        self.totals.len()
    }

    /// Option counts `N_i(x)` of one crowd.
    pub fn counts(&self, crowd: usize) -> &[u64] {
        &self.counts[crowd]
    }

    /// Number of times `crowd` was chosen.
    pub fn pulls(&self, crowd: usize) -> u64 {
        self.pulls[crowd]
    }

    pub fn all_pulls(&self) -> &[u64] {
        &self.pulls
    }

    /// Option counts of the total crowd.
    pub fn total_counts(&self) -> &[u64] {
        &self.totals
    }

    /// Frequency vector of one crowd's responses.
    pub fn empirical_distribution(&self, crowd: usize) -> Result<ResponseDistribution> {
        if crowd >= self.counts.len() {
            return Err(Error::IndexOutOfRange {
                what: "crowd",
                index: crowd,
                len: self.counts.len(),
            });
        }
        empirical_from_counts(&self.counts[crowd]).ok_or(Error::NoData { crowd })
    }

    /// Empirical gap of one crowd; `None` before the crowd is sampled.
    pub fn empirical_gap(&self, crowd: usize) -> Option<Gap> {
        empirical_gap_of(&self.counts[crowd])
    }

    /// Empirical gap of the total crowd; `None` at round zero.
    pub fn total_empirical_gap(&self) -> Option<Gap> {
        empirical_gap_of(&self.totals)
    }
}

fn empirical_from_counts(counts: &[u64]) -> Option<ResponseDistribution> {
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return None;
    }
    let probs = counts.iter().map(|&c| c as f64 / n as f64).collect();
    Some(ResponseDistribution { probs })
}

/// Empirical gap `(max count - second count) / N` of a count vector.
pub fn empirical_gap_of(counts: &[u64]) -> Option<Gap> {
    let n: u64 = counts.iter().sum();
    (n > 0).then(|| Gap(count_margin(counts) as f64 / n as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn dist(p: &[f64]) -> ResponseDistribution {
        ResponseDistribution::new(p.to_vec()).unwrap()
    }

    #[test]
    fn gap_examples() {
        assert_eq!(dist(&[0.5, 0.5]).gap().value(), 0.0);
        assert_abs_diff_eq!(
            dist(&[0.45, 0.40, 0.15]).gap().value(),
            0.05,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(dist(&[0.8, 0.2]).gap().value(), 0.6, epsilon = 1e-12);
        // duplicated maximum
        assert_eq!(dist(&[0.4, 0.2, 0.4]).gap().value(), 0.0);
    }

    #[test]
    fn rejects_bad_distributions() {
        assert!(ResponseDistribution::new(vec![1.0]).is_err());
        assert!(ResponseDistribution::new(vec![0.6, 0.6]).is_err());
        assert!(ResponseDistribution::new(vec![1.2, -0.2]).is_err());
        assert!(ResponseDistribution::new(vec![0.5, 0.5 + 1e-13]).is_ok());
    }

    #[test]
    fn instance_validation() {
        let d = dist(&[0.7, 0.3]);
        assert!(ProblemInstance::new(vec![d.clone()], vec![0.0], 0).is_err());
        assert!(ProblemInstance::new(vec![d.clone()], vec![1.0, 1.0], 0).is_err());
        assert!(ProblemInstance::new(vec![d.clone()], vec![1.0], 1).is_err());
        assert!(ProblemInstance::new(vec![d.clone()], vec![1.0], 2).is_err());
        // gap-zero crowds are admissible
        assert!(ProblemInstance::new(vec![d, dist(&[0.5, 0.5])], vec![1.0, 2.0], 0).is_ok());
    }

    #[test]
    fn mix_examples() {
        let a = dist(&[0.45, 0.40, 0.15]);
        let b = dist(&[0.45, 0.15, 0.40]);
        let inst = ProblemInstance::with_unit_costs(vec![a.clone(), b], 0).unwrap();
        assert_eq!(mix(&inst, &[1.0, 0.0]).unwrap().probs(), a.probs());
        let m = mix(&inst, &[0.5, 0.5]).unwrap();
        for (got, want) in m.probs().iter().zip([0.45, 0.275, 0.275]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(
            induced_gap(&inst, &[0.5, 0.5]).unwrap().value(),
            0.175,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            induced_gap_linear(&inst, &[0.5, 0.5]).unwrap().value(),
            0.175,
            epsilon = 1e-12
        );
        assert!(matches!(
            mix(&inst, &[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(mix(&inst, &[0.7, 0.7]).is_err());

        let same = ProblemInstance::with_unit_costs(vec![dist(&[0.6, 0.4]); 2], 0).unwrap();
        assert_eq!(mix(&same, &[0.3, 0.7]).unwrap().probs()[0], 0.6);
    }

    #[test]
    fn two_option_induced_gap_is_linear() {
        let inst = ProblemInstance::with_unit_costs(
            vec![dist(&[0.8, 0.2]), dist(&[0.55, 0.45]), dist(&[0.5, 0.5])],
            0,
        )
        .unwrap();
        let mu = [0.2, 0.5, 0.3];
        let dot: f64 = inst.gaps().iter().zip(mu).map(|(g, w)| g.value() * w).sum();
        assert_abs_diff_eq!(
            induced_gap(&inst, &mu).unwrap().value(),
            dot,
            epsilon = 1e-12
        );
    }

    #[test]
    fn tally_records_and_frequencies() {
        let mut t = TallySheet::new(2, 3);
        t.record(0, 1).unwrap();
        assert_eq!(t.counts(0), &[0, 1, 0]);
        assert_eq!(t.round(), 1);
        t.record(0, 1).unwrap();
        assert_eq!(t.counts(0)[1], 2);
        assert!(t.record(2, 0).is_err());
        assert!(t.record(0, 3).is_err());
        assert_eq!(t.round(), 2);
        assert!(matches!(
            t.empirical_distribution(1),
            Err(Error::NoData { crowd: 1 })
        ));
        assert!(t.empirical_gap(1).is_none());

        let mut t = TallySheet::new(1, 2);
        for x in [0, 0, 0, 1] {
            t.record(0, x).unwrap();
        }
        assert_eq!(t.empirical_distribution(0).unwrap().probs(), &[0.75, 0.25]);

        let mut t = TallySheet::new(1, 3);
        for x in [0, 0, 1, 2] {
            t.record(0, x).unwrap();
        }
        assert_eq!(
            t.empirical_distribution(0).unwrap().probs(),
            &[0.5, 0.25, 0.25]
        );
        assert_eq!(t.empirical_gap(0).unwrap().value(), 0.25);
    }

    #[test]
    fn tie_counts_have_zero_empirical_gap() {
        assert_eq!(empirical_gap_of(&[5, 5]).unwrap().value(), 0.0);
        assert_eq!(count_margin(&[5, 5]), 0);
        assert_eq!(count_margin(&[2, 7, 3]), 4);
    }

    #[test]
    fn sampling_respects_support() {
        let d = dist(&[0.0, 1.0]);
        assert_eq!(d.sample_with(0.0), 1);
        assert_eq!(d.sample_with(0.999_999_999), 1);
        let d = dist(&[0.25, 0.75]);
        assert_eq!(d.sample_with(0.1), 0);
        assert_eq!(d.sample_with(0.3), 1);
    }

    #[test]
    fn permutation_reorders_crowds_and_costs() {
        let inst = ProblemInstance::new(
            vec![dist(&[0.8, 0.2]), dist(&[0.5, 0.5])],
            vec![1.0, 3.0],
            0,
        )
        .unwrap();
        let p = inst.permuted(&[1, 0]).unwrap();
        assert_eq!(p.costs(), &[3.0, 1.0]);
        assert_eq!(p.crowd(1).probs(), &[0.8, 0.2]);
        assert!(inst.permuted(&[0, 0]).is_err());
    }
}
