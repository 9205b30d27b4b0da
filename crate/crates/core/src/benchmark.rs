//! Monte-Carlo estimates of the omniscient benchmarks: the cost of always
//! asking the best single crowd, and the cost of always sampling crowds from
//! the best fixed distribution with responses pooled into one source.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ProblemInstance;
use crate::seed::{child_rng, label};
use crate::selection::{sample_index, simplex_grid};
use crate::stopping::SingleSourceRule;

pub const DEFAULT_RUNS: usize = 20_000;
pub const DEFAULT_MAX_ROUNDS: u64 = 1_000_000;
pub const DEFAULT_GRID: u64 = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonteCarloOptions {
    pub runs: usize,
    /// Runs still going after this many rounds are abandoned and counted as
    /// truncated.
    pub max_rounds: u64,
}

impl Default for MonteCarloOptions {
    fn default() -> Self {
        Self {
            runs: DEFAULT_RUNS,
            max_rounds: DEFAULT_MAX_ROUNDS,
        }
    }
}

impl MonteCarloOptions {
    pub fn with_runs(runs: usize) -> Self {
        Self {
            runs,
            ..Self::default()
        }
    }

    fn checked(self) -> Result<Self> {
        if self.runs == 0 {
            return Err(Error::InvalidConfig("runs must be at least 1".into()));
        }
        if self.max_rounds == 0 {
            return Err(Error::InvalidConfig("max_rounds must be at least 1".into()));
        }
        Ok(self)
    }
}

/// Outcome of one simulated run against a single pooled source.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceOutcome {
    pub rounds: u64,
    pub cost: f64,
    /// `None` when the run was truncated.
    pub output: Option<usize>,
}

/// Sample statistics over the completed runs of one estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub mean_rounds: f64,
    pub std_err_rounds: f64,
    pub error_rate: f64,
    /// Completed runs.
    pub runs: usize,
    pub truncated: usize,
}

fn mean_and_se(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let (n, sum) = values
        .clone()
        .fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = sum / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = values.map(|v| (v - mean).powi(2)).sum();
    (mean, (ss / (n - 1) as f64 / n as f64).sqrt())
}

impl CostEstimate {
    /// Summarizes outcomes in the given order; errors count outputs other
    /// than `correct`.
    pub fn from_outcomes(outcomes: &[SourceOutcome], correct: usize) -> Self {
        let done = || outcomes.iter().filter(|o| o.output.is_some());
        let runs = done().count();
        let (mean, std_err) = mean_and_se(done().map(|o| o.cost));
        let (mean_rounds, std_err_rounds) = mean_and_se(done().map(|o| o.rounds as f64));
        let wrong = done().filter(|o| o.output != Some(correct)).count();
        Self {
            mean,
            std_err,
            mean_rounds,
            std_err_rounds,
            error_rate: if runs > 0 {
                wrong as f64 / runs as f64
            } else {
                f64::NAN
            },
            runs,
            truncated: outcomes.len() - runs,
        }
    }

    /// Standard error of the difference between two independent estimates.
    pub fn combined_std_err(&self, other: &CostEstimate) -> f64 {
        self.std_err.hypot(other.std_err)
    }
}

/// One run of `rule` fed by crowds drawn i.i.d. from `mu`. When `mu` puts all
/// its mass on one crowd no randomness is spent on the crowd draw, so a
/// vertex of the simplex reproduces the fixed-crowd stream exactly.
pub fn simulate_source(
    instance: &ProblemInstance,
    mu: &[f64],
    rule: &SingleSourceRule,
    max_rounds: u64,
    rng: &mut crate::seed::SimRng,
) -> Result<SourceOutcome> {
    let support: Vec<usize> = (0..mu.len()).filter(|&i| mu[i] > 0.0).collect();
    if support.is_empty() || mu.len() != instance.num_crowds() {
        return Err(Error::InvalidMixture(format!("{mu:?}")));
    }
    let single = (support.len() == 1).then(|| support[0]);
    let mut counts = vec![0u64; instance.num_options()];
    let mut cost = 0.0;
    for t in 1..=max_rounds {
        let crowd = match single {
            Some(i) => i,
            None => sample_index(mu, rng),
        };
        let option = instance.crowd(crowd).sample_with(rng.random());
        counts[option] += 1;
        cost += instance.costs()[crowd];
        if let Some(x) = rule.decide(&counts, rng)? {
            return Ok(SourceOutcome {
                rounds: t,
                cost,
                output: Some(x),
            });
        }
    }
    Ok(SourceOutcome {
        rounds: max_rounds,
        cost,
        output: None,
    })
}

fn vertex_path(crowd: usize) -> [u64; 2] {
    [label("crowd"), crowd as u64]
}

fn estimate(
    instance: &ProblemInstance,
    mu: &[f64],
    rule: &SingleSourceRule,
    opts: MonteCarloOptions,
    seed: u64,
    path: &[u64],
) -> Result<CostEstimate> {
    let outcomes = (0..opts.runs as u64)
        .into_par_iter()
        .map(|run| {
            let mut p = path.to_vec();
            p.push(run);
            simulate_source(
                instance,
                mu,
                rule,
                opts.max_rounds,
                &mut child_rng(seed, &p),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CostEstimate::from_outcomes(
        &outcomes,
        instance.correct_option(),
    ))
}

/// Estimated cost of running `rule` on a fixed distribution `mu` over crowds.
pub fn mixture_cost(
    instance: &ProblemInstance,
    mu: &[f64],
    rule: &SingleSourceRule,
    opts: MonteCarloOptions,
    seed: u64,
) -> Result<CostEstimate> {
    let opts = opts.checked()?;
    let support: Vec<usize> = (0..mu.len()).filter(|&i| mu[i] > 0.0).collect();
    if let [only] = support[..] {
        return estimate(instance, mu, rule, opts, seed, &vertex_path(only));
    }
    let mut path = vec![label("mu")];
    path.extend(mu.iter().map(|w| w.to_bits()));
    estimate(instance, mu, rule, opts, seed, &path)
}

/// Per-crowd cost of always asking crowd `i`.
pub fn per_crowd_costs(
    instance: &ProblemInstance,
    rule: &SingleSourceRule,
    opts: MonteCarloOptions,
    seed: u64,
) -> Result<Vec<CostEstimate>> {
    let opts = opts.checked()?;
    let k = instance.num_crowds();
    (0..k)
        .map(|i| {
            let mut mu = vec![0.0; k];
            mu[i] = 1.0;
            estimate(instance, &mu, rule, opts, seed, &vertex_path(i))
        })
        .collect()
}

fn argmin_by_mean(estimates: &[CostEstimate]) -> usize {
    let mut best = 0;
    for (i, e) in estimates.iter().enumerate() {
        if e.mean < estimates[best].mean {
            best = i;
        }
    }
    best
}

/// Cost of one grid distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureEstimate {
    pub mu: Vec<f64>,
    pub cost: CostEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub per_crowd_cost: Vec<CostEstimate>,
    pub best_crowd: usize,
    pub best_mu: Vec<f64>,
    pub best_mu_cost: CostEstimate,
    /// Every evaluated grid point, in grid order.
    pub grid: Vec<MixtureEstimate>,
    pub runs: usize,
}

impl BenchmarkReport {
    pub fn deterministic_cost(&self) -> &CostEstimate {
        &self.per_crowd_cost[self.best_crowd]
    }
}

/// Best single crowd under `rule`; the grid fields hold the vertices only.
pub fn deterministic_benchmark(
    instance: &ProblemInstance,
    rule: &SingleSourceRule,
    opts: MonteCarloOptions,
    seed: u64,
) -> Result<BenchmarkReport> {
    let per_crowd_cost = per_crowd_costs(instance, rule, opts, seed)?;
    let best_crowd = argmin_by_mean(&per_crowd_cost);
    let k = instance.num_crowds();
    let grid: Vec<MixtureEstimate> = per_crowd_cost
        .iter()
        .enumerate()
        .map(|(i, &cost)| {
            let mut mu = vec![0.0; k];
            mu[i] = 1.0;
            MixtureEstimate { mu, cost }
        })
        .collect();
    Ok(BenchmarkReport {
        best_mu: grid[best_crowd].mu.clone(),
        best_mu_cost: per_crowd_cost[best_crowd],
        per_crowd_cost,
        best_crowd,
        grid,
        runs: opts.runs,
    })
}

/// Best distribution over crowds on the simplex grid of denominator
/// `grid_m`, together with the per-crowd costs. Grid vertices share their
/// random streams with the per-crowd estimates.
pub fn randomized_benchmark(
    instance: &ProblemInstance,
    rule: &SingleSourceRule,
    grid_m: u64,
    opts: MonteCarloOptions,
    seed: u64,
) -> Result<BenchmarkReport> {
    if grid_m == 0 {
        return Err(Error::InvalidConfig(
            "grid denominator must be at least 1".into(),
        ));
    }
    let det = deterministic_benchmark(instance, rule, opts, seed)?;
    let grid = simplex_grid(instance.num_crowds(), grid_m)
        .into_iter()
        .map(|mu| {
            let cost = match mu.iter().position(|&w| w == 1.0) {
                Some(i) => det.per_crowd_cost[i],
                None => mixture_cost(instance, &mu, rule, opts, seed)?,
            };
            Ok(MixtureEstimate { mu, cost })
        })
        .collect::<Result<Vec<_>>>()?;
    let costs: Vec<CostEstimate> = grid.iter().map(|g| g.cost).collect();
    let best = argmin_by_mean(&costs);
    Ok(BenchmarkReport {
        per_crowd_cost: det.per_crowd_cost,
        best_crowd: det.best_crowd,
        best_mu: grid[best].mu.clone(),
        best_mu_cost: grid[best].cost,
        grid,
        runs: opts.runs,
    })
}

/// Crowd minimizing `c_i / gap_i^2`, ties to the lowest index. Crowds with
/// gap zero are skipped; if every gap is zero there is nothing to choose.
pub fn approx_best_crowd(costs: &[f64], gaps: &[f64]) -> Result<usize> {
    if costs.len() != gaps.len() {
        return Err(Error::DimensionMismatch {
            expected: costs.len(),
            found: gaps.len(),
        });
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, (&c, &g)) in costs.iter().zip(gaps).enumerate() {
        if g <= 0.0 {
            continue;
        }
        let score = c / (g * g);
        if best.is_none_or(|(_, s)| score < s) {
            best = Some((i, score));
        }
    }
    best.map(|(i, _)| i).ok_or(Error::NoInformation)
}

/// Outcome of comparing every grid distribution against the best crowd.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureLowerBoundReport {
    pub best_crowd_cost: f64,
    /// Smallest `cost(mu) - min_i cost(i) + 3 * se` over the grid.
    pub worst_margin: f64,
    pub worst_mu: Vec<f64>,
    pub violations: usize,
    pub holds: bool,
}

/// Checks `cost(mu) >= min_i cost(i) - 3 se` for every grid point of a
/// randomized-benchmark report.
pub fn mixture_lower_bound_check(report: &BenchmarkReport) -> MixtureLowerBoundReport {
    let best = report.deterministic_cost();
    let mut worst_margin = f64::INFINITY;
    let mut worst_mu = report.best_mu.clone();
    let mut violations = 0;
    for g in &report.grid {
        let margin = g.cost.mean - best.mean + 3.0 * g.cost.combined_std_err(best);
        if margin < 0.0 {
            violations += 1;
        }
        if margin < worst_margin {
            worst_margin = margin;
            worst_mu = g.mu.clone();
        }
    }
    MixtureLowerBoundReport {
        best_crowd_cost: best.mean,
        worst_margin,
        worst_mu,
        violations,
        holds: violations == 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ResponseDistribution;
    use crate::stopping::{ThresholdRuleConfig, TotalRuleConfig};

    fn threshold(q: f64) -> SingleSourceRule {
        SingleSourceRule::Threshold(ThresholdRuleConfig::deterministic(q).unwrap())
    }

    #[test]
    fn approx_best_crowd_examples() {
        assert_eq!(approx_best_crowd(&[1.0; 3], &[0.3, 0.1, 0.1]).unwrap(), 0);
        assert_eq!(approx_best_crowd(&[1.0, 4.0], &[0.2, 0.5]).unwrap(), 1);
        assert_eq!(approx_best_crowd(&[2.0], &[0.4]).unwrap(), 0);
        assert_eq!(approx_best_crowd(&[1.0, 1.0], &[0.0, 0.2]).unwrap(), 1);
        assert_eq!(approx_best_crowd(&[1.0, 1.0], &[0.2, 0.2]).unwrap(), 0);
        assert!(matches!(
            approx_best_crowd(&[1.0, 1.0], &[0.0, 0.0]),
            Err(Error::NoInformation)
        ));
    }

    #[test]
    fn perfect_crowd_costs_are_exact() {
        let inst = ProblemInstance::new(
            vec![ResponseDistribution::binary(1.0).unwrap()],
            vec![2.5],
            0,
        )
        .unwrap();
        let e =
            per_crowd_costs(&inst, &threshold(2.0), MonteCarloOptions::with_runs(50), 1).unwrap();
        assert_eq!(e[0].mean, 12.5);
        assert_eq!(e[0].std_err, 0.0);
        assert_eq!(e[0].mean_rounds, 5.0);
        assert_eq!(e[0].error_rate, 0.0);
    }

    #[test]
    fn single_crowd_randomized_equals_deterministic() {
        let inst =
            ProblemInstance::with_unit_costs(vec![ResponseDistribution::binary(0.7).unwrap()], 0)
                .unwrap();
        let rule = SingleSourceRule::Total(TotalRuleConfig::new(2.0, 10_000).unwrap());
        let r =
            randomized_benchmark(&inst, &rule, 20, MonteCarloOptions::with_runs(500), 3).unwrap();
        assert_eq!(r.grid.len(), 1);
        assert_eq!(r.best_mu, vec![1.0]);
        assert_eq!(r.best_mu_cost, r.per_crowd_cost[0]);
    }

    #[test]
    fn vertex_mixture_reuses_crowd_stream() {
        let inst = crate::workload::BiasSpec::medium().instance().unwrap();
        let rule = threshold(1.5);
        let opts = MonteCarloOptions::with_runs(200);
        let per = per_crowd_costs(&inst, &rule, opts, 8).unwrap();
        assert_eq!(
            mixture_cost(&inst, &[0.0, 1.0, 0.0], &rule, opts, 8).unwrap(),
            per[1]
        );
    }

    #[test]
    fn identical_crowds_agree() {
        let d = ResponseDistribution::binary(0.75).unwrap();
        let inst = ProblemInstance::with_unit_costs(vec![d.clone(), d], 0).unwrap();
        let e = per_crowd_costs(
            &inst,
            &threshold(2.0),
            MonteCarloOptions::with_runs(4000),
            5,
        )
        .unwrap();
        assert_ne!(e[0], e[1]);
        assert!((e[0].mean - e[1].mean).abs() <= 3.0 * e[0].combined_std_err(&e[1]));
    }

    #[test]
    fn truncation_is_counted() {
        let inst =
            ProblemInstance::with_unit_costs(vec![ResponseDistribution::binary(0.5).unwrap()], 0)
                .unwrap();
        let opts = MonteCarloOptions {
            runs: 100,
            max_rounds: 3,
        };
        let e = per_crowd_costs(&inst, &threshold(4.0), opts, 0).unwrap();
        assert_eq!(e[0].truncated, 100);
        assert_eq!(e[0].runs, 0);
        assert!(e[0].mean.is_nan());
    }

    #[test]
    fn parallel_and_serial_match() {
        let inst = crate::workload::BiasSpec::hard().instance().unwrap();
        let rule = threshold(1.0);
        let opts = MonteCarloOptions::with_runs(300);
        let a = per_crowd_costs(&inst, &rule, opts, 4).unwrap();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let b = pool.install(|| per_crowd_costs(&inst, &rule, opts, 4).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn zero_runs_rejected() {
        let inst = crate::workload::BiasSpec::easy().instance().unwrap();
        assert!(
            per_crowd_costs(&inst, &threshold(1.0), MonteCarloOptions::with_runs(0), 0).is_err()
        );
        assert!(randomized_benchmark(
            &inst,
            &threshold(1.0),
            0,
            MonteCarloOptions::with_runs(1),
            0
        )
        .is_err());
    }
}
