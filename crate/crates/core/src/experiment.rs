//! Simulation engine: single runs, quality sweeps, and CSV output.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ProblemInstance, TallySheet};
use crate::seed::{child_rng, derive_seed, label, rng_from_seed};
use crate::selection::{EerConfig, Exploration, PolicySpec, UcbConfig};
use crate::stopping::{
    CompositeRule, StoppingDecision, ThresholdRuleConfig, TotalRuleConfig, Trigger,
};
use crate::workload::{crowd_permutation, gap_instance, separation_instance, BiasSpec};

pub const DEFAULT_SAFETY_CAP: u64 = 1_000_000;
pub const DEFAULT_RUNS: usize = 20_000;

/// Result of a run that stopped on its own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub total_cost: f64,
    pub rounds: u64,
    pub output_option: usize,
    pub correct: bool,
    pub per_crowd_pulls: Vec<u64>,
    pub trigger: Trigger,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RunOutcome {
    Completed(RunResult),
    /// The safety cap was reached before any rule instance stopped.
    Truncated {
        rounds: u64,
        total_cost: f64,
    },
}

impl RunOutcome {
    pub fn completed(&self) -> Option<&RunResult> {
        match self {
            RunOutcome::Completed(r) => Some(r),
            RunOutcome::Truncated { .. } => None,
        }
    }
}

/// One microtask: the policy picks a crowd, that crowd answers, and the
/// composite rule is consulted, until the rule stops or `safety_cap` rounds
/// have been played.
pub fn run_once(
    instance: &ProblemInstance,
    policy: &PolicySpec,
    rule: &CompositeRule,
    seed: u64,
    safety_cap: u64,
) -> Result<RunOutcome> {
    let mut selector = policy.build(instance)?;
    let mut rng = rng_from_seed(seed);
    let mut tally = TallySheet::for_instance(instance);
    let mut total_cost = 0.0;
    while tally.round() < safety_cap {
        let crowd = selector.select(&tally, &mut rng);
        let option = instance.crowd(crowd).sample_with(rng.random());
        tally.record(crowd, option)?;
        total_cost += instance.costs()[crowd];
        selector.observe(crowd, option, &tally, &mut rng);
        if let StoppingDecision::Stop { output, trigger } =
            rule.decide(&tally, Some(crowd), &mut rng)?
        {
            return Ok(RunOutcome::Completed(RunResult {
                total_cost,
                rounds: tally.round(),
                output_option: output,
                correct: output == instance.correct_option(),
                per_crowd_pulls: tally.all_pulls().to_vec(),
                trigger,
            }));
        }
    }
    Ok(RunOutcome::Truncated {
        rounds: tally.round(),
        total_cost,
    })
}

// ---------------------------------------------------------------------------
// Campaign configuration

/// Source of the per-run problem instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WorkloadSpec {
    /// Two-option crowds given by bias; crowd order shuffled per instance.
    FixedBias {
        biases: Vec<f64>,
        #[serde(default)]
        costs: Option<Vec<f64>>,
    },
    /// One crowd per instance with gap drawn uniformly from `[lo, hi]`.
    UniformGap {
        lo: f64,
        hi: f64,
    },
    Separation {
        epsilon: f64,
    },
}

impl WorkloadSpec {
    pub fn easy() -> Self {
        Self::from_bias(&BiasSpec::easy())
    }

    pub fn medium() -> Self {
        Self::from_bias(&BiasSpec::medium())
    }

    pub fn hard() -> Self {
        Self::from_bias(&BiasSpec::hard())
    }

    fn from_bias(spec: &BiasSpec) -> Self {
        WorkloadSpec::FixedBias {
            biases: spec.biases.clone(),
            costs: Some(spec.costs.clone()),
        }
    }

    fn bias_spec(biases: &[f64], costs: &Option<Vec<f64>>) -> Result<BiasSpec> {
        match costs {
            Some(c) => BiasSpec::new(biases.to_vec(), c.clone()),
            None => BiasSpec::unit_costs(biases),
        }
    }

    pub fn num_crowds(&self) -> usize {
        match self {
            WorkloadSpec::FixedBias { biases, .. } => biases.len(),
            WorkloadSpec::UniformGap { .. } => 1,
            WorkloadSpec::Separation { .. } => 2,
        }
    }

    /// Instance number `index` of the stream seeded by `seed`.
    pub fn instance_at(&self, index: u64, seed: u64) -> Result<ProblemInstance> {
        match self {
            WorkloadSpec::FixedBias { biases, costs } => {
                let base = Self::bias_spec(biases, costs)?.instance()?;
                base.permuted(&crowd_permutation(base.num_crowds(), seed, index))
            }
            WorkloadSpec::UniformGap { lo, hi } => {
                if !(0.0 <= *lo && lo < hi && *hi <= 1.0) {
                    return Err(Error::InvalidConfig(format!(
                        "gap range [{lo}, {hi}] must satisfy 0 <= lo < hi <= 1"
                    )));
                }
                gap_instance(child_rng(seed, &[label("gap"), index]).random_range(*lo..=*hi))
            }
            WorkloadSpec::Separation { epsilon } => separation_instance(*epsilon),
        }
    }
}

/// Algorithm entry of a campaign. Parameters that scale with the quality
/// are resolved per sweep point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AlgorithmSpec {
    RoundRobin,
    Ucb {
        #[serde(default = "default_exploration")]
        exploration: Exploration,
    },
    Thompson,
    Eer {
        /// Low-confidence quality as a fraction of the main quality.
        #[serde(default = "default_low_ratio")]
        low_ratio: f64,
        #[serde(default = "default_exploit_multiplier")]
        exploit_multiplier: f64,
    },
    Unif,
}

fn default_exploration() -> Exploration {
    UcbConfig::default().exploration
}

fn default_low_ratio() -> f64 {
    1.0 / 3.0
}

fn default_exploit_multiplier() -> f64 {
    3.0
}

impl AlgorithmSpec {
    pub fn ucb() -> Self {
        AlgorithmSpec::Ucb {
            exploration: default_exploration(),
        }
    }

    pub fn eer() -> Self {
        AlgorithmSpec::Eer {
            low_ratio: default_low_ratio(),
            exploit_multiplier: default_exploit_multiplier(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            AlgorithmSpec::RoundRobin => "rr",
            AlgorithmSpec::Ucb { .. } => "ucb",
            AlgorithmSpec::Thompson => "thompson",
            AlgorithmSpec::Eer { .. } => "eer",
            AlgorithmSpec::Unif => "unif",
        }
    }

    pub fn policy(&self, quality: f64, smooth: bool) -> Result<PolicySpec> {
        Ok(match *self {
            AlgorithmSpec::RoundRobin => PolicySpec::RoundRobin,
            AlgorithmSpec::Ucb { exploration } => PolicySpec::Ucb(match exploration {
                Exploration::Fixed(c) => UcbConfig::fixed(c)?,
                Exploration::Theory => UcbConfig::theory(),
            }),
            AlgorithmSpec::Thompson => PolicySpec::Thompson,
            AlgorithmSpec::Eer {
                low_ratio,
                exploit_multiplier,
            } => PolicySpec::Eer(
                EerConfig {
                    low_quality: quality * low_ratio,
                    exploit_multiplier,
                    smooth,
                }
                .checked(quality)?,
            ),
            AlgorithmSpec::Unif => PolicySpec::Unif,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoppingSpec {
    #[serde(default)]
    pub smooth: bool,
    /// One threshold instance per crowd.
    #[serde(default = "default_true")]
    pub per_crowd: bool,
    /// Add a total-crowd instance. Ignored for single-crowd workloads that
    /// also have a per-crowd instance, which it would duplicate.
    #[serde(default = "default_true")]
    pub total: bool,
    /// Forced-stop horizon of the total instance; unbounded when absent.
    #[serde(default)]
    pub total_horizon: Option<u64>,
    #[serde(default = "default_cap")]
    pub safety_cap: u64,
}

fn default_true() -> bool {
    true
}

fn default_cap() -> u64 {
    DEFAULT_SAFETY_CAP
}

impl Default for StoppingSpec {
    fn default() -> Self {
        Self {
            smooth: false,
            per_crowd: true,
            total: true,
            total_horizon: None,
            safety_cap: DEFAULT_SAFETY_CAP,
        }
    }
}

impl StoppingSpec {
    pub fn rule(&self, quality: f64, num_crowds: usize) -> Result<CompositeRule> {
        let per_crowd = if self.per_crowd {
            Some(
                ThresholdRuleConfig {
                    quality,
                    smooth: self.smooth,
                    adaptive_delta: None,
                }
                .checked()?,
            )
        } else {
            None
        };
        let total = if self.total && (num_crowds > 1 || !self.per_crowd) {
            Some(
                TotalRuleConfig {
                    quality,
                    horizon: self.total_horizon.unwrap_or(u64::MAX),
                    smooth: self.smooth,
                }
                .checked()?,
            )
        } else {
            None
        };
        CompositeRule { per_crowd, total }.checked()
    }
}

/// Default quality grid `0.25, 0.5, ..., 5.0`.
pub fn default_thresholds() -> Vec<f64> {
    (1..=20).map(|i| i as f64 * 0.25).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    #[serde(default = "default_thresholds")]
    pub thresholds: Vec<f64>,
    #[serde(default = "default_runs")]
    pub runs: usize,
}

fn default_runs() -> usize {
    DEFAULT_RUNS
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            thresholds: default_thresholds(),
            runs: DEFAULT_RUNS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputSpec {
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    #[serde(default)]
    pub seed: u64,
    pub workload: WorkloadSpec,
    pub algorithms: Vec<AlgorithmSpec>,
    #[serde(default)]
    pub stopping: StoppingSpec,
    #[serde(default)]
    pub sweep: SweepSpec,
    #[serde(default)]
    pub output: Option<OutputSpec>,
}

impl CampaignConfig {
    pub fn new(workload: WorkloadSpec, algorithms: Vec<AlgorithmSpec>) -> Self {
        Self {
            seed: 0,
            workload,
            algorithms,
            stopping: StoppingSpec::default(),
            sweep: SweepSpec::default(),
            output: None,
        }
    }

    pub fn checked(&self) -> Result<()> {
        if self.sweep.runs == 0 {
            return Err(Error::InvalidConfig("runs must be at least 1".into()));
        }
        if self.sweep.thresholds.is_empty() {
            return Err(Error::InvalidConfig("quality grid is empty".into()));
        }
        if self.algorithms.is_empty() {
            return Err(Error::InvalidConfig("no algorithms".into()));
        }
        if self.stopping.safety_cap == 0 {
            return Err(Error::InvalidConfig("safety cap must be at least 1".into()));
        }
        for (i, a) in self.algorithms.iter().enumerate() {
            if self.algorithms[..i].iter().any(|b| b.name() == a.name()) {
                return Err(Error::InvalidConfig(format!(
                    "algorithm {} listed twice",
                    a.name()
                )));
            }
        }
        let sample = self.workload.instance_at(0, 0)?;
        let k = self.workload.num_crowds();
        for &q in &self.sweep.thresholds {
            self.stopping.rule(q, k)?;
            for a in &self.algorithms {
                a.policy(q, self.stopping.smooth)?.build(&sample)?;
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Sweeps

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub quality: f64,
    pub algorithm: String,
    pub avg_cost: f64,
    pub std_err_cost: f64,
    pub error_rate: f64,
    /// Cost relative to round robin at the same error rate; absent when no
    /// round-robin curve covers this error rate.
    pub norm_cost: Option<f64>,
    /// Completed runs.
    pub runs: usize,
    pub truncated: usize,
    pub avg_rounds: f64,
    /// Digest of the instance stream this point was run on.
    pub stream_checksum: u64,
}

fn instance_digest(instance: &ProblemInstance) -> u64 {
    let mut words = Vec::new();
    for d in instance.crowds() {
        words.extend(d.probs().iter().map(|p| p.to_bits()));
    }
    words.extend(instance.costs().iter().map(|c| c.to_bits()));
    words.push(instance.correct_option() as u64);
    derive_seed(0, &words)
}

/// Seed of run `run` of `algorithm` at quality `quality`.
pub fn run_seed(master: u64, algorithm: &str, quality: f64, run: u64) -> u64 {
    derive_seed(master, &[label(algorithm), quality.to_bits(), run])
}

fn workload_seed(master: u64) -> u64 {
    derive_seed(master, &[label("workload")])
}

/// Runs one (algorithm, quality) point.
pub fn sweep_point(
    config: &CampaignConfig,
    algorithm: &AlgorithmSpec,
    quality: f64,
) -> Result<SweepRecord> {
    let k = config.workload.num_crowds();
    let rule = config.stopping.rule(quality, k)?;
    let policy = algorithm.policy(quality, config.stopping.smooth)?;
    let wseed = workload_seed(config.seed);
    let name = algorithm.name();
    let results = (0..config.sweep.runs as u64)
        .into_par_iter()
        .map(|run| {
            let instance = config.workload.instance_at(run, wseed)?;
            let seed = run_seed(config.seed, name, quality, run);
            let outcome = run_once(&instance, &policy, &rule, seed, config.stopping.safety_cap)?;
            Ok((instance_digest(&instance), outcome))
        })
        .collect::<Result<Vec<_>>>()?;

    let digests: Vec<u64> = results.iter().map(|(d, _)| *d).collect();
    let done: Vec<&RunResult> = results.iter().filter_map(|(_, o)| o.completed()).collect();
    let n = done.len();
    let (avg_cost, std_err_cost, error_rate, avg_rounds) = if n == 0 {
        (f64::NAN, f64::NAN, f64::NAN, f64::NAN)
    } else {
        let mean = done.iter().map(|r| r.total_cost).sum::<f64>() / n as f64;
        let se = if n > 1 {
            let ss: f64 = done.iter().map(|r| (r.total_cost - mean).powi(2)).sum();
            (ss / (n - 1) as f64 / n as f64).sqrt()
        } else {
            0.0
        };
        let wrong = done.iter().filter(|r| !r.correct).count();
        let rounds = done.iter().map(|r| r.rounds as f64).sum::<f64>() / n as f64;
        (mean, se, wrong as f64 / n as f64, rounds)
    };
    Ok(SweepRecord {
        quality,
        algorithm: name.to_string(),
        avg_cost,
        std_err_cost,
        error_rate,
        norm_cost: None,
        runs: n,
        truncated: results.len() - n,
        avg_rounds,
        stream_checksum: derive_seed(0, &digests),
    })
}

/// Every (algorithm, quality) point of the campaign, with costs normalized
/// against round robin when it is among the algorithms.
pub fn sweep(config: &CampaignConfig) -> Result<Vec<SweepRecord>> {
    config.checked()?;
    let mut records = Vec::new();
    for algorithm in &config.algorithms {
        for &q in &config.sweep.thresholds {
            records.push(sweep_point(config, algorithm, q)?);
        }
    }
    normalize_against(&mut records, "rr");
    Ok(records)
}

/// Piecewise-linear interpolation of `(x, y)` points at `x`; `None` outside
/// the covered range. Points with equal `x` are averaged.
pub fn interpolate(points: &[(f64, f64)], x: f64) -> Option<f64> {
    let mut pts: Vec<(f64, f64)> = points
        .iter()
        .copied()
        .filter(|(a, b)| a.is_finite() && b.is_finite())
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut merged: Vec<(f64, f64, usize)> = Vec::new();
    for (a, b) in pts {
        match merged.last_mut() {
            Some(last) if last.0 == a => {
                last.1 += b;
                last.2 += 1;
            }
            _ => merged.push((a, b, 1)),
        }
    }
    let curve: Vec<(f64, f64)> = merged
        .into_iter()
        .map(|(a, b, n)| (a, b / n as f64))
        .collect();
    let first = curve.first()?;
    let last = curve.last()?;
    if !(x >= first.0 && x <= last.0) {
        return None;
    }
    for w in curve.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if x <= x1 {
            return Some(y0 + (y1 - y0) * (x - x0) / (x1 - x0));
        }
    }
    Some(first.1)
}

/// Fills `norm_cost` by dividing each cost by the baseline algorithm's cost
/// interpolated at the same error rate.
pub fn normalize_against(records: &mut [SweepRecord], baseline: &str) {
    let curve: Vec<(f64, f64)> = records
        .iter()
        .filter(|r| r.algorithm == baseline)
        .map(|r| (r.error_rate, r.avg_cost))
        .collect();
    if curve.is_empty() {
        return;
    }
    for r in records.iter_mut() {
        r.norm_cost = interpolate(&curve, r.error_rate).map(|base| r.avg_cost / base);
    }
}

// ---------------------------------------------------------------------------
// CSV output

pub const CSV_HEADER: &str =
    "threshold,algorithm,avg_cost,std_err_cost,error_rate,norm_cost,runs,truncated";

/// Formats `v` with six significant digits in positional notation.
pub fn format_sig6(v: f64) -> String {
    if !v.is_finite() {
        return String::new();
    }
    if v == 0.0 {
        return "0".to_string();
    }
    let magnitude = v.abs().log10().floor() as i32;
    let decimals = 5 - magnitude;
    if decimals >= 0 {
        let s = format!("{:.*}", decimals as usize, v);
        // rounding may have carried into a new leading digit
        let digits = s
            .chars()
            .filter(|c| c.is_ascii_digit())
            .skip_while(|&c| c == '0')
            .count();
        if digits > 6 && decimals > 0 {
            return format!("{:.*}", decimals as usize - 1, v);
        }
        s
    } else {
        let scale = 10f64.powi(-decimals);
        format!("{:.0}", (v / scale).round() * scale)
    }
}

/// CSV text for `records`, sorted by algorithm then threshold.
pub fn render_csv(records: &[SweepRecord]) -> Result<String> {
    if records.is_empty() {
        return Err(Error::EmptyRecords);
    }
    let mut sorted: Vec<&SweepRecord> = records.iter().collect();
    sorted.sort_by(|a, b| {
        a.algorithm
            .cmp(&b.algorithm)
            .then(a.quality.total_cmp(&b.quality))
    });
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in sorted {
        let fields = [
            format_sig6(r.quality),
            r.algorithm.clone(),
            format_sig6(r.avg_cost),
            format_sig6(r.std_err_cost),
            format_sig6(r.error_rate),
            r.norm_cost.map(format_sig6).unwrap_or_default(),
            r.runs.to_string(),
            r.truncated.to_string(),
        ];
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    Ok(out)
}

pub fn write_csv<W: Write>(records: &[SweepRecord], mut writer: W) -> Result<()> {
    writer.write_all(render_csv(records)?.as_bytes())?;
    Ok(())
}

/// Writes the CSV to `path`. Nothing is created when `records` is empty.
pub fn emit_csv(records: &[SweepRecord], path: &Path) -> Result<()> {
    let text = render_csv(records)?;
    std::fs::write(path, text)?;
    Ok(())
}
