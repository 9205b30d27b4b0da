//! Problem-instance generators and judgment-log ingestion.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::format_sig6;
use crate::model::{top_two_gap, ProblemInstance, ResponseDistribution};
use crate::seed::{child_rng, label};

/// Two-option crowds given by their bias `b`, answering correctly with
/// probability `1/2 + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasSpec {
    pub biases: Vec<f64>,
    pub costs: Vec<f64>,
}

impl BiasSpec {
    pub fn new(biases: Vec<f64>, costs: Vec<f64>) -> Result<Self> {
        if biases.is_empty() || biases.len() != costs.len() {
            return Err(Error::DimensionMismatch {
                expected: biases.len(),
                found: costs.len(),
            });
        }
        if let Some(b) = biases.iter().find(|b| !(0.0..=0.5).contains(*b)) {
            return Err(Error::InvalidConfig(format!("bias {b} outside [0, 1/2]")));
        }
        Ok(Self { biases, costs })
    }

    pub fn unit_costs(biases: &[f64]) -> Result<Self> {
        Self::new(biases.to_vec(), vec![1.0; biases.len()])
    }

    /// Biases `(0.3, 0, 0)`.
    pub fn easy() -> Self {
        Self::unit_costs(&[0.3, 0.0, 0.0]).expect("valid")
    }

    /// Biases `(0.3, 0.1, 0.1)`.
    pub fn medium() -> Self {
        Self::unit_costs(&[0.3, 0.1, 0.1]).expect("valid")
    }

    /// Biases `(0.3, 0.2, 0.2)`.
    pub fn hard() -> Self {
        Self::unit_costs(&[0.3, 0.2, 0.2]).expect("valid")
    }

    pub fn instance(&self) -> Result<ProblemInstance> {
        let crowds = self
            .biases
            .iter()
            .map(|b| ResponseDistribution::binary(0.5 + b))
            .collect::<Result<Vec<_>>>()?;
        ProblemInstance::new(crowds, self.costs.clone(), 0)
    }
}

/// A generated instance together with the crowd order it was presented in:
/// crowd `j` of `instance` is crowd `permutation[j]` of the base instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedInstance {
    pub instance: ProblemInstance,
    pub permutation: Vec<usize>,
}

/// Permutation used for instance `index` of a fixed-bias workload.
pub fn crowd_permutation(num_crowds: usize, seed: u64, index: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..num_crowds).collect();
    order.shuffle(&mut child_rng(seed, &[label("permutation"), index]));
    order
}

/// `count` copies of `spec.instance()`, each with its crowds presented in a
/// seeded random order. Instance `i` depends only on `(seed, i)`.
pub fn fixed_bias_workload(
    spec: &BiasSpec,
    count: usize,
    seed: u64,
) -> Result<Vec<GeneratedInstance>> {
    let base = spec.instance()?;
    (0..count as u64)
        .map(|i| {
            let permutation = crowd_permutation(base.num_crowds(), seed, i);
            Ok(GeneratedInstance {
                instance: base.permuted(&permutation)?,
                permutation,
            })
        })
        .collect()
}

/// Single-crowd two-option instance with gap `g`: `((1 + g)/2, (1 - g)/2)`.
pub fn gap_instance(gap: f64) -> Result<ProblemInstance> {
    ProblemInstance::with_unit_costs(vec![ResponseDistribution::binary((1.0 + gap) / 2.0)?], 0)
}

/// `count` single-crowd instances with gaps drawn from `Uniform[lo, hi]`.
pub fn uniform_gap_workload(
    count: usize,
    lo: f64,
    hi: f64,
    seed: u64,
) -> Result<Vec<GeneratedInstance>> {
    if !(0.0 <= lo && lo < hi && hi <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "gap range [{lo}, {hi}] must satisfy 0 <= lo < hi <= 1"
        )));
    }
    (0..count as u64)
        .map(|i| {
            let g = child_rng(seed, &[label("gap"), i]).random_range(lo..=hi);
            Ok(GeneratedInstance {
                instance: gap_instance(g)?,
                permutation: vec![0],
            })
        })
        .collect()
}

/// Two crowds, three options: `(2/5 + e, 2/5, 1/5 - e)` and
/// `(2/5 + e, 1/5 - e, 2/5)`. Each crowd has gap `e`; the uniform mixture has
/// gap `1/10 + 3e/2`.
pub fn separation_instance(epsilon: f64) -> Result<ProblemInstance> {
    if !(epsilon > 0.0 && epsilon < 0.2) {
        return Err(Error::InvalidConfig(format!(
            "epsilon {epsilon} outside (0, 1/5)"
        )));
    }
    let a = ResponseDistribution::new(vec![0.4 + epsilon, 0.4, 0.2 - epsilon])?;
    let b = ResponseDistribution::new(vec![0.4 + epsilon, 0.2 - epsilon, 0.4])?;
    ProblemInstance::with_unit_costs(vec![a, b], 0)
}

// ---------------------------------------------------------------------------
// Judgment logs

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgmentRecord {
    pub task_id: String,
    pub worker_id: String,
    pub option: String,
}

impl JudgmentRecord {
    fn is_valid(&self) -> bool {
        !(self.task_id.trim().is_empty()
            || self.worker_id.trim().is_empty()
            || self.option.trim().is_empty())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapCdfRow {
    pub rank: usize,
    pub empirical_gap: f64,
}

/// Least-squares line through `(rank, empirical_gap)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapCdf {
    pub rows: Vec<GapCdfRow>,
    pub fit: LinearFit,
    pub tasks: usize,
    pub skipped: usize,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> LinearFit {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return LinearFit {
            slope: 0.0,
            intercept: ys.first().copied().unwrap_or(0.0),
            r_squared: 1.0,
        };
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let r_squared = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    LinearFit {
        slope,
        intercept,
        r_squared,
    }
}

/// Per-task empirical gaps, sorted ascending, over the corpus-wide option set.
/// Invalid records are counted in `skipped`.
pub fn ingest_records<I>(records: I) -> GapCdf
where
    I: IntoIterator<Item = JudgmentRecord>,
{
    let mut skipped = 0;
    let mut labels: HashMap<String, usize> = HashMap::new();
    let mut tasks: BTreeMap<String, HashMap<usize, u64>> = BTreeMap::new();
    for r in records {
        if !r.is_valid() {
            skipped += 1;
            continue;
        }
        let next = labels.len();
        let opt = *labels.entry(r.option).or_insert(next);
        *tasks.entry(r.task_id).or_default().entry(opt).or_insert(0) += 1;
    }
    let num_labels = labels.len();
    let mut gaps: Vec<f64> = tasks
        .values()
        .map(|votes| {
            let total: u64 = votes.values().sum();
            let mut freqs = vec![0.0; num_labels];
            for (&opt, &c) in votes {
                freqs[opt] = c as f64 / total as f64;
            }
            top_two_gap(&freqs)
        })
        .collect();
    gaps.sort_by(|a, b| a.total_cmp(b));
    let rows: Vec<GapCdfRow> = gaps
        .iter()
        .enumerate()
        .map(|(i, &g)| GapCdfRow {
            rank: i + 1,
            empirical_gap: g,
        })
        .collect();
    let xs: Vec<f64> = rows.iter().map(|r| r.rank as f64).collect();
    let fit = linear_fit(&xs, &gaps);
    GapCdf {
        rows,
        fit,
        tasks: tasks.len(),
        skipped,
    }
}

/// Reads a `task_id,worker_id,option` CSV with a header row.
pub fn ingest_judgments<R: Read>(reader: R) -> Result<GapCdf> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut parse_failures = 0;
    let mut records = Vec::new();
    for row in rdr.records() {
        match row.and_then(|r| r.deserialize::<JudgmentRecord>(Some(&headers))) {
            Ok(rec) => records.push(rec),
            Err(_) => parse_failures += 1,
        }
    }
    let mut cdf = ingest_records(records);
    cdf.skipped += parse_failures;
    Ok(cdf)
}

/// Writes `rank,empirical_gap` rows.
pub fn write_gap_cdf<W: Write>(cdf: &GapCdf, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["rank", "empirical_gap"])?;
    for row in &cdf.rows {
        w.write_record([row.rank.to_string(), format_sig6(row.empirical_gap)])?;
    }
    w.flush()?;
    Ok(())
}
