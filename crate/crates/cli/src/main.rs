use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use bandit_survey::benchmark::{
    randomized_benchmark, CostEstimate, MonteCarloOptions, DEFAULT_GRID,
};
use bandit_survey::experiment::{
    default_thresholds, format_sig6, render_csv, sweep, AlgorithmSpec, CampaignConfig,
    StoppingSpec, WorkloadSpec,
};
use bandit_survey::oracle::{truncated_rule_stats, truncated_smooth_rule_stats};
use bandit_survey::selection::Exploration;
use bandit_survey::stopping::{SingleSourceRule, ThresholdRuleConfig, TotalRuleConfig};
use bandit_survey::workload::{ingest_judgments, write_gap_cdf};

#[derive(Parser)]
#[command(
    version,
    about = "Simulate adaptive crowd selection with threshold stopping rules"
)]
struct Cli {
    /// Worker threads for Monte Carlo runs (defaults to all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the campaign described by a TOML config file
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Sweep the quality parameter for a named workload
    Sweep {
        #[command(flatten)]
        workload: WorkloadArgs,
        /// Comma-separated algorithms
        #[arg(long, value_delimiter = ',', default_value = "rr,ucb,thompson")]
        algorithms: Vec<Algorithm>,
        /// Comma-separated quality grid (default 0.25, 0.5, ..., 5)
        #[arg(long, value_delimiter = ',')]
        thresholds: Vec<f64>,
        /// Randomly round the threshold to a neighbouring integer
        #[arg(long)]
        smooth: bool,
        /// Drop the total-crowd instance from the composite rule
        #[arg(long)]
        no_total: bool,
        /// Forced-stop horizon of the total-crowd instance
        #[arg(long)]
        total_horizon: Option<u64>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Estimate the best-crowd and best-mixture benchmark costs
    Benchmark {
        #[command(flatten)]
        workload: WorkloadArgs,
        #[arg(long, default_value_t = 2.0)]
        quality: f64,
        /// Stop with the threshold rule, or with the total rule (needs --horizon)
        #[arg(long, value_enum, default_value_t = RuleKind::Threshold)]
        rule: RuleKind,
        #[arg(long)]
        smooth: bool,
        #[arg(long)]
        horizon: Option<u64>,
        /// Simplex grid denominator
        #[arg(long, default_value_t = DEFAULT_GRID)]
        grid: u64,
        /// Which instance of the workload stream to benchmark
        #[arg(long, default_value_t = 0)]
        instance: u64,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Exact stop-time and error statistics of the two-option threshold rule
    Oracle {
        /// Comma-separated probabilities of the correct option
        #[arg(long, value_delimiter = ',', required = true)]
        p: Vec<f64>,
        /// Comma-separated quality values
        #[arg(long, value_delimiter = ',', required = true)]
        quality: Vec<f64>,
        #[arg(long, default_value_t = 100_000)]
        horizon: u64,
        #[arg(long)]
        smooth: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Empirical-gap CDF of a judgment log (task_id,worker_id,option)
    Gapcdf {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    seed: Option<u64>,
    /// Monte Carlo runs per point
    #[arg(long)]
    runs: Option<usize>,
    /// Output CSV (stdout when absent)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct WorkloadArgs {
    #[arg(long, value_enum, default_value_t = Workload::Easy)]
    workload: Workload,
    /// Gap range of the uniform-gap workload
    #[arg(long, default_value_t = 0.05)]
    lo: f64,
    #[arg(long, default_value_t = 1.0)]
    hi: f64,
    #[arg(long, default_value_t = 0.01)]
    epsilon: f64,
}

impl WorkloadArgs {
    fn spec(&self) -> WorkloadSpec {
        match self.workload {
            Workload::Easy => WorkloadSpec::easy(),
            Workload::Medium => WorkloadSpec::medium(),
            Workload::Hard => WorkloadSpec::hard(),
            Workload::UniformGap => WorkloadSpec::UniformGap {
                lo: self.lo,
                hi: self.hi,
            },
            Workload::Separation => WorkloadSpec::Separation {
                epsilon: self.epsilon,
            },
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Workload {
    Easy,
    Medium,
    Hard,
    UniformGap,
    Separation,
}

#[derive(Clone, Copy, ValueEnum)]
enum Algorithm {
    Rr,
    Ucb,
    UcbTheory,
    Thompson,
    Eer,
    Unif,
}

impl Algorithm {
    fn spec(self) -> AlgorithmSpec {
        match self {
            Algorithm::Rr => AlgorithmSpec::RoundRobin,
            Algorithm::Ucb => AlgorithmSpec::ucb(),
            Algorithm::UcbTheory => AlgorithmSpec::Ucb {
                exploration: Exploration::Theory,
            },
            Algorithm::Thompson => AlgorithmSpec::Thompson,
            Algorithm::Eer => AlgorithmSpec::eer(),
            Algorithm::Unif => AlgorithmSpec::Unif,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RuleKind {
    Threshold,
    Total,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match cli.command {
        Command::Simulate { config, run } => simulate(&config, run),
        Command::Sweep {
            workload,
            algorithms,
            thresholds,
            smooth,
            no_total,
            total_horizon,
            run,
        } => {
            let mut cfg = CampaignConfig::new(
                workload.spec(),
                algorithms.into_iter().map(Algorithm::spec).collect(),
            );
            cfg.stopping = StoppingSpec {
                smooth,
                total: !no_total,
                total_horizon,
                ..StoppingSpec::default()
            };
            cfg.sweep.thresholds = if thresholds.is_empty() {
                default_thresholds()
            } else {
                thresholds
            };
            run_campaign(cfg, run)
        }
        Command::Benchmark {
            workload,
            quality,
            rule,
            smooth,
            horizon,
            grid,
            instance,
            run,
        } => {
            let rule = match rule {
                RuleKind::Threshold => SingleSourceRule::Threshold(ThresholdRuleConfig {
                    smooth,
                    ..ThresholdRuleConfig::deterministic(quality)?
                }),
                RuleKind::Total => {
                    let Some(h) = horizon else {
                        bail!("--rule total needs --horizon");
                    };
                    SingleSourceRule::Total(TotalRuleConfig {
                        smooth,
                        ..TotalRuleConfig::new(quality, h)?
                    })
                }
            };
            benchmark(&workload.spec(), instance, &rule, grid, run)
        }
        Command::Oracle {
            p,
            quality,
            horizon,
            smooth,
            out,
        } => oracle(&p, &quality, horizon, smooth, out.as_deref()),
        Command::Gapcdf { input, out } => gapcdf(&input, out.as_deref()),
    }
}

fn simulate(config: &Path, run: RunArgs) -> Result<()> {
    let text =
        std::fs::read_to_string(config).with_context(|| format!("reading {}", config.display()))?;
    let cfg: CampaignConfig =
        toml::from_str(&text).with_context(|| format!("parsing {}", config.display()))?;
    run_campaign(cfg, run)
}

fn run_campaign(mut cfg: CampaignConfig, run: RunArgs) -> Result<()> {
    if let Some(seed) = run.seed {
        cfg.seed = seed;
    }
    if let Some(runs) = run.runs {
        cfg.sweep.runs = runs;
    }
    let out = run
        .out
        .or_else(|| cfg.output.as_ref().map(|o| PathBuf::from(&o.path)));
    let records = sweep(&cfg)?;
    let truncated: usize = records.iter().map(|r| r.truncated).sum();
    if truncated > 0 {
        eprintln!(
            "warning: {truncated} runs hit the safety cap of {} rounds",
            cfg.stopping.safety_cap
        );
    }
    write_text(out.as_deref(), &render_csv(&records)?)
}

fn benchmark(
    workload: &WorkloadSpec,
    index: u64,
    rule: &SingleSourceRule,
    grid: u64,
    run: RunArgs,
) -> Result<()> {
    let seed = run.seed.unwrap_or(0);
    let inst = workload.instance_at(index, seed)?;
    let opts = run
        .runs
        .map(MonteCarloOptions::with_runs)
        .unwrap_or_default();
    let report = randomized_benchmark(&inst, rule, grid, opts, seed)?;

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "kind",
        "mu",
        "avg_cost",
        "std_err_cost",
        "error_rate",
        "runs",
        "truncated",
    ])?;
    let mut row = |kind: &str, mu: &[f64], c: &CostEstimate| {
        let mu: Vec<String> = mu.iter().map(|&x| format_sig6(x)).collect();
        w.write_record([
            kind.to_string(),
            mu.join(" "),
            format_sig6(c.mean),
            format_sig6(c.std_err),
            format_sig6(c.error_rate),
            c.runs.to_string(),
            c.truncated.to_string(),
        ])
    };
    let k = inst.num_crowds();
    for (i, c) in report.per_crowd_cost.iter().enumerate() {
        let mut e = vec![0.0; k];
        e[i] = 1.0;
        row("crowd", &e, c)?;
    }
    for m in &report.grid {
        row("mixture", &m.mu, &m.cost)?;
    }
    let text = String::from_utf8(w.into_inner()?)?;
    write_text(run.out.as_deref(), &text)?;
    let det = report.deterministic_cost();
    eprintln!(
        "best crowd {} costs {} +- {}; best mixture {:?} costs {} +- {}",
        report.best_crowd,
        format_sig6(det.mean),
        format_sig6(det.std_err),
        report.best_mu,
        format_sig6(report.best_mu_cost.mean),
        format_sig6(report.best_mu_cost.std_err),
    );
    Ok(())
}

fn oracle(
    ps: &[f64],
    qualities: &[f64],
    horizon: u64,
    smooth: bool,
    out: Option<&Path>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "p",
        "quality",
        "horizon",
        "expected_stop_time",
        "error_rate",
        "stop_mass",
    ])?;
    for &p in ps {
        for &q in qualities {
            let s = if smooth {
                truncated_smooth_rule_stats(p, q, horizon)?
            } else {
                truncated_rule_stats(p, q, horizon)?
            };
            w.write_record([
                format_sig6(p),
                format_sig6(q),
                horizon.to_string(),
                format_sig6(s.expected_stop_time),
                format_sig6(s.error_rate),
                format_sig6(s.stop_mass),
            ])?;
        }
    }
    write_text(out, &String::from_utf8(w.into_inner()?)?)
}

fn gapcdf(input: &Path, out: Option<&Path>) -> Result<()> {
    let file = File::open(input).with_context(|| format!("opening {}", input.display()))?;
    let cdf = ingest_judgments(io::BufReader::new(file))?;
    let mut buf = Vec::new();
    write_gap_cdf(&cdf, &mut buf)?;
    write_text(out, &String::from_utf8(buf)?)?;
    eprintln!(
        "tasks {} skipped {} slope {} intercept {} r_squared {}",
        cdf.tasks,
        cdf.skipped,
        format_sig6(cdf.fit.slope),
        format_sig6(cdf.fit.intercept),
        format_sig6(cdf.fit.r_squared),
    );
    Ok(())
}

fn write_text(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => {
            std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
        }
        None => {
            io::stdout().lock().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}
