//! Monte Carlo checks against closed forms and the exact oracle.

use rand::Rng;
use rayon::prelude::*;

use bandit_survey::experiment::{run_once, sweep, AlgorithmSpec, CampaignConfig, WorkloadSpec};
use bandit_survey::model::{ProblemInstance, ResponseDistribution, TallySheet};
use bandit_survey::oracle::exact_smooth_rule_stats;
use bandit_survey::seed::{derive_seed, rng_from_seed};
use bandit_survey::selection::{thompson_select, PolicySpec, UcbConfig};
use bandit_survey::stopping::{CompositeRule, ThresholdRuleConfig};
use bandit_survey::workload::BiasSpec;

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[test]
fn thompson_favours_a_consistent_crowd_more_as_evidence_grows() {
    // crowd 0 has counts (m, 0), two others are unsampled; the posterior of
    // crowd 0 is Beta(m + 1, 1), so it wins with probability (m + 1)/(m + 3)
    let draws = 20_000;
    let mut last = 1.0 / 3.0;
    for m in [1u64, 4, 16, 64] {
        let mut tally = TallySheet::new(3, 2);
        for _ in 0..m {
            tally.record(0, 0).unwrap();
        }
        let mut rng = rng_from_seed(m);
        let wins = (0..draws)
            .filter(|_| thompson_select(&tally, &[1.0; 3], &mut rng) == 0)
            .count() as f64
            / draws as f64;
        let expected = (m as f64 + 1.0) / (m as f64 + 3.0);
        let se = (expected * (1.0 - expected) / draws as f64).sqrt();
        assert!(
            (wins - expected).abs() < 4.0 * se,
            "m {m}: {wins} vs {expected}"
        );
        assert!(wins > last, "m {m}: {wins} not above {last}");
        last = wins;
    }
}

#[test]
fn ucb_suboptimal_pulls_grow_sublinearly() {
    // medium workload, theory-mode exploration, no stopping
    let inst = BiasSpec::medium().instance().unwrap();
    let checkpoints: Vec<u64> = (10..=17).map(|j| 1u64 << j).collect();
    let traces = suboptimal_pull_traces(&inst, &checkpoints, 200);
    let increments: Vec<(f64, f64)> = (1..checkpoints.len())
        .map(|j| {
            mean_and_se(
                &traces
                    .iter()
                    .map(|tr| tr[j] - tr[j - 1])
                    .collect::<Vec<_>>(),
            )
        })
        .collect();
    // logarithmic growth adds a roughly constant amount per doubling, linear
    // growth would double it each time
    let lo = increments.iter().map(|d| d.0).fold(f64::INFINITY, f64::min);
    let hi = increments.iter().map(|d| d.0).fold(0.0, f64::max);
    assert!(hi < 1.5 * lo, "increments {increments:?}");
    let share = |j: usize| {
        traces.iter().map(|tr| tr[j]).sum::<f64>() / traces.len() as f64 / checkpoints[j] as f64
    };
    assert!(share(checkpoints.len() - 1) < share(0) / 4.0);
}

fn suboptimal_pull_traces(inst: &ProblemInstance, checkpoints: &[u64], runs: u64) -> Vec<Vec<f64>> {
    let policy = PolicySpec::Ucb(UcbConfig::theory());
    let horizon = *checkpoints.last().unwrap();
    (0..runs)
        .into_par_iter()
        .map(|run| {
            let mut rng = rng_from_seed(derive_seed(77, &[run]));
            let mut selector = policy.build(inst).unwrap();
            let mut tally = TallySheet::for_instance(inst);
            let mut trace = Vec::new();
            for t in 1..=horizon {
                let i = selector.select(&tally, &mut rng);
                let x = inst.crowd(i).sample_with(rng.random());
                tally.record(i, x).unwrap();
                selector.observe(i, x, &tally, &mut rng);
                if checkpoints.contains(&t) {
                    trace.push((tally.pulls(1) + tally.pulls(2)) as f64);
                }
            }
            trace
        })
        .collect()
}

#[test]
fn smooth_rule_matches_its_oracle() {
    let runs = 20_000u64;
    for p in [0.6, 0.75, 0.9] {
        let inst =
            ProblemInstance::with_unit_costs(vec![ResponseDistribution::binary(p).unwrap()], 0)
                .unwrap();
        for quality in [0.7, 1.5, 2.5] {
            let exact = exact_smooth_rule_stats(p, quality, 100_000).unwrap();
            let rule = CompositeRule::new(ThresholdRuleConfig::smooth(quality).unwrap(), None);
            let results: Vec<_> = (0..runs)
                .into_par_iter()
                .map(|r| {
                    run_once(
                        &inst,
                        &PolicySpec::RoundRobin,
                        &rule,
                        derive_seed(3, &[r]),
                        1_000_000,
                    )
                    .unwrap()
                    .completed()
                    .cloned()
                    .expect("run hit the safety cap")
                })
                .collect();
            let rounds: Vec<f64> = results.iter().map(|r| r.rounds as f64).collect();
            let (mean, se) = mean_and_se(&rounds);
            assert!(
                (mean - exact.expected_stop_time).abs() < 3.0 * se,
                "p {p} q {quality}: {mean} vs {}",
                exact.expected_stop_time
            );
            let err = results.iter().filter(|r| !r.correct).count() as f64 / runs as f64;
            let se_err = (exact.error_rate * (1.0 - exact.error_rate) / runs as f64)
                .sqrt()
                .max(1e-4);
            assert!(
                (err - exact.error_rate).abs() < 3.0 * se_err,
                "p {p} q {quality}: error {err} vs {}",
                exact.error_rate
            );
        }
    }
}

#[test]
fn raising_quality_trades_cost_for_accuracy() {
    let mut cfg = CampaignConfig::new(
        WorkloadSpec::UniformGap { lo: 0.2, hi: 1.0 },
        vec![AlgorithmSpec::RoundRobin],
    );
    cfg.seed = 8;
    cfg.sweep.thresholds = vec![0.5, 1.0, 1.5, 2.0, 3.0];
    cfg.sweep.runs = 4000;
    let recs = sweep(&cfg).unwrap();
    for w in recs.windows(2) {
        assert!(w[1].avg_cost > w[0].avg_cost + 3.0 * w[1].std_err_cost.hypot(w[0].std_err_cost));
        let se = |e: f64| (e * (1.0 - e) / 4000.0).sqrt();
        assert!(
            w[1].error_rate
                <= w[0].error_rate + 3.0 * se(w[0].error_rate).hypot(se(w[1].error_rate))
        );
    }
}
